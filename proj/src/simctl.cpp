#include "tirelearn/simctl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "tirelearn/rng.hpp"

namespace tirelearn {

std::string_view to_string(ReferenceKind k) {
  switch (k) {
    case ReferenceKind::straight: return "straight";
    case ReferenceKind::slalom: return "slalom";
    case ReferenceKind::figure8: return "figure8";
  }
  return "unknown";
}

ReferenceKind parse_reference_kind(std::string_view s) {
  if (s == "straight") return ReferenceKind::straight;
  if (s == "slalom") return ReferenceKind::slalom;
  if (s == "figure8") return ReferenceKind::figure8;
  throw Error(ErrorCode::parse_error, "unknown reference kind '" + std::string(s) + "'");
}

Segment PathReference::segment_at(double s) const {
  const double sv = std::clamp(s, 0.0, length());
  const auto i = static_cast<std::size_t>(std::lround(sv / ds));
  return static_cast<Segment>(segment[std::min(i, size() - 1)]);
}

// --- equilibria ----------------------------------------------------------------

namespace {


/// (r_dot, v_dot, beta_dot) of steady motion with yaw rate kappa * v.
template <class T>
std::array<T, 3> steady_rates(const T& kappa, const T& v, const T& beta, const T& delta, const T& sigma_r,
                              const TireSet& tires, const VehicleParams& p) {
  const T r = kappa * v;
  const auto [af, ar] = slip_angles(v, beta, r, delta, p);
  BasicSlips<T> sl;
  sl.alpha_f = af;
  sl.alpha_r = ar;
  sl.sigma_f = T(0.0);
  sl.sigma_r = sigma_r;
  const BasicAxleForces<T> f = evaluate_axles(tires, sl, r, v, beta, p.mu_fz_bar());
  return body_rates(v, beta, r, delta, f, p);
}

struct NewtonResult {
  std::array<double, 3> z{};
  double residual = 0.0;
  int iterations = 0;
  bool ok = false;
};

/// Damped Newton on three residuals scaled to force units, with box bounds.
template <class F>
NewtonResult damped_newton(F&& residual, std::array<double, 3> z, const std::array<double, 3>& lo,
                           const std::array<double, 3>& hi, const std::array<double, 3>& scale) {
  auto eval = [&](const std::array<double, 3>& q, double& raw) {
    std::array<Var, 3> c{Var(q[0]), Var(q[1]), Var(q[2])};
    std::array<Var, 3> r = residual(c);
    raw = std::max({std::abs(r[0].value()), std::abs(r[1].value()), std::abs(r[2].value())});
    double n = 0.0;
    for (int i = 0; i < 3; ++i) n += std::pow(r[static_cast<std::size_t>(i)].value() * scale[static_cast<std::size_t>(i)], 2);
    return std::sqrt(n);
  };
  NewtonResult res;
  Tape tape;
  for (int it = 0; it < 100; ++it) {
    tape.clear();
    std::array<Var, 3> v{tape.variable(z[0]), tape.variable(z[1]), tape.variable(z[2])};
    std::array<Var, 3> r;
    try {
      r = residual(v);
    } catch (const Error&) {
      return res;
    }
    Eigen::Matrix3d j;
    Eigen::Vector3d rv;
    for (int i = 0; i < 3; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      tape.backward(r[iu]);
      for (int k = 0; k < 3; ++k) j(i, k) = tape.adjoint(v[static_cast<std::size_t>(k)]) * scale[iu];
      rv[i] = r[iu].value() * scale[iu];
    }
    if (!rv.allFinite() || !j.allFinite()) return res;
    res.residual = std::max({std::abs(r[0].value()), std::abs(r[1].value()), std::abs(r[2].value())});
    res.iterations = it;
    if (res.residual < 1e-10) {
      res.z = z;
      res.ok = true;
      return res;
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu(j);
    if (!lu.isInvertible()) return res;
    const Eigen::Vector3d d = lu.solve(-rv);
    const double n0 = rv.norm();
    bool accepted = false;
    for (double t = 1.0; t > 1e-4; t *= 0.5) {
      std::array<double, 3> q;
      for (int k = 0; k < 3; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        q[ku] = std::clamp(z[ku] + t * d[k], lo[ku], hi[ku]);
      }
      double raw = 0.0;
      double n1 = std::numeric_limits<double>::infinity();
      try {
        n1 = eval(q, raw);
      } catch (const Error&) {
      }
      if (std::isfinite(n1) && n1 < (1.0 - 1e-4 * t) * n0) {
        z = q;
        accepted = true;
        break;
      }
    }
    if (!accepted) return res;
  }
  return res;
}

/// Best points of a coarse grid over the box, as Newton starting points.
template <class R, class B>
std::vector<std::array<double, 3>> grid_starts(R&& rates, B&& on_branch, const std::array<double, 3>& scale,
                                               const std::array<double, 3>& lo, const std::array<double, 3>& hi,
                                               std::size_t count = 40) {
  constexpr int n = 31;
  std::vector<std::pair<double, std::array<double, 3>>> pts;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < n; ++k) {
        const std::array<double, 3> z{lo[0] + (hi[0] - lo[0]) * (i + 0.5) / n, lo[1] + (hi[1] - lo[1]) * (j + 0.5) / n,
                                      lo[2] + (hi[2] - lo[2]) * (k + 0.5) / n};
        if (!on_branch(z)) continue;
        try {
          const auto r = rates(z);
          double q = 0.0;
          for (std::size_t c = 0; c < 3; ++c) q += std::pow(r[c] * scale[c], 2);
          if (std::isfinite(q)) pts.emplace_back(q, z);
        } catch (const Error&) {
        }
      }
    }
  }
  const std::size_t m = std::min(count, pts.size());
  std::partial_sort(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(m), pts.end(),
                    [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<std::array<double, 3>> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(pts[i].second);
  return out;
}

Equilibrium make_equilibrium(double kappa, double v, double beta, double delta, double sigma, const TireSet& tires,
                             const VehicleParams& p, int iterations) {
  Equilibrium e;
  e.kappa = kappa;
  e.v = v;
  e.r = kappa * v;
  e.beta = beta;
  e.delta = delta;
  e.sigma_r = sigma;
  const auto rates = steady_rates<double>(kappa, v, beta, delta, sigma, tires, p);
  e.residual = std::max({std::abs(rates[0]), std::abs(rates[1]), std::abs(rates[2])});
  const auto [af, ar] = slip_angles(v, beta, e.r, delta, p);
  (void)af;
  const TireForce<double> fr =
      tires.rear->evaluate(TireInput<double>{ar, sigma, Feat{Axle::rear, e.r, v, beta, p.mu_fz_bar()}});
  e.tau_r = p.r_w * fr.fx;
  e.iterations = iterations;
  return e;
}

}  // namespace

Equilibrium drift_equilibrium(double kappa, double v, const TireSet& tires, const VehicleParams& p, Branch branch,
                              double delta_max) {
  p.validate();
  if (!(v > kDefaultEpsilonV)) throw Error(ErrorCode::invalid_argument, "equilibrium speed must be positive");
  const std::array<double, 3> scale{p.i_z, p.m, p.m * v};
  const std::array<double, 3> lo{-1.4, -delta_max, -0.5};
  const std::array<double, 3> hi{1.4, delta_max, 1.5};
  auto residual = [&](const std::array<Var, 3>& z) {
    return steady_rates<Var>(Var(kappa), Var(v), z[0], z[1], z[2], tires, p);
  };
  auto rates = [&](const std::array<double, 3>& z) {
    return steady_rates<double>(kappa, v, z[0], z[1], z[2], tires, p);
  };
  const bool drift = branch == Branch::drift && kappa != 0.0;
  auto on_branch = [&](const std::array<double, 3>& z) {
    if (kappa == 0.0) return true;
    return drift ? z[1] * kappa < 0.0 && z[0] * kappa < 0.0 : z[1] * kappa > 0.0;
  };
  std::vector<std::array<double, 3>> starts;
  if (!drift) starts.push_back({0.0, std::clamp(kappa * (p.a + p.b), -delta_max, delta_max), 0.0});
  for (const auto& z0 : grid_starts(rates, on_branch, scale, lo, hi)) starts.push_back(z0);
  for (const auto& z0 : starts) {
    const NewtonResult nr = damped_newton(residual, z0, lo, hi, scale);
    if (nr.ok && on_branch(nr.z)) {
      return make_equilibrium(kappa, v, nr.z[0], nr.z[1], nr.z[2], tires, p, nr.iterations);
    }
  }
  throw Error(ErrorCode::no_convergence, "no " + std::string(branch == Branch::drift ? "drift" : "grip") +
                                             " equilibrium found for kappa=" + std::to_string(kappa) +
                                             " v=" + std::to_string(v));
}

Equilibrium drift_equilibrium_for_beta(double beta, double v, const TireSet& tires, const VehicleParams& p,
                                       double delta_max) {
  p.validate();
  if (beta == 0.0) return drift_equilibrium(0.0, v, tires, p, Branch::grip, delta_max);
  const std::array<double, 3> scale{p.i_z, p.m, p.m * v};
  const std::array<double, 3> lo{-0.5, -delta_max, -0.5};
  const std::array<double, 3> hi{0.5, delta_max, 1.5};
  auto residual = [&](const std::array<Var, 3>& z) {
    return steady_rates<Var>(z[0], Var(v), Var(beta), z[1], z[2], tires, p);
  };
  auto rates = [&](const std::array<double, 3>& z) {
    return steady_rates<double>(z[0], v, beta, z[1], z[2], tires, p);
  };
  auto on_branch = [&](const std::array<double, 3>& z) { return z[1] * z[0] < 0.0 && z[0] * beta < 0.0; };
  for (const auto& z0 : grid_starts(rates, on_branch, scale, lo, hi)) {
    const NewtonResult nr = damped_newton(residual, z0, lo, hi, scale);
    if (nr.ok && on_branch(nr.z)) return make_equilibrium(nr.z[0], v, beta, nr.z[1], nr.z[2], tires, p, nr.iterations);
  }
  throw Error(ErrorCode::no_convergence,
              "no drift equilibrium found for beta=" + std::to_string(beta) + " v=" + std::to_string(v));
}

// --- reference -------------------------------------------------------------------

namespace {

double ease(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Extra reference beyond the end of the course so the last horizon stays on it.
constexpr double kTailTime = 3.0;

struct Piece {
  double length;
  double kappa0;
  double kappa1;  // linear ramp (clothoid) from kappa0 to kappa1
  double v0;
  double v1;
  bool speed_bump;  // v0 -> v1 -> v0 along a half sine
  Equilibrium eq0;
  Equilibrium eq1;
  Segment segment;
};

PathReference sample_pieces(const std::vector<Piece>& pieces, double ds, double lap_length) {
  PathReference ref;
  ref.ds = ds;
  ref.lap_length = lap_length;
  double total = 0.0;
  for (const Piece& pc : pieces) total += pc.length;
  const auto n = static_cast<std::size_t>(std::floor(total / ds + 1e-9)) + 1;
  std::size_t k = 0;
  double start = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = ds * static_cast<double>(i);
    while (k + 1 < pieces.size() && s > start + pieces[k].length + 1e-12) {
      start += pieces[k].length;
      ++k;
    }
    const Piece& pc = pieces[k];
    const double x = std::clamp((s - start) / pc.length, 0.0, 1.0);
    const double w = ease(x);
    ref.kappa.push_back(pc.kappa0 + (pc.kappa1 - pc.kappa0) * x);
    ref.v.push_back(pc.speed_bump ? pc.v0 + (pc.v1 - pc.v0) * std::sin(M_PI * x) : pc.v0 + (pc.v1 - pc.v0) * x);
    ref.beta.push_back(pc.eq0.beta + (pc.eq1.beta - pc.eq0.beta) * w);
    ref.delta_ff.push_back(pc.eq0.delta + (pc.eq1.delta - pc.eq0.delta) * w);
    ref.sigma_ff.push_back(pc.eq0.sigma_r + (pc.eq1.sigma_r - pc.eq0.sigma_r) * w);
    ref.segment.push_back(static_cast<int>(pc.segment));
  }
  ref.phi.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) ref.phi[i] = ref.phi[i - 1] + 0.5 * ds * (ref.kappa[i - 1] + ref.kappa[i]);
  return ref;
}

}  // namespace

PathReference make_reference(const ReferenceConfig& cfg, const TireSet& tires, const VehicleParams& p) {
  if (!(cfg.ds > 0.0)) throw Error(ErrorCode::invalid_argument, "reference ds must be positive");
  std::vector<Piece> pieces;
  double lap = 0.0;
  switch (cfg.kind) {
    case ReferenceKind::straight: {
      if (!(cfg.straight_length > cfg.ds)) throw Error(ErrorCode::infeasible_geometry, "straight is too short");
      const Equilibrium eq = drift_equilibrium(0.0, cfg.straight_speed, tires, p, Branch::grip, cfg.delta_max);
      pieces.push_back({cfg.straight_length, 0.0, 0.0, cfg.straight_speed, cfg.straight_speed, false, eq, eq,
                        Segment::arc});
      lap = cfg.straight_length;
      pieces.push_back({kTailTime * cfg.straight_speed, 0.0, 0.0, cfg.straight_speed, cfg.straight_speed, false, eq,
                        eq, Segment::arc});
      break;
    }
    case ReferenceKind::figure8: {
      const double k0 = 1.0 / cfg.radius;
      if (!(cfg.radius > 0.0) || k0 > cfg.kappa_max) {
        throw Error(ErrorCode::infeasible_geometry, "loop curvature exceeds kappa_max");
      }
      // Each loop turns the heading by 2 pi including half of each transition.
      const double loop = 2.0 * M_PI * cfg.radius - 0.5 * cfg.transition;
      if (!(cfg.transition > 0.0) || !(loop > 0.0)) {
        throw Error(ErrorCode::infeasible_geometry, "transition too long for the loop radius");
      }
      if (cfg.laps < 1) throw Error(ErrorCode::invalid_argument, "figure-8 needs at least one lap");
      const double v = cfg.figure8_speed;
      const Equilibrium left = drift_equilibrium(k0, v, tires, p, Branch::drift, cfg.delta_max);
      const Equilibrium right = drift_equilibrium(-k0, v, tires, p, Branch::drift, cfg.delta_max);
      for (int l = 0; l < cfg.laps; ++l) {
        pieces.push_back({loop, k0, k0, v, v, false, left, left, Segment::arc});
        pieces.push_back({cfg.transition, k0, -k0, v, v, false, left, right, Segment::transition});
        pieces.push_back({loop, -k0, -k0, v, v, false, right, right, Segment::arc});
        pieces.push_back({cfg.transition, -k0, k0, v, v, false, right, left, Segment::transition});
      }
      pieces.push_back({std::max(loop, kTailTime * v), k0, k0, v, v, false, left, left, Segment::arc});
      lap = 2.0 * (loop + cfg.transition);
      break;
    }
    case ReferenceKind::slalom: {
      if (cfg.corners < 1) throw Error(ErrorCode::invalid_argument, "slalom needs at least one corner");
      const Equilibrium left = drift_equilibrium_for_beta(-cfg.beta_peak, cfg.corner_speed, tires, p, cfg.delta_max);
      if (std::abs(left.kappa) > cfg.kappa_max) {
        throw Error(ErrorCode::infeasible_geometry, "corner curvature exceeds kappa_max");
      }
      const Equilibrium right = drift_equilibrium(-left.kappa, cfg.corner_speed, tires, p, Branch::drift,
                                                  cfg.delta_max);
      const double vc = cfg.corner_speed;
      for (int c = 0; c < cfg.corners; ++c) {
        const bool l = c % 2 == 0;
        const Equilibrium& here = l ? left : right;
        const Equilibrium& next = l ? right : left;
        pieces.push_back({cfg.corner_length, here.kappa, here.kappa, vc, vc, false, here, here, Segment::arc});
        if (c + 1 < cfg.corners) {
          pieces.push_back({cfg.slalom_transition, here.kappa, next.kappa, vc, cfg.max_speed, true, here, next,
                            Segment::transition});
        }
      }
      for (const Piece& pc : pieces) lap += pc.length;
      const Equilibrium& last = cfg.corners % 2 == 1 ? left : right;
      pieces.push_back({kTailTime * vc, last.kappa, last.kappa, vc, vc, false, last, last, Segment::arc});
      break;
    }
  }
  return sample_pieces(pieces, cfg.ds, lap);
}

// --- NMPC ----------------------------------------------------------------------

void NmpcConfig::validate() const {
  if (horizon < 2) throw Error(ErrorCode::config_error, "NMPC horizon must be at least 2");
  if (!(dt > 0.0)) throw Error(ErrorCode::config_error, "NMPC dt must be positive");
  for (double w : {w_e, w_beta, w_dphi, w_v, w_delta, w_sigma, w_ddelta, w_dsigma}) {
    if (!(w >= 0.0)) throw Error(ErrorCode::config_error, "NMPC weights must be nonnegative");
  }
  if (!(delta_max > 0.0) || !(sigma_max > sigma_min)) throw Error(ErrorCode::config_error, "NMPC input bounds");
  if (max_iterations < 1) throw Error(ErrorCode::config_error, "NMPC max_iterations must be positive");
  if (!(tolerance > 0.0) || !(rel_tolerance >= 0.0)) throw Error(ErrorCode::config_error, "NMPC tolerances");
}

Nmpc::Nmpc(NmpcConfig cfg, TireSet model, VehicleParams params, const PathReference* reference)
    : cfg_(cfg), model_(std::move(model)), params_(params), ref_(reference) {
  cfg_.validate();
  params_.validate();
  if (ref_ == nullptr || ref_->size() < 2) throw Error(ErrorCode::invalid_argument, "NMPC needs a reference");
  if (!model_.front || !model_.rear) throw Error(ErrorCode::invalid_argument, "NMPC needs two tire models");
}

void Nmpc::set_plan(std::vector<double> plan) {
  if (plan.size() != static_cast<std::size_t>(2 * cfg_.horizon)) {
    throw Error(ErrorCode::dimension_mismatch, "plan length must be 2 * horizon");
  }
  plan_ = std::move(plan);
}

template <class T>
int Nmpc::residuals(const VehicleState& x, DriveCommand previous, std::span<const T> u, std::vector<T>& out) const {
  out.clear();
  std::array<T, 6> z{T(x.r), T(x.v), T(x.beta), T(x.s), T(x.e), T(x.dphi)};
  T prev_d(previous.delta);
  T prev_s(previous.sigma_r);
  const double we = std::sqrt(cfg_.w_e);
  const double wb = std::sqrt(cfg_.w_beta);
  const double wp = std::sqrt(cfg_.w_dphi);
  const double wv = std::sqrt(cfg_.w_v);
  const double wd = std::sqrt(cfg_.w_delta);
  const double ws = std::sqrt(cfg_.w_sigma);
  const double wdd = std::sqrt(cfg_.w_ddelta);
  const double wds = std::sqrt(cfg_.w_dsigma);
  for (int k = 0; k < cfg_.horizon; ++k) {
    const T& d = u[static_cast<std::size_t>(2 * k)];
    const T& sg = u[static_cast<std::size_t>(2 * k + 1)];
    const RefPoint<T> rp = ref_->at(z[3]);
    out.push_back(wd * (d - rp.delta_ff));
    out.push_back(ws * (sg - rp.sigma_ff));
    out.push_back(wdd * (d - prev_d));
    out.push_back(wds * (sg - prev_s));
    auto f = [&](const std::array<T, 6>& q) { return controller_deriv(q, d, sg, model_, params_, *ref_); };
    z = rk4_step(f, z, cfg_.dt);
    for (const T& c : z) {
      if (!std::isfinite(value_of(c))) throw Error(ErrorCode::non_finite_prediction, "prediction is not finite");
    }
    const RefPoint<T> rq = ref_->at(z[3]);
    out.push_back(we * z[4]);
    out.push_back(wb * (z[2] - rq.beta));
    out.push_back(wp * (z[5] + rq.beta));
    out.push_back(wv * (z[1] - rq.v));
    prev_d = d;
    prev_s = sg;
  }
  return static_cast<int>(out.size());
}

double Nmpc::cost(const VehicleState& x, DriveCommand previous, std::span<const double> inputs) const {
  if (inputs.size() != static_cast<std::size_t>(2 * cfg_.horizon)) {
    throw Error(ErrorCode::dimension_mismatch, "input sequence length must be 2 * horizon");
  }
  std::vector<double> r;
  residuals<double>(x, previous, inputs, r);
  double c = 0.0;
  for (double v : r) c += v * v;
  return c;
}

void Nmpc::initial_plan(const VehicleState& x) {
  const RefPoint<double> rp = ref_->at(x.s);
  plan_.assign(static_cast<std::size_t>(2 * cfg_.horizon), 0.0);
  for (int k = 0; k < cfg_.horizon; ++k) {
    plan_[static_cast<std::size_t>(2 * k)] = rp.delta_ff;
    plan_[static_cast<std::size_t>(2 * k + 1)] = rp.sigma_ff;
  }
}

std::pair<DriveCommand, SolveStats> Nmpc::solve(const VehicleState& x, DriveCommand previous, WarmStart warm) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = static_cast<std::size_t>(2 * cfg_.horizon);
  if (plan_.size() != n) {
    initial_plan(x);
  } else if (warm == WarmStart::shift) {
    std::rotate(plan_.begin(), plan_.begin() + 2, plan_.end());
    plan_[n - 2] = plan_[n - 4];
    plan_[n - 1] = plan_[n - 3];
  }
  std::vector<double> lo(n);
  std::vector<double> hi(n);
  for (std::size_t i = 0; i < n; i += 2) {
    lo[i] = -cfg_.delta_max;
    hi[i] = cfg_.delta_max;
    lo[i + 1] = cfg_.sigma_min;
    hi[i + 1] = cfg_.sigma_max;
  }
  auto project = [&](std::vector<double>& u) {
    for (std::size_t i = 0; i < n; ++i) u[i] = std::clamp(u[i], lo[i], hi[i]);
  };
  auto safe_cost = [&](const std::vector<double>& u) {
    try {
      const double c = cost(x, previous, u);
      return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  project(plan_);
  std::vector<double> u = plan_;
  if (!std::isfinite(safe_cost(u))) {
    initial_plan(x);
    u = plan_;
    if (!std::isfinite(safe_cost(u))) {
      throw Error(ErrorCode::non_finite_prediction, "initial guess cannot be simulated");
    }
  }

  Tape tape;
  std::vector<Var> vars;
  std::vector<Var> res;
  Eigen::MatrixXd jac;
  Eigen::VectorXd r;
  auto linearize = [&](const std::vector<double>& uu) {
    tape.clear();
    vars.clear();
    for (double v : uu) vars.push_back(tape.variable(v));
    const int m = residuals<Var>(x, previous, std::span<const Var>(vars), res);
    jac.resize(m, static_cast<Eigen::Index>(n));
    r.resize(m);
    double c = 0.0;
    for (int i = 0; i < m; ++i) {
      const Var& ri = res[static_cast<std::size_t>(i)];
      r[i] = ri.value();
      c += ri.value() * ri.value();
      tape.backward(ri);
      for (std::size_t k = 0; k < n; ++k) jac(i, static_cast<Eigen::Index>(k)) = tape.adjoint(vars[k]);
    }
    return c;
  };

  SolveStats stats;
  cost_trace_.clear();
  double c = linearize(u);
  cost_trace_.push_back(c);
  double mu = 1e-3;
  for (int it = 0; it < cfg_.max_iterations; ++it) {
    const Eigen::VectorXd g = 2.0 * jac.transpose() * r;
    double pg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double step = std::clamp(u[i] - g[static_cast<Eigen::Index>(i)], lo[i], hi[i]) - u[i];
      pg = std::max(pg, std::abs(step));
    }
    if (pg < cfg_.tolerance) {
      stats.converged = true;
      break;
    }
    ++stats.iterations;
    const Eigen::MatrixXd h = jac.transpose() * jac;
    bool accepted = false;
    while (!accepted && mu < 1e8) {
      Eigen::MatrixXd a = h;
      a.diagonal().array() += mu;
      const Eigen::VectorXd d = a.ldlt().solve(-jac.transpose() * r);
      for (double t = 1.0; t >= 1.0 / 64.0; t *= 0.5) {
        std::vector<double> trial(n);
        for (std::size_t i = 0; i < n; ++i) trial[i] = u[i] + t * d[static_cast<Eigen::Index>(i)];
        project(trial);
        const double ct = safe_cost(trial);
        if (ct < c) {
          u = std::move(trial);
          accepted = true;
          break;
        }
      }
      if (!accepted) mu *= 10.0;
    }
    if (!accepted) break;
    mu = std::max(mu * 0.3, 1e-9);
    const double previous_cost = c;
    c = linearize(u);
    cost_trace_.push_back(c);
    if (previous_cost - c <= cfg_.rel_tolerance * previous_cost) {
      stats.converged = true;
      break;
    }
  }
  plan_ = u;
  stats.cost = c;
  stats.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {DriveCommand{u[0], u[1]}, stats};
}

// --- plant -----------------------------------------------------------------------

Plant::Plant(TireSet tires, VehicleParams params, const PathReference* reference, ServoConfig servo)
    : tires_(std::move(tires)), params_(params), ref_(reference), servo_(servo) {
  params_.validate();
  if (!tires_.front || !tires_.rear) throw Error(ErrorCode::invalid_argument, "plant needs two tire models");
}

void Plant::reset(const VehicleState& x) {
  x_ = x;
  integral_ = 0.0;
  tau_r_ = 0.0;
  last_slips_.reset();
}

Slips Plant::slips(const VehicleState& x, double delta) const {
  try {
    last_slips_ = compute_slips(x, delta, params_);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate_velocity || !last_slips_) throw;
  }
  return *last_slips_;
}

VehicleState Plant::derivative(const VehicleState& x, const Control& u, AxleForces* forces) const {
  const Slips sl = slips(x, u.delta);
  const AxleForces f = evaluate_axles(tires_, sl, x.r, x.v, x.beta, params_.mu_fz_bar());
  if (forces != nullptr) *forces = f;
  const double kappa = ref_ != nullptr ? ref_->at(x.s).kappa : 0.0;
  VehicleState d = dynamics_deriv(x, Control{u.delta, 0.0, u.tau_r}, f, kappa, params_);
  d.omega_f = 0.0;
  return d;
}

void Plant::step(const DriveCommand& u, double dt) {
  const double v_xr = x_.v * std::cos(x_.beta);
  const double omega_cmd = (1.0 + u.sigma_r) * v_xr / params_.r_w;
  const double err = omega_cmd - x_.omega_r;
  const double integral = integral_ + err * dt;
  double tau = params_.i_w * (servo_.kp * err + servo_.ki * integral);
  if (std::abs(tau) > servo_.tau_max) {
    tau = std::clamp(tau, -servo_.tau_max, servo_.tau_max);
  } else {
    integral_ = integral;
  }
  tau_r_ = tau;
  const Control c{u.delta, 0.0, tau};
  x_ = rk4_step([&](const VehicleState& q) { return derivative(q, c); }, x_, dt);
  const auto vx = axle_longitudinal_speeds(x_.v, x_.beta, x_.r, u.delta, params_);
  x_.omega_f = vx[0] / params_.r_w;
}

// --- closed loop ---------------------------------------------------------------

namespace {

VehicleState reference_state(const PathReference& ref, double s, const VehicleParams& p) {
  const RefPoint<double> rp = ref.at(s);
  VehicleState x;
  x.v = rp.v;
  x.beta = rp.beta;
  x.r = rp.kappa * rp.v;
  x.s = s;
  x.e = 0.0;
  x.dphi = -rp.beta;
  const auto vx = axle_longitudinal_speeds(x.v, x.beta, x.r, rp.delta_ff, p);
  x.omega_f = vx[0] / p.r_w;
  x.omega_r = (1.0 + rp.sigma_ff) * vx[1] / p.r_w;
  return x;
}

AxleForces model_forces(const TireSet& tires, const VehicleState& x, const DriveCommand& u,
                        const VehicleParams& p) {
  const auto [af, ar] = slip_angles(x.v, x.beta, x.r, u.delta, p);
  Slips sl;
  sl.alpha_f = af;
  sl.alpha_r = ar;
  sl.sigma_r = u.sigma_r;
  return evaluate_axles(tires, sl, x.r, x.v, x.beta, p.mu_fz_bar());
}

}  // namespace

RunLog simulate_closedloop(const Scenario& sc) {
  sc.nmpc.validate();
  if (!(sc.sim_dt > 0.0) || sc.sim_dt > sc.nmpc.dt) {
    throw Error(ErrorCode::invalid_argument, "sim dt must be positive and no larger than the controller dt");
  }
  if (sc.noise.r < 0.0 || sc.noise.v < 0.0 || sc.noise.beta < 0.0) {
    throw Error(ErrorCode::invalid_argument, "noise levels must be nonnegative");
  }
  const PathReference& ref = sc.reference;
  const double s_end = sc.s_end > 0.0 ? sc.s_end : ref.lap_length;
  const double horizon_length = sc.nmpc.horizon * sc.nmpc.dt * (*std::max_element(ref.v.begin(), ref.v.end()));
  if (s_end + horizon_length > ref.length() + 1e-9 && sc.duration <= 0.0) {
    throw Error(ErrorCode::invalid_argument, "reference too short for the requested run");
  }
  const int substeps = static_cast<int>(std::lround(sc.nmpc.dt / sc.sim_dt));
  const double h = sc.nmpc.dt / substeps;

  Plant plant(sc.plant, sc.params, &ref, sc.servo);
  plant.reset(reference_state(ref, 0.0, sc.params));
  Nmpc nmpc(sc.nmpc, sc.controller, sc.params, &ref);
  std::mt19937_64 rng = substream(sc.seed, "noise");
  std::normal_distribution<double> gauss(0.0, 1.0);
  DriveCommand previous{ref.delta_ff.front(), ref.sigma_ff.front()};

  RunLog log;
  double t = 0.0;
  const int max_steps = sc.duration > 0.0 ? static_cast<int>(std::lround(sc.duration / sc.nmpc.dt)) : 1000000;
  for (int step = 0; step < max_steps; ++step) {
    const VehicleState x = plant.state();
    if (sc.duration <= 0.0 && x.s >= s_end) break;
    VehicleState measured = x;
    measured.r += sc.noise.r * gauss(rng);
    measured.v += sc.noise.v * gauss(rng);
    measured.beta += sc.noise.beta * gauss(rng);
    LogRow row;
    row.t = t;
    row.x = x;
    try {
      const auto [cmd, stats] = nmpc.solve(measured, previous);
      row.delta = cmd.delta;
      row.sigma_cmd = cmd.sigma_r;
      row.iterations = stats.iterations;
      row.converged = stats.converged;
      row.cost = stats.cost;
      row.solve_time = stats.solve_time;
      row.commanded = model_forces(sc.controller, measured, cmd, sc.params);
      plant.derivative(x, Control{cmd.delta, 0.0, plant.last_torque()}, &row.achieved);
      const RefPoint<double> rp = ref.at(x.s);
      row.beta_ref = rp.beta;
      row.e = x.e;
      row.e_beta = x.beta - rp.beta;
      row.segment = static_cast<int>(ref.segment_at(x.s));
      for (int k = 0; k < substeps; ++k) plant.step(cmd, h);
      row.tau_r = plant.last_torque();
      previous = cmd;
    } catch (const Error&) {
      log.aborted = true;
      log.abort_s = x.s;
      log.abort_t = t;
      break;
    }
    log.rows.push_back(row);
    t += sc.nmpc.dt;
    if (std::abs(plant.state().e) > sc.e_abort || !std::isfinite(plant.state().e)) {
      log.aborted = true;
      log.abort_s = plant.state().s;
      log.abort_t = t;
      break;
    }
  }
  return log;
}

namespace {

const char* kLogHeader =
    "t,r,v,beta,omega_f,omega_r,s,e,dphi,delta,sigma_cmd,tau_r,fxf,fyf,fxr,fyr,cmd_fxf,cmd_fyf,cmd_fxr,cmd_fyr,"
    "e_beta,beta_ref,segment,iterations,converged,cost";

}  // namespace

void RunLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  out << kLogHeader << '\n';
  char buf[64];
  for (const LogRow& r : rows) {
    const double vals[] = {r.t,
                           r.x.r,
                           r.x.v,
                           r.x.beta,
                           r.x.omega_f,
                           r.x.omega_r,
                           r.x.s,
                           r.x.e,
                           r.x.dphi,
                           r.delta,
                           r.sigma_cmd,
                           r.tau_r,
                           r.achieved.f_xf,
                           r.achieved.f_yf,
                           r.achieved.f_xr,
                           r.achieved.f_yr,
                           r.commanded.f_xf,
                           r.commanded.f_yf,
                           r.commanded.f_xr,
                           r.commanded.f_yr,
                           r.e_beta,
                           r.beta_ref};
    bool first = true;
    for (double v : vals) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << (first ? "" : ",") << buf;
      first = false;
    }
    std::snprintf(buf, sizeof buf, ",%d,%d,%d,%.17g", r.segment, r.iterations, r.converged ? 1 : 0, r.cost);
    out << buf << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path);
}

void RunLog::write_timing_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  out << "step,s,segment,iterations,solve_time\n";
  char buf[128];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%d,%d,%.6e\n", i, rows[i].x.s, rows[i].segment, rows[i].iterations,
                  rows[i].solve_time);
    out << buf;
  }
}

RunLog RunLog::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kLogHeader) throw Error(ErrorCode::parse_error, path + ":1: unexpected header");
  RunLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* stop = nullptr;
      v.push_back(std::strtod(cell.c_str(), &stop));
      if (cell.empty() || *stop != '\0') {
        throw Error(ErrorCode::parse_error, path + ":" + std::to_string(line_no) + ": bad value '" + cell + "'");
      }
    }
    if (v.size() != 26) {
      throw Error(ErrorCode::parse_error, path + ":" + std::to_string(line_no) + ": expected 26 columns");
    }
    LogRow r;
    r.t = v[0];
    r.x = VehicleState{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    r.delta = v[9];
    r.sigma_cmd = v[10];
    r.tau_r = v[11];
    r.achieved = AxleForces{v[12], v[13], v[14], v[15]};
    r.commanded = AxleForces{v[16], v[17], v[18], v[19]};
    r.e = r.x.e;
    r.e_beta = v[20];
    r.beta_ref = v[21];
    r.segment = static_cast<int>(v[22]);
    r.iterations = static_cast<int>(v[23]);
    r.converged = v[24] != 0.0;
    r.cost = v[25];
    log.rows.push_back(r);
  }
  return log;
}

nlohmann::json TrackingMetrics::to_json() const {
  nlohmann::json j{{"rms_e", rms_e},
                   {"rms_e_beta", rms_e_beta},
                   {"steer_oscillation", steer_oscillation},
                   {"mean_iterations", mean_iterations},
                   {"mean_iterations_transition", mean_iterations_transition},
                   {"max_iterations", max_iterations},
                   {"steps", steps},
                   {"aborted", aborted},
                   {"abort_s", abort_s}};
  j["buckets"] = nlohmann::json::array();
  for (const BucketStats& b : buckets) {
    j["buckets"].push_back({{"s_lo", b.s_lo}, {"s_hi", b.s_hi}, {"steps", b.steps}, {"mean_iterations", b.mean_iterations}});
  }
  return j;
}

TrackingMetrics tracking_metrics(const RunLog& log, double bucket_length) {
  if (log.rows.empty()) throw Error(ErrorCode::invalid_argument, "empty run log");
  if (!(bucket_length > 0.0)) throw Error(ErrorCode::invalid_argument, "bucket length must be positive");
  TrackingMetrics m;
  m.steps = static_cast<int>(log.rows.size());
  m.aborted = log.aborted;
  m.abort_s = log.abort_s;
  double se = 0.0;
  double sb = 0.0;
  double it = 0.0;
  double it_tr = 0.0;
  int n_tr = 0;
  double time = 0.0;
  double osc = 0.0;
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    const LogRow& r = log.rows[i];
    se += r.e * r.e;
    sb += r.e_beta * r.e_beta;
    it += r.iterations;
    time += r.solve_time;
    m.max_iterations = std::max(m.max_iterations, r.iterations);
    if (r.segment == static_cast<int>(Segment::transition)) {
      it_tr += r.iterations;
      ++n_tr;
    }
    if (i > 0) osc += std::abs(r.delta - log.rows[i - 1].delta);
    const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(r.x.s / bucket_length)));
    if (m.buckets.size() <= b) {
      const std::size_t old = m.buckets.size();
      m.buckets.resize(b + 1);
      for (std::size_t k = old; k <= b; ++k) {
        m.buckets[k].s_lo = bucket_length * static_cast<double>(k);
        m.buckets[k].s_hi = bucket_length * static_cast<double>(k + 1);
      }
    }
    BucketStats& bs = m.buckets[b];
    bs.mean_iterations += r.iterations;
    bs.mean_solve_time += r.solve_time;
    ++bs.steps;
  }
  const double n = static_cast<double>(log.rows.size());
  m.rms_e = std::sqrt(se / n);
  m.rms_e_beta = std::sqrt(sb / n);
  m.mean_iterations = it / n;
  m.mean_solve_time = time / n;
  m.mean_iterations_transition = n_tr > 0 ? it_tr / n_tr : 0.0;
  m.steer_oscillation = log.rows.size() > 1 ? osc / (n - 1.0) : 0.0;
  for (BucketStats& b : m.buckets) {
    if (b.steps > 0) {
      b.mean_iterations /= b.steps;
      b.mean_solve_time /= b.steps;
    }
  }
  return m;
}

// --- plants and data generation -------------------------------------------------

MagicFormulaParams plant_params(std::string_view name, Axle axle) {
  const bool front = axle == Axle::front;
  if (name == "a") return front ? MagicFormulaParams{10.0, 1.45, 7600.0, 0.3} : MagicFormulaParams{8.0, 1.7, 7900.0, -0.5};
  if (name == "b") return front ? MagicFormulaParams{8.0, 1.6, 6800.0, -0.3} : MagicFormulaParams{7.0, 1.75, 7200.0, -0.6};
  throw Error(ErrorCode::invalid_argument, "unknown plant '" + std::string(name) + "'");
}

TireSet plant_tires(std::string_view name) {
  return TireSet{std::make_shared<MagicFormulaTire>(Regime::pure_lateral, plant_params(name, Axle::front)),
                 std::make_shared<MagicFormulaTire>(Regime::combined, plant_params(name, Axle::rear))};
}

Dataset generate_dataset(const DataGenConfig& cfg, const TireSet& plant_set, const VehicleParams& p) {
  if (!(cfg.duration > 0.0) || !(cfg.log_rate > 0.0) || !(cfg.sim_dt > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "duration, log rate and sim dt must be positive");
  }
  const int sim_per_log = static_cast<int>(std::lround(1.0 / (cfg.log_rate * cfg.sim_dt)));
  const int log_per_ctrl = static_cast<int>(std::lround(cfg.nmpc.dt * cfg.log_rate));
  if (sim_per_log < 1 || log_per_ctrl < 1) throw Error(ErrorCode::invalid_argument, "incompatible rates");
  const double h = 1.0 / (cfg.log_rate * sim_per_log);
  const auto rows = static_cast<std::size_t>(std::llround(cfg.duration * cfg.log_rate));

  ReferenceConfig rc = cfg.reference;
  rc.kind = ReferenceKind::figure8;
  {
    const double loop = 2.0 * M_PI * rc.radius - 0.5 * rc.transition;
    const double lap = 2.0 * (loop + rc.transition);
    rc.laps = static_cast<int>(std::ceil(cfg.duration * rc.figure8_speed * 1.5 / lap)) + 1;
  }
  const PathReference ref = make_reference(rc, plant_set, p);
  Plant plant(plant_set, p, &ref);
  Nmpc driver(cfg.nmpc, plant_set, p, &ref);
  std::mt19937_64 noise_rng = substream(cfg.seed, "noise");
  std::mt19937_64 data_rng = substream(cfg.seed, "data");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Steering dither: three sines with random phases and periods 0.7-3 s.
  std::array<double, 3> freq{};
  std::array<double, 3> phase{};
  for (std::size_t i = 0; i < 3; ++i) {
    freq[i] = 2.0 * M_PI / (0.7 + 2.3 * unit(data_rng));
    phase[i] = 2.0 * M_PI * unit(data_rng);
  }
  auto dither = [&](double t) {
    double d = 0.0;
    for (std::size_t i = 0; i < 3; ++i) d += std::sin(freq[i] * t + phase[i]);
    return cfg.dither_delta * d / 3.0;
  };

  struct Logged {
    VehicleState x;
    double delta;
    double tau_r;
    StateRates exact;
    double t;
  };
  std::vector<std::vector<Logged>> segments(1);
  auto restart = [&](double s) {
    plant.reset(reference_state(ref, std::fmod(s, ref.lap_length), p));
    driver.reset();
    if (!segments.back().empty()) segments.emplace_back();
  };
  restart(0.0);

  DriveCommand cmd{ref.delta_ff.front(), ref.sigma_ff.front()};
  DriveCommand previous = cmd;
  int pulse_index = -1;
  double pulse_sigma = 0.0;
  std::size_t logged = 0;
  std::size_t k = 0;
  while (logged < rows) {
    const double t = static_cast<double>(k) / cfg.log_rate;
    if (k % static_cast<std::size_t>(log_per_ctrl) == 0) {
      VehicleState measured = plant.state();
      measured.r += cfg.noise.r * gauss(noise_rng);
      measured.v += cfg.noise.v * gauss(noise_rng);
      measured.beta += cfg.noise.beta * gauss(noise_rng);
      bool ok = true;
      try {
        cmd = driver.solve(measured, previous).first;
      } catch (const Error&) {
        ok = false;
      }
      if (!ok) {
        restart(plant.state().s);
        cmd = DriveCommand{ref.at(plant.state().s).delta_ff, ref.at(plant.state().s).sigma_ff};
      }
      previous = cmd;
      const int pk = static_cast<int>(std::floor(t / cfg.pulse_period));
      if (pk != pulse_index) {
        pulse_index = pk;
        switch (pk % 3) {
          case 0: pulse_sigma = cfg.pulse_sigma_max; break;
          case 1: pulse_sigma = cfg.pulse_sigma_min; break;
          default: pulse_sigma = cfg.pulse_sigma_min + (cfg.pulse_sigma_max - cfg.pulse_sigma_min) * unit(data_rng);
        }
      }
    }
    DriveCommand applied = cmd;
    applied.delta = std::clamp(cmd.delta + dither(t), -cfg.nmpc.delta_max, cfg.nmpc.delta_max);
    if (t - cfg.pulse_period * pulse_index < cfg.pulse_length && pulse_index > 0) applied.sigma_r = pulse_sigma;

    bool failed = false;
    try {
      for (int i = 0; i < sim_per_log; ++i) plant.step(applied, h);
      const VehicleState& x = plant.state();
      if (std::abs(x.e) > 8.0 || !std::isfinite(x.e) || x.v < 2.0) failed = true;
    } catch (const Error&) {
      failed = true;
    }
    if (failed) {
      restart(plant.state().s);
      ++k;
      continue;
    }
    const VehicleState x = plant.state();
    const Control c{applied.delta, 0.0, plant.last_torque()};
    const VehicleState d = plant.derivative(x, c);
    segments.back().push_back({x, applied.delta, plant.last_torque(), StateRates{d.r, d.v, d.beta}, t});
    ++logged;
    ++k;
  }

  Dataset data;
  data.reserve(rows);
  std::size_t row = 0;
  for (const auto& seg : segments) {
    if (seg.empty()) continue;
    std::vector<VehicleState> meas;
    meas.reserve(seg.size());
    for (const Logged& l : seg) {
      VehicleState m = l.x;
      m.r += cfg.noise.r * gauss(noise_rng);
      m.v += cfg.noise.v * gauss(noise_rng);
      m.beta += cfg.noise.beta * gauss(noise_rng);
      meas.push_back(m);
    }
    std::vector<StateRates> rates;
    if (cfg.derivative_source == DerivativeSource::trace && seg.size() >= 3) {
      rates = differentiate_trace(meas, 1.0 / cfg.log_rate, cfg.smoothing_window);
    } else {
      for (const Logged& l : seg) rates.push_back(l.exact);
    }
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const VehicleState& m = meas[i];
      Sample s;
      s.t = static_cast<double>(row++) / cfg.log_rate;
      s.r = m.r;
      s.v = m.v;
      s.beta = m.beta;
      s.omega_f = m.omega_f;
      s.omega_r = m.omega_r;
      s.delta = seg[i].delta;
      s.tau_f = 0.0;
      s.tau_r = seg[i].tau_r;
      const Slips sl = compute_slips(m, s.delta, p);
      s.alpha_f = sl.alpha_f;
      s.alpha_r = sl.alpha_r;
      s.sigma_f = sl.sigma_f;
      s.sigma_r = sl.sigma_r;
      const AxleForces f = estimate_forces(rates[i], m, s.delta, p);
      s.fxf = f.f_xf;
      s.fyf = f.f_yf;
      s.fxr = f.f_xr;
      s.fyr = f.f_yr;
      s.mu_fz_bar = p.mu_fz_bar();
      data.push_back(s);
    }
  }
  return data;
}

}  // namespace tirelearn
