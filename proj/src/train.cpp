#include "tirelearn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <Eigen/Dense>

#include "tirelearn/adam.hpp"
#include "tirelearn/rng.hpp"

namespace tirelearn {

namespace {

template <class T>
TireInput<T> lift(const TireInput<double>& in) {
  return {T(in.alpha), T(in.sigma), BasicFeat<T>{in.feat.axle, T(in.feat.r), T(in.feat.v), T(in.feat.beta),
                                                 T(in.feat.mu_fz_bar)}};
}

void check_batch(std::span<const AxleSample> batch) {
  if (batch.empty()) throw Error(ErrorCode::invalid_argument, "empty batch");
}

}  // namespace

template <class T>
T sample_term(const LearnedTire& model, std::span<const T> theta, const AxleSample& s, const TrainConfig& cfg) {
  const double mu = cfg.mu_fz_bar;
  if (model.regime() == Regime::pure_lateral) {
    const bool analytic = model.kind() == ModelKind::exptanh_pure && cfg.lambda > 0.0;
    const LearnedOutput<T> o = model.forward(theta, lift<T>(s.in), analytic);
    const T e = o.fy - s.fy;
    T term = e * e;
    if (cfg.lambda > 0.0) {
      if (analytic) {
        for (int k = 0; k < o.n_peaks; ++k) {
          const T d = mu - abs(o.peaks[static_cast<std::size_t>(k)]);
          term = term + cfg.lambda * d * d;
        }
      } else {
        const T d = min(mu - abs(o.fy), 0.0);
        term = term + cfg.lambda * d * d;
      }
    }
    return term;
  }
  const bool analytic = model.kind() == ModelKind::exptanh_combined && cfg.lambda > 0.0;
  const LearnedOutput<T> o = model.forward(theta, lift<T>(s.in), analytic);
  const double ftot_bar = std::sqrt(s.fx * s.fx + s.fy * s.fy);
  const T et = o.ftot - ftot_bar;
  const T ey = o.fy - s.fy;
  const T ex = o.fx - s.fx;
  T term = et * et + ey * ey + ex * ex;
  if (cfg.lambda > 0.0) {
    const T d = analytic ? T(mu - abs(o.peaks[0])) : min(mu - abs(o.ftot), 0.0);
    term = term + cfg.lambda * d * d;
  }
  return term;
}

template <class T>
T loss_pure_t(const LearnedTire& model, std::span<const T> theta, std::span<const AxleSample> batch,
              const TrainConfig& cfg) {
  check_batch(batch);
  if (model.regime() != Regime::pure_lateral) throw Error(ErrorCode::invalid_argument, "pure-slip loss");
  T total(0.0);
  for (const AxleSample& s : batch) total = total + sample_term<T>(model, theta, s, cfg);
  return total / static_cast<double>(batch.size());
}

template <class T>
T loss_combined_t(const LearnedTire& model, std::span<const T> theta, std::span<const AxleSample> batch,
                  const TrainConfig& cfg) {
  check_batch(batch);
  if (model.regime() != Regime::combined) throw Error(ErrorCode::invalid_argument, "combined-slip loss");
  T total(0.0);
  for (const AxleSample& s : batch) total = total + sample_term<T>(model, theta, s, cfg);
  return total / static_cast<double>(batch.size());
}

template double loss_pure_t<double>(const LearnedTire&, std::span<const double>, std::span<const AxleSample>,
                                    const TrainConfig&);
template Var loss_pure_t<Var>(const LearnedTire&, std::span<const Var>, std::span<const AxleSample>,
                              const TrainConfig&);
template double loss_combined_t<double>(const LearnedTire&, std::span<const double>, std::span<const AxleSample>,
                                        const TrainConfig&);
template Var loss_combined_t<Var>(const LearnedTire&, std::span<const Var>, std::span<const AxleSample>,
                                  const TrainConfig&);

double loss_pure(const LearnedTire& model, std::span<const AxleSample> batch, const TrainConfig& cfg) {
  return loss_pure_t<double>(model, model.parameters(), batch, cfg);
}

double loss_combined(const LearnedTire& model, std::span<const AxleSample> batch, const TrainConfig& cfg) {
  return loss_combined_t<double>(model, model.parameters(), batch, cfg);
}

double loss(const LearnedTire& model, std::span<const double> theta, std::span<const AxleSample> batch,
            const TrainConfig& cfg) {
  const double v = model.regime() == Regime::pure_lateral ? loss_pure_t<double>(model, theta, batch, cfg)
                                                          : loss_combined_t<double>(model, theta, batch, cfg);
  if (!std::isfinite(v)) throw Error(ErrorCode::non_finite_loss, "loss is not finite");
  return v;
}

ValueAndGrad loss_and_gradient(const LearnedTire& model, std::span<const double> theta,
                               std::span<const AxleSample> batch, const TrainConfig& cfg) {
  check_batch(batch);
  // One small tape per sample keeps the working set in cache; the mean of the
  // per-sample gradients is the batch gradient.
  thread_local Tape tape;
  std::vector<Var> vars;
  vars.reserve(theta.size());
  ValueAndGrad out;
  out.gradient.assign(theta.size(), 0.0);
  for (const AxleSample& s : batch) {
    tape.clear();
    vars.clear();
    for (double t : theta) vars.push_back(tape.variable(t));
    const Var term = sample_term<Var>(model, std::span<const Var>(vars), s, cfg);
    if (!std::isfinite(term.value())) throw Error(ErrorCode::non_finite_loss, "loss is not finite");
    out.value += term.value();
    tape.backward(term);
    for (std::size_t k = 0; k < vars.size(); ++k) out.gradient[k] += tape.adjoint(vars[k]);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.value *= inv;
  for (double& g : out.gradient) g *= inv;
  return out;
}

std::unique_ptr<LearnedTire> make_learned_model(ModelKind kind, Axle axle, const TrainConfig& cfg) {
  switch (kind) {
    case ModelKind::exptanh_pure: return std::make_unique<ExpTanhTire>(axle, Regime::pure_lateral, cfg.exptanh);
    case ModelKind::exptanh_combined: return std::make_unique<ExpTanhTire>(axle, Regime::combined, cfg.exptanh);
    case ModelKind::node_pure: return std::make_unique<NodePureTire>(axle, cfg.node);
    case ModelKind::node_combined: return std::make_unique<NodeCombinedTire>(axle, cfg.node);
    default: break;
  }
  throw Error(ErrorCode::invalid_argument, "model kind '" + std::string(to_string(kind)) + "' is not trainable");
}

double rmse(const TireModel& model, std::span<const AxleSample> samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  const bool combined = model.regime() == Regime::combined;
  for (const AxleSample& s : samples) {
    const TireForce<double> f = model.evaluate(s.in);
    sum += (f.fy - s.fy) * (f.fy - s.fy);
    if (combined) sum += (f.fx - s.fx) * (f.fx - s.fx);
  }
  const double channels = combined ? 2.0 : 1.0;
  return std::sqrt(sum / (channels * static_cast<double>(samples.size())));
}

TrainResult train_model(ModelKind kind, Axle axle, const Dataset& data, const TrainConfig& cfg) {
  const std::vector<AxleSample> all = axle_view(data, axle);
  const SplitIndices split = split_blocks(all.size(), cfg.test_fraction, cfg.block_size);
  return train_model(kind, axle, gather(all, split.train), gather(all, split.test), cfg);
}

TrainResult train_model(ModelKind kind, Axle axle, const std::vector<AxleSample>& train,
                        const std::vector<AxleSample>& test, const TrainConfig& cfg) {
  if (train.empty()) throw Error(ErrorCode::invalid_argument, "training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw Error(ErrorCode::invalid_argument, "epochs and batch size");
  if (cfg.lambda < 0.0) throw Error(ErrorCode::invalid_argument, "lambda must be nonnegative");
  auto model = make_learned_model(kind, axle, cfg);
  model->set_normalization(fit_normalization(train, axle, cfg.mu_fz_bar, cfg.slip_scale));
  std::mt19937_64 init_rng = substream(cfg.seed, "init");
  std::mt19937_64 shuffle_rng = substream(cfg.seed, "shuffle");
  model->initialize(init_rng);

  std::vector<double> theta(model->parameters().begin(), model->parameters().end());
  AdamState opt(theta.size(), AdamConfig{cfg.lr0, cfg.decay});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<AxleSample> batch;
  TrainResult result;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      ValueAndGrad vg;
      try {
        vg = loss_and_gradient(*model, theta, batch, cfg);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite_loss || e.code() == ErrorCode::non_finite_state) {
          throw Error(ErrorCode::diverged_training,
                      "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        throw;
      }
      opt.step(theta, vg.gradient, epoch);
      epoch_loss += vg.value * static_cast<double>(end - start);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  model->set_parameters(theta);
  result.epochs = cfg.epochs;
  result.train_rmse = rmse(*model, train);
  result.test_rmse = rmse(*model, test);
  model->training_metadata = {{"seed", cfg.seed},
                              {"epochs", cfg.epochs},
                              {"batch_size", cfg.batch_size},
                              {"lr0", cfg.lr0},
                              {"lambda", cfg.lambda},
                              {"final_loss", result.loss_history.back()},
                              {"train_rmse", result.train_rmse},
                              {"test_rmse", result.test_rmse},
                              {"train_samples", train.size()}};
  result.model = std::move(model);
  return result;
}

// --- parametric baselines ------------------------------------------------------

namespace {

/// Writes up to two residuals for one sample given active parameters.
using ResidualFn = std::function<int(std::span<const Var>, const AxleSample&, std::array<Var, 2>&)>;

struct LsqProblem {
  ResidualFn residual;
  std::span<const AxleSample> samples;
  std::size_t dim = 0;

  double cost(std::span<const double> p) const {
    std::vector<Var> vars(p.begin(), p.end());
    std::array<Var, 2> r;
    double sum = 0.0;
    for (const AxleSample& s : samples) {
      const int n = residual(vars, s, r);
      for (int k = 0; k < n; ++k) sum += r[static_cast<std::size_t>(k)].value() * r[static_cast<std::size_t>(k)].value();
    }
    return sum / static_cast<double>(samples.size());
  }

  /// Normal-equation pieces J^T J, J^T r and the cost.
  double linearize(std::span<const double> p, Eigen::MatrixXd& jtj, Eigen::VectorXd& jtr) const {
    const auto d = static_cast<Eigen::Index>(dim);
    jtj = Eigen::MatrixXd::Zero(d, d);
    jtr = Eigen::VectorXd::Zero(d);
    Tape tape;
    std::vector<Var> vars;
    std::array<Var, 2> r;
    Eigen::VectorXd row(d);
    double sum = 0.0;
    for (const AxleSample& s : samples) {
      tape.clear();
      vars.clear();
      for (double v : p) vars.push_back(tape.variable(v));
      const int n = residual(vars, s, r);
      for (int k = 0; k < n; ++k) {
        const Var& rk = r[static_cast<std::size_t>(k)];
        tape.backward(rk);
        for (Eigen::Index i = 0; i < d; ++i) row[i] = tape.adjoint(vars[static_cast<std::size_t>(i)]);
        jtj.noalias() += row * row.transpose();
        jtr += row * rk.value();
        sum += rk.value() * rk.value();
      }
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    jtj *= inv;
    jtr *= inv;
    return sum * inv;
  }
};

std::vector<double> solve_least_squares(const LsqProblem& prob, std::vector<double> p, const FitConfig& cfg,
                                        double* final_cost) {
  Eigen::MatrixXd jtj;
  Eigen::VectorXd jtr;
  AdamState opt(p.size(), AdamConfig{cfg.lr, 0.0});
  std::vector<double> g(p.size());
  for (int it = 0; it < cfg.adam_iterations; ++it) {
    const double c = prob.linearize(p, jtj, jtr);
    if (!std::isfinite(c)) throw Error(ErrorCode::non_finite_loss, "baseline fit loss is not finite");
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * jtr[static_cast<Eigen::Index>(i)];
    opt.step(p, g, 0);
  }
  double cost = prob.linearize(p, jtj, jtr);
  if (!std::isfinite(cost)) throw Error(ErrorCode::non_finite_loss, "baseline fit loss is not finite");
  double damping = 1e-3;
  for (int it = 0; it < cfg.lm_iterations; ++it) {
    bool accepted = false;
    for (int tries = 0; tries < 12 && !accepted; ++tries) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, i) += damping * std::max(jtj(i, i), 1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-jtr);
      std::vector<double> trial = p;
      for (std::size_t i = 0; i < p.size(); ++i) trial[i] += step[static_cast<Eigen::Index>(i)];
      const double c = prob.cost(trial);
      if (std::isfinite(c) && c < cost) {
        p = trial;
        damping = std::max(damping / 3.0, 1e-9);
        accepted = true;
        const double previous = cost;
        cost = prob.linearize(p, jtj, jtr);
        if (previous - cost <= 1e-14 * std::max(previous, 1e-300)) {
          it = cfg.lm_iterations;
        }
      } else {
        damping *= 4.0;
      }
    }
    if (!accepted) break;
  }
  if (final_cost != nullptr) *final_cost = cost;
  return p;
}

}  // namespace

MagicFormulaFit fit_magic_formula(std::span<const AxleSample> samples, Regime regime, MagicFormulaParams initial,
                                  const FitConfig& cfg) {
  if (samples.empty()) throw Error(ErrorCode::invalid_argument, "cannot fit to an empty dataset");
  initial.validate();
  // b, c, d = exp(p), e = 1 - exp(p) keeps the parameters valid.
  std::vector<double> p{std::log(initial.b), std::log(initial.c), std::log(initial.d), std::log(1.0 - initial.e)};
  LsqProblem prob;
  prob.samples = samples;
  prob.dim = 4;
  prob.residual = [regime](std::span<const Var> q, const AxleSample& s, std::array<Var, 2>& r) {
    const Var b = exp(q[0]);
    const Var c = exp(q[1]);
    const Var d = exp(q[2]);
    const Var e = 1.0 - exp(q[3]);
    const TireForce<Var> f = magic_formula_forces<Var, Var>(lift<Var>(s.in), regime, b, c, d, e);
    r[0] = f.fy - s.fy;
    if (regime == Regime::pure_lateral) return 1;
    r[1] = f.fx - s.fx;
    return 2;
  };
  MagicFormulaFit fit;
  p = solve_least_squares(prob, p, cfg, &fit.loss);
  fit.params = {std::exp(p[0]), std::exp(p[1]), std::exp(p[2]), 1.0 - std::exp(p[3])};
  return fit;
}

FialaFit fit_fiala(std::span<const AxleSample> samples, Regime regime, FialaParams initial,
                   double initial_long_stiffness, const FitConfig& cfg) {
  if (samples.empty()) throw Error(ErrorCode::invalid_argument, "cannot fit to an empty dataset");
  initial.validate();
  const bool combined = regime == Regime::combined;
  if (combined && !(initial_long_stiffness > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "combined Fiala fit needs a positive longitudinal stiffness");
  }
  std::vector<double> p{std::log(initial.stiffness), std::log(initial.peak())};
  if (combined) p.push_back(std::log(initial_long_stiffness));
  LsqProblem prob;
  prob.samples = samples;
  prob.dim = p.size();
  prob.residual = [regime, combined](std::span<const Var> q, const AxleSample& s, std::array<Var, 2>& r) {
    const Var c_alpha = exp(q[0]);
    const Var peak = exp(q[1]);
    const Var c_sigma = combined ? exp(q[2]) : Var(1.0);
    const TireForce<Var> f = fiala_forces<Var, Var>(lift<Var>(s.in), regime, c_alpha, peak, c_sigma);
    r[0] = f.fy - s.fy;
    if (!combined) return 1;
    r[1] = f.fx - s.fx;
    return 2;
  };
  FialaFit fit;
  p = solve_least_squares(prob, p, cfg, &fit.loss);
  fit.lateral = initial;
  fit.lateral.stiffness = std::exp(p[0]);
  fit.lateral.mu = std::exp(p[1]) / initial.f_z;
  fit.longitudinal_stiffness = combined ? std::exp(p[2]) : initial_long_stiffness;
  return fit;
}

// --- evaluation ----------------------------------------------------------------

double EvalReport::zero_bin_ratio(std::size_t i, std::size_t j) const {
  const double d = models.at(j).zero_bin_density;
  return d > 0.0 ? models.at(i).zero_bin_density / d : INFINITY;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["bins"] = bin_edges.empty() ? 0 : bin_edges.size() - 1;
  j["center_bin"] = center_bin;
  j["range"] = bin_edges.empty() ? nlohmann::json::array() : nlohmann::json{bin_edges.front(), bin_edges.back()};
  j["models"] = nlohmann::json::array();
  for (const ModelEval& m : models) {
    j["models"].push_back({{"name", m.name},
                           {"rmse", m.rmse},
                           {"rmse_fx", m.rmse_fx},
                           {"rmse_fy", m.rmse_fy},
                           {"zero_bin_density", m.zero_bin_density}});
  }
  return j;
}

void EvalReport::write_histogram_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  out << "bin_lo,bin_hi";
  for (const ModelEval& m : models) out << ',' << m.name;
  out << '\n';
  char buf[64];
  for (std::size_t b = 0; b + 1 < bin_edges.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", bin_edges[b], bin_edges[b + 1]);
    out << buf;
    for (const ModelEval& m : models) {
      std::snprintf(buf, sizeof buf, ",%.9g", m.density[b]);
      out << buf;
    }
    out << '\n';
  }
}

EvalReport evaluate(const std::vector<std::pair<std::string, const TireModel*>>& models,
                    std::span<const AxleSample> test, int bins) {
  if (models.empty() || test.empty()) throw Error(ErrorCode::invalid_argument, "nothing to evaluate");
  if (bins < 1 || bins % 2 == 0) throw Error(ErrorCode::invalid_argument, "bin count must be odd");
  const Regime regime = models.front().second->regime();
  for (const auto& m : models) {
    if (m.second->regime() != regime) throw Error(ErrorCode::invalid_argument, "models must share a regime");
  }
  EvalReport rep;
  std::vector<std::vector<double>> errors(models.size());
  double pooled = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    ModelEval me;
    me.name = models[i].first;
    double sx = 0.0;
    double sy = 0.0;
    for (const AxleSample& s : test) {
      const TireForce<double> f = models[i].second->evaluate(s.in);
      sx += (f.fx - s.fx) * (f.fx - s.fx);
      sy += (f.fy - s.fy) * (f.fy - s.fy);
      const double e = regime == Regime::pure_lateral
                           ? f.fy - s.fy
                           : std::hypot(f.fx, f.fy) - std::hypot(s.fx, s.fy);
      errors[i].push_back(e);
      pooled += e * e;
      ++count;
    }
    const double n = static_cast<double>(test.size());
    me.rmse_fx = std::sqrt(sx / n);
    me.rmse_fy = std::sqrt(sy / n);
    me.rmse = regime == Regime::pure_lateral ? me.rmse_fy : std::sqrt((sx + sy) / (2.0 * n));
    rep.models.push_back(std::move(me));
  }
  double sigma = std::sqrt(pooled / static_cast<double>(count));
  if (!(sigma > 0.0)) sigma = 1.0;
  const double lo = -3.0 * sigma;
  const double width = 6.0 * sigma / bins;
  rep.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) rep.bin_edges[static_cast<std::size_t>(b)] = lo + width * b;
  rep.center_bin = bins / 2;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
    for (double e : errors[i]) {
      const int b = std::clamp(static_cast<int>(std::floor((e - lo) / width)), 0, bins - 1);
      hist[static_cast<std::size_t>(b)] += 1.0;
    }
    const double norm = 1.0 / (static_cast<double>(errors[i].size()) * width);
    for (double& h : hist) h *= norm;
    rep.models[i].zero_bin_density = hist[static_cast<std::size_t>(rep.center_bin)];
    rep.models[i].density = std::move(hist);
  }
  return rep;
}

std::vector<CurveRow> sweep_curves(const TireModel& model, const std::vector<Feat>& feats,
                                   const std::vector<double>& alpha_grid, double sigma) {
  std::vector<CurveRow> rows;
  rows.reserve(feats.size() * alpha_grid.size());
  for (std::size_t c = 0; c < feats.size(); ++c) {
    for (double a : alpha_grid) {
      const TireForce<double> f = model.evaluate(TireInput<double>{a, sigma, feats[c]});
      rows.push_back({c, feats[c], a, sigma, f.fx, f.fy});
    }
  }
  return rows;
}

void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path + " for writing");
  out << "curve,r,V,beta,mu_fz_bar,alpha,sigma,fx,fy\n";
  char buf[256];
  for (const CurveRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.curve, r.feat.r, r.feat.v,
                  r.feat.beta, r.feat.mu_fz_bar, r.alpha, r.sigma, r.fx, r.fy);
    out << buf;
  }
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) return {};
  if (n == 1) return {lo};
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return v;
}

}  // namespace tirelearn
