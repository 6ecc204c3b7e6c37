#include "tirelearn/node.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <Eigen/Dense>

#include "tirelearn/adam.hpp"

namespace tirelearn {

namespace {

// The ODEs are integrated in normalised coordinates u = slip / slip_scale,
// f = F / force_scale, g = df/du, so network outputs of order one give
// curvatures of order one.

template <class T>
T clamp_output(const T& o, const NodeConfig& c) {
  return min(max(o, c.clamp_lo), c.clamp_hi);
}

template <class T>
bool finite_state(const OdeState<T>& y) {
  return std::isfinite(value_of(y.f)) && std::isfinite(value_of(y.g));
}

nlohmann::json node_config_json(const NodeConfig& c) {
  return {{"n_steps", c.n_steps}, {"clamp_lo", c.clamp_lo}, {"clamp_hi", c.clamp_hi}, {"pin_split", c.pin_split}};
}

NodeConfig node_config_from_json(const nlohmann::json& j) {
  NodeConfig c;
  const auto& w = j.at("layer_widths");
  const auto convex = w.at("convex").get<std::vector<int>>();
  c.depth = static_cast<int>(convex.size()) - 2;
  c.hidden = convex.size() > 2 ? convex[1] : 0;
  const auto head = w.at("head").get<std::vector<int>>();
  c.inflection_hidden = head.size() > 2 ? head[1] : 0;
  if (w.contains("split")) {
    const auto split = w.at("split").get<std::vector<int>>();
    c.split_hidden = split.size() > 2 ? split[1] : 0;
  }
  c.n_steps = j.at("n_steps").get<int>();
  c.clamp_lo = j.at("clamp_lo").get<double>();
  c.clamp_hi = j.at("clamp_hi").get<double>();
  c.pin_split = j.value("pin_split", false);
  return c;
}

void check_steps(int n) {
  if (n < 1) throw Error(ErrorCode::invalid_argument, "n_steps must be positive");
}

}  // namespace

// --- pure slip ---------------------------------------------------------------

NodePureTire::NodePureTire(Axle axle, NodeConfig config)
    : LearnedTire(axle, Regime::pure_lateral), config_(config) {
  check_steps(config_.n_steps);
  const int k = feat_size(axle);
  convex_net_ = Mlp(mlp_widths(6 + k, config_.hidden, config_.depth, 1));
  concave_net_ = Mlp(mlp_widths(6 + k, config_.hidden, config_.depth, 1));
  head_net_ = Mlp(mlp_widths(k, config_.inflection_hidden, 2, 5));
  theta_.assign(convex_net_.param_count() + concave_net_.param_count() + head_net_.param_count(), 0.0);
  norm_ = Normalization::identity(axle, 7000.0);
}

void NodePureTire::initialize(std::mt19937_64& rng) {
  std::span<double> all(theta_);
  const std::size_t n1 = convex_net_.param_count();
  const std::size_t n2 = concave_net_.param_count();
  auto p1 = all.subspan(0, n1);
  auto p2 = all.subspan(n1, n2);
  auto p3 = all.subspan(n1 + n2);
  convex_net_.init_glorot(p1, rng);
  concave_net_.init_glorot(p2, rng);
  head_net_.init_glorot(p3, rng);
  // Prior: inflections at alpha_0 -+ slip_scale / 2, zero offset, a unit
  // cornering slope falling with alpha, curvature magnitude ~2.
  p1[convex_net_.output_bias_offset()] = std::log(2.0);
  p2[concave_net_.output_bias_offset()] = std::log(2.0);
  const std::size_t ob = head_net_.output_bias_offset();
  p3[ob + 0] = 0.0;
  p3[ob + 1] = std::log(0.5);
  p3[ob + 2] = std::log(0.5);
  p3[ob + 3] = 0.0;
  p3[ob + 4] = -3.0;
}

template <class T, class P>
PureHead<T> NodePureTire::head_impl(std::span<const P> theta, std::span<const T> feat) const {
  const std::size_t off = convex_net_.param_count() + concave_net_.param_count();
  std::array<T, 5> o{};
  head_net_.forward<T, P>(theta.subspan(off, head_net_.param_count()), feat, std::span<T>(o));
  PureHead<T> h;
  h.center = o[0];
  h.lower = o[0] - exp(o[1]);
  h.upper = o[0] + exp(o[2]);
  h.f0 = o[3];
  h.g0 = o[4];
  return h;  // normalised units
}

template <class T, class P>
OdeState<T> NodePureTire::rhs_impl(std::span<const P> theta, const T& u, const OdeState<T>& y, const PureHead<T>& h,
                                   std::span<const T> feat, Curvature region) const {
  T q;
  if (curvature_override_) {
    q = T(clamp_output(*curvature_override_, config_));
  } else {
    std::array<T, 6 + 4> z{};
    z[0] = u;
    z[1] = y.f;
    z[2] = y.g;
    z[3] = h.lower;
    z[4] = h.center;
    z[5] = h.upper;
    for (std::size_t i = 0; i < feat.size(); ++i) z[6 + i] = feat[i];
    const std::span<const T> zin(z.data(), 6 + feat.size());
    std::array<T, 1> o{};
    if (region == Curvature::convex) {
      convex_net_.forward<T, P>(theta.subspan(0, convex_net_.param_count()), zin, std::span<T>(o));
    } else {
      concave_net_.forward<T, P>(theta.subspan(convex_net_.param_count(), concave_net_.param_count()), zin,
                                 std::span<T>(o));
    }
    q = clamp_output(o[0], config_);
  }
  const T mag = exp(q);
  return {y.g, region == Curvature::convex ? mag : -mag};
}

template <class T, class P>
OdeState<T> NodePureTire::solve_impl(std::span<const P> theta, const T& target, const BasicFeat<T>& feat,
                                     int n_steps) const {
  check_steps(n_steps);
  std::array<T, 4> fn{};
  const std::span<T> fspan(fn.data(), static_cast<std::size_t>(feat.size()));
  norm_.features(feat, fspan);
  const std::span<const T> fc(fn.data(), fspan.size());
  const PureHead<T> h = head_impl<T, P>(theta, fc);
  const T ut = target / norm_.slip_scale;
  auto rhs_for = [&](Curvature region) {
    return [&, region](const T& u, const OdeState<T>& y) { return rhs_impl<T, P>(theta, u, y, h, fc, region); };
  };
  // Each segment has a fixed curvature sign, so no RK4 step straddles an
  // inflection point.
  OdeState<T> y{h.f0, h.g0};
  if (value_of(ut) >= value_of(h.center)) {
    const bool beyond = value_of(ut) > value_of(h.upper);
    const T mid = beyond ? h.upper : ut;
    y = integrate_segment(rhs_for(Curvature::convex), y, h.center, mid, n_steps);
    if (beyond) y = integrate_segment(rhs_for(Curvature::concave), y, h.upper, ut, n_steps);
  } else {
    const bool beyond = value_of(ut) <= value_of(h.lower);
    const T mid = beyond ? h.lower : ut;
    y = integrate_segment(rhs_for(Curvature::concave), y, h.center, mid, n_steps);
    if (beyond) y = integrate_segment(rhs_for(Curvature::convex), y, h.lower, ut, n_steps);
  }
  if (!finite_state(y)) throw Error(ErrorCode::non_finite_state, "NODE trajectory diverged");
  return y;
}

template <class T, class P>
LearnedOutput<T> NodePureTire::compute(std::span<const P> theta, const TireInput<T>& in) const {
  const OdeState<T> y = solve_impl<T, P>(theta, in.alpha, in.feat, config_.n_steps);
  LearnedOutput<T> out;
  out.fy = norm_.force_scale * y.f;
  out.fx = T(0.0);
  out.ftot = out.fy;
  return out;
}

LearnedOutput<double> NodePureTire::forward(std::span<const double> theta, const TireInput<double>& in,
                                            bool) const {
  return compute<double, double>(theta, in);
}

LearnedOutput<Var> NodePureTire::forward(std::span<const Var> theta, const TireInput<Var>& in, bool) const {
  return compute<Var, Var>(theta, in);
}

TireForce<Var> NodePureTire::evaluate(const TireInput<Var>& in) const {
  const LearnedOutput<Var> out = compute<Var, double>(std::span<const double>(theta_), in);
  return {out.fx, out.fy};
}

PureHead<double> NodePureTire::head(const Feat& feat) const {
  std::array<double, 4> fn{};
  const std::span<double> fspan(fn.data(), static_cast<std::size_t>(feat.size()));
  norm_.features(feat, fspan);
  PureHead<double> h = head_impl<double, double>(theta_, std::span<const double>(fspan));
  const double ss = norm_.slip_scale;
  const double s = norm_.force_scale;
  return {ss * h.lower, ss * h.center, ss * h.upper, s * h.f0, s * h.g0 / ss};
}

OdeState<double> NodePureTire::rhs(double alpha, OdeState<double> y, const PureHead<double>& h,
                                   const Feat& feat) const {
  const double ss = norm_.slip_scale;
  const double s = norm_.force_scale;
  std::array<double, 4> fn{};
  const std::span<double> fspan(fn.data(), static_cast<std::size_t>(feat.size()));
  norm_.features(feat, fspan);
  const PureHead<double> hn{h.lower / ss, h.center / ss, h.upper / ss, h.f0 / s, h.g0 * ss / s};
  const OdeState<double> yn{y.f / s, y.g * ss / s};
  const OdeState<double> d = rhs_impl<double, double>(theta_, alpha / ss, yn, hn, std::span<const double>(fspan),
                                                      pure_region(alpha, h));
  return {y.g, d.g * s / (ss * ss)};
}

OdeState<double> NodePureTire::solve(double slip_target, const Feat& feat) const {
  return solve(slip_target, feat, config_.n_steps);
}

OdeState<double> NodePureTire::solve(double slip_target, const Feat& feat, int n_steps) const {
  if (!std::isfinite(slip_target)) throw Error(ErrorCode::invalid_argument, "slip target must be finite");
  const OdeState<double> y = solve_impl<double, double>(theta_, slip_target, feat, n_steps);
  return {norm_.force_scale * y.f, norm_.force_scale * y.g / norm_.slip_scale};
}

nlohmann::json NodePureTire::to_json() const {
  nlohmann::json j = base_json();
  j["layer_widths"] = {{"convex", convex_net_.widths()}, {"concave", concave_net_.widths()},
                       {"head", head_net_.widths()}};
  j.update(node_config_json(config_));
  return j;
}

std::unique_ptr<NodePureTire> NodePureTire::from_json(const nlohmann::json& j) {
  auto model = std::make_unique<NodePureTire>(parse_axle(j.at("axle").get<std::string>()), node_config_from_json(j));
  model->load_base_json(j);
  return model;
}

// --- combined slip -----------------------------------------------------------

NodeCombinedTire::NodeCombinedTire(Axle axle, NodeConfig config)
    : LearnedTire(axle, Regime::combined), config_(config) {
  check_steps(config_.n_steps);
  const int k = feat_size(axle);
  concave_net_ = Mlp(mlp_widths(4 + k, config_.hidden, config_.depth, 1));
  convex_net_ = Mlp(mlp_widths(4 + k, config_.hidden, config_.depth, 1));
  head_net_ = Mlp(mlp_widths(k, config_.inflection_hidden, 2, 3));
  std::size_t n = concave_net_.param_count() + convex_net_.param_count() + head_net_.param_count();
  if (!config_.pin_split) {
    split_net_ = Mlp(mlp_widths(2, config_.split_hidden, 2, 2));
    n += split_net_.param_count();
  }
  theta_.assign(n, 0.0);
  norm_ = Normalization::identity(axle, 7000.0);
}

void NodeCombinedTire::initialize(std::mt19937_64& rng) {
  std::span<double> all(theta_);
  const std::size_t n1 = concave_net_.param_count();
  const std::size_t n2 = convex_net_.param_count();
  const std::size_t n3 = head_net_.param_count();
  auto p1 = all.subspan(0, n1);
  auto p2 = all.subspan(n1, n2);
  auto p3 = all.subspan(n1 + n2, n3);
  concave_net_.init_glorot(p1, rng);
  convex_net_.init_glorot(p2, rng);
  head_net_.init_glorot(p3, rng);
  p1[concave_net_.output_bias_offset()] = std::log(2.0);
  p2[convex_net_.output_bias_offset()] = std::log(2.0);
  const std::size_t ob = head_net_.output_bias_offset();
  p3[ob + 0] = std::log(1.25);
  p3[ob + 1] = 0.0;
  p3[ob + 2] = 3.0;
  if (!config_.pin_split) {
    auto p4 = all.subspan(n1 + n2 + n3);
    split_net_.init_glorot(p4, rng);
  }
}

template <class T, class P>
CombinedHead<T> NodeCombinedTire::head_impl(std::span<const P> theta, std::span<const T> feat) const {
  const std::size_t off = concave_net_.param_count() + convex_net_.param_count();
  std::array<T, 3> o{};
  head_net_.forward<T, P>(theta.subspan(off, head_net_.param_count()), feat, std::span<T>(o));
  return {exp(o[0]), o[1], o[2]};
}

template <class T, class P>
OdeState<T> NodeCombinedTire::rhs_impl(std::span<const P> theta, const T& u, const OdeState<T>& y,
                                       const CombinedHead<T>& h, std::span<const T> feat, Curvature region) const {
  T q;
  if (curvature_override_) {
    q = T(clamp_output(*curvature_override_, config_));
  } else {
    std::array<T, 4 + 4> z{};
    z[0] = u;
    z[1] = y.f;
    z[2] = y.g;
    z[3] = h.kappa1;
    for (std::size_t i = 0; i < feat.size(); ++i) z[4 + i] = feat[i];
    const std::span<const T> zin(z.data(), 4 + feat.size());
    std::array<T, 1> o{};
    if (region == Curvature::concave) {
      concave_net_.forward<T, P>(theta.subspan(0, concave_net_.param_count()), zin, std::span<T>(o));
    } else {
      convex_net_.forward<T, P>(theta.subspan(concave_net_.param_count(), convex_net_.param_count()), zin,
                                std::span<T>(o));
    }
    q = clamp_output(o[0], config_);
  }
  const T mag = exp(q);
  return {y.g, region == Curvature::convex ? mag : -mag};
}

template <class T, class P>
OdeState<T> NodeCombinedTire::solve_impl(std::span<const P> theta, const T& target, const BasicFeat<T>& feat,
                                         int n_steps) const {
  check_steps(n_steps);
  if (value_of(target) < 0.0) throw Error(ErrorCode::invalid_argument, "total slip must be nonnegative");
  std::array<T, 4> fn{};
  const std::span<T> fspan(fn.data(), static_cast<std::size_t>(feat.size()));
  norm_.features(feat, fspan);
  const std::span<const T> fc(fn.data(), fspan.size());
  const CombinedHead<T> h = head_impl<T, P>(theta, fc);
  const T ut = target / norm_.slip_scale;
  auto rhs_for = [&](Curvature region) {
    return [&, region](const T& u, const OdeState<T>& y) { return rhs_impl<T, P>(theta, u, y, h, fc, region); };
  };
  OdeState<T> y{h.f0, h.g0};
  const bool beyond = value_of(ut) > value_of(h.kappa1);
  const T mid = beyond ? h.kappa1 : ut;
  y = integrate_segment(rhs_for(Curvature::concave), y, T(0.0), mid, n_steps);
  if (beyond) y = integrate_segment(rhs_for(Curvature::convex), y, h.kappa1, ut, n_steps);
  if (!finite_state(y)) throw Error(ErrorCode::non_finite_state, "NODE trajectory diverged");
  return y;
}

template <class T, class P>
LearnedOutput<T> NodeCombinedTire::compute(std::span<const P> theta, const TireInput<T>& in) const {
  const T t = tan(in.alpha);
  const T kappa = sqrt(t * t + in.sigma * in.sigma + 1e-16);
  const OdeState<T> y = solve_impl<T, P>(theta, kappa, in.feat, config_.n_steps);
  LearnedOutput<T> out;
  out.ftot = norm_.force_scale * y.f;
  T s1;
  T s2;
  if (config_.pin_split) {
    s1 = -t;
    s2 = in.sigma;
  } else {
    const std::size_t off = concave_net_.param_count() + convex_net_.param_count() + head_net_.param_count();
    const std::array<T, 2> x{in.alpha / norm_.slip_scale, in.sigma / norm_.slip_scale};
    std::array<T, 2> s{};
    split_net_.forward<T, P>(theta.subspan(off), std::span<const T>(x), std::span<T>(s));
    s1 = s[0];
    s2 = s[1];
  }
  const TireForce<T> f = split_total_force(out.ftot, s1, s2);
  out.fx = f.fx;
  out.fy = f.fy;
  return out;
}

LearnedOutput<double> NodeCombinedTire::forward(std::span<const double> theta, const TireInput<double>& in,
                                                bool) const {
  return compute<double, double>(theta, in);
}

LearnedOutput<Var> NodeCombinedTire::forward(std::span<const Var> theta, const TireInput<Var>& in, bool) const {
  return compute<Var, Var>(theta, in);
}

TireForce<Var> NodeCombinedTire::evaluate(const TireInput<Var>& in) const {
  const LearnedOutput<Var> out = compute<Var, double>(std::span<const double>(theta_), in);
  return {out.fx, out.fy};
}

CombinedHead<double> NodeCombinedTire::head(const Feat& feat) const {
  std::array<double, 4> fn{};
  const std::span<double> fspan(fn.data(), static_cast<std::size_t>(feat.size()));
  norm_.features(feat, fspan);
  const CombinedHead<double> h = head_impl<double, double>(theta_, std::span<const double>(fspan));
  const double ss = norm_.slip_scale;
  const double s = norm_.force_scale;
  return {ss * h.kappa1, s * h.f0, s * h.g0 / ss};
}

OdeState<double> NodeCombinedTire::rhs(double kappa, OdeState<double> y, const CombinedHead<double>& h,
                                       const Feat& feat) const {
  const double ss = norm_.slip_scale;
  const double s = norm_.force_scale;
  std::array<double, 4> fn{};
  const std::span<double> fspan(fn.data(), static_cast<std::size_t>(feat.size()));
  norm_.features(feat, fspan);
  const CombinedHead<double> hn{h.kappa1 / ss, h.f0 / s, h.g0 * ss / s};
  const OdeState<double> yn{y.f / s, y.g * ss / s};
  const Curvature region = kappa <= h.kappa1 ? Curvature::concave : Curvature::convex;
  const OdeState<double> d =
      rhs_impl<double, double>(theta_, kappa / ss, yn, hn, std::span<const double>(fspan), region);
  return {y.g, d.g * s / (ss * ss)};
}

OdeState<double> NodeCombinedTire::solve(double kappa_target, const Feat& feat) const {
  return solve(kappa_target, feat, config_.n_steps);
}

OdeState<double> NodeCombinedTire::solve(double kappa_target, const Feat& feat, int n_steps) const {
  if (!std::isfinite(kappa_target)) throw Error(ErrorCode::invalid_argument, "slip target must be finite");
  const OdeState<double> y = solve_impl<double, double>(theta_, kappa_target, feat, n_steps);
  return {norm_.force_scale * y.f, norm_.force_scale * y.g / norm_.slip_scale};
}

nlohmann::json NodeCombinedTire::to_json() const {
  nlohmann::json j = base_json();
  j["layer_widths"] = {{"concave", concave_net_.widths()}, {"convex", convex_net_.widths()},
                       {"head", head_net_.widths()}};
  if (!config_.pin_split) j["layer_widths"]["split"] = split_net_.widths();
  j.update(node_config_json(config_));
  return j;
}

std::unique_ptr<NodeCombinedTire> NodeCombinedTire::from_json(const nlohmann::json& j) {
  auto model =
      std::make_unique<NodeCombinedTire>(parse_axle(j.at("axle").get<std::string>()), node_config_from_json(j));
  model->load_base_json(j);
  return model;
}

// --- distilled MLP -----------------------------------------------------------

DistilledTire::DistilledTire(Axle axle, Regime regime, int hidden, int depth) : LearnedTire(axle, regime) {
  const int slips = regime == Regime::pure_lateral ? 1 : 2;
  net_ = Mlp(mlp_widths(slips + feat_size(axle), hidden, depth, slips));
  theta_.assign(net_.param_count(), 0.0);
  norm_ = Normalization::identity(axle, 7000.0);
}

void DistilledTire::initialize(std::mt19937_64& rng) { net_.init_glorot(theta_, rng); }

template <class T, class P>
LearnedOutput<T> DistilledTire::compute(std::span<const P> theta, const TireInput<T>& in) const {
  std::array<T, 6> x{};
  std::size_t n = 0;
  x[n++] = in.alpha / norm_.slip_scale;
  if (regime_ == Regime::combined) x[n++] = in.sigma / norm_.slip_scale;
  const std::size_t k = static_cast<std::size_t>(in.feat.size());
  norm_.features(in.feat, std::span<T>(x.data() + n, k));
  std::array<T, 2> o{};
  const std::size_t n_out = static_cast<std::size_t>(net_.output_size());
  net_.forward<T, P>(theta, std::span<const T>(x.data(), n + k), std::span<T>(o.data(), n_out));
  LearnedOutput<T> out;
  const double s = norm_.force_scale;
  if (regime_ == Regime::pure_lateral) {
    out.fx = T(0.0);
    out.fy = s * o[0];
    out.ftot = out.fy;
  } else {
    out.fx = s * o[0];
    out.fy = s * o[1];
    out.ftot = sqrt(out.fx * out.fx + out.fy * out.fy + 1e-12);
  }
  return out;
}

LearnedOutput<double> DistilledTire::forward(std::span<const double> theta, const TireInput<double>& in,
                                             bool) const {
  return compute<double, double>(theta, in);
}

LearnedOutput<Var> DistilledTire::forward(std::span<const Var> theta, const TireInput<Var>& in, bool) const {
  return compute<Var, Var>(theta, in);
}

TireForce<Var> DistilledTire::evaluate(const TireInput<Var>& in) const {
  const LearnedOutput<Var> out = compute<Var, double>(std::span<const double>(theta_), in);
  return {out.fx, out.fy};
}

nlohmann::json DistilledTire::to_json() const {
  nlohmann::json j = base_json();
  j["layer_widths"] = {{"mlp", net_.widths()}};
  j["source_hash"] = source_hash;
  j["source_kind"] = source_kind;
  return j;
}

std::unique_ptr<DistilledTire> DistilledTire::from_json(const nlohmann::json& j) {
  const auto w = j.at("layer_widths").at("mlp").get<std::vector<int>>();
  const int depth = static_cast<int>(w.size()) - 2;
  auto model = std::make_unique<DistilledTire>(parse_axle(j.at("axle").get<std::string>()),
                                               parse_regime(j.at("regime").get<std::string>()),
                                               w.size() > 2 ? w[1] : 1, depth);
  model->load_base_json(j);
  model->source_hash = j.value("source_hash", "");
  model->source_kind = j.value("source_kind", "");
  return model;
}

// --- distillation ------------------------------------------------------------

ProbeBox ProbeBox::inflated(double fraction) const {
  ProbeBox b = *this;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    const double w = hi[i] - lo[i];
    b.lo[i] -= fraction * w;
    b.hi[i] += fraction * w;
  }
  return b;
}

TireInput<double> ProbeBox::sample(Axle axle, Regime regime, std::mt19937_64& rng) const {
  const std::size_t slips = regime == Regime::pure_lateral ? 1 : 2;
  const std::size_t k = static_cast<std::size_t>(feat_size(axle));
  if (lo.size() != slips + k || hi.size() != slips + k) {
    throw Error(ErrorCode::dimension_mismatch, "probe box does not match the model inputs");
  }
  std::array<double, 6> x{};
  for (std::size_t i = 0; i < slips + k; ++i) {
    std::uniform_real_distribution<double> d(lo[i], hi[i]);
    x[i] = lo[i] == hi[i] ? lo[i] : d(rng);
  }
  TireInput<double> in;
  in.alpha = x[0];
  in.sigma = slips == 2 ? x[1] : 0.0;
  const double* f = x.data() + slips;
  in.feat.axle = axle;
  in.feat.r = f[0];
  in.feat.v = f[1];
  if (axle == Axle::front) {
    in.feat.beta = f[2];
    in.feat.mu_fz_bar = f[3];
  } else {
    in.feat.mu_fz_bar = f[2];
  }
  return in;
}

std::unique_ptr<DistilledTire> distill(const LearnedTire& source, const ProbeBox& box, const DistillConfig& cfg,
                                       DistillReport* report) {
  if (cfg.probes < 1 || cfg.epochs < 1 || cfg.batch_size < 1) {
    throw Error(ErrorCode::invalid_argument, "distillation needs positive probe, epoch and batch counts");
  }
  const Axle axle = source.axle();
  const Regime regime = source.regime();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = static_cast<std::size_t>(cfg.probes);
  std::vector<TireInput<double>> inputs(n);
  std::vector<std::array<double, 2>> targets(n);
  const double s = source.normalization().force_scale;
  for (std::size_t i = 0; i < n; ++i) {
    inputs[i] = box.sample(axle, regime, rng);
    const TireForce<double> f = source.evaluate(inputs[i]);
    targets[i] = {f.fx / s, f.fy / s};
  }

  auto model = std::make_unique<DistilledTire>(axle, regime, cfg.hidden, cfg.depth);
  Normalization norm = source.normalization();
  const std::size_t slips = regime == Regime::combined ? 2 : 1;
  norm.slip_scale = 0.0;
  for (std::size_t i = 0; i < slips; ++i) {
    norm.slip_scale = std::max({norm.slip_scale, std::abs(box.lo[i]), std::abs(box.hi[i])});
  }
  if (norm.slip_scale == 0.0) norm.slip_scale = 1.0;
  for (std::size_t i = 0; i < norm.feat_shift.size(); ++i) {
    const double half = 0.5 * (box.hi[slips + i] - box.lo[slips + i]);
    norm.feat_shift[i] = 0.5 * (box.hi[slips + i] + box.lo[slips + i]);
    norm.feat_scale[i] = half > 0.0 ? half : 1.0;
  }
  model->set_normalization(norm);
  model->initialize(rng);
  model->source_hash = fnv1a_hex(source.to_json().dump());
  model->source_kind = std::string(to_string(source.kind()));

  std::vector<double> theta(model->parameters().begin(), model->parameters().end());
  AdamState opt(theta.size(), AdamConfig{cfg.lr0, cfg.decay});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool combined = regime == Regime::combined;

  auto sq_error = [&](const LearnedOutput<double>& o, std::size_t i) {
    const double ey = o.fy / s - targets[i][1];
    const double ex = combined ? o.fx / s - targets[i][0] : 0.0;
    return ex * ex + ey * ey;
  };

  Tape tape;
  std::vector<Var> vars;
  auto batch_loss = [&](std::span<const double> th, std::span<const std::size_t> idx, std::span<double> grad) {
    tape.clear();
    vars.clear();
    for (double t : th) vars.push_back(tape.variable(t));
    Var loss(0.0);
    for (std::size_t i : idx) {
      const TireInput<Var> in{Var(inputs[i].alpha), Var(inputs[i].sigma),
                              BasicFeat<Var>{axle, Var(inputs[i].feat.r), Var(inputs[i].feat.v),
                                             Var(inputs[i].feat.beta), Var(inputs[i].feat.mu_fz_bar)}};
      const LearnedOutput<Var> o = model->forward(std::span<const Var>(vars), in, false);
      const Var ey = o.fy / s - targets[i][1];
      loss = loss + ey * ey;
      if (combined) {
        const Var ex = o.fx / s - targets[i][0];
        loss = loss + ex * ex;
      }
    }
    loss = loss / static_cast<double>(idx.size());
    tape.backward(loss);
    for (std::size_t k = 0; k < th.size(); ++k) grad[k] = tape.adjoint(vars[k]);
    return loss.value();
  };
  auto full_mse = [&] {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += sq_error(model->forward(theta, inputs[i], false), i);
    m /= static_cast<double>(n);
    if (!std::isfinite(m)) throw Error(ErrorCode::non_finite_loss, "distillation loss is not finite");
    return m;
  };

  std::vector<double> g(theta.size());
  int epoch = 0;
  for (; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      batch_loss(theta, std::span<const std::size_t>(order.data() + start, end - start), g);
      opt.step(theta, g, epoch);
    }
    if (epoch % 10 == 9) full_mse();
  }
  if (cfg.polish_iterations > 0) {
    const std::size_t outs = combined ? 2 : 1;
    const auto d = static_cast<Eigen::Index>(theta.size());
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(n * outs), d);
    Eigen::VectorXd res(jac.rows());
    auto linearize = [&](const std::vector<double>& th) {
      for (std::size_t i = 0; i < n; ++i) {
        tape.clear();
        vars.clear();
        for (double t : th) vars.push_back(tape.variable(t));
        const TireInput<Var> in{Var(inputs[i].alpha), Var(inputs[i].sigma),
                                BasicFeat<Var>{axle, Var(inputs[i].feat.r), Var(inputs[i].feat.v),
                                               Var(inputs[i].feat.beta), Var(inputs[i].feat.mu_fz_bar)}};
        const LearnedOutput<Var> o = model->forward(std::span<const Var>(vars), in, false);
        const std::array<Var, 2> r{o.fy / s - targets[i][1], combined ? o.fx / s - targets[i][0] : Var(0.0)};
        for (std::size_t k = 0; k < outs; ++k) {
          const auto row = static_cast<Eigen::Index>(i * outs + k);
          tape.backward(r[k]);
          for (Eigen::Index c = 0; c < d; ++c) jac(row, c) = tape.adjoint(vars[static_cast<std::size_t>(c)]);
          res[row] = r[k].value();
        }
      }
      return res.squaredNorm();
    };
    auto cost = [&](const std::vector<double>& th) {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += sq_error(model->forward(th, inputs[i], false), i);
      return c;
    };
    double current = linearize(theta);
    double damping = 1e-3;
    for (int it = 0; it < cfg.polish_iterations; ++it) {
      const Eigen::MatrixXd jtj = jac.transpose() * jac;
      const Eigen::VectorXd jtr = jac.transpose() * res;
      bool accepted = false;
      for (int tries = 0; tries < 12 && !accepted; ++tries) {
        Eigen::MatrixXd a = jtj;
        for (Eigen::Index i = 0; i < d; ++i) a(i, i) += damping * std::max(jtj(i, i), 1e-12);
        const Eigen::VectorXd step = a.ldlt().solve(-jtr);
        std::vector<double> trial = theta;
        for (Eigen::Index i = 0; i < d; ++i) trial[static_cast<std::size_t>(i)] += step[i];
        const double c = cost(trial);
        if (std::isfinite(c) && c < current) {
          theta = trial;
          damping = std::max(damping / 3.0, 1e-12);
          accepted = true;
        } else {
          damping *= 4.0;
        }
      }
      if (!accepted) break;
      current = linearize(theta);
    }
  }
  const double mse = full_mse();
  model->set_parameters(theta);

  double max_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_err = std::max(max_err, std::sqrt(sq_error(model->forward(theta, inputs[i], false), i)) * s);
  if (report != nullptr) *report = DistillReport{mse, max_err, epoch};
  if (mse > cfg.threshold) {
    throw Error(ErrorCode::distillation_stall,
                "distillation loss " + std::to_string(mse) + " stayed above threshold " + std::to_string(cfg.threshold));
  }
  return model;
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace tirelearn
