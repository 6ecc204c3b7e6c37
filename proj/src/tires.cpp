#include "tirelearn/tires.hpp"

#include <cmath>

namespace tirelearn {

std::string_view to_string(Axle axle) { return axle == Axle::front ? "front" : "rear"; }

std::string_view to_string(Regime regime) {
  return regime == Regime::pure_lateral ? "pure_lateral" : "combined";
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::fiala: return "fiala";
    case ModelKind::magic_formula: return "magic_formula";
    case ModelKind::exptanh_pure: return "exptanh_pure";
    case ModelKind::exptanh_combined: return "exptanh_combined";
    case ModelKind::node_pure: return "node_pure";
    case ModelKind::node_combined: return "node_combined";
    case ModelKind::distilled_mlp: return "distilled_mlp";
  }
  return "unknown";
}

Axle parse_axle(std::string_view s) {
  if (s == "front") return Axle::front;
  if (s == "rear") return Axle::rear;
  throw Error(ErrorCode::parse_error, "unknown axle '" + std::string(s) + "'");
}

Regime parse_regime(std::string_view s) {
  if (s == "pure_lateral") return Regime::pure_lateral;
  if (s == "combined") return Regime::combined;
  throw Error(ErrorCode::parse_error, "unknown regime '" + std::string(s) + "'");
}

ModelKind parse_model_kind(std::string_view s) {
  for (ModelKind k : {ModelKind::fiala, ModelKind::magic_formula, ModelKind::exptanh_pure,
                      ModelKind::exptanh_combined, ModelKind::node_pure, ModelKind::node_combined,
                      ModelKind::distilled_mlp}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::parse_error, "unknown model kind '" + std::string(s) + "'");
}

// --- Fiala -------------------------------------------------------------------

void FialaParams::validate() const {
  if (!(stiffness > 0.0) || !(mu > 0.0) || !(f_z > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "Fiala parameters must be positive");
  }
}

double fiala_force(double slip, const FialaParams& params, SlipDirection dir) {
  params.validate();
  return fiala_curve<double, double>(slip, params.stiffness, params.peak(), dir);
}

FialaTire::FialaTire(Regime regime, FialaParams lateral, double longitudinal_stiffness)
    : regime_(regime), lateral_(lateral), long_stiffness_(longitudinal_stiffness) {
  lateral_.validate();
  if (regime_ == Regime::combined && !(long_stiffness_ > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "combined Fiala needs a positive longitudinal stiffness");
  }
}

nlohmann::json FialaTire::to_json() const {
  return {{"model_kind", "fiala"},
          {"regime", to_string(regime_)},
          {"cornering_stiffness", lateral_.stiffness},
          {"longitudinal_stiffness", long_stiffness_},
          {"mu", lateral_.mu},
          {"f_z", lateral_.f_z}};
}

// --- Magic Formula -----------------------------------------------------------

void MagicFormulaParams::validate() const {
  if (!(b > 0.0) || !(c > 0.0) || !(d > 0.0) || !(e < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "Magic Formula needs B, C, D > 0 and E < 1");
  }
}

double magic_formula_force(double slip, const MagicFormulaParams& p, SlipDirection dir) {
  const double f = magic_formula_curve<double, double>(slip, p.b, p.c, p.d, p.e);
  return dir == SlipDirection::lateral ? -f : f;
}

MagicFormulaTire::MagicFormulaTire(Regime regime, MagicFormulaParams params) : regime_(regime), p_(params) {
  p_.validate();
}

std::optional<double> MagicFormulaTire::peak_force(const Feat&) const {
  // sin(C atan(.)) reaches 1 only when C atan(.) can attain pi/2.
  if (p_.c >= 1.0) return p_.d;
  return std::nullopt;
}

nlohmann::json MagicFormulaTire::to_json() const {
  return {{"model_kind", "magic_formula"}, {"regime", to_string(regime_)}, {"B", p_.b},
          {"C", p_.c},                     {"D", p_.d},                    {"E", p_.e}};
}

// --- ExpTanh -----------------------------------------------------------------

bool extrema_on_branch(const ExpTanhParams<double>& p) {
  try {
    const auto ex = exptanh_extrema(p);
    return ex.z_plus > 0.0 && ex.z_minus < 0.0;
  } catch (const Error&) {
    return false;
  }
}

Normalization Normalization::identity(Axle axle, double force_scale) {
  Normalization n;
  const auto k = static_cast<std::size_t>(feat_size(axle));
  n.feat_shift.assign(k, 0.0);
  n.feat_scale.assign(k, 1.0);
  n.force_scale = force_scale;
  return n;
}

nlohmann::json Normalization::to_json() const {
  return {{"feat_shift", feat_shift},
          {"feat_scale", feat_scale},
          {"force_scale", force_scale},
          {"slip_scale", slip_scale}};
}

Normalization Normalization::from_json(const nlohmann::json& j) {
  Normalization n;
  n.feat_shift = j.at("feat_shift").get<std::vector<double>>();
  n.feat_scale = j.at("feat_scale").get<std::vector<double>>();
  n.force_scale = j.at("force_scale").get<double>();
  n.slip_scale = j.at("slip_scale").get<double>();
  return n;
}

void LearnedTire::set_parameters(std::vector<double> theta) {
  if (theta.size() != theta_.size()) {
    throw Error(ErrorCode::dimension_mismatch, "parameter vector has the wrong length");
  }
  theta_ = std::move(theta);
}

void LearnedTire::set_normalization(Normalization n) {
  const auto k = static_cast<std::size_t>(feat_size(axle_));
  if (n.feat_shift.size() != k || n.feat_scale.size() != k) {
    throw Error(ErrorCode::dimension_mismatch, "normalisation does not match the axle's feature count");
  }
  norm_ = std::move(n);
}

TireForce<double> LearnedTire::evaluate(const TireInput<double>& in) const {
  const LearnedOutput<double> out = forward(std::span<const double>(theta_), in, false);
  return {out.fx, out.fy};
}

nlohmann::json LearnedTire::base_json() const {
  return {{"model_kind", to_string(kind())},
          {"axle", to_string(axle_)},
          {"regime", to_string(regime_)},
          {"normalization", norm_.to_json()},
          {"weights", theta_},
          {"training", training_metadata}};
}

void LearnedTire::load_base_json(const nlohmann::json& j) {
  set_normalization(Normalization::from_json(j.at("normalization")));
  set_parameters(j.at("weights").get<std::vector<double>>());
  if (j.contains("training")) training_metadata = j.at("training");
}

ExpTanhTire::ExpTanhTire(Axle axle, Regime regime, ExpTanhConfig config)
    : LearnedTire(axle, regime), config_(config) {
  coeff_net_ = Mlp(mlp_widths(feat_size(axle), config_.hidden, config_.depth, 5));
  std::size_t n = coeff_net_.param_count();
  if (regime_ == Regime::combined && !config_.pin_split) {
    split_net_ = Mlp(mlp_widths(2, config_.split_hidden, config_.split_depth, 2));
    n += split_net_.param_count();
  }
  theta_.assign(n, 0.0);
  norm_ = Normalization::identity(axle, 7000.0);
}

void ExpTanhTire::initialize(std::mt19937_64& rng) {
  std::span<double> all(theta_);
  auto coeff = all.subspan(0, coeff_net_.param_count());
  coeff_net_.init_glorot(coeff, rng);
  // Output-bias prior: a unit-amplitude S-curve with a3 = 1, a4 = 2 / slip_scale.
  const std::size_t ob = coeff_net_.output_bias_offset();
  coeff[ob + 0] = 0.0;
  coeff[ob + 1] = regime_ == Regime::pure_lateral ? -1.0 : 1.0;
  coeff[ob + 2] = 0.0;
  coeff[ob + 3] = std::log(2.0);
  coeff[ob + 4] = 0.0;
  if (regime_ == Regime::combined && !config_.pin_split) {
    split_net_.init_glorot(all.subspan(coeff_net_.param_count()), rng);
  }
}

template <class T, class P>
ExpTanhParams<T> ExpTanhTire::coefficients_impl(std::span<const P> theta, const BasicFeat<T>& feat) const {
  std::array<T, 4> f{};
  norm_.features(feat, std::span<T>(f.data(), static_cast<std::size_t>(feat.size())));
  std::array<T, 5> o{};
  coeff_net_.forward<T, P>(theta.subspan(0, coeff_net_.param_count()),
                           std::span<const T>(f.data(), static_cast<std::size_t>(feat.size())), std::span<T>(o));
  const double s = norm_.force_scale;
  return {s * o[0], s * o[1], exp(o[2]), exp(o[3]) / norm_.slip_scale, norm_.slip_scale * o[4]};
}

template <class T, class P>
LearnedOutput<T> ExpTanhTire::compute(std::span<const P> theta, const TireInput<T>& in, bool with_peaks) const {
  const ExpTanhParams<T> p = coefficients_impl<T, P>(theta, in.feat);
  LearnedOutput<T> out;
  if (regime_ == Regime::pure_lateral) {
    out.fy = exptanh_eval(in.alpha, p);
    out.fx = T(0.0);
    out.ftot = out.fy;
    if (with_peaks) {
      const auto ex = exptanh_extrema(p);
      out.peaks = {exptanh_eval(ex.z_plus, p), exptanh_eval(ex.z_minus, p)};
      out.n_peaks = 2;
    }
    return out;
  }
  const T t = tan(in.alpha);
  const T kappa = sqrt(t * t + in.sigma * in.sigma + 1e-16);
  out.ftot = exptanh_eval(kappa, p);
  T s1;
  T s2;
  if (config_.pin_split) {
    s1 = -t;
    s2 = in.sigma;
  } else {
    const std::array<T, 2> x{in.alpha / norm_.slip_scale, in.sigma / norm_.slip_scale};
    std::array<T, 2> s{};
    split_net_.forward<T, P>(theta.subspan(coeff_net_.param_count()), std::span<const T>(x), std::span<T>(s));
    s1 = s[0];
    s2 = s[1];
  }
  const TireForce<T> f = split_total_force(out.ftot, s1, s2);
  out.fx = f.fx;
  out.fy = f.fy;
  if (with_peaks) {
    const auto ex = exptanh_extrema(p);
    out.peaks[0] = exptanh_eval(ex.z_plus, p);
    out.n_peaks = 1;
  }
  return out;
}

LearnedOutput<double> ExpTanhTire::forward(std::span<const double> theta, const TireInput<double>& in,
                                           bool with_peaks) const {
  return compute<double, double>(theta, in, with_peaks);
}

LearnedOutput<Var> ExpTanhTire::forward(std::span<const Var> theta, const TireInput<Var>& in,
                                        bool with_peaks) const {
  return compute<Var, Var>(theta, in, with_peaks);
}

TireForce<Var> ExpTanhTire::evaluate(const TireInput<Var>& in) const {
  const LearnedOutput<Var> out = compute<Var, double>(std::span<const double>(theta_), in, false);
  return {out.fx, out.fy};
}

ExpTanhParams<double> ExpTanhTire::coefficients(const Feat& feat) const {
  return coefficients_impl<double, double>(std::span<const double>(theta_), feat);
}

std::optional<double> ExpTanhTire::peak_force(const Feat& feat) const {
  const ExpTanhParams<double> p = coefficients(feat);
  const auto ex = exptanh_extrema(p);
  const double fp = exptanh_eval(ex.z_plus, p);
  if (regime_ == Regime::combined) return fp;
  return std::max(std::abs(fp), std::abs(exptanh_eval(ex.z_minus, p)));
}

nlohmann::json ExpTanhTire::to_json() const {
  nlohmann::json j = base_json();
  j["layer_widths"] = {{"coeff", coeff_net_.widths()}};
  if (regime_ == Regime::combined && !config_.pin_split) j["layer_widths"]["split"] = split_net_.widths();
  j["pin_split"] = config_.pin_split;
  return j;
}

std::unique_ptr<ExpTanhTire> ExpTanhTire::from_json(const nlohmann::json& j) {
  const Axle axle = parse_axle(j.at("axle").get<std::string>());
  const Regime regime = parse_regime(j.at("regime").get<std::string>());
  ExpTanhConfig cfg;
  const auto coeff = j.at("layer_widths").at("coeff").get<std::vector<int>>();
  cfg.depth = static_cast<int>(coeff.size()) - 2;
  cfg.hidden = coeff.size() > 2 ? coeff[1] : 0;
  cfg.pin_split = j.value("pin_split", false);
  if (j.at("layer_widths").contains("split")) {
    const auto split = j.at("layer_widths").at("split").get<std::vector<int>>();
    cfg.split_depth = static_cast<int>(split.size()) - 2;
    cfg.split_hidden = split.size() > 2 ? split[1] : 0;
  }
  auto model = std::make_unique<ExpTanhTire>(axle, regime, cfg);
  model->load_base_json(j);
  return model;
}

}  // namespace tirelearn
