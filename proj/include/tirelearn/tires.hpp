#pragma once

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tirelearn/ad.hpp"
#include "tirelearn/mlp.hpp"
#include "tirelearn/vehicle.hpp"

namespace tirelearn {

enum class Axle { front, rear };
enum class Regime { pure_lateral, combined };
enum class SlipDirection { lateral, longitudinal };

enum class ModelKind {
  fiala,
  magic_formula,
  exptanh_pure,
  exptanh_combined,
  node_pure,
  node_combined,
  distilled_mlp,
};

std::string_view to_string(Axle axle);
std::string_view to_string(Regime regime);
std::string_view to_string(ModelKind kind);
Axle parse_axle(std::string_view s);
Regime parse_regime(std::string_view s);
ModelKind parse_model_kind(std::string_view s);

/// State features fed to learned models: [r, v, beta, mu_fz_bar] on the
/// front axle and [r, v, mu_fz_bar] on the rear axle.
template <class T>
struct BasicFeat {
  Axle axle = Axle::front;
  T r{};
  T v{};
  T beta{};
  T mu_fz_bar{};

  int size() const { return axle == Axle::front ? 4 : 3; }
  T operator[](int i) const {
    if (axle == Axle::front) {
      switch (i) {
        case 0: return r;
        case 1: return v;
        case 2: return beta;
        default: return mu_fz_bar;
      }
    }
    switch (i) {
      case 0: return r;
      case 1: return v;
      default: return mu_fz_bar;
    }
  }
};
using Feat = BasicFeat<double>;

inline int feat_size(Axle axle) { return axle == Axle::front ? 4 : 3; }

template <class T>
struct TireInput {
  T alpha{};
  T sigma{};
  BasicFeat<T> feat{};
};

template <class T>
struct TireForce {
  T fx{};
  T fy{};
};

/// Common interface of every tire model: one axle, (slips, feat) -> forces.
/// Pure-lateral models ignore sigma and return fx = 0.
class TireModel {
 public:
  virtual ~TireModel() = default;

  virtual ModelKind kind() const = 0;
  virtual Regime regime() const = 0;

  virtual TireForce<double> evaluate(const TireInput<double>& in) const = 0;
  virtual TireForce<Var> evaluate(const TireInput<Var>& in) const = 0;

  /// Analytic bound on |F| (pure) or F_tot (combined) when one exists.
  virtual std::optional<double> peak_force(const Feat& feat) const = 0;

  virtual nlohmann::json to_json() const = 0;
};

/// A front (pure lateral) and rear (combined) model pair.
struct TireSet {
  std::shared_ptr<const TireModel> front;
  std::shared_ptr<const TireModel> rear;
};

/// Axle forces from slips and vehicle state; the front longitudinal force is
/// whatever the front model reports (zero for pure-lateral models).
template <class T>
BasicAxleForces<T> evaluate_axles(const TireSet& tires, const BasicSlips<T>& slips, const T& r, const T& v,
                                  const T& beta, double mu_fz_bar) {
  TireInput<T> front{slips.alpha_f, slips.sigma_f, BasicFeat<T>{Axle::front, r, v, beta, T(mu_fz_bar)}};
  TireInput<T> rear{slips.alpha_r, slips.sigma_r, BasicFeat<T>{Axle::rear, r, v, beta, T(mu_fz_bar)}};
  const TireForce<T> ff = tires.front->evaluate(front);
  const TireForce<T> fr = tires.rear->evaluate(rear);
  return BasicAxleForces<T>{ff.fx, ff.fy, fr.fx, fr.fy};
}

// ---------------------------------------------------------------------------
// Fiala brush model

struct FialaParams {
  double stiffness = 1.0e5;  // C_alpha (N/rad) or C_sigma (N)
  double mu = 1.0;
  double f_z = 7000.0;

  double peak() const { return mu * f_z; }
  void validate() const;
};

/// Cubic brush curve with full sliding beyond |t| = 3 P / C, where t is
/// tan(slip) for lateral and slip for longitudinal. Lateral output carries a
/// negative sign.
template <class T, class S, class P>
T fiala_curve(const T& slip, const S& stiffness, const P& peak, SlipDirection dir) {
  const T t = dir == SlipDirection::lateral ? tan(slip) : slip;
  const double sgn_out = dir == SlipDirection::lateral ? -1.0 : 1.0;
  const double tv = value_of(t);
  const double threshold = 3.0 * value_of(peak) / value_of(stiffness);
  if (std::abs(tv) >= threshold) {
    return T(sgn_out * (tv > 0.0 ? 1.0 : -1.0)) * peak;
  }
  const auto& c = stiffness;
  const T f = c * t - (c * c) * abs(t) * t / (3.0 * peak) + (c * c * c) * t * t * t / (27.0 * peak * peak);
  return sgn_out * f;
}

/// Fiala axle forces with coefficients of type P. For the combined regime the
/// lateral peak is derated by the friction circle after longitudinal usage:
/// F_y,max = sqrt((mu F_z)^2 - F_x^2).
template <class T, class P>
TireForce<T> fiala_forces(const TireInput<T>& in, Regime regime, const P& c_alpha, const P& peak, const P& c_sigma) {
  if (regime == Regime::pure_lateral) {
    return {T(0.0), fiala_curve(in.alpha, c_alpha, peak, SlipDirection::lateral)};
  }
  const T fx = fiala_curve(in.sigma, c_sigma, peak, SlipDirection::longitudinal);
  const double floor = 1e-3 * value_of(peak);
  const T avail = max(T(peak * peak) - fx * fx, T(floor * floor));
  const T fy_max = sqrt(avail);
  return {fx, fiala_curve(in.alpha, c_alpha, fy_max, SlipDirection::lateral)};
}

double fiala_force(double slip, const FialaParams& params, SlipDirection dir = SlipDirection::lateral);

class FialaTire final : public TireModel {
 public:
  FialaTire(Regime regime, FialaParams lateral, double longitudinal_stiffness = 0.0);

  ModelKind kind() const override { return ModelKind::fiala; }
  Regime regime() const override { return regime_; }
  TireForce<double> evaluate(const TireInput<double>& in) const override { return compute(in); }
  TireForce<Var> evaluate(const TireInput<Var>& in) const override { return compute(in); }
  std::optional<double> peak_force(const Feat&) const override { return lateral_.peak(); }
  nlohmann::json to_json() const override;

  const FialaParams& lateral() const { return lateral_; }
  double longitudinal_stiffness() const { return long_stiffness_; }

  template <class T>
  TireForce<T> compute(const TireInput<T>& in) const {
    return fiala_forces<T, double>(in, regime_, lateral_.stiffness, lateral_.peak(), long_stiffness_);
  }

 private:
  Regime regime_;
  FialaParams lateral_;
  double long_stiffness_;
};

// ---------------------------------------------------------------------------
// Magic Formula

struct MagicFormulaParams {
  double b = 10.0;
  double c = 1.5;
  double d = 7000.0;
  double e = 0.5;

  void validate() const;
};

/// D sin(C atan(B x - E (B x - atan(B x)))).
template <class T, class P>
T magic_formula_curve(const T& x, const P& b, const P& c, const P& d, const P& e) {
  const T bx = b * x;
  return d * sin(c * atan(bx - e * (bx - atan(bx))));
}

/// Pure-slip Magic Formula with the lateral sign convention applied.
double magic_formula_force(double slip, const MagicFormulaParams& params,
                           SlipDirection dir = SlipDirection::lateral);

/// Forces for a Magic Formula axle whose coefficients are of type P. The
/// combined regime evaluates the curve at total slip and splits it along the
/// kinematic direction (-tan alpha, sigma).
template <class T, class P>
TireForce<T> magic_formula_forces(const TireInput<T>& in, Regime regime, const P& b, const P& c, const P& d,
                                  const P& e) {
  if (regime == Regime::pure_lateral) {
    return {T(0.0), -magic_formula_curve<T, P>(in.alpha, b, c, d, e)};
  }
  const T t = tan(in.alpha);
  const T kappa = sqrt(t * t + in.sigma * in.sigma + 1e-16);
  const T ftot = magic_formula_curve<T, P>(kappa, b, c, d, e);
  return {in.sigma * ftot / kappa, -t * ftot / kappa};
}

class MagicFormulaTire final : public TireModel {
 public:
  MagicFormulaTire(Regime regime, MagicFormulaParams params);

  ModelKind kind() const override { return ModelKind::magic_formula; }
  Regime regime() const override { return regime_; }
  TireForce<double> evaluate(const TireInput<double>& in) const override {
    return magic_formula_forces<double, double>(in, regime_, p_.b, p_.c, p_.d, p_.e);
  }
  TireForce<Var> evaluate(const TireInput<Var>& in) const override {
    return magic_formula_forces<Var, Var>(in, regime_, Var(p_.b), Var(p_.c), Var(p_.d), Var(p_.e));
  }
  std::optional<double> peak_force(const Feat&) const override;
  nlohmann::json to_json() const override;

  const MagicFormulaParams& params() const { return p_; }

 private:
  Regime regime_;
  MagicFormulaParams p_;
};

// ---------------------------------------------------------------------------
// ExpTanh curves

template <class T>
struct ExpTanhParams {
  T a1{};
  T a2{};
  T a3{};
  T a4{};
  T a5{};
};

/// a1 + a2 exp(-a3 |z|) tanh(a4 (z - a5)).
template <class T>
T exptanh_eval(const T& z, const ExpTanhParams<T>& p) {
  return p.a1 + p.a2 * exp(-p.a3 * abs(z)) * tanh(p.a4 * (z - p.a5));
}

template <class T>
struct ExpTanhExtrema {
  T z_plus{};
  T z_minus{};
};

/// Closed-form stationary points a5 +- atanh((sqrt(a3^2 + 4 a4^2) - a3) / (2 a4)) / a4.
/// They are the true extrema whenever z_plus > 0 > z_minus (see
/// extrema_on_branch); outside that region the |z| kink takes over.
template <class T>
ExpTanhExtrema<T> exptanh_extrema(const ExpTanhParams<T>& p) {
  if (!(value_of(p.a3) > 0.0) || !(value_of(p.a4) > 0.0)) {
    throw Error(ErrorCode::no_interior_extremum, "ExpTanh extrema need a3 > 0 and a4 > 0");
  }
  const T arg = (sqrt(p.a3 * p.a3 + 4.0 * p.a4 * p.a4) - p.a3) / (2.0 * p.a4);
  if (!(value_of(arg) < 1.0)) {
    throw Error(ErrorCode::no_interior_extremum, "atanh argument reached 1; the curve is monotone");
  }
  const T offset = atanh(arg) / p.a4;
  return {p.a5 + offset, p.a5 - offset};
}

bool extrema_on_branch(const ExpTanhParams<double>& p);

/// Normalisation shared by all learned models: features are standardised,
/// forces are expressed in units of force_scale and slips in slip_scale.
struct Normalization {
  std::vector<double> feat_shift;
  std::vector<double> feat_scale;
  double force_scale = 7000.0;
  double slip_scale = 0.2;

  static Normalization identity(Axle axle, double force_scale);
  template <class T>
  void features(const BasicFeat<T>& f, std::span<T> out) const {
    for (int i = 0; i < f.size(); ++i) {
      out[static_cast<std::size_t>(i)] =
          (f[i] - feat_shift[static_cast<std::size_t>(i)]) / feat_scale[static_cast<std::size_t>(i)];
    }
  }
  nlohmann::json to_json() const;
  static Normalization from_json(const nlohmann::json& j);
};

/// Outputs of a learned model used by the training objectives. `peaks` holds
/// the model's force at its analytic extrema when it has them.
template <class T>
struct LearnedOutput {
  T fx{};
  T fy{};
  T ftot{};
  std::array<T, 2> peaks{};
  int n_peaks = 0;
};

/// Base of all models with a trainable flat parameter vector.
class LearnedTire : public TireModel {
 public:
  LearnedTire(Axle axle, Regime regime) : axle_(axle), regime_(regime) {}

  Regime regime() const override { return regime_; }
  Axle axle() const { return axle_; }

  std::span<const double> parameters() const { return theta_; }
  std::span<double> parameters() { return theta_; }
  void set_parameters(std::vector<double> theta);

  const Normalization& normalization() const { return norm_; }
  void set_normalization(Normalization n);

  /// Fresh parameters for training.
  virtual void initialize(std::mt19937_64& rng) = 0;

  virtual LearnedOutput<double> forward(std::span<const double> theta, const TireInput<double>& in,
                                        bool with_peaks) const = 0;
  virtual LearnedOutput<Var> forward(std::span<const Var> theta, const TireInput<Var>& in,
                                     bool with_peaks) const = 0;

  TireForce<double> evaluate(const TireInput<double>& in) const override;
  std::optional<double> peak_force(const Feat&) const override { return std::nullopt; }

  /// Training metadata copied into the model file.
  nlohmann::json training_metadata = nlohmann::json::object();

 protected:
  nlohmann::json base_json() const;
  void load_base_json(const nlohmann::json& j);

  Axle axle_;
  Regime regime_;
  Normalization norm_;
  std::vector<double> theta_;
};

struct ExpTanhConfig {
  int hidden = 3;
  int depth = 2;
  int split_hidden = 3;
  int split_depth = 2;
  bool pin_split = false;  // s1 = -tan(alpha), s2 = sigma instead of NN4
};

/// Neural ExpTanh: the five curve coefficients come from a network of the
/// features; the combined variant evaluates the curve at total slip and splits
/// it with a second network of (alpha, sigma).
class ExpTanhTire final : public LearnedTire {
 public:
  ExpTanhTire(Axle axle, Regime regime, ExpTanhConfig config = {});

  ModelKind kind() const override {
    return regime_ == Regime::pure_lateral ? ModelKind::exptanh_pure : ModelKind::exptanh_combined;
  }
  using LearnedTire::evaluate;
  TireForce<Var> evaluate(const TireInput<Var>& in) const override;
  std::optional<double> peak_force(const Feat& feat) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<ExpTanhTire> from_json(const nlohmann::json& j);

  void initialize(std::mt19937_64& rng) override;
  LearnedOutput<double> forward(std::span<const double> theta, const TireInput<double>& in,
                                bool with_peaks) const override;
  LearnedOutput<Var> forward(std::span<const Var> theta, const TireInput<Var>& in, bool with_peaks) const override;

  /// Curve coefficients at the given features.
  ExpTanhParams<double> coefficients(const Feat& feat) const;
  const ExpTanhConfig& config() const { return config_; }

 private:
  template <class T, class P>
  ExpTanhParams<T> coefficients_impl(std::span<const P> theta, const BasicFeat<T>& feat) const;
  template <class T, class P>
  LearnedOutput<T> compute(std::span<const P> theta, const TireInput<T>& in, bool with_peaks) const;

  ExpTanhConfig config_;
  Mlp coeff_net_;
  Mlp split_net_;
};

/// Split of a total force by (s1, s2): F_y = s1 F / |s|, F_x = s2 F / |s|.
template <class T>
TireForce<T> split_total_force(const T& ftot, const T& s1, const T& s2) {
  const T n2 = s1 * s1 + s2 * s2;
  if (!(value_of(n2) >= 1e-12)) throw Error(ErrorCode::degenerate_scale, "split network output (s1, s2) ~ 0");
  const T inv = 1.0 / sqrt(n2);
  return {s2 * ftot * inv, s1 * ftot * inv};
}

/// Reads any model file entry produced by to_json().
std::unique_ptr<TireModel> model_from_json(const nlohmann::json& j);

}  // namespace tirelearn
