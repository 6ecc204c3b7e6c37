#pragma once

// Physics-informed neural-ODE tire models.
//
// The force is the solution of a second-order ODE in the slip variable whose
// right-hand side is +exp(NN) on convex stretches and -exp(NN) on concave
// stretches, so the sign of the curvature is fixed by construction and only
// its magnitude and the inflection points are learned.

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "tirelearn/tires.hpp"

namespace tirelearn {

struct NodeConfig {
  int hidden = 16;
  int depth = 2;
  int inflection_hidden = 4;
  int split_hidden = 16;
  int n_steps = 32;  // RK4 steps per monotone-curvature segment
  double clamp_lo = -30.0;
  double clamp_hi = 10.0;
  bool pin_split = false;
};

enum class Curvature { convex, concave };

/// Inflection points (alpha_-1, alpha_0, alpha_1) and the initial state
/// (F_0, G_0) at alpha_0, in physical units.
template <class T>
struct PureHead {
  T lower{};
  T center{};
  T upper{};
  T f0{};
  T g0{};
};

/// Inflection kappa_1 and initial state (F_0, G_0) at kappa = 0.
template <class T>
struct CombinedHead {
  T kappa1{};
  T f0{};
  T g0{};
};

template <class T>
struct OdeState {
  T f{};
  T g{};
};

/// Region of the pure-slip curve containing alpha: convex for
/// alpha <= alpha_-1 and alpha in [alpha_0, alpha_1], concave otherwise.
template <class T>
Curvature pure_region(const T& alpha, const PureHead<T>& h) {
  const double a = value_of(alpha);
  if (a <= value_of(h.lower)) return Curvature::convex;
  if (a >= value_of(h.center) && a <= value_of(h.upper)) return Curvature::convex;
  return Curvature::concave;
}

/// RK4 with a (possibly negative, possibly active) step from `from` to `to`
/// in `n` steps of the non-autonomous system y' = rhs(s, y).
template <class T, class Rhs>
OdeState<T> integrate_segment(Rhs&& rhs, OdeState<T> y, const T& from, const T& to, int n) {
  if (value_of(to) == value_of(from)) return y;
  const T h = (to - from) / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    const T s = from + static_cast<double>(i) * h;
    const T hh = 0.5 * h;
    const OdeState<T> k1 = rhs(s, y);
    const OdeState<T> k2 = rhs(s + hh, OdeState<T>{y.f + hh * k1.f, y.g + hh * k1.g});
    const OdeState<T> k3 = rhs(s + hh, OdeState<T>{y.f + hh * k2.f, y.g + hh * k2.g});
    const OdeState<T> k4 = rhs(s + h, OdeState<T>{y.f + h * k3.f, y.g + h * k3.g});
    const T w = h / 6.0;
    y.f = y.f + w * (k1.f + 2.0 * k2.f + 2.0 * k3.f + k4.f);
    y.g = y.g + w * (k1.g + 2.0 * k2.g + 2.0 * k3.g + k4.g);
  }
  return y;
}

/// Pure-slip NODE: F_y(alpha) with three inflection points.
class NodePureTire final : public LearnedTire {
 public:
  NodePureTire(Axle axle, NodeConfig config = {});

  ModelKind kind() const override { return ModelKind::node_pure; }
  using LearnedTire::evaluate;
  TireForce<Var> evaluate(const TireInput<Var>& in) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<NodePureTire> from_json(const nlohmann::json& j);

  void initialize(std::mt19937_64& rng) override;
  LearnedOutput<double> forward(std::span<const double> theta, const TireInput<double>& in,
                                bool with_peaks) const override;
  LearnedOutput<Var> forward(std::span<const Var> theta, const TireInput<Var>& in, bool with_peaks) const override;

  PureHead<double> head(const Feat& feat) const;

  /// (dF/dalpha, dG/dalpha) with the region chosen by the literal case split.
  OdeState<double> rhs(double alpha, OdeState<double> y, const PureHead<double>& h, const Feat& feat) const;

  /// Integrates from alpha_0 to `slip_target`; returns (F, G) there.
  OdeState<double> solve(double slip_target, const Feat& feat) const;

  /// Same with an explicit RK4 step count per segment.
  OdeState<double> solve(double slip_target, const Feat& feat, int n_steps) const;

  const NodeConfig& config() const { return config_; }
  /// Forces NN1/NN2 outputs to `value` (before clamping) regardless of input.
  void set_curvature_override(std::optional<double> value) { curvature_override_ = value; }

 private:
  template <class T, class P>
  PureHead<T> head_impl(std::span<const P> theta, std::span<const T> feat) const;
  template <class T, class P>
  OdeState<T> rhs_impl(std::span<const P> theta, const T& alpha, const OdeState<T>& y, const PureHead<T>& h,
                       std::span<const T> feat, Curvature region) const;
  template <class T, class P>
  OdeState<T> solve_impl(std::span<const P> theta, const T& target, const BasicFeat<T>& feat, int n_steps) const;
  template <class T, class P>
  LearnedOutput<T> compute(std::span<const P> theta, const TireInput<T>& in) const;

  NodeConfig config_;
  Mlp convex_net_;   // NN1
  Mlp concave_net_;  // NN2
  Mlp head_net_;     // NN3
  std::optional<double> curvature_override_;
};

/// Combined-slip NODE: F_tot(kappa) concave up to kappa_1 and convex after,
/// split into (F_x, F_y) by NN4(alpha, sigma).
class NodeCombinedTire final : public LearnedTire {
 public:
  NodeCombinedTire(Axle axle, NodeConfig config = {});

  ModelKind kind() const override { return ModelKind::node_combined; }
  using LearnedTire::evaluate;
  TireForce<Var> evaluate(const TireInput<Var>& in) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<NodeCombinedTire> from_json(const nlohmann::json& j);

  void initialize(std::mt19937_64& rng) override;
  LearnedOutput<double> forward(std::span<const double> theta, const TireInput<double>& in,
                                bool with_peaks) const override;
  LearnedOutput<Var> forward(std::span<const Var> theta, const TireInput<Var>& in, bool with_peaks) const override;

  CombinedHead<double> head(const Feat& feat) const;
  OdeState<double> rhs(double kappa, OdeState<double> y, const CombinedHead<double>& h, const Feat& feat) const;
  OdeState<double> solve(double kappa_target, const Feat& feat) const;
  OdeState<double> solve(double kappa_target, const Feat& feat, int n_steps) const;

  const NodeConfig& config() const { return config_; }
  void set_curvature_override(std::optional<double> value) { curvature_override_ = value; }

 private:
  template <class T, class P>
  CombinedHead<T> head_impl(std::span<const P> theta, std::span<const T> feat) const;
  template <class T, class P>
  OdeState<T> rhs_impl(std::span<const P> theta, const T& kappa, const OdeState<T>& y, const CombinedHead<T>& h,
                       std::span<const T> feat, Curvature region) const;
  template <class T, class P>
  OdeState<T> solve_impl(std::span<const P> theta, const T& target, const BasicFeat<T>& feat, int n_steps) const;
  template <class T, class P>
  LearnedOutput<T> compute(std::span<const P> theta, const TireInput<T>& in) const;

  NodeConfig config_;
  Mlp concave_net_;  // NN1
  Mlp convex_net_;   // NN2
  Mlp head_net_;     // NN3
  Mlp split_net_;    // NN4
  std::optional<double> curvature_override_;
};

/// Plain MLP trained to reproduce a NODE model's output.
class DistilledTire final : public LearnedTire {
 public:
  DistilledTire(Axle axle, Regime regime, int hidden = 16, int depth = 2);

  ModelKind kind() const override { return ModelKind::distilled_mlp; }
  using LearnedTire::evaluate;
  TireForce<Var> evaluate(const TireInput<Var>& in) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<DistilledTire> from_json(const nlohmann::json& j);

  void initialize(std::mt19937_64& rng) override;
  LearnedOutput<double> forward(std::span<const double> theta, const TireInput<double>& in,
                                bool with_peaks) const override;
  LearnedOutput<Var> forward(std::span<const Var> theta, const TireInput<Var>& in, bool with_peaks) const override;

  const Mlp& network() const { return net_; }
  std::string source_hash;
  std::string source_kind;

 private:
  template <class T, class P>
  LearnedOutput<T> compute(std::span<const P> theta, const TireInput<T>& in) const;

  Mlp net_;
};

/// Axis-aligned sampling box over [alpha, (sigma,) feat...].
struct ProbeBox {
  std::vector<double> lo;
  std::vector<double> hi;

  /// Grows each side by `fraction` of the width.
  ProbeBox inflated(double fraction) const;
  TireInput<double> sample(Axle axle, Regime regime, std::mt19937_64& rng) const;
};

struct DistillConfig {
  int hidden = 16;
  int depth = 2;
  int probes = 20000;
  int epochs = 400;
  int batch_size = 64;
  double lr0 = 1e-2;
  double decay = 0.01;
  int polish_iterations = 100;  // full-batch Levenberg-Marquardt after the Adam epochs
  double threshold = 1e-4;  // mean squared error in force_scale units
  std::uint64_t seed = 1;
};

struct DistillReport {
  double train_mse = 0.0;  // in force_scale^2 units
  double max_abs_error = 0.0;  // N, over the training probes
  int epochs_run = 0;
};

/// Trains a DistilledTire to mimic `source` on probes drawn from `box`.
/// Throws DistillationStall if the final loss stays above the threshold.
std::unique_ptr<DistilledTire> distill(const LearnedTire& source, const ProbeBox& box, const DistillConfig& cfg,
                                       DistillReport* report = nullptr);

/// Short stable fingerprint (FNV-1a 64, hex) of a string.
std::string fnv1a_hex(std::string_view data);

}  // namespace tirelearn
