#pragma once

// Closed-loop evaluation: reference generation, drift equilibria, the NMPC
// tracking controller and the plant simulation.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tirelearn/dataset.hpp"
#include "tirelearn/tires.hpp"
#include "tirelearn/vehicle.hpp"

namespace tirelearn {

// --- reference ---------------------------------------------------------------

enum class ReferenceKind { straight, slalom, figure8 };
enum class Segment { arc = 0, transition = 1 };

std::string_view to_string(ReferenceKind k);
ReferenceKind parse_reference_kind(std::string_view s);

template <class T>
struct RefPoint {
  T kappa{};
  T phi{};
  T v{};
  T beta{};
  T delta_ff{};
  T sigma_ff{};
};

/// Reference profile sampled uniformly in s.
struct PathReference {
  double ds = 0.1;
  std::vector<double> kappa;
  std::vector<double> phi;
  std::vector<double> v;
  std::vector<double> beta;
  std::vector<double> delta_ff;  // equilibrium steering
  std::vector<double> sigma_ff;  // equilibrium rear slip ratio
  std::vector<int> segment;
  double lap_length = 0.0;  // one circuit (figure-8) or the full length

  std::size_t size() const { return kappa.size(); }
  double length() const { return ds * static_cast<double>(size() - 1); }
  Segment segment_at(double s) const;

  /// Linear interpolation, clamped to the ends.
  template <class T>
  RefPoint<T> at(const T& s) const {
    const double sv = std::clamp(value_of(s), 0.0, length());
    std::size_t i = static_cast<std::size_t>(sv / ds);
    if (i + 1 >= size()) i = size() - 2;
    const double s0 = ds * static_cast<double>(i);
    const bool inside = value_of(s) >= 0.0 && value_of(s) <= length();
    const T w = inside ? (s - s0) / ds : T((sv - s0) / ds);
    auto lerp = [&](const std::vector<double>& y) { return y[i] + (y[i + 1] - y[i]) * w; };
    return {lerp(kappa), lerp(phi), lerp(v), lerp(beta), lerp(delta_ff), lerp(sigma_ff)};
  }
};

struct ReferenceConfig {
  ReferenceKind kind = ReferenceKind::figure8;
  double ds = 0.1;
  double straight_length = 200.0;
  double straight_speed = 15.0;
  // figure-8
  double radius = 12.0;
  double transition = 12.0;
  double figure8_speed = 8.0;
  int laps = 2;
  // slalom
  int corners = 6;
  double corner_length = 15.0;
  double slalom_transition = 40.0;
  double corner_speed = 13.9;
  double max_speed = 20.1;
  double beta_peak = 0.75;
  // limits
  double kappa_max = 0.25;
  double delta_max = 0.8;
};

// --- equilibria ----------------------------------------------------------------

enum class Branch { grip, drift };

struct Equilibrium {
  double kappa = 0.0;
  double v = 0.0;
  double r = 0.0;
  double beta = 0.0;
  double delta = 0.0;
  double sigma_r = 0.0;
  double tau_r = 0.0;
  double residual = 0.0;  // max |r_dot|, |v_dot|, |beta_dot|
  int iterations = 0;
};

/// Steady cornering at (kappa, v): solves r_dot = v_dot = beta_dot = 0 with
/// r = kappa v for (beta, delta, sigma_r) by damped Newton from several
/// starting points of the requested branch.
Equilibrium drift_equilibrium(double kappa, double v, const TireSet& tires, const VehicleParams& p,
                              Branch branch = Branch::drift, double delta_max = 0.8);

/// Steady drift with prescribed sideslip: solves for (kappa, delta, sigma_r).
Equilibrium drift_equilibrium_for_beta(double beta, double v, const TireSet& tires, const VehicleParams& p,
                                       double delta_max = 0.8);

/// Equilibrium-based reference; `tires` defines the equilibria.
PathReference make_reference(const ReferenceConfig& cfg, const TireSet& tires, const VehicleParams& p);

// --- NMPC ----------------------------------------------------------------------

struct NmpcConfig {
  int horizon = 25;
  double dt = 0.05;
  double w_e = 1.0;
  double w_beta = 20.0;
  double w_dphi = 5.0;
  double w_v = 0.5;
  double w_delta = 0.5;    // deviation from the reference feedforward
  double w_sigma = 0.5;
  double w_ddelta = 5.0;   // input rates, per step
  double w_dsigma = 5.0;
  double delta_max = 0.8;
  double sigma_min = -0.3;
  double sigma_max = 1.2;
  int max_iterations = 50;
  double tolerance = 1e-6;      // projected gradient, inf-norm
  double rel_tolerance = 1e-4;  // relative cost decrease of an accepted step

  void validate() const;
};

/// Controller inputs: steering and the rear slip-ratio command, which a
/// wheel-speed servo turns into rear axle torque.
struct DriveCommand {
  double delta = 0.0;
  double sigma_r = 0.0;
};

struct SolveStats {
  int iterations = 0;
  double solve_time = 0.0;  // s, wall clock
  bool converged = false;
  double cost = 0.0;
};

enum class WarmStart { shift, keep };

class Nmpc {
 public:
  Nmpc(NmpcConfig cfg, TireSet model, VehicleParams params, const PathReference* reference);

  /// One solve from the (measured) state; `previous` is the command applied
  /// during the last interval. Throws NonFinitePrediction if the initial
  /// guess cannot be simulated.
  std::pair<DriveCommand, SolveStats> solve(const VehicleState& x, DriveCommand previous,
                                            WarmStart warm = WarmStart::shift);

  /// Horizon cost of an input sequence [delta_0, sigma_0, delta_1, ...].
  double cost(const VehicleState& x, DriveCommand previous, std::span<const double> inputs) const;

  const std::vector<double>& plan() const { return plan_; }
  void set_plan(std::vector<double> plan);
  void reset() { plan_.clear(); }
  const NmpcConfig& config() const { return cfg_; }
  /// Line-search costs of accepted iterates in the last solve.
  const std::vector<double>& cost_trace() const { return cost_trace_; }

 private:
  template <class T>
  int residuals(const VehicleState& x, DriveCommand previous, std::span<const T> u, std::vector<T>& out) const;
  void initial_plan(const VehicleState& x);

  NmpcConfig cfg_;
  TireSet model_;
  VehicleParams params_;
  const PathReference* ref_;
  std::vector<double> plan_;
  std::vector<double> cost_trace_;
};

/// 6-state controller model: (r, v, beta, s, e, dphi) under a DriveCommand.
template <class T>
std::array<T, 6> controller_deriv(const std::array<T, 6>& x, const T& delta, const T& sigma_r, const TireSet& tires,
                                  const VehicleParams& p, const PathReference& ref) {
  const T& r = x[0];
  const T& v = x[1];
  const T& beta = x[2];
  if (!(value_of(v) * std::cos(value_of(beta)) > kDefaultEpsilonV)) {
    throw Error(ErrorCode::degenerate_velocity, "predicted speed too low");
  }
  const auto [alpha_f, alpha_r] = slip_angles(v, beta, r, delta, p);
  BasicSlips<T> sl;
  sl.alpha_f = alpha_f;
  sl.alpha_r = alpha_r;
  sl.sigma_f = T(0.0);
  sl.sigma_r = sigma_r;
  const BasicAxleForces<T> f = evaluate_axles(tires, sl, r, v, beta, p.mu_fz_bar());
  const auto rates = body_rates(v, beta, r, delta, f, p);
  const T kappa = ref.at(x[3]).kappa;
  const T denom = 1.0 - x[4] * kappa;
  if (std::abs(value_of(denom)) < 1e-6) throw Error(ErrorCode::path_singularity, "1 - e * kappa_ref vanishes");
  const T course = x[5] + beta;
  const T s_dot = v * cos(course) / denom;
  return {rates[0], rates[1], rates[2], s_dot, v * sin(course), r - kappa * s_dot};
}

// --- plant and closed loop -----------------------------------------------------

struct NoiseConfig {
  double r = 0.005;
  double v = 0.05;
  double beta = 0.002;
};

/// Rear wheel-speed servo gains (PI on omega_r, torque-limited).
struct ServoConfig {
  double kp = 200.0;   // 1/s
  double ki = 2000.0;  // 1/s^2
  double tau_max = 5000.0;
};

/// Ground-truth vehicle: RK4 at a fine step with the plant tires. The front
/// wheel carries no torque and no longitudinal force, so it is kept at its
/// free-rolling speed.
class Plant {
 public:
  Plant(TireSet tires, VehicleParams params, const PathReference* reference, ServoConfig servo = {});

  void reset(const VehicleState& x);
  /// Advances by dt holding steering and the slip command.
  void step(const DriveCommand& u, double dt);

  const VehicleState& state() const { return x_; }
  double last_torque() const { return tau_r_; }
  /// Time derivative and forces at the current state for a given control.
  VehicleState derivative(const VehicleState& x, const Control& u, AxleForces* forces = nullptr) const;
  Slips slips(const VehicleState& x, double delta) const;

 private:
  TireSet tires_;
  VehicleParams params_;
  const PathReference* ref_;
  ServoConfig servo_;
  VehicleState x_;
  double integral_ = 0.0;
  double tau_r_ = 0.0;
  mutable std::optional<Slips> last_slips_;
};

struct Scenario {
  PathReference reference;
  TireSet plant;
  TireSet controller;
  VehicleParams params;
  NmpcConfig nmpc;
  NoiseConfig noise;
  ServoConfig servo;
  double sim_dt = 0.001;
  double duration = 0.0;   // s; 0 runs until s reaches s_end
  double s_end = 0.0;      // m; 0 uses one lap
  double e_abort = 8.0;
  std::uint64_t seed = 1;
};

struct LogRow {
  double t = 0.0;
  VehicleState x;
  double delta = 0.0;
  double sigma_cmd = 0.0;
  double tau_r = 0.0;
  AxleForces achieved;
  AxleForces commanded;  // controller model at the measured state
  double e = 0.0;
  double e_beta = 0.0;
  double beta_ref = 0.0;
  int segment = 0;
  int iterations = 0;
  bool converged = false;
  double cost = 0.0;
  double solve_time = 0.0;
};

struct RunLog {
  std::vector<LogRow> rows;
  bool aborted = false;
  double abort_s = 0.0;
  double abort_t = 0.0;

  /// Per-step CSV without wall-clock columns (reproducible).
  void write_csv(const std::string& path) const;
  /// Per-step iteration counts and solve times.
  void write_timing_csv(const std::string& path) const;
  static RunLog read_csv(const std::string& path);
};

RunLog simulate_closedloop(const Scenario& scenario);

struct BucketStats {
  double s_lo = 0.0;
  double s_hi = 0.0;
  int steps = 0;
  double mean_iterations = 0.0;
  double mean_solve_time = 0.0;
};

struct TrackingMetrics {
  double rms_e = 0.0;
  double rms_e_beta = 0.0;
  double steer_oscillation = 0.0;  // mean |delta_k - delta_{k-1}|
  double mean_iterations = 0.0;
  double mean_iterations_transition = 0.0;
  double mean_solve_time = 0.0;
  int max_iterations = 0;
  int steps = 0;
  bool aborted = false;
  double abort_s = 0.0;
  std::vector<BucketStats> buckets;

  nlohmann::json to_json() const;
};

TrackingMetrics tracking_metrics(const RunLog& log, double bucket_length = 10.0);

// --- data generation -----------------------------------------------------------

enum class DerivativeSource { trace, exact };

struct DataGenConfig {
  double duration = 180.0;  // s
  double log_rate = 100.0;  // Hz
  double sim_dt = 0.001;
  DerivativeSource derivative_source = DerivativeSource::trace;
  int smoothing_window = 5;
  NoiseConfig noise{0.0, 0.0, 0.0};
  double dither_delta = 0.03;  // rad, steering dither amplitude
  double pulse_period = 2.5;   // s between slip-command pulses
  double pulse_length = 0.4;   // s
  double pulse_sigma_min = -0.2;
  double pulse_sigma_max = 0.5;
  ReferenceConfig reference;
  NmpcConfig nmpc{.horizon = 15};
  std::uint64_t seed = 1;
};

/// Drives the plant with the plant-matched NMPC on a repeated figure-8 plus
/// steering dither and slip pulses, and logs slips and estimated forces.
Dataset generate_dataset(const DataGenConfig& cfg, const TireSet& plant, const VehicleParams& p);

/// Magic Formula ground-truth plants: "a" is the nominal tire, "b" the
/// swapped one.
TireSet plant_tires(std::string_view name);
MagicFormulaParams plant_params(std::string_view name, Axle axle);

}  // namespace tirelearn
