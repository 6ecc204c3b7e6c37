#pragma once

// Planar single-track vehicle in curvilinear path coordinates.
//
// Sign conventions: e > 0 to the left of the path, dphi = heading - path
// course, positive yaw rate counter-clockwise. Lumped lateral forces are
// positive to the left; F_y <= 0 for alpha >= 0 and F_x >= 0 for sigma >= 0.

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tirelearn/ad.hpp"
#include "tirelearn/error.hpp"

namespace tirelearn {

struct VehicleParams {
  double m = 1750.0;
  double i_z = 2500.0;
  double a = 1.42;
  double b = 1.37;
  double r_w = 0.33;
  double i_w = 1.2;
  double g = 9.81;
  double mu_bar = 7000.0 / (1750.0 * 9.81);

  /// Nominal peak axle force estimate mu_bar * m * g.
  double mu_fz_bar() const { return mu_bar * m * g; }
  void validate() const;
};

template <class T>
struct BasicVehicleState {
  static constexpr std::size_t kSize = 8;

  T r{};
  T v{};
  T beta{};
  T omega_f{};
  T omega_r{};
  T s{};
  T e{};
  T dphi{};

  std::array<T, kSize> to_array() const { return {r, v, beta, omega_f, omega_r, s, e, dphi}; }
  static BasicVehicleState from_array(const std::array<T, kSize>& x) {
    return {x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]};
  }
};
using VehicleState = BasicVehicleState<double>;

template <class T>
struct BasicControl {
  T delta{};
  T tau_f{};
  T tau_r{};
};
using Control = BasicControl<double>;

template <class T>
struct BasicAxleForces {
  T f_xf{};
  T f_yf{};
  T f_xr{};
  T f_yr{};
};
using AxleForces = BasicAxleForces<double>;

template <class T>
struct BasicSlips {
  T alpha_f{};
  T alpha_r{};
  T sigma_f{};
  T sigma_r{};
  T kappa_f{};
  T kappa_r{};
};
using Slips = BasicSlips<double>;

/// Measured rates used for force estimation.
struct StateRates {
  double r_dot = 0.0;
  double v_dot = 0.0;
  double beta_dot = 0.0;
};

inline constexpr double kDefaultEpsilonV = 0.1;

/// Total slip sqrt(tan^2 alpha + sigma^2).
template <class T>
T total_slip(const T& alpha, const T& sigma) {
  const T t = tan(alpha);
  return sqrt(t * t + sigma * sigma);
}

/// Longitudinal wheel-plane velocities (front, rear).
template <class T>
std::array<T, 2> axle_longitudinal_speeds(const T& v, const T& beta, const T& r, const T& delta,
                                          const VehicleParams& p) {
  return {v * cos(delta - beta) - p.a * r * sin(delta), v * cos(beta)};
}

/// Front and rear slip angles.
template <class T>
std::array<T, 2> slip_angles(const T& v, const T& beta, const T& r, const T& delta, const VehicleParams& p) {
  const T vx = v * cos(beta);
  const T vy = v * sin(beta);
  return {atan((vy + p.a * r) / vx) - delta, atan((vy - p.b * r) / vx)};
}

/// Slip angles, slip ratios and total slips of both axles.
template <class T>
BasicSlips<T> compute_slips(const BasicVehicleState<T>& x, const T& delta, const VehicleParams& p,
                            double epsilon_v = kDefaultEpsilonV) {
  const auto [v_xf, v_xr] = axle_longitudinal_speeds(x.v, x.beta, x.r, delta, p);
  if (std::abs(value_of(v_xf)) < epsilon_v || std::abs(value_of(v_xr)) < epsilon_v) {
    throw Error(ErrorCode::degenerate_velocity, "longitudinal axle speed below epsilon_v");
  }
  const auto [alpha_f, alpha_r] = slip_angles(x.v, x.beta, x.r, delta, p);
  BasicSlips<T> s;
  s.alpha_f = alpha_f;
  s.alpha_r = alpha_r;
  s.sigma_f = (p.r_w * x.omega_f - v_xf) / v_xf;
  s.sigma_r = (p.r_w * x.omega_r - v_xr) / v_xr;
  s.kappa_f = total_slip(s.alpha_f, s.sigma_f);
  s.kappa_r = total_slip(s.alpha_r, s.sigma_r);
  return s;
}

/// Planar force/moment balance: returns (r_dot, v_dot, beta_dot).
template <class T>
std::array<T, 3> body_rates(const T& v, const T& beta, const T& r, const T& delta, const BasicAxleForces<T>& f,
                            const VehicleParams& p) {
  const T cd = cos(delta);
  const T sd = sin(delta);
  const T fx_body = f.f_xf * cd - f.f_yf * sd + f.f_xr;
  const T fy_body = f.f_xf * sd + f.f_yf * cd + f.f_yr;
  const T mz = p.a * (f.f_xf * sd + f.f_yf * cd) - p.b * f.f_yr;
  const T cb = cos(beta);
  const T sb = sin(beta);
  const T r_dot = mz / p.i_z;
  const T v_dot = (fx_body * cb + fy_body * sb) / p.m;
  const T beta_dot = (fy_body * cb - fx_body * sb) / (p.m * v) - r;
  return {r_dot, v_dot, beta_dot};
}

/// Time derivative of all eight states.
template <class T>
BasicVehicleState<T> dynamics_deriv(const BasicVehicleState<T>& x, const BasicControl<T>& u,
                                    const BasicAxleForces<T>& f, const T& kappa_ref, const VehicleParams& p) {
  const T denom = 1.0 - x.e * kappa_ref;
  if (std::abs(value_of(denom)) < 1e-6) {
    throw Error(ErrorCode::path_singularity, "1 - e * kappa_ref vanishes");
  }
  const auto [r_dot, v_dot, beta_dot] = body_rates(x.v, x.beta, x.r, u.delta, f, p);
  BasicVehicleState<T> d;
  d.r = r_dot;
  d.v = v_dot;
  d.beta = beta_dot;
  d.omega_f = (u.tau_f - p.r_w * f.f_xf) / p.i_w;
  d.omega_r = (u.tau_r - p.r_w * f.f_xr) / p.i_w;
  const T course = x.dphi + x.beta;
  d.s = x.v * cos(course) / denom;
  d.e = x.v * sin(course);
  d.dphi = x.r - kappa_ref * d.s;
  return d;
}

/// Inverts the force/moment balance for (F_yf, F_xr, F_yr) assuming F_xf = 0.
AxleForces estimate_forces(const StateRates& rates, const VehicleState& x, double delta, const VehicleParams& p);

/// Central differences in the interior, second-order one-sided at the ends,
/// optionally followed by a centred moving average of `smoothing_window`
/// samples (1 disables smoothing).
std::vector<StateRates> differentiate_trace(std::span<const VehicleState> samples, double dt,
                                            int smoothing_window = 1);

template <class T, std::size_t N>
std::array<T, N> axpy(const std::array<T, N>& x, double h, const std::array<T, N>& k) {
  std::array<T, N> out;
  for (std::size_t i = 0; i < N; ++i) out[i] = x[i] + h * k[i];
  return out;
}

/// Classical fourth-order Runge-Kutta step for x' = f(x).
template <class T, std::size_t N, class F>
std::array<T, N> rk4_step(F&& f, const std::array<T, N>& x, double dt) {
  const std::array<T, N> k1 = f(x);
  const std::array<T, N> k2 = f(axpy(x, 0.5 * dt, k1));
  const std::array<T, N> k3 = f(axpy(x, 0.5 * dt, k2));
  const std::array<T, N> k4 = f(axpy(x, dt, k3));
  std::array<T, N> out;
  for (std::size_t i = 0; i < N; ++i) out[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

/// RK4 on the vehicle state; `f` maps a state to its derivative.
template <class F>
VehicleState rk4_step(F&& f, const VehicleState& x, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::invalid_argument, "rk4_step needs dt > 0");
  auto g = [&f](const std::array<double, 8>& a) { return f(VehicleState::from_array(a)).to_array(); };
  return VehicleState::from_array(rk4_step(g, x.to_array(), dt));
}

}  // namespace tirelearn
