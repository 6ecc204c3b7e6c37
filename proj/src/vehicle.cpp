#include "tirelearn/vehicle.hpp"

#include <Eigen/Dense>
#include <algorithm>

namespace tirelearn {

void VehicleParams::validate() const {
  for (double x : {m, i_z, a, b, r_w, i_w, g, mu_bar}) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw Error(ErrorCode::invalid_argument, "vehicle parameters must be finite and strictly positive");
    }
  }
}

AxleForces estimate_forces(const StateRates& rates, const VehicleState& x, double delta, const VehicleParams& p) {
  // Body-frame net force from the measured velocity-frame accelerations.
  const double cb = std::cos(x.beta);
  const double sb = std::sin(x.beta);
  const double a_tan = p.m * rates.v_dot;
  const double a_norm = p.m * x.v * (rates.beta_dot + x.r);
  const double fx_body = a_tan * cb - a_norm * sb;
  const double fy_body = a_tan * sb + a_norm * cb;
  const double mz = p.i_z * rates.r_dot;

  Eigen::Matrix3d m;
  m << -std::sin(delta), 1.0, 0.0,  //
      std::cos(delta), 0.0, 1.0,    //
      p.a * std::cos(delta), 0.0, -p.b;
  const Eigen::Vector3d rhs(fx_body, fy_body, mz);

  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(m).singularValues();
  const double cond = sv.maxCoeff() / sv.minCoeff();
  if (!std::isfinite(cond) || cond > 1e8) {
    throw Error(ErrorCode::singular_inversion, "force inversion matrix is ill-conditioned");
  }
  const Eigen::Vector3d f = m.partialPivLu().solve(rhs);
  return AxleForces{0.0, f(0), f(1), f(2)};
}

std::vector<StateRates> differentiate_trace(std::span<const VehicleState> samples, double dt, int smoothing_window) {
  const std::size_t n = samples.size();
  if (n < 3) throw Error(ErrorCode::invalid_argument, "differentiate_trace needs at least 3 samples");
  if (!(dt > 0.0)) throw Error(ErrorCode::invalid_argument, "differentiate_trace needs dt > 0");

  auto diff = [&](auto get) {
    std::vector<double> d(n);
    d[0] = (4.0 * (get(samples[1]) - get(samples[0])) - (get(samples[2]) - get(samples[0]))) / (2.0 * dt);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (get(samples[i + 1]) - get(samples[i - 1])) / (2.0 * dt);
    d[n - 1] = (4.0 * (get(samples[n - 1]) - get(samples[n - 2])) - (get(samples[n - 1]) - get(samples[n - 3]))) / (2.0 * dt);
    return d;
  };
  std::vector<double> r = diff([](const VehicleState& s) { return s.r; });
  std::vector<double> v = diff([](const VehicleState& s) { return s.v; });
  std::vector<double> b = diff([](const VehicleState& s) { return s.beta; });

  if (smoothing_window > 1) {
    const std::ptrdiff_t half = smoothing_window / 2;
    auto smooth = [&](const std::vector<double>& in) {
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Shrink the window symmetrically near the ends to stay zero-phase.
        const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i);
        const std::ptrdiff_t h = std::min({half, ii, static_cast<std::ptrdiff_t>(n) - 1 - ii});
        double acc = 0.0;
        for (std::ptrdiff_t k = ii - h; k <= ii + h; ++k) acc += in[static_cast<std::size_t>(k)];
        out[i] = acc / static_cast<double>(2 * h + 1);
      }
      return out;
    };
    r = smooth(r);
    v = smooth(v);
    b = smooth(b);
  }

  std::vector<StateRates> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = StateRates{r[i], v[i], b[i]};
  return out;
}

}  // namespace tirelearn
