#include <cmath>
#include <random>

#include "doctest.h"
#include "tirelearn/vehicle.hpp"

using namespace tirelearn;

namespace {

VehicleState random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VehicleState x;
  x.r = 0.8 * u(rng);
  x.v = 12.0 + 6.0 * u(rng);
  x.beta = 0.4 * u(rng);
  x.omega_f = x.v / 0.33 * (1.0 + 0.05 * u(rng));
  x.omega_r = x.v / 0.33 * (1.0 + 0.2 * u(rng));
  x.s = 10.0 + u(rng);
  x.e = u(rng);
  x.dphi = 0.3 * u(rng);
  return x;
}

// Force and moment balance written out in the body frame, solved for the
// velocity-frame rates by hand rather than through body_rates.
std::array<double, 3> hand_rates(const VehicleState& x, double delta, const AxleForces& f, const VehicleParams& p) {
  const double fx = f.f_xf * std::cos(delta) - f.f_yf * std::sin(delta) + f.f_xr;
  const double fy = f.f_xf * std::sin(delta) + f.f_yf * std::cos(delta) + f.f_yr;
  const double mz = p.a * (f.f_yf * std::cos(delta) + f.f_xf * std::sin(delta)) - p.b * f.f_yr;
  // body-frame velocity u = v cos b, w = v sin b; u' = fx/m + r w, w' = fy/m - r u
  const double u = x.v * std::cos(x.beta);
  const double w = x.v * std::sin(x.beta);
  const double du = fx / p.m + x.r * w;
  const double dw = fy / p.m - x.r * u;
  const double v_dot = (u * du + w * dw) / x.v;
  const double beta_dot = (u * dw - w * du) / (x.v * x.v);
  return {mz / p.i_z, v_dot, beta_dot};
}

}  // namespace

TEST_CASE("slips vanish when the wheels roll freely straight ahead") {
  const VehicleParams p;
  VehicleState x;
  x.v = 20.0;
  x.omega_f = x.v / p.r_w;
  x.omega_r = x.v / p.r_w;
  const Slips s = compute_slips(x, 0.0, p);
  CHECK(s.alpha_f == 0.0);
  CHECK(s.alpha_r == 0.0);
  CHECK(std::abs(s.sigma_f) < 1e-15);
  CHECK(std::abs(s.sigma_r) < 1e-15);
  CHECK(std::abs(s.kappa_r) < 1e-15);
}

TEST_CASE("front slip angle at the r=0.7, V=20, beta=0.1 probe state") {
  const VehicleParams p;
  VehicleState x;
  x.r = 0.7;
  x.v = 20.0;
  x.beta = 0.1;
  x.omega_f = x.omega_r = 60.0;
  const Slips s = compute_slips(x, 0.0, p);
  CHECK(s.alpha_f == doctest::Approx(std::atan((20.0 * std::sin(0.1) + 1.42 * 0.7) / (20.0 * std::cos(0.1))))
                         .epsilon(1e-14));
  CHECK(s.alpha_r == doctest::Approx(std::atan((20.0 * std::sin(0.1) - 1.37 * 0.7) / (20.0 * std::cos(0.1))))
                         .epsilon(1e-14));
}

TEST_CASE("total slip for sigma 0.4 and alpha 0.02") {
  const double k = total_slip(0.02, 0.4);
  CHECK(k == doctest::Approx(std::sqrt(std::tan(0.02) * std::tan(0.02) + 0.16)).epsilon(1e-15));
}

TEST_CASE("slip ratio uses the wheel-plane speed") {
  const VehicleParams p;
  VehicleState x;
  x.v = 10.0;
  x.beta = 0.2;
  x.r = 0.3;
  x.omega_r = 40.0;
  x.omega_f = 30.0;
  const double delta = 0.1;
  const Slips s = compute_slips(x, delta, p);
  const double vxr = 10.0 * std::cos(0.2);
  const double vxf = 10.0 * std::cos(delta - 0.2) - p.a * 0.3 * std::sin(delta);
  CHECK(s.sigma_r == doctest::Approx((p.r_w * 40.0 - vxr) / vxr).epsilon(1e-14));
  CHECK(s.sigma_f == doctest::Approx((p.r_w * 30.0 - vxf) / vxf).epsilon(1e-14));
}

TEST_CASE("slips reject a vanishing longitudinal speed") {
  const VehicleParams p;
  VehicleState x;
  x.v = 0.05;
  CHECK_THROWS_AS(compute_slips(x, 0.0, p), Error);
  x.v = 5.0;
  x.beta = M_PI / 2.0;
  CHECK_THROWS_AS(compute_slips(x, 0.0, p), Error);
}

TEST_CASE("total slip dominates each component") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 500; ++i) {
    const double a = u(rng);
    const double s = u(rng);
    const double k = total_slip(a, s);
    CHECK(k >= std::abs(std::tan(a)) - 1e-15);
    CHECK(k >= std::abs(s) - 1e-15);
  }
}

TEST_CASE("slip angles are odd under reflection of beta, r and delta") {
  const VehicleParams p;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const VehicleState x = random_state(rng);
    const double delta = 0.3 * std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    VehicleState m = x;
    m.beta = -x.beta;
    m.r = -x.r;
    const Slips a = compute_slips(x, delta, p);
    const Slips b = compute_slips(m, -delta, p);
    CHECK(b.alpha_f == doctest::Approx(-a.alpha_f).epsilon(1e-13));
    CHECK(b.alpha_r == doctest::Approx(-a.alpha_r).epsilon(1e-13));
  }
}

TEST_CASE("coasting straight ahead only advances s") {
  const VehicleParams p;
  VehicleState x;
  x.v = 15.0;
  x.omega_f = x.omega_r = 15.0 / p.r_w;
  const VehicleState d = dynamics_deriv<double>(x, Control{}, AxleForces{}, 0.0, p);
  CHECK(d.r == 0.0);
  CHECK(d.v == 0.0);
  CHECK(d.beta == 0.0);
  CHECK(d.omega_f == 0.0);
  CHECK(d.omega_r == 0.0);
  CHECK(d.s == doctest::Approx(15.0));
  CHECK(d.e == 0.0);
  CHECK(d.dphi == 0.0);
}

TEST_CASE("pure rear traction accelerates without yaw") {
  const VehicleParams p;
  VehicleState x;
  x.v = 10.0;
  AxleForces f;
  f.f_xr = 3500.0;
  const VehicleState d = dynamics_deriv<double>(x, Control{0.0, 0.0, 1000.0}, f, 0.0, p);
  CHECK(d.v == doctest::Approx(3500.0 / p.m));
  CHECK(d.r == 0.0);
  CHECK(d.omega_r == doctest::Approx((1000.0 - p.r_w * 3500.0) / p.i_w));
}

TEST_CASE("rates agree with a body-frame force balance") {
  const VehicleParams p;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const VehicleState x = random_state(rng);
    const double delta = 0.4 * u(rng);
    const AxleForces f{1000.0 * u(rng), 6000.0 * u(rng), 5000.0 * u(rng), 6000.0 * u(rng)};
    const VehicleState d = dynamics_deriv<double>(x, Control{delta, 0.0, 0.0}, f, 0.05, p);
    const auto h = hand_rates(x, delta, f, p);
    CHECK(d.r == doctest::Approx(h[0]).epsilon(1e-12));
    CHECK(d.v == doctest::Approx(h[1]).epsilon(1e-12));
    CHECK(d.beta == doctest::Approx(h[2]).epsilon(1e-12));
  }
}

TEST_CASE("path kinematics identity") {
  const VehicleParams p;
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    const VehicleState x = random_state(rng);
    const double kappa = 0.08;
    const VehicleState d = dynamics_deriv<double>(x, Control{}, AxleForces{}, kappa, p);
    CHECK(d.s * (1.0 - x.e * kappa) == doctest::Approx(x.v * std::cos(x.dphi + x.beta)).epsilon(1e-14));
    CHECK(d.e == doctest::Approx(x.v * std::sin(x.dphi + x.beta)).epsilon(1e-14));
    CHECK(d.dphi == doctest::Approx(x.r - kappa * d.s).epsilon(1e-14));
  }
}

TEST_CASE("path singularity is reported") {
  const VehicleParams p;
  VehicleState x;
  x.v = 10.0;
  x.e = 10.0;
  CHECK_THROWS_AS(dynamics_deriv<double>(x, Control{}, AxleForces{}, 0.1, p), Error);
}

TEST_CASE("force estimation inverts the dynamics") {
  const VehicleParams p;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const VehicleState x = random_state(rng);
    const double delta = 0.5 * u(rng);
    const AxleForces f{0.0, 7000.0 * u(rng), 6000.0 * u(rng), 7000.0 * u(rng)};
    const VehicleState d = dynamics_deriv<double>(x, Control{delta, 0.0, 0.0}, f, 0.0, p);
    const AxleForces g = estimate_forces(StateRates{d.r, d.v, d.beta}, x, delta, p);
    CHECK(g.f_xf == 0.0);
    CHECK(g.f_yf == doctest::Approx(f.f_yf).epsilon(1e-9).scale(1.0));
    CHECK(g.f_xr == doctest::Approx(f.f_xr).epsilon(1e-9).scale(1.0));
    CHECK(g.f_yr == doctest::Approx(f.f_yr).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("zero forces are recovered at an unforced state") {
  const VehicleParams p;
  VehicleState x;
  x.v = 10.0;
  x.r = 0.0;
  const AxleForces g = estimate_forces(StateRates{0.0, 0.0, 0.0}, x, 0.1, p);
  CHECK(std::abs(g.f_yf) < 1e-9);
  CHECK(std::abs(g.f_xr) < 1e-9);
  CHECK(std::abs(g.f_yr) < 1e-9);
}

TEST_CASE("force estimate noise matches linear propagation") {
  // The map from rates to forces is linear, so the Monte-Carlo spread must
  // match the analytic spread J diag(s^2) J^T computed column by column.
  const VehicleParams p;
  VehicleState x;
  x.v = 12.0;
  x.beta = -0.3;
  x.r = 0.6;
  const double delta = -0.1;
  const StateRates base{0.2, -0.1, 0.05};
  const AxleForces f0 = estimate_forces(base, x, delta, p);
  const std::array<double, 3> sd{0.05, 0.1, 0.02};
  std::array<std::array<double, 3>, 3> cols{};
  for (int k = 0; k < 3; ++k) {
    StateRates r = base;
    (k == 0 ? r.r_dot : k == 1 ? r.v_dot : r.beta_dot) += 1.0;
    const AxleForces f = estimate_forces(r, x, delta, p);
    cols[k] = {f.f_yf - f0.f_yf, f.f_xr - f0.f_xr, f.f_yr - f0.f_yr};
  }
  std::mt19937_64 rng(19);
  std::normal_distribution<double> n(0.0, 1.0);
  std::array<double, 3> var{};
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    const StateRates r{base.r_dot + sd[0] * n(rng), base.v_dot + sd[1] * n(rng), base.beta_dot + sd[2] * n(rng)};
    const AxleForces f = estimate_forces(r, x, delta, p);
    const std::array<double, 3> e{f.f_yf - f0.f_yf, f.f_xr - f0.f_xr, f.f_yr - f0.f_yr};
    for (int c = 0; c < 3; ++c) var[c] += e[c] * e[c] / trials;
  }
  for (int c = 0; c < 3; ++c) {
    double expected = 0.0;
    for (int k = 0; k < 3; ++k) expected += cols[k][c] * cols[k][c] * sd[k] * sd[k];
    CHECK(std::sqrt(var[c]) == doctest::Approx(std::sqrt(expected)).epsilon(0.03));
  }
}

TEST_CASE("trace differentiation") {
  const double dt = 0.01;
  std::vector<VehicleState> trace(50);
  SUBCASE("constant") {
    for (auto& x : trace) x.r = 0.4, x.v = 10.0, x.beta = 0.1;
    for (const StateRates& d : differentiate_trace(trace, dt)) {
      CHECK(d.r_dot == 0.0);
      CHECK(d.v_dot == 0.0);
      CHECK(d.beta_dot == 0.0);
    }
  }
  SUBCASE("linear ramp is exact everywhere") {
    for (std::size_t i = 0; i < trace.size(); ++i) trace[i].r = 0.3 * dt * static_cast<double>(i);
    for (const StateRates& d : differentiate_trace(trace, dt)) CHECK(d.r_dot == doctest::Approx(0.3).epsilon(1e-10));
  }
  SUBCASE("sinusoid within the h^2 truncation bound") {
    const double w = 2.0 * M_PI * 1.5;
    for (std::size_t i = 0; i < trace.size(); ++i) trace[i].v = std::sin(w * dt * static_cast<double>(i));
    const auto d = differentiate_trace(trace, dt);
    for (std::size_t i = 1; i + 1 < trace.size(); ++i) {
      const double exact = w * std::cos(w * dt * static_cast<double>(i));
      CHECK(std::abs(d[i].v_dot - exact) <= dt * dt / 6.0 * w * w * w * 1.0001);
    }
  }
}

TEST_CASE("rk4 on scalar and vector fields") {
  SUBCASE("zero field") {
    VehicleState x;
    x.v = 3.0;
    x.s = 7.0;
    const VehicleState y = rk4_step([](const VehicleState&) { return VehicleState{}; }, x, 0.1);
    CHECK(y.v == 3.0);
    CHECK(y.s == 7.0);
  }
  SUBCASE("linear decay matches exp to fifth order") {
    for (double h : {0.1, 0.05}) {
      const auto y = rk4_step([](const std::array<double, 1>& x) { return std::array<double, 1>{-2.0 * x[0]}; },
                              std::array<double, 1>{1.0}, h);
      CHECK(std::abs(y[0] - std::exp(-2.0 * h)) < std::pow(2.0 * h, 5) / 120.0 * 1.01);
    }
  }
  SUBCASE("empirical global order on a nonlinear field") {
    auto f = [](const std::array<double, 2>& x) { return std::array<double, 2>{x[1], -std::sin(x[0])}; };
    auto run = [&](int n) {
      std::array<double, 2> x{1.0, 0.0};
      for (int i = 0; i < n; ++i) x = rk4_step(f, x, 2.0 / n);
      return x;
    };
    const auto ref = run(8192);
    double prev = 0.0;
    for (int n : {16, 32, 64}) {
      const auto x = run(n);
      const double err = std::hypot(x[0] - ref[0], x[1] - ref[1]);
      if (prev > 0.0) CHECK(std::log2(prev / err) >= 3.9);
      prev = err;
    }
  }
  SUBCASE("non-positive step is rejected") {
    CHECK_THROWS_AS(rk4_step([](const VehicleState& x) { return x; }, VehicleState{}, 0.0), Error);
  }
}
