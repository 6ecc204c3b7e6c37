#include <cmath>
#include <random>

#include "doctest.h"
#include "tirelearn/mlp.hpp"
#include "tirelearn/train.hpp"

using namespace tirelearn;

namespace {

Feat front_feat(double r = 0.7, double v = 20.0, double beta = 0.1) { return Feat{Axle::front, r, v, beta, 7000.0}; }

std::vector<double> grid(double lo, double hi, int n) { return linspace(lo, hi, n); }

ExpTanhParams<double> random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ExpTanhParams<double> p;
  p.a1 = 200.0 * (u(rng) - 0.5);
  p.a2 = -(3000.0 + 6000.0 * u(rng));
  p.a3 = 0.5 + 6.0 * u(rng);
  p.a4 = 3.0 + 20.0 * u(rng);
  p.a5 = 0.02 * (u(rng) - 0.5);
  return p;
}

}  // namespace

TEST_CASE("Fiala brush curve") {
  const FialaParams p{80000.0, 1.1, 6000.0};
  CHECK(fiala_force(0.0, p) == 0.0);
  CHECK(fiala_force(0.6, p) == doctest::Approx(-1.1 * 6000.0));
  CHECK(fiala_force(-0.6, p) == doctest::Approx(1.1 * 6000.0));
  const double h = 1e-7;
  CHECK((fiala_force(h, p) - fiala_force(-h, p)) / (2 * h) == doctest::Approx(-80000.0).epsilon(1e-6));
  // continuous and C1 at the sliding threshold
  const double ts = std::atan(3.0 * p.peak() / p.stiffness);
  CHECK(fiala_force(ts - 1e-9, p) == doctest::Approx(fiala_force(ts + 1e-9, p)).epsilon(1e-9));
  const double slope_in = (fiala_force(ts - 1e-6, p) - fiala_force(ts - 2e-6, p)) / 1e-6;
  CHECK(std::abs(slope_in) < 1.0);
  CHECK(fiala_force(0.02, p, SlipDirection::longitudinal) > 0.0);
}

TEST_CASE("Magic Formula curve") {
  const MagicFormulaParams p{10.0, 1.45, 7600.0, 0.3};
  CHECK(magic_formula_force(0.0, p) == 0.0);
  const double h = 1e-7;
  CHECK((magic_formula_force(h, p) - magic_formula_force(-h, p)) / (2 * h) ==
        doctest::Approx(-10.0 * 1.45 * 7600.0).epsilon(1e-6));
  double peak = 0.0;
  for (double a : grid(0.0, 1.5, 150001)) peak = std::max(peak, std::abs(magic_formula_force(a, p)));
  CHECK(peak == doctest::Approx(7600.0).epsilon(1e-8));
}

TEST_CASE("baselines are odd in slip and follow the sign convention") {
  const FialaParams fp{90000.0, 1.0, 7000.0};
  const MagicFormulaParams mp{8.0, 1.7, 7900.0, -0.5};
  for (double a : grid(0.0, 1.0, 101)) {
    CHECK(fiala_force(-a, fp) == doctest::Approx(-fiala_force(a, fp)).epsilon(1e-14));
    CHECK(magic_formula_force(-a, mp) == doctest::Approx(-magic_formula_force(a, mp)).epsilon(1e-14));
    CHECK(fiala_force(a, fp) <= 0.0);
    CHECK(magic_formula_force(a, mp) <= 0.0);
  }
  const FialaTire fiala(Regime::combined, fp, 12000.0);
  const MagicFormulaTire mf(Regime::combined, mp);
  for (double s : grid(0.0, 1.0, 51)) {
    const TireInput<double> in{0.0, s, Feat{Axle::rear, 0.0, 10.0, 0.0, 7000.0}};
    CHECK(fiala.evaluate(in).fx >= 0.0);
    CHECK(mf.evaluate(in).fx >= 0.0);
    const TireInput<double> lat{s, 0.0, Feat{Axle::rear, 0.0, 10.0, 0.0, 7000.0}};
    CHECK(fiala.evaluate(lat).fy <= 0.0);
    CHECK(mf.evaluate(lat).fy <= 0.0);
  }
}

TEST_CASE("combined Fiala respects the friction circle") {
  const FialaTire fiala(Regime::combined, FialaParams{90000.0, 1.0, 7000.0}, 12000.0);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const TireInput<double> in{0.6 * u(rng), 0.8 * u(rng), Feat{Axle::rear, 0.0, 10.0, 0.0, 7000.0}};
    const TireForce<double> f = fiala.evaluate(in);
    CHECK(std::hypot(f.fx, f.fy) <= 7000.0 * (1.0 + 1e-9));
  }
}

TEST_CASE("ExpTanh evaluation by substitution") {
  ExpTanhParams<double> p{0.0, 1.0, 1.0, 1.0, 0.0};
  CHECK(exptanh_eval(1.0, p) == doctest::Approx(std::exp(-1.0) * std::tanh(1.0)).epsilon(1e-15));
  p.a3 = 1e-12;
  CHECK(exptanh_eval(0.0, p) == 0.0);
  const ExpTanhParams<double> flat{3.5, 0.0, 2.0, 4.0, 0.1};
  for (double z : grid(-2.0, 2.0, 41)) CHECK(exptanh_eval(z, flat) == 3.5);
}

TEST_CASE("ExpTanh extrema in closed form") {
  const ExpTanhParams<double> p{0.0, 1.0, 1.0, 1.0, 0.0};
  const auto ex = exptanh_extrema(p);
  const double z = std::atanh((std::sqrt(5.0) - 1.0) / 2.0);
  CHECK(ex.z_plus == doctest::Approx(z).epsilon(1e-15));
  CHECK(ex.z_minus == doctest::Approx(-z).epsilon(1e-15));

  double best = -1e300;
  double arg = 0.0;
  for (double x : grid(0.0, 3.0, 3000001)) {
    const double y = exptanh_eval(x, p);
    if (y > best) best = y, arg = x;
  }
  CHECK(std::abs(arg - ex.z_plus) < 1e-6);
  CHECK(exptanh_eval(ex.z_plus, p) == doctest::Approx(best).epsilon(1e-9));

  ExpTanhParams<double> q = p;
  q.a5 = 0.3;
  const auto ey = exptanh_extrema(q);
  CHECK(ey.z_plus - ex.z_plus == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(ey.z_minus - ex.z_minus == doctest::Approx(0.3).epsilon(1e-14));

  q.a3 = 0.0;
  CHECK_THROWS_AS(exptanh_extrema(q), Error);
}

TEST_CASE("ExpTanh S-shape: three curvature sign changes") {
  std::mt19937_64 rng(43);
  int tested = 0;
  for (int i = 0; i < 200 && tested < 50; ++i) {
    const ExpTanhParams<double> p = random_params(rng);
    if (!extrema_on_branch(p)) continue;
    ++tested;
    const auto zs = grid(-3.0, 3.0, 60001);
    const double h = zs[1] - zs[0];
    int changes = 0;
    int last = 0;
    for (std::size_t k = 1; k + 1 < zs.size(); ++k) {
      const double d2 = exptanh_eval(zs[k + 1], p) - 2.0 * exptanh_eval(zs[k], p) + exptanh_eval(zs[k - 1], p);
      if (std::abs(d2) < 1e-9 * std::abs(p.a2) * h * h) continue;
      const int sgn = d2 > 0 ? 1 : -1;
      if (last != 0 && sgn != last) ++changes;
      last = sgn;
    }
    CHECK(changes == 3);
    // peak magnitude equals the grid maximum
    const auto ex = exptanh_extrema(p);
    double gmax = 0.0;
    for (double z : zs) gmax = std::max(gmax, std::abs(exptanh_eval(z, p)));
    const double at = std::max(std::abs(exptanh_eval(ex.z_plus, p)), std::abs(exptanh_eval(ex.z_minus, p)));
    CHECK(at == doctest::Approx(gmax).epsilon(1e-6));
  }
  CHECK(tested >= 20);
}

TEST_CASE("combined split identity and homogeneity") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double ft = 8000.0 * u(rng);
    const double s1 = u(rng);
    const double s2 = u(rng);
    const TireForce<double> f = split_total_force(ft, s1, s2);
    CHECK(f.fx * f.fx + f.fy * f.fy == doctest::Approx(ft * ft).epsilon(1e-12));
    const double c = 0.01 + 10.0 * std::abs(u(rng));
    const TireForce<double> g = split_total_force(ft, c * s1, c * s2);
    CHECK(g.fx == doctest::Approx(f.fx).epsilon(1e-12));
    CHECK(g.fy == doctest::Approx(f.fy).epsilon(1e-12));
  }
  const TireForce<double> f = split_total_force(5000.0, 0.0, 0.4);
  CHECK(f.fy == 0.0);
  CHECK(std::abs(f.fx) == doctest::Approx(5000.0));
  CHECK_THROWS_AS(split_total_force(5000.0, 0.0, 0.0), Error);
}

TEST_CASE("ExpTanh models: a2 = 0 gives a slip-independent force") {
  ExpTanhTire m(Axle::front, Regime::pure_lateral);
  std::mt19937_64 rng(53);
  m.initialize(rng);
  std::vector<double> theta(m.parameters().begin(), m.parameters().end());
  const ExpTanhConfig cfg;
  const Mlp net(mlp_widths(4, cfg.hidden, cfg.depth, 5));
  const int n_in = cfg.hidden;
  const std::size_t last = net.param_count() - static_cast<std::size_t>((n_in + 1) * 5);
  for (int i = 0; i < n_in; ++i) theta[last + static_cast<std::size_t>(n_in + i)] = 0.0;  // row 1 weights
  theta[last + static_cast<std::size_t>(5 * n_in + 1)] = 0.0;                              // row 1 bias
  m.set_parameters(theta);
  CHECK(m.coefficients(front_feat()).a2 == 0.0);
  const double f0 = m.evaluate(TireInput<double>{0.0, 0.0, front_feat()}).fy;
  for (double a : grid(-0.5, 0.5, 21)) CHECK(m.evaluate(TireInput<double>{a, 0.0, front_feat()}).fy == f0);
}

TEST_CASE("ExpTanh models: autodiff slope matches finite differences") {
  ExpTanhTire m(Axle::front, Regime::pure_lateral);
  std::mt19937_64 rng(59);
  m.initialize(rng);
  for (double a : grid(-0.4, 0.4, 17)) {
    Tape tape;
    const Var alpha = tape.variable(a);
    const TireInput<Var> in{alpha, Var(0.0),
                            BasicFeat<Var>{Axle::front, Var(0.7), Var(20.0), Var(0.1), Var(7000.0)}};
    const Var fy = m.evaluate(in).fy;
    tape.backward(fy);
    const double h = 1e-6;
    const double fd = (m.evaluate(TireInput<double>{a + h, 0.0, front_feat()}).fy -
                       m.evaluate(TireInput<double>{a - h, 0.0, front_feat()}).fy) /
                      (2 * h);
    if (std::abs(a - m.coefficients(front_feat()).a5) < 1e-3 || std::abs(a) < 1e-3) continue;
    CHECK(tape.adjoint(alpha) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("ExpTanh combined output obeys the split identity") {
  ExpTanhTire m(Axle::rear, Regime::combined);
  std::mt19937_64 rng(61);
  m.initialize(rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const TireInput<double> in{0.6 * u(rng), 0.8 * u(rng), Feat{Axle::rear, u(rng), 10.0 + 5 * u(rng), 0, 7000.0}};
    const auto o = m.forward(m.parameters(), in, false);
    CHECK(o.fx * o.fx + o.fy * o.fy == doctest::Approx(o.ftot * o.ftot).epsilon(1e-9));
  }
}

TEST_CASE("Magic Formula least-squares fit") {
  const MagicFormulaParams truth{9.0, 1.6, 6500.0, 0.2};
  std::mt19937_64 rng(67);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<AxleSample> clean;
  for (int i = 0; i < 2000; ++i) {
    AxleSample s;
    s.in.alpha = u(rng);
    s.in.feat = front_feat();
    s.fy = magic_formula_force(s.in.alpha, truth);
    clean.push_back(s);
  }
  const FitConfig fc;
  SUBCASE("noise-free data recovers the parameters") {
    const auto fit = fit_magic_formula(clean, Regime::pure_lateral, MagicFormulaParams{10.0, 1.5, 7000.0, 0.5}, fc);
    CHECK(fit.loss < 1e-6 * truth.d * truth.d);
    CHECK(fit.params.d == doctest::Approx(truth.d).epsilon(1e-3));
  }
  SUBCASE("zero data drives the peak to zero") {
    std::vector<AxleSample> zero = clean;
    for (auto& s : zero) s.fy = 0.0;
    const auto fit = fit_magic_formula(zero, Regime::pure_lateral, MagicFormulaParams{10.0, 1.5, 7000.0, 0.5}, fc);
    CHECK(fit.params.d < 1.0);
  }
  SUBCASE("noisy data: RMSE within 1.1 sigma") {
    std::normal_distribution<double> n(0.0, 150.0);
    std::vector<AxleSample> noisy = clean;
    for (auto& s : noisy) s.fy += n(rng);
    const auto fit = fit_magic_formula(noisy, Regime::pure_lateral, MagicFormulaParams{10.0, 1.5, 7000.0, 0.5}, fc);
    CHECK(std::sqrt(fit.loss) <= 150.0 * 1.1);
  }
}

TEST_CASE("Fiala fit on Fiala data") {
  const FialaParams truth{95000.0, 1.05, 7000.0};
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::vector<AxleSample> data;
  for (int i = 0; i < 1000; ++i) {
    AxleSample s;
    s.in.alpha = u(rng);
    s.in.feat = front_feat();
    s.fy = fiala_force(s.in.alpha, truth);
    data.push_back(s);
  }
  const auto fit = fit_fiala(data, Regime::pure_lateral, FialaParams{1e5, 1.0, 7000.0}, 1e5);
  CHECK(fit.lateral.stiffness == doctest::Approx(95000.0).epsilon(1e-4));
  CHECK(fit.lateral.mu == doctest::Approx(1.05).epsilon(1e-4));
}

TEST_CASE("model files round-trip") {
  std::mt19937_64 rng(73);
  ExpTanhTire et(Axle::rear, Regime::combined);
  et.initialize(rng);
  const FialaTire fi(Regime::combined, FialaParams{90000.0, 1.0, 7000.0}, 12000.0);
  const MagicFormulaTire mf(Regime::pure_lateral, MagicFormulaParams{10.0, 1.45, 7600.0, 0.3});
  for (const TireModel* m : std::initializer_list<const TireModel*>{&et, &fi, &mf}) {
    const auto back = model_from_json(nlohmann::json::parse(m->to_json().dump()));
    CHECK(back->kind() == m->kind());
    CHECK(back->to_json().dump() == m->to_json().dump());
    const TireInput<double> in{0.1, 0.2, Feat{Axle::rear, 0.3, 9.0, 0.0, 7000.0}};
    CHECK(back->evaluate(in).fy == m->evaluate(in).fy);
  }
  CHECK_THROWS_AS(model_from_json(nlohmann::json{{"model_kind", "nope"}}), Error);
}
