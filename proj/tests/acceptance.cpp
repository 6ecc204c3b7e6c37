// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
// final "acceptance complete" line; the exit status is the number of FAILs.
//
//   acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tirelearn/pipeline.hpp"

using namespace tirelearn;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void run(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), since(t0));
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void note(const std::string& s) {
  std::printf("     %s\n", s.c_str());
  std::fflush(stdout);
}

// --- criterion 1 ---------------------------------------------------------------

ExpTanhParams<double> draw_exptanh(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ExpTanhParams<double> p;
  p.a1 = 400.0 * (u(rng) - 0.5);
  p.a2 = (u(rng) < 0.5 ? -1.0 : 1.0) * (1000.0 + 8000.0 * u(rng));
  p.a3 = 0.1 + 8.0 * u(rng);
  p.a4 = 2.0 + 30.0 * u(rng);
  p.a5 = 0.1 * (u(rng) - 0.5);
  return p;
}

// Golden-section maximum of a unimodal f on [lo, hi].
template <class F>
double golden_max(F&& f, double lo, double hi) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - g * (hi - lo);
  double d = lo + g * (hi - lo);
  double fc = f(c);
  double fd = f(d);
  while (hi - lo > 1e-13) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = f(d);
    }
  }
  return 0.5 * (lo + hi);
}

Outcome criterion_extrema() {
  std::mt19937_64 rng(101);
  const int n = 20001;
  const double lo = -1.5;
  const double hi = 1.5;
  const double h = (hi - lo) / (n - 1);
  std::vector<double> ys(n);
  int tested = 0;
  int bad = 0;
  double worst_z = 0.0;
  double worst_v = 0.0;
  while (tested < 1000) {
    const ExpTanhParams<double> p = draw_exptanh(rng);
    if (!extrema_on_branch(p)) continue;
    ++tested;
    for (int k = 0; k < n; ++k) ys[k] = exptanh_eval(lo + h * k, p);
    const auto kmax = std::max_element(ys.begin(), ys.end()) - ys.begin();
    const auto kmin = std::min_element(ys.begin(), ys.end()) - ys.begin();
    if (kmax == 0 || kmax == n - 1 || kmin == 0 || kmin == n - 1) {
      ++bad;
      continue;
    }
    auto f = [&](double z) { return exptanh_eval(z, p); };
    auto g = [&](double z) { return -exptanh_eval(z, p); };
    const double zmax = golden_max(f, lo + h * (kmax - 1), lo + h * (kmax + 1));
    const double zmin = golden_max(g, lo + h * (kmin - 1), lo + h * (kmin + 1));
    const auto ex = exptanh_extrema(p);
    // a2 > 0 puts the maximum at z_plus, a2 < 0 at z_minus.
    const double amax = p.a2 > 0.0 ? ex.z_plus : ex.z_minus;
    const double amin = p.a2 > 0.0 ? ex.z_minus : ex.z_plus;
    const double dz = std::max(std::abs(amax - zmax), std::abs(amin - zmin));
    const double dv = std::max(std::abs(f(amax) - f(zmax)) / std::abs(f(zmax)),
                               std::abs(f(amin) - f(zmin)) / std::abs(f(zmin)));
    worst_z = std::max(worst_z, dz);
    worst_v = std::max(worst_v, dv);
    if (dz > 1e-6 || dv > 1e-9) ++bad;
  }
  return {bad == 0, fmt("%d draws, %d mismatches, max |dz| %.2e, max rel value %.2e", tested, bad, worst_z, worst_v)};
}

// --- criterion 2 ---------------------------------------------------------------

Outcome criterion_split() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0;
  int bad = 0;
  double worst = 0.0;
  for (int set = 0; set < 10; ++set) {
    ExpTanhTire et(Axle::rear, Regime::combined);
    NodeCombinedTire node(Axle::rear);
    et.initialize(rng);
    node.initialize(rng);
    for (const LearnedTire* m : {static_cast<const LearnedTire*>(&et), static_cast<const LearnedTire*>(&node)}) {
      for (int i = 0; i < 1000; ++i) {
        const TireInput<double> in{0.6 * u(rng), u(rng), Feat{Axle::rear, 2.0 * u(rng), 14.0 + 11.0 * u(rng), 0.0, 7000.0}};
        const auto o = m->forward(m->parameters(), in, false);
        const double rel = std::abs(o.fx * o.fx + o.fy * o.fy - o.ftot * o.ftot) / (o.ftot * o.ftot);
        worst = std::max(worst, rel);
        ++checked;
        if (!(rel <= 1e-9)) ++bad;
      }
    }
  }
  return {bad == 0, fmt("%d probes per model kind, %d violations, max rel %.2e", checked / 2, bad, worst)};
}

// --- criterion 3 ---------------------------------------------------------------

Outcome criterion_convexity() {
  const double h = 2.5e-7;
  const double band = 1e-6;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  long points = 0;
  int bad_pure = 0;
  int bad_comb = 0;
  for (int set = 0; set < 100; ++set) {
    NodePureTire pure(Axle::front);
    NodeCombinedTire comb(Axle::rear);
    pure.initialize(rng);
    comb.initialize(rng);
    const Feat ff{Axle::front, 1.5 * u(rng), 12.0 + 8.0 * u(rng), 0.5 * u(rng), 7000.0};
    const Feat rf{Axle::rear, 1.5 * u(rng), 12.0 + 8.0 * u(rng), 0.0, 7000.0};
    const PureHead<double> ph = pure.head(ff);
    for (double a : linspace(ph.lower - 0.4, ph.upper + 0.4, 121)) {
      const double dist = std::min({std::abs(a - ph.lower), std::abs(a - ph.center), std::abs(a - ph.upper)});
      if (dist <= band) continue;
      const double d2 = (pure.solve(a + h, ff).f - 2.0 * pure.solve(a, ff).f + pure.solve(a - h, ff).f) / (h * h);
      const bool convex = pure_region(a, ph) == Curvature::convex;
      if (convex ? !(d2 > 0.0) : !(d2 < 0.0)) ++bad_pure;
      ++points;
    }
    const CombinedHead<double> ch = comb.head(rf);
    for (double k : linspace(0.0, ch.kappa1 + 0.6, 121)) {
      if (k <= band || std::abs(k - ch.kappa1) <= band) continue;
      const double d2 = (comb.solve(k + h, rf).f - 2.0 * comb.solve(k, rf).f + comb.solve(k - h, rf).f) / (h * h);
      if (k < ch.kappa1 ? !(d2 < 0.0) : !(d2 > 0.0)) ++bad_comb;
      ++points;
    }
  }
  return {bad_pure + bad_comb == 0,
          fmt("100 pure + 100 combined sets, %ld points, violations pure %d combined %d", points, bad_pure, bad_comb)};
}

// --- criterion 4 ---------------------------------------------------------------

std::vector<AxleSample> mf_samples(Axle axle, Regime regime, int n, std::uint64_t seed) {
  const MagicFormulaTire truth(regime, MagicFormulaParams{9.0, 1.6, 6500.0, 0.2});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<AxleSample> out;
  for (int i = 0; i < n; ++i) {
    AxleSample s;
    s.in.alpha = 0.4 * u(rng);
    s.in.sigma = regime == Regime::combined ? 0.3 * u(rng) : 0.0;
    s.in.feat = Feat{axle, u(rng), 12.0 + 6.0 * u(rng), axle == Axle::front ? 0.4 * u(rng) : 0.0, 7000.0};
    const TireForce<double> f = truth.evaluate(s.in);
    s.fx = f.fx;
    s.fy = f.fy;
    out.push_back(s);
  }
  return out;
}

Outcome criterion_gradients() {
  const std::vector<ModelKind> kinds{ModelKind::exptanh_pure, ModelKind::node_pure, ModelKind::exptanh_combined,
                                     ModelKind::node_combined};
  TrainConfig cfg;
  cfg.lambda = 0.01;
  cfg.mu_fz_bar = 3000.0;
  std::mt19937_64 rng(404);
  std::normal_distribution<double> gauss;
  std::string detail;
  int bad = 0;
  for (ModelKind kind : kinds) {
    const bool pure = kind == ModelKind::exptanh_pure || kind == ModelKind::node_pure;
    const Axle axle = pure ? Axle::front : Axle::rear;
    double worst = 0.0;
    for (int probe = 0; probe < 20; ++probe) {
      const auto batch = mf_samples(axle, pure ? Regime::pure_lateral : Regime::combined, 8, 1000 + probe);
      auto m = make_learned_model(kind, axle, cfg);
      m->set_normalization(fit_normalization(batch, axle, 7000.0));
      m->initialize(rng);
      const std::vector<double> theta(m->parameters().begin(), m->parameters().end());
      const ValueAndGrad vg = loss_and_gradient(*m, theta, batch, cfg);
      std::vector<double> dir(theta.size());
      for (double& d : dir) d = gauss(rng);
      const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
      for (double& d : dir) d /= norm;
      const double step = 1e-6;
      std::vector<double> tp = theta;
      std::vector<double> tm = theta;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        tp[i] += step * dir[i];
        tm[i] -= step * dir[i];
      }
      const double fd = (loss(*m, tp, batch, cfg) - loss(*m, tm, batch, cfg)) / (2.0 * step);
      const double ad = std::inner_product(vg.gradient.begin(), vg.gradient.end(), dir.begin(), 0.0);
      const double rel = std::abs(fd - ad) / std::max(std::abs(fd), std::abs(ad));
      worst = std::max(worst, rel);
      if (!(rel <= 1e-4)) ++bad;
    }
    detail += fmt("%s %.1e, ", std::string(to_string(kind)).c_str(), worst);
  }
  detail.resize(detail.size() - 2);
  return {bad == 0, fmt("%d/80 probes outside 1e-4; max rel: ", bad) + detail};
}

// --- pipeline criteria -----------------------------------------------------------

struct Work {
  fs::path root;
  fs::path dir(const std::string& name) const { return root / name; }
  std::string model(const std::string& name) const { return (root / name / "model.json").string(); }
};

json timed(const std::string& command, const json& user, const fs::path& out, double* seconds = nullptr) {
  const auto t0 = Clock::now();
  fs::remove_all(out);
  const CommandResult r = run_command(command, merge_config(user), out);
  if (seconds != nullptr) *seconds = since(t0);
  return r.summary;
}

json fit_cfg(const std::string& kind, const std::string& axle, const fs::path& data) {
  return {{"fit", {{"kind", kind}, {"axle", axle}, {"dataset", data.string()}}}};
}

// Largest |F| over the slip grid at the given feature points.
double model_peak(const TireModel& m, const std::vector<AxleSample>& at) {
  double peak = 0.0;
  const std::vector<double> grid = linspace(-0.6, 0.6, 241);
  for (std::size_t i = 0; i < at.size(); i += std::max<std::size_t>(1, at.size() / 200)) {
    for (double a : grid) {
      const TireForce<double> f = m.evaluate(TireInput<double>{a, 0.0, at[i].in.feat});
      peak = std::max(peak, std::hypot(f.fx, f.fy));
    }
  }
  return peak;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Files that differ between two output directories, ignoring wall-clock records.
std::vector<std::string> differing(const fs::path& a, const fs::path& b) {
  std::vector<std::string> out;
  int compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const std::string name = e.path().filename().string();
    if (name == "manifest.json" || name == "timing.csv" || name == "solve_times.csv") continue;
    ++compared;
    if (!fs::exists(b / name) || slurp(e.path()) != slurp(b / name)) out.push_back(name);
  }
  if (compared == 0) out.push_back("(no files)");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Work w;
  w.root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "tirelearn_acceptance";
  fs::create_directories(w.root);
  std::printf("work directory %s\n", w.root.string().c_str());

  run(1, "ExpTanh analytic extrema", criterion_extrema);
  run(2, "combined split identity", criterion_split);
  run(3, "NODE convexity pattern", criterion_convexity);
  run(4, "loss gradient fidelity", criterion_gradients);

  const fs::path data_a = w.dir("data_a") / "dataset.csv";
  const fs::path data_b = w.dir("data_b") / "dataset.csv";
  const TireSet plant_a = plant_tires("a");
  const TireSet plant_b = plant_tires("b");
  const Feat any_front{Axle::front, 0.0, 8.0, 0.0, 7000.0};
  const Feat any_rear{Axle::rear, 0.0, 8.0, 0.0, 7000.0};

  run(5, "synthetic recovery", [&] {
    double t_gen = 0.0;
    const json g = timed("gen-data", {{"gen_data", {{"plant", "a"}, {"duration", 200.0}, {"derivative_source", "exact"}}}},
                         w.dir("data_a"), &t_gen);
    const json fit = timed("fit", fit_cfg("exptanh_pure", "front", data_a), w.dir("et_a_front"));
    json mis = fit_cfg("fiala", "front", data_a);
    mis["fit"]["baseline"] = {{"scale_stiffness", 1.2}, {"scale_peak", 1.2}};
    timed("fit", mis, w.dir("fiala_mis_front"));
    const json ev = timed("eval",
                          {{"eval",
                            {{"dataset", data_a.string()},
                             {"axle", "front"},
                             {"models",
                              {{{"name", "exptanh"}, {"path", w.model("et_a_front")}},
                               {{"name", "fiala_mis"}, {"path", w.model("fiala_mis_front")}}}}}}},
                          w.dir("eval_a"));
    const double peak = *plant_a.front->peak_force(any_front);
    const double test_rmse = fit.at("test_rmse").get<double>();
    const double z_et = ev.at("models")[0].at("zero_bin_density").get<double>();
    const double z_fi = ev.at("models")[1].at("zero_bin_density").get<double>();
    const double ratio = z_et / std::max(z_fi, 1e-300);
    note(fmt("dataset rows %d (generated in %.1f s); mis-parameterized Fiala RMSE %.1f N", g.at("rows").get<int>(),
             t_gen, ev.at("models")[1].at("rmse").get<double>()));
    const bool ok = g.at("rows").get<int>() >= 20000 && test_rmse < 0.02 * peak && ratio >= 1.5;
    return Outcome{ok, fmt("held-out RMSE %.1f N vs limit %.1f N (2%% of %.0f N); zero-bin density ratio %.1f (>= 1.5)",
                           test_rmse, 0.02 * peak, peak, ratio)};
  });

  run(6, "friction-limit penalty", [&] {
    const std::vector<AxleSample> samples = axle_view(read_dataset_csv(data_a.string()), Axle::front);
    json hard = fit_cfg("exptanh_pure", "front", data_a);
    hard["fit"]["lambda"] = 1e6;
    hard["fit"]["mu_fz_bar"] = 7000.0;
    timed("fit", hard, w.dir("et_a_front_hard"));
    const double hard_peak = model_peak(*load_model(w.model("et_a_front_hard")), samples);

    const double true_peak = *plant_a.front->peak_force(any_front);
    double data_peak = 0.0;
    for (const AxleSample& s : samples) data_peak = std::max(data_peak, std::abs(s.fy));
    json soft = fit_cfg("exptanh_pure", "front", data_a);
    soft["fit"]["lambda"] = 0.01;
    soft["fit"]["mu_fz_bar"] = true_peak / 1.15;
    timed("fit", soft, w.dir("et_a_front_soft"));
    const double soft_peak = model_peak(*load_model(w.model("et_a_front_soft")), samples);
    note(fmt("largest |F_y| in the data %.0f N", data_peak));
    const bool ok = hard_peak <= 1.01 * 7000.0 && std::abs(soft_peak - true_peak) <= 0.05 * true_peak;
    return Outcome{ok, fmt("lambda 1e6: peak %.0f N (<= %.0f); lambda 0.01 with mu_Fz %.0f: peak %.0f N vs data peak "
                           "%.0f N (%+.1f%%)",
                           hard_peak, 1.01 * 7000.0, true_peak / 1.15, soft_peak, true_peak,
                           100.0 * (soft_peak / true_peak - 1.0))};
  });

  run(7, "data efficiency", [&] {
    const json g = timed("gen-data", {{"gen_data", {{"plant", "b"}, {"duration", 180.0}, {"derivative_source", "exact"}}}},
                         w.dir("data_b"));
    double t_fit = 0.0;
    const json fit = timed("fit", fit_cfg("exptanh_combined", "rear", data_b), w.dir("et_b_rear"), &t_fit);
    const double peak = *plant_b.rear->peak_force(any_rear);
    const double test_rmse = fit.at("test_rmse").get<double>();
    const bool ok = g.at("rows").get<int>() == 18000 && test_rmse < 0.02 * peak && t_fit < 60.0;
    return Outcome{ok, fmt("%d rows, held-out RMSE %.1f N vs limit %.1f N, training wall clock %.1f s (< 60 s)",
                           g.at("rows").get<int>(), test_rmse, 0.02 * peak, t_fit)};
  });

  json report;
  run(8, "closed-loop improvement", [&] {
    timed("fit", fit_cfg("fiala", "front", data_a), w.dir("fiala_a_front"));
    timed("fit", fit_cfg("fiala", "rear", data_a), w.dir("fiala_a_rear"));
    timed("fit", fit_cfg("exptanh_combined", "rear", data_a), w.dir("et_a_rear"));
    timed("fit", fit_cfg("exptanh_pure", "front", data_b), w.dir("et_b_front"));
    const json fiala = {{"front", w.model("fiala_a_front")}, {"rear", w.model("fiala_a_rear")}};
    struct Pair {
      std::string plant;
      std::string label;
      json controller;
    };
    const std::vector<Pair> runs{
        {"a", "fiala", fiala},
        {"a", "exptanh", {{"front", w.model("et_a_front")}, {"rear", w.model("et_a_rear")}}},
        {"b", "fiala", fiala},
        {"b", "exptanh", {{"front", w.model("et_b_front")}, {"rear", w.model("et_b_rear")}}},
    };
    double t_sims = 0.0;
    json dirs = json::array();
    for (const Pair& p : runs) {
      const fs::path out = w.dir("sim_" + p.plant + "_" + p.label);
      double t = 0.0;
      const json s = timed("sim",
                           {{"sim",
                             {{"plant", p.plant},
                              {"controller", p.controller},
                              {"plant_label", "plant_" + p.plant},
                              {"controller_label", p.label}}}},
                           out, &t);
      t_sims += t;
      dirs.push_back(out.string());
      const json& m = s.at("metrics");
      note(fmt("plant %s, %-7s controller: rms e %.3f m, rms e_beta %.4f rad, transition iterations %.2f%s",
               p.plant.c_str(), p.label.c_str(), m.at("rms_e").get<double>(), m.at("rms_e_beta").get<double>(),
               m.at("mean_iterations_transition").get<double>(), m.at("aborted").get<bool>() ? " (aborted)" : ""));
    }
    report = timed("report", {{"report", {{"runs", dirs}}}}, w.dir("report"));
    // rows: plant_a, plant_b; columns: fiala, exptanh
    const double e_f = report.at("rms_e")[1][0].get<double>();
    const double e_x = report.at("rms_e")[1][1].get<double>();
    const double b_f = report.at("rms_e_beta")[1][0].get<double>();
    const double b_x = report.at("rms_e_beta")[1][1].get<double>();
    const bool ok = e_x <= 0.5 * e_f && b_x <= 0.7 * b_f && t_sims < 900.0;
    return Outcome{ok, fmt("plant B: rms e ratio %.2f (<= 0.5), rms e_beta ratio %.2f (<= 0.7), four runs %.0f s",
                           e_x / e_f, b_x / b_f, t_sims)};
  });

  run(9, "solver statistics", [&] {
    if (report.is_null()) throw Error(ErrorCode::invalid_argument, "closed-loop runs unavailable");
    const double it_f = report.at("mean_iterations_transition")[1][0].get<double>();
    const double it_x = report.at("mean_iterations_transition")[1][1].get<double>();
    const bool emitted = fs::file_size(w.dir("report") / "iterations.csv") > 0 &&
                         fs::file_size(w.dir("report") / "solve_times.csv") > 0;
    const bool ok = it_f >= 1.5 * it_x && emitted;
    return Outcome{ok, fmt("plant B transitions: Fiala %.2f vs ExpTanh %.2f iterations per step, ratio %.2f (>= 1.5); "
                           "per-step tables %s",
                           it_f, it_x, it_f / it_x, emitted ? "written" : "missing")};
  });

  run(10, "distillation fidelity", [&] {
    const fs::path small = w.dir("data_small") / "dataset.csv";
    timed("gen-data", {{"gen_data", {{"plant", "a"}, {"duration", 30.0}, {"derivative_source", "exact"}}}},
          w.dir("data_small"));
    json node = fit_cfg("node_pure", "front", small);
    node["fit"]["epochs"] = 20;
    const json fit = timed("fit", node, w.dir("node_a_front"));
    const json d = timed("distill",
                         {{"distill",
                           {{"model", w.model("node_a_front")},
                            {"dataset", small.string()},
                            {"probes", 5000},
                            {"epochs", 100},
                            {"polish_iterations", 50},
                            {"threshold", 1e-2},
                            {"holdout", 10000}}}},
                         w.dir("distilled"));
    const json timings = read_json(w.dir("distilled") / "manifest.json").at("timings");
    const double rel = d.at("relative_rmse").get<double>();
    const double speedup = timings.at("speedup").get<double>();
    note(fmt("source NODE held-out RMSE on plant data %.0f N", fit.at("test_rmse").get<double>()));
    const bool ok = d.at("holdout_probes").get<int>() == 10000 && rel < 0.01 && speedup >= 10.0;
    return Outcome{ok, fmt("10000 held-out probes: RMSE %.1f N = %.3f%% of force range %.0f N; speedup %.0fx (>= 10x)",
                           d.at("holdout_rmse").get<double>(), 100.0 * rel, d.at("force_range").get<double>(), speedup)};
  });

  run(11, "determinism", [&] {
    const fs::path small = w.dir("data_small") / "dataset.csv";
    json node = fit_cfg("node_pure", "front", small);
    node["fit"]["epochs"] = 2;
    const json distill = {{"distill",
                           {{"model", w.model("node_a_front")},
                            {"dataset", small.string()},
                            {"probes", 1000},
                            {"epochs", 20},
                            {"polish_iterations", 10},
                            {"threshold", 1.0},
                            {"holdout", 1000}}}};
    const json sim = {{"sim",
                       {{"plant", "b"},
                        {"controller", {{"front", w.model("et_b_front")}, {"rear", w.model("et_b_rear")}}},
                        {"plant_label", "plant_b"},
                        {"controller_label", "exptanh"},
                        {"s_end", 80.0}}}};
    struct Rerun {
      std::string command;
      json cfg;
    };
    const std::vector<Rerun> reruns{
        {"gen-data", {{"gen_data", {{"plant", "a"}, {"duration", 20.0}}}}},
        {"fit", fit_cfg("exptanh_combined", "rear", small)},
        {"fit", fit_cfg("fiala", "rear", small)},
        {"fit", node},
        {"eval",
         {{"eval",
           {{"dataset", small.string()},
            {"axle", "front"},
            {"models", {w.model("et_a_front"), w.model("fiala_a_front")}}}}}},
        {"distill", distill},
        {"sim", sim},
        {"report", {{"report", {{"runs", {w.dir("sim_b_fiala").string(), w.dir("sim_b_exptanh").string()}}}}}},
    };
    std::string diffs;
    int i = 0;
    for (const Rerun& r : reruns) {
      const fs::path a = w.dir(fmt("rerun_%d_a", i));
      const fs::path b = w.dir(fmt("rerun_%d_b", i));
      ++i;
      timed(r.command, r.cfg, a);
      timed(r.command, r.cfg, b);
      for (const std::string& f : differing(a, b)) diffs += r.command + "/" + f + " ";
    }
    return Outcome{diffs.empty(), diffs.empty() ? fmt("%d command runs repeated, all outputs byte-identical",
                                                      static_cast<int>(reruns.size()))
                                                : "differing outputs: " + diffs};
  });

  std::printf("acceptance complete: %d of 11 criteria failed\n", failures);
  return failures;
}
