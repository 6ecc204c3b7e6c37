#include "tirelearn/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tirelearn/rng.hpp"

namespace tirelearn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Keys whose value may be of any JSON type (names, inline models, boxes).
const std::set<std::string>& free_form_keys() {
  static const std::set<std::string> keys{"gen_data.plant", "sim.plant", "sim.controller", "distill.box"};
  return keys;
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() && b.is_number_float());
  return a.type() == b.type();
}

void overlay(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw Error(ErrorCode::config_error, "section '" + path + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw Error(ErrorCode::config_error, "unknown key '" + full + "'");
    json& slot = base[key];
    if (free_form_keys().count(full) != 0) {
      slot = value;
    } else if (slot.is_object()) {
      overlay(slot, value, full);
    } else if (!same_kind(slot, value)) {
      throw Error(ErrorCode::config_error, "key '" + full + "' expects " + std::string(slot.type_name()) +
                                               ", got " + std::string(value.type_name()));
    } else {
      slot = value;
    }
  }
}

std::string write_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string stem_label(const json& j, const std::string& fallback) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.empty()) return fallback;
    if (s == "a" || s == "b") return "plant_" + s;
    return fs::path(s).stem().string();
  }
  if (j.is_object() && j.contains("rear") && j["rear"].is_string()) {
    return fs::path(j["rear"].get<std::string>()).parent_path().filename().string();
  }
  return fallback;
}

void require_path(const std::string& what, const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::config_error, what + " is not set");
  if (!fs::exists(path)) throw Error(ErrorCode::io_error, what + " '" + path + "' does not exist");
}

CommandResult finish(const std::string& command, const json& cfg, const fs::path& out, CommandResult r,
                     Clock::time_point t0) {
  RunManifest m;
  m.command = command;
  m.config_hash = config_hash(cfg);
  m.seed = cfg.at("seed").get<std::uint64_t>();
  m.inputs = r.inputs;
  m.outputs = r.outputs;
  m.version = TIRELEARN_VERSION;
  m.timings = r.timings;
  m.timings["total"] = seconds_since(t0);
  m.write(out);
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

}  // namespace

// --- configuration -------------------------------------------------------------

json default_config() {
  const VehicleParams p;
  const ReferenceConfig rc;
  const NmpcConfig nc;
  const NoiseConfig nz;
  const ServoConfig sv;
  const TrainConfig tc;
  const FitConfig fc;
  const DataGenConfig dg;
  const DistillConfig dc;
  const Scenario sc;
  return {
      {"seed", 1},
      {"vehicle",
       {{"m", p.m}, {"i_z", p.i_z}, {"a", p.a}, {"b", p.b}, {"r_w", p.r_w}, {"i_w", p.i_w}, {"g", p.g},
        {"mu_bar", p.mu_bar}}},
      {"reference",
       {{"kind", std::string(to_string(rc.kind))},
        {"ds", rc.ds},
        {"straight_length", rc.straight_length},
        {"straight_speed", rc.straight_speed},
        {"radius", rc.radius},
        {"transition", rc.transition},
        {"figure8_speed", rc.figure8_speed},
        {"laps", rc.laps},
        {"corners", rc.corners},
        {"corner_length", rc.corner_length},
        {"slalom_transition", rc.slalom_transition},
        {"corner_speed", rc.corner_speed},
        {"max_speed", rc.max_speed},
        {"beta_peak", rc.beta_peak},
        {"kappa_max", rc.kappa_max},
        {"delta_max", rc.delta_max}}},
      {"nmpc",
       {{"horizon", nc.horizon},
        {"dt", nc.dt},
        {"w_e", nc.w_e},
        {"w_beta", nc.w_beta},
        {"w_dphi", nc.w_dphi},
        {"w_v", nc.w_v},
        {"w_delta", nc.w_delta},
        {"w_sigma", nc.w_sigma},
        {"w_ddelta", nc.w_ddelta},
        {"w_dsigma", nc.w_dsigma},
        {"delta_max", nc.delta_max},
        {"sigma_min", nc.sigma_min},
        {"sigma_max", nc.sigma_max},
        {"max_iterations", nc.max_iterations},
        {"tolerance", nc.tolerance},
        {"rel_tolerance", nc.rel_tolerance}}},
      {"gen_data",
       {{"plant", "a"},
        {"duration", dg.duration},
        {"log_rate", dg.log_rate},
        {"sim_dt", dg.sim_dt},
        {"derivative_source", "trace"},
        {"smoothing_window", dg.smoothing_window},
        {"noise", {{"r", 0.0}, {"v", 0.0}, {"beta", 0.0}}},
        {"dither_delta", dg.dither_delta},
        {"pulse_period", dg.pulse_period},
        {"pulse_length", dg.pulse_length},
        {"pulse_sigma_min", dg.pulse_sigma_min},
        {"pulse_sigma_max", dg.pulse_sigma_max},
        {"horizon", dg.nmpc.horizon}}},
      {"fit",
       {{"kind", "exptanh_pure"},
        {"axle", ""},
        {"dataset", ""},
        {"lambda", tc.lambda},
        {"mu_fz_bar", tc.mu_fz_bar},
        {"epochs", tc.epochs},
        {"batch_size", tc.batch_size},
        {"test_fraction", tc.test_fraction},
        {"block_size", tc.block_size},
        {"lr0", tc.lr0},
        {"decay", tc.decay},
        {"slip_scale", tc.slip_scale},
        {"exptanh",
         {{"hidden", tc.exptanh.hidden},
          {"depth", tc.exptanh.depth},
          {"split_hidden", tc.exptanh.split_hidden},
          {"split_depth", tc.exptanh.split_depth},
          {"pin_split", tc.exptanh.pin_split}}},
        {"node",
         {{"hidden", tc.node.hidden},
          {"depth", tc.node.depth},
          {"inflection_hidden", tc.node.inflection_hidden},
          {"split_hidden", tc.node.split_hidden},
          {"n_steps", tc.node.n_steps},
          {"clamp_lo", tc.node.clamp_lo},
          {"clamp_hi", tc.node.clamp_hi},
          {"pin_split", tc.node.pin_split}}},
        {"baseline",
         {{"adam_iterations", fc.adam_iterations},
          {"lr", fc.lr},
          {"lm_iterations", fc.lm_iterations},
          {"scale_stiffness", 1.0},
          {"scale_peak", 1.0}}}}},
      {"eval",
       {{"dataset", ""},
        {"axle", "front"},
        {"models", json::array()},
        {"bins", 101},
        {"curves",
         {{"v", {5.0, 10.0, 15.0, 20.0}},
          {"r", {-1.8, 0.0, 1.8}},
          {"beta", {-0.9, 0.0, 0.9}},
          {"alpha_min", -0.5},
          {"alpha_max", 0.5},
          {"points", 101},
          {"sigma", 0.0}}}}},
      {"distill",
       {{"model", ""},
        {"dataset", ""},
        {"box", nullptr},
        {"inflate", 0.1},
        {"hidden", dc.hidden},
        {"depth", dc.depth},
        {"probes", dc.probes},
        {"holdout", 10000},
        {"epochs", dc.epochs},
        {"batch_size", dc.batch_size},
        {"lr0", dc.lr0},
        {"decay", dc.decay},
        {"polish_iterations", dc.polish_iterations},
        {"threshold", dc.threshold}}},
      {"sim",
       {{"plant", "b"},
        {"controller", ""},
        {"plant_label", ""},
        {"controller_label", ""},
        {"noise", {{"r", nz.r}, {"v", nz.v}, {"beta", nz.beta}}},
        {"servo", {{"kp", sv.kp}, {"ki", sv.ki}, {"tau_max", sv.tau_max}}},
        {"sim_dt", sc.sim_dt},
        {"duration", sc.duration},
        {"s_end", sc.s_end},
        {"e_abort", sc.e_abort},
        {"bucket_length", 10.0}}},
      {"report", {{"runs", json::array()}}},
  };
}

json merge_config(const json& user) {
  json cfg = default_config();
  if (user.is_null()) return cfg;
  overlay(cfg, user, "");
  return cfg;
}

json load_config(const std::string& path) {
  if (path.empty()) return default_config();
  return merge_config(read_json(path));
}

std::string config_hash(const json& cfg) { return fnv1a_hex(cfg.dump()); }

VehicleParams vehicle_from_json(const json& j) {
  VehicleParams p;
  p.m = j.at("m").get<double>();
  p.i_z = j.at("i_z").get<double>();
  p.a = j.at("a").get<double>();
  p.b = j.at("b").get<double>();
  p.r_w = j.at("r_w").get<double>();
  p.i_w = j.at("i_w").get<double>();
  p.g = j.at("g").get<double>();
  p.mu_bar = j.at("mu_bar").get<double>();
  p.validate();
  return p;
}

ReferenceConfig reference_from_json(const json& j) {
  ReferenceConfig rc;
  rc.kind = parse_reference_kind(j.at("kind").get<std::string>());
  rc.ds = j.at("ds").get<double>();
  rc.straight_length = j.at("straight_length").get<double>();
  rc.straight_speed = j.at("straight_speed").get<double>();
  rc.radius = j.at("radius").get<double>();
  rc.transition = j.at("transition").get<double>();
  rc.figure8_speed = j.at("figure8_speed").get<double>();
  rc.laps = j.at("laps").get<int>();
  rc.corners = j.at("corners").get<int>();
  rc.corner_length = j.at("corner_length").get<double>();
  rc.slalom_transition = j.at("slalom_transition").get<double>();
  rc.corner_speed = j.at("corner_speed").get<double>();
  rc.max_speed = j.at("max_speed").get<double>();
  rc.beta_peak = j.at("beta_peak").get<double>();
  rc.kappa_max = j.at("kappa_max").get<double>();
  rc.delta_max = j.at("delta_max").get<double>();
  return rc;
}

NmpcConfig nmpc_from_json(const json& j) {
  NmpcConfig c;
  c.horizon = j.at("horizon").get<int>();
  c.dt = j.at("dt").get<double>();
  c.w_e = j.at("w_e").get<double>();
  c.w_beta = j.at("w_beta").get<double>();
  c.w_dphi = j.at("w_dphi").get<double>();
  c.w_v = j.at("w_v").get<double>();
  c.w_delta = j.at("w_delta").get<double>();
  c.w_sigma = j.at("w_sigma").get<double>();
  c.w_ddelta = j.at("w_ddelta").get<double>();
  c.w_dsigma = j.at("w_dsigma").get<double>();
  c.delta_max = j.at("delta_max").get<double>();
  c.sigma_min = j.at("sigma_min").get<double>();
  c.sigma_max = j.at("sigma_max").get<double>();
  c.max_iterations = j.at("max_iterations").get<int>();
  c.tolerance = j.at("tolerance").get<double>();
  c.rel_tolerance = j.at("rel_tolerance").get<double>();
  c.validate();
  return c;
}

NoiseConfig noise_from_json(const json& j) {
  NoiseConfig n{j.at("r").get<double>(), j.at("v").get<double>(), j.at("beta").get<double>()};
  if (n.r < 0.0 || n.v < 0.0 || n.beta < 0.0) throw Error(ErrorCode::config_error, "noise levels must be >= 0");
  return n;
}

ServoConfig servo_from_json(const json& j) {
  return ServoConfig{j.at("kp").get<double>(), j.at("ki").get<double>(), j.at("tau_max").get<double>()};
}

TrainConfig train_from_json(const json& fit, std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.lambda = fit.at("lambda").get<double>();
  c.mu_fz_bar = fit.at("mu_fz_bar").get<double>();
  c.epochs = fit.at("epochs").get<int>();
  c.batch_size = fit.at("batch_size").get<int>();
  c.test_fraction = fit.at("test_fraction").get<double>();
  c.block_size = fit.at("block_size").get<std::size_t>();
  c.lr0 = fit.at("lr0").get<double>();
  c.decay = fit.at("decay").get<double>();
  c.slip_scale = fit.at("slip_scale").get<double>();
  const json& e = fit.at("exptanh");
  c.exptanh.hidden = e.at("hidden").get<int>();
  c.exptanh.depth = e.at("depth").get<int>();
  c.exptanh.split_hidden = e.at("split_hidden").get<int>();
  c.exptanh.split_depth = e.at("split_depth").get<int>();
  c.exptanh.pin_split = e.at("pin_split").get<bool>();
  const json& n = fit.at("node");
  c.node.hidden = n.at("hidden").get<int>();
  c.node.depth = n.at("depth").get<int>();
  c.node.inflection_hidden = n.at("inflection_hidden").get<int>();
  c.node.split_hidden = n.at("split_hidden").get<int>();
  c.node.n_steps = n.at("n_steps").get<int>();
  c.node.clamp_lo = n.at("clamp_lo").get<double>();
  c.node.clamp_hi = n.at("clamp_hi").get<double>();
  c.node.pin_split = n.at("pin_split").get<bool>();
  if (c.lambda < 0.0) throw Error(ErrorCode::config_error, "fit.lambda must be >= 0");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
    throw Error(ErrorCode::config_error, "fit.test_fraction must lie in (0, 1)");
  }
  return c;
}

FitConfig baseline_from_json(const json& j) {
  return FitConfig{j.at("adam_iterations").get<int>(), j.at("lr").get<double>(), j.at("lm_iterations").get<int>()};
}

DataGenConfig datagen_from_json(const json& cfg) {
  const json& g = cfg.at("gen_data");
  DataGenConfig c;
  c.duration = g.at("duration").get<double>();
  c.log_rate = g.at("log_rate").get<double>();
  c.sim_dt = g.at("sim_dt").get<double>();
  const std::string src = g.at("derivative_source").get<std::string>();
  if (src == "trace") {
    c.derivative_source = DerivativeSource::trace;
  } else if (src == "exact") {
    c.derivative_source = DerivativeSource::exact;
  } else {
    throw Error(ErrorCode::config_error, "gen_data.derivative_source must be 'trace' or 'exact'");
  }
  c.smoothing_window = g.at("smoothing_window").get<int>();
  c.noise = noise_from_json(g.at("noise"));
  c.dither_delta = g.at("dither_delta").get<double>();
  c.pulse_period = g.at("pulse_period").get<double>();
  c.pulse_length = g.at("pulse_length").get<double>();
  c.pulse_sigma_min = g.at("pulse_sigma_min").get<double>();
  c.pulse_sigma_max = g.at("pulse_sigma_max").get<double>();
  c.reference = reference_from_json(cfg.at("reference"));
  c.nmpc = nmpc_from_json(cfg.at("nmpc"));
  c.nmpc.horizon = g.at("horizon").get<int>();
  c.nmpc.validate();
  c.seed = cfg.at("seed").get<std::uint64_t>();
  return c;
}

DistillConfig distill_from_json(const json& j, std::uint64_t seed) {
  DistillConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.depth = j.at("depth").get<int>();
  c.probes = j.at("probes").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr0 = j.at("lr0").get<double>();
  c.decay = j.at("decay").get<double>();
  c.polish_iterations = j.at("polish_iterations").get<int>();
  c.threshold = j.at("threshold").get<double>();
  c.seed = seed;
  return c;
}

std::unique_ptr<TireModel> load_model(const fs::path& path) {
  try {
    return model_from_json(read_json(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::io_error || e.code() == ErrorCode::parse_error) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

TireSet tires_from_json(const json& j, const fs::path& base) {
  if (j.is_string()) return plant_tires(j.get<std::string>());
  if (!j.is_object() || !j.contains("front") || !j.contains("rear")) {
    throw Error(ErrorCode::config_error, "tire set must be a plant name or {\"front\": ..., \"rear\": ...}");
  }
  auto one = [&](const json& m) -> std::shared_ptr<const TireModel> {
    if (m.is_string()) {
      const fs::path p = fs::path(m.get<std::string>()).is_absolute() ? fs::path(m.get<std::string>())
                                                                       : base / m.get<std::string>();
      return load_model(p);
    }
    return model_from_json(m);
  };
  TireSet set{one(j.at("front")), one(j.at("rear"))};
  if (set.front->regime() != Regime::pure_lateral) {
    throw Error(ErrorCode::config_error, "front model must be a pure-lateral model");
  }
  if (set.rear->regime() != Regime::combined) throw Error(ErrorCode::config_error, "rear model must be combined");
  return set;
}

void save_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line number
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(line) + ": " + e.what());
  }
}

ProbeBox probe_box(const std::vector<AxleSample>& samples, Regime regime) {
  if (samples.empty()) throw Error(ErrorCode::invalid_argument, "no samples for the probe box");
  const bool combined = regime == Regime::combined;
  const int nf = samples.front().in.feat.size();
  const std::size_t dim = static_cast<std::size_t>((combined ? 2 : 1) + nf);
  ProbeBox box{std::vector<double>(dim, 1e300), std::vector<double>(dim, -1e300)};
  for (const AxleSample& s : samples) {
    std::vector<double> v{s.in.alpha};
    if (combined) v.push_back(s.in.sigma);
    for (int i = 0; i < nf; ++i) v.push_back(s.in.feat[i]);
    for (std::size_t k = 0; k < dim; ++k) {
      box.lo[k] = std::min(box.lo[k], v[k]);
      box.hi[k] = std::max(box.hi[k], v[k]);
    }
  }
  return box;
}

json RunManifest::to_json() const {
  return {{"command", command}, {"config_hash", config_hash}, {"seed", seed},       {"inputs", inputs},
          {"outputs", outputs}, {"version", version},         {"timings", timings}};
}

void RunManifest::write(const fs::path& dir) const { save_json(dir / "manifest.json", to_json()); }

// --- commands ------------------------------------------------------------------

CommandResult cmd_gen_data(const json& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  fs::create_directories(out);
  const DataGenConfig dg = datagen_from_json(cfg);
  const VehicleParams p = vehicle_from_json(cfg.at("vehicle"));
  const TireSet plant = tires_from_json(cfg.at("gen_data").at("plant"));
  const Dataset data = generate_dataset(dg, plant, p);
  write_dataset_csv((out / "dataset.csv").string(), data);
  CommandResult r;
  r.outputs = {"dataset.csv"};
  double smin = 1e300;
  double smax = -1e300;
  for (const Sample& s : data) {
    smin = std::min(smin, s.sigma_r);
    smax = std::max(smax, s.sigma_r);
  }
  r.summary = {{"rows", data.size()}, {"sigma_r_min", smin}, {"sigma_r_max", smax}};
  save_json(out / "gen_data.json", r.summary);
  r.outputs.push_back("gen_data.json");
  return finish("gen-data", cfg, out, r, t0);
}

CommandResult cmd_fit(const json& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  const json& f = cfg.at("fit");
  const std::string dataset = f.at("dataset").get<std::string>();
  require_path("fit.dataset", dataset);
  const ModelKind kind = parse_model_kind(f.at("kind").get<std::string>());
  const TrainConfig tc = train_from_json(f, cfg.at("seed").get<std::uint64_t>());
  const bool combined = kind == ModelKind::exptanh_combined || kind == ModelKind::node_combined;
  const std::string axle_name = f.at("axle").get<std::string>();
  Axle axle = combined ? Axle::rear : Axle::front;
  if (!axle_name.empty()) axle = parse_axle(axle_name);
  const Dataset data = read_dataset_csv(dataset);
  fs::create_directories(out);

  const std::vector<AxleSample> all = axle_view(data, axle);
  const SplitIndices split = split_blocks(all.size(), tc.test_fraction, tc.block_size);
  const std::vector<AxleSample> train = gather(all, split.train);
  const std::vector<AxleSample> test = gather(all, split.test);

  CommandResult r;
  r.inputs = {dataset};
  json summary{{"kind", std::string(to_string(kind))},
               {"axle", std::string(to_string(axle))},
               {"train_samples", train.size()},
               {"test_samples", test.size()}};
  std::unique_ptr<TireModel> model;
  if (kind == ModelKind::fiala || kind == ModelKind::magic_formula) {
    const Regime regime = axle == Axle::front ? Regime::pure_lateral : Regime::combined;
    const FitConfig fc = baseline_from_json(f.at("baseline"));
    const double ks = f.at("baseline").at("scale_stiffness").get<double>();
    const double kp = f.at("baseline").at("scale_peak").get<double>();
    if (kind == ModelKind::fiala) {
      FialaFit fit = fit_fiala(train, regime, FialaParams{1.0e5, 1.0, tc.mu_fz_bar}, 1.0e5, fc);
      fit.lateral.stiffness *= ks;
      fit.lateral.mu *= kp;
      summary["fit_loss"] = fit.loss;
      model = std::make_unique<FialaTire>(regime, fit.lateral, fit.longitudinal_stiffness);
    } else {
      MagicFormulaFit fit = fit_magic_formula(train, regime, MagicFormulaParams{10.0, 1.5, tc.mu_fz_bar, 0.0}, fc);
      fit.params.b *= ks;
      fit.params.d *= kp;
      summary["fit_loss"] = fit.loss;
      model = std::make_unique<MagicFormulaTire>(regime, fit.params);
    }
  } else {
    TrainResult tr = train_model(kind, axle, train, test, tc);
    std::string hist = "epoch,loss\n";
    for (std::size_t i = 0; i < tr.loss_history.size(); ++i) {
      hist += std::to_string(i) + "," + write_double(tr.loss_history[i]) + "\n";
    }
    write_text(out / "loss_history.csv", hist);
    r.outputs.push_back("loss_history.csv");
    summary["final_loss"] = tr.loss_history.back();
    model = std::move(tr.model);
  }
  summary["train_rmse"] = rmse(*model, train);
  summary["test_rmse"] = rmse(*model, test);
  save_json(out / "model.json", model->to_json());
  save_json(out / "fit.json", summary);
  r.outputs.insert(r.outputs.begin(), {"model.json", "fit.json"});
  r.summary = summary;
  return finish("fit", cfg, out, r, t0);
}

CommandResult cmd_eval(const json& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  const json& e = cfg.at("eval");
  const std::string dataset = e.at("dataset").get<std::string>();
  require_path("eval.dataset", dataset);
  const Axle axle = parse_axle(e.at("axle").get<std::string>());
  const Dataset data = read_dataset_csv(dataset);
  const std::vector<AxleSample> all = axle_view(data, axle);
  const json& f = cfg.at("fit");
  const SplitIndices split =
      split_blocks(all.size(), f.at("test_fraction").get<double>(), f.at("block_size").get<std::size_t>());
  const std::vector<AxleSample> test = gather(all, split.test);

  CommandResult r;
  r.inputs = {dataset};
  std::vector<std::shared_ptr<const TireModel>> owned;
  std::vector<std::pair<std::string, const TireModel*>> models;
  if (e.at("models").empty()) throw Error(ErrorCode::config_error, "eval.models is empty");
  for (const json& m : e.at("models")) {
    std::string name;
    std::shared_ptr<const TireModel> model;
    if (m.is_string()) {
      name = fs::path(m.get<std::string>()).parent_path().filename().string();
      if (name.empty()) name = fs::path(m.get<std::string>()).stem().string();
      require_path("eval model", m.get<std::string>());
      model = load_model(m.get<std::string>());
      r.inputs.push_back(m.get<std::string>());
    } else if (m.is_object() && m.contains("plant")) {
      name = m.value("name", "plant_" + m.at("plant").get<std::string>());
      const TireSet set = plant_tires(m.at("plant").get<std::string>());
      model = axle == Axle::front ? set.front : set.rear;
    } else if (m.is_object() && m.contains("path")) {
      const std::string path = m.at("path").get<std::string>();
      require_path("eval model", path);
      name = m.value("name", fs::path(path).stem().string());
      model = load_model(path);
      r.inputs.push_back(path);
    } else {
      throw Error(ErrorCode::config_error, "eval.models entries must be paths or {name, path|plant}");
    }
    owned.push_back(model);
    models.emplace_back(name, model.get());
  }
  fs::create_directories(out);
  const EvalReport report = evaluate(models, test, e.at("bins").get<int>());
  save_json(out / "eval.json", report.to_json());
  report.write_histogram_csv((out / "histogram.csv").string());

  const json& c = e.at("curves");
  std::vector<Feat> feats;
  for (double v : c.at("v").get<std::vector<double>>()) {
    for (double rr : c.at("r").get<std::vector<double>>()) {
      for (double b : c.at("beta").get<std::vector<double>>()) {
        feats.push_back(Feat{axle, rr, v, b, f.at("mu_fz_bar").get<double>()});
      }
    }
  }
  const std::vector<double> grid =
      linspace(c.at("alpha_min").get<double>(), c.at("alpha_max").get<double>(), c.at("points").get<int>());
  std::vector<CurveRow> rows;
  std::string curves = "model,curve,r,v,beta,alpha,sigma,fx,fy\n";
  for (const auto& [name, model] : models) {
    for (const CurveRow& row : sweep_curves(*model, feats, grid, c.at("sigma").get<double>())) {
      curves += name + "," + std::to_string(row.curve) + "," + write_double(row.feat.r) + "," +
                write_double(row.feat.v) + "," + write_double(row.feat.beta) + "," + write_double(row.alpha) + "," +
                write_double(row.sigma) + "," + write_double(row.fx) + "," + write_double(row.fy) + "\n";
    }
  }
  write_text(out / "curves.csv", curves);
  r.outputs = {"eval.json", "histogram.csv", "curves.csv"};
  r.summary = report.to_json();
  return finish("eval", cfg, out, r, t0);
}

CommandResult cmd_distill(const json& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  const json& d = cfg.at("distill");
  const std::string path = d.at("model").get<std::string>();
  require_path("distill.model", path);
  std::unique_ptr<TireModel> loaded = load_model(path);
  auto* source = dynamic_cast<LearnedTire*>(loaded.get());
  if (source == nullptr || (source->kind() != ModelKind::node_pure && source->kind() != ModelKind::node_combined)) {
    throw Error(ErrorCode::config_error, "distill.model must be a NODE model");
  }
  CommandResult r;
  r.inputs = {path};
  ProbeBox box;
  const std::string dataset = d.at("dataset").get<std::string>();
  if (!dataset.empty()) {
    require_path("distill.dataset", dataset);
    box = probe_box(axle_view(read_dataset_csv(dataset), source->axle()), source->regime());
    r.inputs.push_back(dataset);
  } else if (d.at("box").is_object()) {
    box.lo = d.at("box").at("lo").get<std::vector<double>>();
    box.hi = d.at("box").at("hi").get<std::vector<double>>();
  } else {
    throw Error(ErrorCode::config_error, "distill needs either distill.dataset or distill.box {lo, hi}");
  }
  box = box.inflated(d.at("inflate").get<double>());
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const DistillConfig dc = distill_from_json(d, seed);
  fs::create_directories(out);
  DistillReport rep;
  const auto t1 = Clock::now();
  std::unique_ptr<DistilledTire> student = distill(*source, box, dc, &rep);
  r.timings["distill"] = seconds_since(t1);

  // Held-out probes from an independent stream.
  std::mt19937_64 rng = substream(seed, "holdout");
  const int n = d.at("holdout").get<int>();
  std::vector<TireInput<double>> probes;
  for (int i = 0; i < n; ++i) probes.push_back(box.sample(source->axle(), source->regime(), rng));
  const bool combined = source->regime() == Regime::combined;
  std::vector<TireForce<double>> teacher(probes.size());
  const auto t2 = Clock::now();
  for (std::size_t i = 0; i < probes.size(); ++i) teacher[i] = source->evaluate(probes[i]);
  const double t_source = seconds_since(t2);
  std::vector<TireForce<double>> pupil(probes.size());
  const auto t3 = Clock::now();
  for (std::size_t i = 0; i < probes.size(); ++i) pupil[i] = student->evaluate(probes[i]);
  const double t_student = seconds_since(t3);
  double se = 0.0;
  double fmin = 1e300;
  double fmax = -1e300;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const double a = combined ? teacher[i].fx : 0.0;
    const double b = teacher[i].fy;
    se += (pupil[i].fy - b) * (pupil[i].fy - b);
    fmin = std::min(fmin, b);
    fmax = std::max(fmax, b);
    if (combined) {
      se += (pupil[i].fx - a) * (pupil[i].fx - a);
      fmin = std::min(fmin, a);
      fmax = std::max(fmax, a);
    }
  }
  const double holdout_rmse = std::sqrt(se / (static_cast<double>(probes.size()) * (combined ? 2.0 : 1.0)));
  r.timings["source_eval"] = t_source;
  r.timings["student_eval"] = t_student;
  r.timings["speedup"] = t_student > 0.0 ? t_source / t_student : 0.0;
  save_json(out / "distilled.json", student->to_json());
  r.summary = {{"train_mse", rep.train_mse},
               {"max_abs_error_train", rep.max_abs_error},
               {"epochs_run", rep.epochs_run},
               {"holdout_probes", n},
               {"holdout_rmse", holdout_rmse},
               {"force_range", fmax - fmin},
               {"relative_rmse", holdout_rmse / std::max(fmax - fmin, 1e-12)}};
  save_json(out / "distill.json", r.summary);
  r.outputs = {"distilled.json", "distill.json"};
  return finish("distill", cfg, out, r, t0);
}

CommandResult cmd_sim(const json& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  const json& s = cfg.at("sim");
  Scenario sc;
  sc.params = vehicle_from_json(cfg.at("vehicle"));
  sc.plant = tires_from_json(s.at("plant"));
  const json& ctrl = s.at("controller");
  const bool matched = ctrl.is_string() && ctrl.get<std::string>().empty();
  sc.controller = matched ? sc.plant : tires_from_json(ctrl);
  sc.nmpc = nmpc_from_json(cfg.at("nmpc"));
  sc.noise = noise_from_json(s.at("noise"));
  sc.servo = servo_from_json(s.at("servo"));
  sc.sim_dt = s.at("sim_dt").get<double>();
  sc.duration = s.at("duration").get<double>();
  sc.s_end = s.at("s_end").get<double>();
  sc.e_abort = s.at("e_abort").get<double>();
  sc.seed = cfg.at("seed").get<std::uint64_t>();
  const ReferenceConfig rc = reference_from_json(cfg.at("reference"));
  sc.reference = make_reference(rc, sc.plant, sc.params);

  CommandResult r;
  for (const json* t : {&s.at("plant"), &ctrl}) {
    if (t->is_object()) {
      for (const char* axle : {"front", "rear"}) {
        if (t->at(axle).is_string()) r.inputs.push_back(t->at(axle).get<std::string>());
      }
    }
  }
  fs::create_directories(out);
  const auto t1 = Clock::now();
  const RunLog log = simulate_closedloop(sc);
  r.timings["simulate"] = seconds_since(t1);
  log.write_csv((out / "run.csv").string());
  log.write_timing_csv((out / "timing.csv").string());

  std::string ref = "s,kappa,phi,v,beta,delta_ff,sigma_ff,segment\n";
  for (std::size_t i = 0; i < sc.reference.size(); ++i) {
    ref += write_double(sc.reference.ds * static_cast<double>(i)) + "," + write_double(sc.reference.kappa[i]) + "," +
           write_double(sc.reference.phi[i]) + "," + write_double(sc.reference.v[i]) + "," +
           write_double(sc.reference.beta[i]) + "," + write_double(sc.reference.delta_ff[i]) + "," +
           write_double(sc.reference.sigma_ff[i]) + "," + std::to_string(sc.reference.segment[i]) + "\n";
  }
  write_text(out / "reference.csv", ref);

  const TrackingMetrics m = tracking_metrics(log, s.at("bucket_length").get<double>());
  std::string plant_label = s.at("plant_label").get<std::string>();
  if (plant_label.empty()) plant_label = stem_label(s.at("plant"), "custom");
  std::string ctrl_label = s.at("controller_label").get<std::string>();
  if (ctrl_label.empty()) ctrl_label = matched ? plant_label : stem_label(ctrl, "custom");
  r.summary = {{"plant", plant_label},
               {"controller", ctrl_label},
               {"reference", std::string(to_string(rc.kind))},
               {"abort_t", log.abort_t},
               {"metrics", m.to_json()}};
  save_json(out / "summary.json", r.summary);
  r.outputs = {"run.csv", "timing.csv", "reference.csv", "summary.json"};
  return finish("sim", cfg, out, r, t0);
}

CommandResult cmd_report(const json& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  const json& runs = cfg.at("report").at("runs");
  if (runs.empty()) throw Error(ErrorCode::config_error, "report.runs is empty");
  CommandResult r;
  std::vector<std::string> plants;
  std::vector<std::string> controllers;
  std::map<std::pair<std::string, std::string>, TrackingMetrics> cells;
  std::string table = "plant,controller,rms_e,rms_e_beta,steer_oscillation,mean_iterations,"
                      "mean_iterations_transition,steps,aborted,abort_s\n";
  std::string iters = "plant,controller,step,s,segment,iterations\n";
  std::string times = "plant,controller,step,s,segment,iterations,solve_time\n";
  auto add_unique = [](std::vector<std::string>& v, const std::string& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const json& run : runs) {
    const fs::path dir = run.get<std::string>();
    require_path("report run", (dir / "summary.json").string());
    require_path("report run", (dir / "run.csv").string());
    r.inputs.push_back(dir.string());
    const json summary = read_json(dir / "summary.json");
    const std::string plant = summary.at("plant").get<std::string>();
    const std::string ctrl = summary.at("controller").get<std::string>();
    RunLog log = RunLog::read_csv((dir / "run.csv").string());
    const json& sm = summary.at("metrics");
    log.aborted = sm.at("aborted").get<bool>();
    log.abort_s = sm.at("abort_s").get<double>();
    const TrackingMetrics m = tracking_metrics(log);
    add_unique(plants, plant);
    add_unique(controllers, ctrl);
    cells[{plant, ctrl}] = m;
    table += plant + "," + ctrl + "," + write_double(m.rms_e) + "," + write_double(m.rms_e_beta) + "," +
             write_double(m.steer_oscillation) + "," + write_double(m.mean_iterations) + "," +
             write_double(m.mean_iterations_transition) + "," + std::to_string(m.steps) + "," +
             (m.aborted ? "1" : "0") + "," + write_double(m.abort_s) + "\n";
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
      iters += plant + "," + ctrl + "," + std::to_string(i) + "," + write_double(log.rows[i].x.s) + "," +
               std::to_string(log.rows[i].segment) + "," + std::to_string(log.rows[i].iterations) + "\n";
    }
    std::ifstream timing(dir / "timing.csv");
    std::string line;
    if (timing && std::getline(timing, line)) {
      while (std::getline(timing, line)) {
        if (!line.empty()) times += plant + "," + ctrl + "," + line + "\n";
      }
    }
  }
  json rms_e = json::array();
  json rms_b = json::array();
  json it_tr = json::array();
  for (const std::string& p : plants) {
    json re = json::array();
    json rb = json::array();
    json ri = json::array();
    for (const std::string& c : controllers) {
      const auto it = cells.find({p, c});
      if (it == cells.end()) {
        re.push_back(nullptr);
        rb.push_back(nullptr);
        ri.push_back(nullptr);
      } else {
        re.push_back(it->second.rms_e);
        rb.push_back(it->second.rms_e_beta);
        ri.push_back(it->second.mean_iterations_transition);
      }
    }
    rms_e.push_back(re);
    rms_b.push_back(rb);
    it_tr.push_back(ri);
  }
  fs::create_directories(out);
  write_text(out / "rms_table.csv", table);
  write_text(out / "iterations.csv", iters);
  write_text(out / "solve_times.csv", times);
  r.summary = {{"plants", plants},
               {"controllers", controllers},
               {"rms_e", rms_e},
               {"rms_e_beta", rms_b},
               {"mean_iterations_transition", it_tr}};
  save_json(out / "report.json", r.summary);
  r.outputs = {"rms_table.csv", "iterations.csv", "solve_times.csv", "report.json"};
  return finish("report", cfg, out, r, t0);
}

CommandResult run_command(const std::string& name, const json& cfg, const fs::path& out) {
  if (name == "gen-data") return cmd_gen_data(cfg, out);
  if (name == "fit") return cmd_fit(cfg, out);
  if (name == "eval") return cmd_eval(cfg, out);
  if (name == "distill") return cmd_distill(cfg, out);
  if (name == "sim") return cmd_sim(cfg, out);
  if (name == "report") return cmd_report(cfg, out);
  throw Error(ErrorCode::invalid_argument, "unknown command '" + name + "'");
}

}  // namespace tirelearn
