#pragma once

// Configuration handling and the pipeline commands behind the CLI.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tirelearn/node.hpp"
#include "tirelearn/simctl.hpp"
#include "tirelearn/train.hpp"

namespace tirelearn {

namespace fs = std::filesystem;
using nlohmann::json;

/// Complete configuration with every default filled in.
json default_config();

/// Overlays `user` on the defaults. Unknown keys and type mismatches raise
/// ConfigError naming the dotted key path.
json merge_config(const json& user);

/// Reads and merges a config file; an empty path gives the defaults.
json load_config(const std::string& path);

/// FNV-1a hash of the canonical serialization.
std::string config_hash(const json& cfg);

VehicleParams vehicle_from_json(const json& j);
ReferenceConfig reference_from_json(const json& j);
NmpcConfig nmpc_from_json(const json& j);
NoiseConfig noise_from_json(const json& j);
ServoConfig servo_from_json(const json& j);
TrainConfig train_from_json(const json& fit, std::uint64_t seed);
FitConfig baseline_from_json(const json& j);
DataGenConfig datagen_from_json(const json& cfg);
DistillConfig distill_from_json(const json& j, std::uint64_t seed);

/// Tire pair: a plant name ("a", "b") or {"front": m, "rear": m} where each m
/// is a model file path (relative to `base`) or an inline model document.
TireSet tires_from_json(const json& j, const fs::path& base = {});

std::unique_ptr<TireModel> load_model(const fs::path& path);
void save_json(const fs::path& path, const json& j);
json read_json(const fs::path& path);

/// Axis-aligned box around the samples' (alpha, [sigma], feat...) values.
ProbeBox probe_box(const std::vector<AxleSample>& samples, Regime regime);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string version;
  json timings = json::object();  // s, wall clock

  json to_json() const;
  void write(const fs::path& dir) const;
};

struct CommandResult {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;  // file names inside the output directory
  json summary;
  json timings = json::object();
};

/// Each command writes its outputs and a manifest.json into `out`.
CommandResult cmd_gen_data(const json& cfg, const fs::path& out);
CommandResult cmd_fit(const json& cfg, const fs::path& out);
CommandResult cmd_eval(const json& cfg, const fs::path& out);
CommandResult cmd_distill(const json& cfg, const fs::path& out);
CommandResult cmd_sim(const json& cfg, const fs::path& out);
CommandResult cmd_report(const json& cfg, const fs::path& out);

/// Dispatches on the subcommand name.
CommandResult run_command(const std::string& name, const json& cfg, const fs::path& out);

}  // namespace tirelearn
