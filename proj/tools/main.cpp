#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "tirelearn/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"tirelearn: tire model learning and drift control pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";
  bool seed_given = false;

  const char* commands[][2] = {
      {"gen-data", "simulate excitation runs on a plant and write dataset.csv"},
      {"fit", "train or fit a tire model on a dataset"},
      {"eval", "compare models on the held-out split"},
      {"distill", "distil a NODE model into a plain MLP"},
      {"sim", "closed-loop NMPC run on the reference"},
      {"report", "RMS table and iteration statistics over sim runs"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "top-level seed (overrides the config)");
    sub->add_option("--out", out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  seed_given = app.get_subcommands().front()->count("--seed") > 0;

  tirelearn::json cfg;
  try {
    cfg = tirelearn::load_config(config_path);
    if (seed_given) cfg["seed"] = seed;
  } catch (const tirelearn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const tirelearn::CommandResult r = tirelearn::run_command(command, cfg, out);
    std::cout << r.summary.dump(2) << "\n";
  } catch (const tirelearn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == tirelearn::ErrorCode::config_error ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
