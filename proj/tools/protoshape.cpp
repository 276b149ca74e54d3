#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "protoshape/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"protoshape: prototype-aware point cloud completion toolkit"};
  app.require_subcommand(0);

  std::string command, config_path, out;
  uint64_t seed = 0;
  bool seed_set = false, deterministic = false;

  app.add_option("command", command, "gen-data|train-pretext|fit-prototypes|train|ablate|eval|report")
      ->required()
      ->check(CLI::IsMember(
          {"gen-data", "train-pretext", "fit-prototypes", "train", "ablate", "eval", "report"}));
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_flag("--deterministic", deterministic,
               "single-threaded, fixed-order execution for byte-stable outputs");
  auto* out_opt = app.add_option("--out", out, "override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  seed_set = seed_opt->count() > 0;

  ps::ExperimentConfig cfg;
  try {
    cfg = ps::load_config(config_path);
  } catch (const ps::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ps::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  }
  if (seed_set) {
    cfg.seed = seed;
    cfg.dataset.seed = seed;
  }
  if (deterministic) cfg.deterministic = true;
  if (out_opt->count() > 0) cfg.out = out;

  return ps::run_command(command, cfg);
}
