// spd-bci: run the EEG pipeline stages from a config file.
//
//   spd-bci <command> --config <path> [--seed N] [--jobs K]
//
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numerical failure.

#include "spdbci/error.hpp"
#include "spdbci/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace {

void configure_logging() {
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("SPD_BCI_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();

  CLI::App app{"Spatio-temporal EEG decoding with SPD tangent features"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  const std::map<std::string, std::string> help = {
      {"synth", "write a synthetic dataset to input_dir"},
      {"ingest", "cut a CSV recording into segment files in input_dir"},
      {"preprocess", "band-pass, notch and normalize every segment"},
      {"features", "temporal feature sequences, covariances and the train/test split"},
      {"train", "train every configured variant"},
      {"evaluate", "score every variant on the test split"},
      {"ablate", "evaluate all variants into ablation.csv"},
  };
  for (const std::string& name : spdbci::pipeline::command_names()) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::Range(1, 1024));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    spdbci::pipeline::Config config = spdbci::pipeline::load_config(config_path);
    if (seed) config.seed = *seed;
    if (jobs) config.jobs = *jobs;
    spdbci::pipeline::run(app.get_subcommands().front()->get_name(), config);
  } catch (const spdbci::Error& e) {
    spdlog::error("{} error: {}", spdbci::to_string(e.kind()), e.what());
    return spdbci::exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("file system error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return 3;
  }
  return 0;
}
