// fedbio: run | sweep-compression | validate
//
// Exit codes: 0 ok, 1 validation failure, 2 config error, 3 divergence (partial metrics written), 4 other error.

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedbio/cli/runner.hpp"
#include "fedbio/cli/validation.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated bilevel optimization experiments with compressed hypergradient estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool parallel = false;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    if (needs_config) sub->add_option("--config", config_path, "experiment INI file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (default: $FEDBIO_OUT, then [run] out, then ./fedbio_out)");
    sub->add_flag("--parallel", parallel, "run clients (run) or rates (sweep-compression) on threads");
  };
  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, true);
  run->add_option("--seed", seed, "override [run] seed");
  auto* sweep = app.add_subcommand("sweep-compression", "one run per [sweep] rate plus summary.csv");
  add_common(sweep, true);
  sweep->add_option("--seed", seed, "override [run] seed");
  auto* validate = app.add_subcommand("validate", "run a property suite and write verdict.json");
  add_common(validate, false);
  std::string suite;
  validate->add_option("suite", suite, "estimators | sketches | shapley | experiments | all")
      ->required()
      ->check(CLI::IsMember(fedbio::suite_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? fedbio::kExitOk : fedbio::kExitConfigError;
  }

  try {
    if (validate->parsed()) {
      return fedbio::validate_suite(suite, {.out = fedbio::resolve_output_dir(out, ""), .parallel = parallel});
    }
    const auto cfg = fedbio::load_config(config_path, seed);
    const fedbio::RunOptions opts{.out = fedbio::resolve_output_dir(out, cfg.out), .parallel = parallel};
    if (run->parsed()) return fedbio::run_experiment(cfg, opts);
    return fedbio::sweep_compression(cfg, opts);
  } catch (const fedbio::ConfigError& e) {
    std::fprintf(stderr, "fedbio: %s\n", e.what());
    return fedbio::kExitConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fedbio: error: %s\n", e.what());
    return fedbio::kExitOtherError;
  }
}
