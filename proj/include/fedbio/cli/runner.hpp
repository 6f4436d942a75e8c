#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "fedbio/cli/config.hpp"

namespace fedbio {

// Process exit codes of the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidationFailed = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitOtherError = 4;

struct RunOptions {
  std::filesystem::path out;
  bool parallel = false;
};

/// --out, then FEDBIO_OUT, then [run] out, then "fedbio_out".
std::filesystem::path resolve_output_dir(const std::optional<std::string>& flag, const std::string& config_out);

/// metrics.csv columns, in order.
inline constexpr const char* kMetricsHeader =
    "k,outer_loss,val_accuracy,test_accuracy,grad_norm_sq,f1,uplink_scalars,downlink_scalars,cumulative_bytes";

/// Runs one experiment and writes config.ini, metrics.csv, ledger.csv and manifest.json into opts.out.
/// Returns kExitOk, or kExitDivergence after flushing the rounds completed before the failure.
/// Configuration problems throw ConfigError before anything is written.
int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// One run per [sweep] rate in rate_<r>/ plus summary.csv. Every rate is checked before the first run.
int sweep_compression(const ExperimentConfig& cfg, const RunOptions& opts);

/// Runs a validation suite, prints one line per check and writes verdict.json.
int validate_suite(const std::string& suite, const RunOptions& opts);

}  // namespace fedbio
