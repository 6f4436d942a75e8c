#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbio/bilevel/quadratic.hpp"
#include "fedbio/fedsim/federation.hpp"
#include "fedbio/noisylabel/dataset.hpp"

namespace fedbio {

enum class ProblemKind { kQuadratic, kNoisyLabel };

struct ProblemSpec {
  ProblemKind kind = ProblemKind::kQuadratic;
  QuadraticConfig quadratic;
  BlobConfig blobs;
  NoiseSpec noise;
  double reg = 1e-3;  // noisy-label inner regularizer
};

/// Parsed experiment. Every key read (explicit or defaulted) is kept in `resolved` so the
/// run directory can carry a config that reproduces it exactly.
struct ExperimentConfig {
  ProblemSpec problem;
  RoundConfig federation;
  std::optional<double> estimator_rate;  // iterative: budget = floor(d / rate), resolved against the problem
  std::vector<double> rates = {1, 20, 100, 1000};
  std::uint64_t seed = 1;
  std::string out;

  struct Entry {
    std::string section;
    std::string key;
    std::string value;
  };
  std::vector<Entry> resolved;

  std::string resolved_ini() const;
  /// Canonical text of the [problem] block; hashed into the manifest.
  std::string problem_text() const;
  nlohmann::json to_json() const;
};

/// Flat INI with sections [run], [problem], [federation], [estimator], [sweep].
/// Unknown sections or keys and malformed values throw ConfigError.
/// `seed_override` replaces [run] seed, which every unset seed key derives from.
ExperimentConfig parse_config(const std::string& text, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

std::unique_ptr<BilevelProblem> build_problem(const ProblemSpec& spec);

/// Estimator block with a rate resolved to a budget for inner dimension d.
EstimatorConfig resolve_estimator(const ExperimentConfig& cfg, Index inner_dim);

/// Git-style blob SHA-1 ("blob <size>\0" + content), lowercase hex.
std::string git_blob_sha1(const std::string& content);

}  // namespace fedbio
