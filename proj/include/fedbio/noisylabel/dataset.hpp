#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedbio/core.hpp"

namespace fedbio {

/// Row-per-sample feature matrix with integer class labels.
struct LabeledSplit {
  Matrix features;  // n x p
  std::vector<int> labels;

  Index size() const { return features.rows(); }
};

/// Federated classification data. Client shards are contiguous row ranges of `train`
/// in client order; `validation` lives at the server and `test` is for reporting only.
struct LabeledDataset {
  LabeledSplit train;
  std::vector<int> clean_labels;  // ground truth, evaluation only
  std::vector<bool> flipped;      // ground-truth flip mask
  std::vector<Index> shard_sizes;
  LabeledSplit validation;
  LabeledSplit test;
  int classes = 0;

  Index num_clients() const { return static_cast<Index>(shard_sizes.size()); }
  Index feature_dim() const { return train.features.cols(); }
  Index shard_offset(Index client) const;
  Index flip_count() const;
  void check() const;
};

struct BlobConfig {
  Index clients = 10;
  Index samples_per_client = 100;
  Index validation_samples = 200;
  Index test_samples = 1000;
  Index informative_dims = 2;
  Index noise_dims = 0;  // extra pure-noise feature columns
  int classes = 4;
  double separation = 3.0;  // distance of the class means from the origin
  double spread = 1.0;      // per-coordinate standard deviation of the informative block
  double noise_spread = 1.0;  // standard deviation of the pure-noise columns
  double anisotropy = 1.0;    // informative column j is scaled by anisotropy^(-j / (informative_dims - 1))
  std::uint64_t seed = 1;
};

/// Gaussian class blobs: class c has mean separation * u_c on the informative block where the
/// u_c are the coordinate axes when there are enough informative columns (evenly spaced angles in 2-D,
/// random unit directions otherwise). Labels are balanced round-robin before shuffling.
LabeledDataset make_blobs(const BlobConfig& cfg);

enum class NoiseMode { kIid, kNonIid };

struct NoiseSpec {
  NoiseMode mode = NoiseMode::kIid;
  double rho = 0.4;
  double rho_low = 0.2;
  double rho_high = 0.9;
  std::uint64_t seed = 1;
};

void validate(const NoiseSpec& spec);

/// Per-client flip ratio drawn for `mode`; kIid gives rho for every client.
std::vector<double> client_noise_ratios(const NoiseSpec& spec, Index clients);

/// Flips a ceil(rho_m N_m)-size uniform subset of each shard to a different, uniformly chosen class.
/// Applied to a clean dataset; flips accumulate onto an existing mask otherwise.
LabeledDataset inject_label_noise(const LabeledDataset& clean, const NoiseSpec& spec);

/// Flips exactly the listed training indices, each to the next class (label + 1) mod C.
LabeledDataset plant_flips(const LabeledDataset& clean, const std::vector<Index>& indices);

/// CSV with feature columns f0..f{p-1} and a trailing label column, one header row.
void write_split_csv(const std::filesystem::path& path, const LabeledSplit& split);
LabeledSplit read_split_csv(const std::filesystem::path& path);

/// {"flipped": [indices], "clean_labels": [...], "noisy_labels": [...], "shard_sizes": [...]}
std::string flip_mask_json(const LabeledDataset& data);

}  // namespace fedbio
