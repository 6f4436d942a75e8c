#pragma once

#include <cstdint>

#include "fedbio/fedsim/federation.hpp"
#include "fedbio/noisylabel/dataset.hpp"
#include "fedbio/noisylabel/weighted_erm.hpp"
#include "fedbio/noisylabel/shapley.hpp"

namespace fedbio {

/// Data plus run settings of a pinned noisy-label experiment.
struct NoisyPreset {
  LabeledDataset data;
  double reg = 1e-3;
  RoundConfig round;
};

/// 10 clients x 100 samples, 4 classes, 2 informative + 98 noise features (d = 404), iid 40% flips.
/// Count-sketch iterative estimator at 20x compression.
NoisyPreset recovery_preset(std::uint64_t seed);

/// 4 anisotropic informative + 746 low-variance noise features (d = 3004), uncompressed
/// iterative estimator with warm-started v; callers set the compressor and budget.
NoisyPreset rate_sweep_preset(std::uint64_t seed);

/// Same feature family with 96 noise columns (d = 404) and the non-iterative estimator;
/// callers set rows1 / rows2.
NoisyPreset noniterative_sweep_preset(std::uint64_t seed);

struct ShapleyPreset {
  LabeledDataset data;
  ShapleyConfig shapley;
  RoundConfig round;
};

/// Ten training samples on two clients with three planted flips, small enough for exact Shapley.
ShapleyPreset shapley_preset();

}  // namespace fedbio
