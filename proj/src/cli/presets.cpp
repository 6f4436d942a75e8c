#include "fedbio/cli/presets.hpp"

namespace fedbio {
namespace {

LabeledDataset noisy_blobs(BlobConfig bc, std::uint64_t seed) {
  bc.seed = seed;
  return inject_label_noise(make_blobs(bc), NoiseSpec{.mode = NoiseMode::kIid, .rho = 0.4, .seed = seed});
}

RoundConfig base_round(std::uint64_t seed) {
  return RoundConfig{.rounds = 200,
                     .local_steps = 5,
                     .inner_lr = 0.1,
                     .outer_lr = 100.0,
                     .clients_per_round = 10,
                     .seed = seed};
}

}  // namespace

NoisyPreset recovery_preset(std::uint64_t seed) {
  NoisyPreset p{.data = noisy_blobs(BlobConfig{.noise_dims = 98}, seed), .reg = 1e-3, .round = base_round(seed)};
  p.round.estimator = IterSolverConfig{.iterations = 20,
                                       .step = 0.5,
                                       .compressor = CompressorKind::kCountSketch,
                                       .budget = build_weight_problem(p.data).inner_dim() / 20,
                                       .sketch_seed = seed};
  return p;
}

NoisyPreset rate_sweep_preset(std::uint64_t seed) {
  const BlobConfig bc{.informative_dims = 4, .noise_dims = 746, .noise_spread = 0.03, .anisotropy = 10.0};
  NoisyPreset p{.data = noisy_blobs(bc, seed), .reg = 1e-3, .round = base_round(seed)};
  p.round.warm_start_v = true;
  p.round.estimator = IterSolverConfig{.iterations = 20, .step = 1.0, .sketch_seed = seed};
  return p;
}

NoisyPreset noniterative_sweep_preset(std::uint64_t seed) {
  const BlobConfig bc{.informative_dims = 4, .noise_dims = 96, .noise_spread = 0.03, .anisotropy = 10.0};
  NoisyPreset p{.data = noisy_blobs(bc, seed), .reg = 1e-3, .round = base_round(seed)};
  p.round.estimator = NonIterSolverConfig{.seed1 = seed, .seed2 = seed + 100, .warn_on_deficiency = false};
  return p;
}

ShapleyPreset shapley_preset() {
  const BlobConfig bc{.clients = 2,
                      .samples_per_client = 5,
                      .validation_samples = 40,
                      .test_samples = 0,
                      .classes = 2,
                      .separation = 3.0,
                      .seed = 11};
  ShapleyPreset p{.data = plant_flips(make_blobs(bc), {1, 4, 7}), .shapley = ShapleyConfig{.reg = 0.1}};
  p.round = RoundConfig{.rounds = 300,
                        .local_steps = 1,
                        .inner_lr = 0.1,
                        .outer_lr = 10.0,
                        .clients_per_round = 2,
                        .estimator = ExactEstimator{},
                        .seed = 1,
                        .exact_inner = true};
  return p;
}

}  // namespace fedbio
