#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "fedbio/bilevel/problem.hpp"
#include "fedbio/fedsim/ledger.hpp"

namespace fedbio {

enum class EstimatorMethod { kExact, kIterative, kNonIterative };

std::string_view to_string(EstimatorMethod m);

struct HypergradientEstimate {
  Vector value;         // estimate of grad h(x)
  Vector v_solution;    // the v used in grad_x F - grad^2_xy G v
  std::int64_t comm_cost = 0;  // scalars credited to the ledger by this call
  EstimatorMethod method = EstimatorMethod::kExact;
  bool conditioning_warning = false;  // non-iterative: sketched system was rank deficient
  Index rank = 0;                     // non-iterative: numerical rank of the sketched system
  int iterations = 0;                 // iterative: iterations run
};

/// Oracle: materialize H with d HVP probes over all clients and solve H v* = grad_y F
/// by Cholesky. Throws DefinitenessError if H is not positive definite within tolerance.
HypergradientEstimate exact_hypergradient(const BilevelProblem& p, const Vector& x, const Vector& y);

/// grad q(v) = sum_m (N_m / sum N) grad^2_yy g_m v - grad_y F over the sampled clients.
Vector quadratic_grad(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                      std::span<const Index> clients);

enum class StepMode { kConstant, kSchedule };
enum class CompressorKind { kNone, kCountSketch, kTopK };
enum class Averaging { kLastIterate, kWeighted };

struct IterSolverConfig {
  int iterations = 100;
  StepMode step_mode = StepMode::kConstant;
  double step = 0.1;   // constant alpha
  double mu = 0.0;     // mu_G for the schedule and divergence guard; <= 0 means problem.strong_convexity()
  double shift = 0.0;  // a; <= 0 means default_shift(tau) with tau = budget / d (1 without compression)
  CompressorKind compressor = CompressorKind::kNone;
  Index budget = 0;          // table size m (count sketch) or k (top-k)
  Index decompress_k = 0;    // count sketch: entries recovered per iteration; <= 0 means the table's column count
  double sketch_delta = 0.05;
  std::uint64_t sketch_seed = 0;
  bool error_feedback = true;
  Averaging averaging = Averaging::kLastIterate;
  std::optional<Vector> v0;  // default zero
};

/// max(1, ((2 - tau)/tau)(sqrt(2/(2 - tau)) + 1)) + 1.
double default_shift(double tau);

/// Compression parameter tau used for the defaulted shift.
double compression_tau(const IterSolverConfig& cfg, Index dim);

/// alpha_i under the configured mode.
double iteration_step(const IterSolverConfig& cfg, int i, double mu, double shift);

/// Compressed gradient descent on q(v) followed by the cross-product aggregation.
/// Throws DivergenceError if |v^i| > 1e6 |grad_y F| / mu_G.
HypergradientEstimate iterative_approx(const BilevelProblem& p, const Vector& x, const Vector& y,
                                       const IterSolverConfig& cfg, std::span<const Index> clients,
                                       CommLedger& ledger);

struct NonIterSolverConfig {
  Index rows1 = 10;
  Index rows2 = 30;
  std::uint64_t seed1 = 1;
  std::uint64_t seed2 = 2;
  double lstsq_tol = 1e-10;     // relative rank threshold of the orthogonal factorization
  bool identity_sketch = false;  // test mode: S_1 = S_2 = I (requires rows1 = rows2 = d)
  bool warn_on_deficiency = true;
};

/// Sketched linear solve S_2 H S_1^T w = S_2 grad_y F, then grad_x F - (grad^2_xy G S_1^T) w.
HypergradientEstimate non_iterative_approx(const BilevelProblem& p, const Vector& x, const Vector& y,
                                           const NonIterSolverConfig& cfg, std::span<const Index> clients,
                                           CommLedger& ledger);

/// Largest eigenvalue of the Hessian of h near x by power iteration on exact hypergradient
/// differences (inner problem re-solved to tolerance at each probe).
double estimate_hypergradient_lipschitz(const BilevelProblem& p, const Vector& x, const Vector& y_hint,
                                        int iterations = 30, double probe = 1e-3, std::uint64_t seed = 7);

}  // namespace fedbio
