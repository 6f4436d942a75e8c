#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fedbio/bilevel/estimators.hpp"
#include "fedbio/bilevel/problem.hpp"
#include "fedbio/fedsim/ledger.hpp"

namespace fedbio {

/// T full-batch gradient steps on g_m at fixed x. Throws NumericError on a non-finite gradient.
Vector local_sgd(const BilevelProblem& p, Index client, const Vector& x, const Vector& y0, int steps, double lr);

/// y + sum_m N_m (y_m - y) / sum_m N_m.
Vector aggregate_inner(const Vector& server_y, std::span<const Vector> client_results, std::span<const double> weights);

struct ExactEstimator {};
using EstimatorConfig = std::variant<ExactEstimator, IterSolverConfig, NonIterSolverConfig>;

EstimatorMethod estimator_method(const EstimatorConfig& cfg);

struct RoundConfig {
  int rounds = 10;              // K
  int local_steps = 5;          // T
  double inner_lr = 0.01;       // gamma
  double outer_lr = 0.1;        // eta
  Index clients_per_round = 1;  // S
  EstimatorConfig estimator = ExactEstimator{};
  std::uint64_t seed = 0;
  bool resample_estimator_clients = false;
  bool warm_start_v = false;          // iterative: start each round from the previous round's v
  bool exact_inner = false;           // oracle mode: replace the aggregated y by the exact inner minimizer
  bool grad_norm_diagnostic = false;  // record exact |grad h(x_k)|^2 at (x_k, y_k)
  double inner_smoothness = 0.0;      // L_G, only used to warn when gamma >= 2 / L_G
  bool parallel = false;              // run client jobs on threads; results are committed in client order
  std::optional<Vector> x0;
  std::optional<Vector> y0;
};

void validate(const RoundConfig& cfg, const BilevelProblem& p);

struct TraceRecord {
  int round = 0;
  Vector x;
  Vector y;
  double outer_loss = 0.0;    // F(x_k, y_k)
  double grad_norm_sq = std::numeric_limits<double>::quiet_NaN();
  LedgerTotals ledger;        // cumulative at the end of the round
  double wall_ms = 0.0;       // cumulative wall-clock
  std::map<std::string, double> metrics;
};

struct TrainTrace {
  std::vector<TraceRecord> records;  // K + 1 entries, the first is the initial state
  CommLedger ledger;
  int completed_rounds = 0;
};

/// Called after every record is filled, including the initial one.
using RoundObserver = std::function<void(TraceRecord&)>;

/// Uniform sample of `count` clients out of `total` without replacement, returned ascending.
std::vector<Index> sample_clients(Index total, Index count, std::uint64_t seed);

/// Client execution helper: runs job(m) for m in [0, n) and returns the results in index order.
std::vector<Vector> run_clients(std::size_t n, const std::function<Vector(std::size_t)>& job, bool parallel);

/// Error raised inside a round; carries the round index of the failure.
class RoundError : public std::runtime_error {
 public:
  RoundError(int round, const std::string& what, bool divergence)
      : std::runtime_error("round " + std::to_string(round) + ": " + what), round_(round), divergence_(divergence) {}
  int round() const { return round_; }
  bool divergence() const { return divergence_; }

 private:
  int round_;
  bool divergence_;
};

/// Communication-efficient federated bilevel optimization.
/// On failure throws RoundError; `partial` (if non-null) receives the trace up to the failing round.
TrainTrace comm_fedbio(const BilevelProblem& p, const RoundConfig& cfg, const RoundObserver& observer = {},
                       TrainTrace* partial = nullptr);

/// FedAvg on y -> G(x_fixed, y); the estimator block of cfg is ignored.
TrainTrace fedavg(const BilevelProblem& p, const Vector& x_fixed, const RoundConfig& cfg,
                  const RoundObserver& observer = {}, TrainTrace* partial = nullptr);

struct LedgerRoundSummary {
  int round = 0;
  LedgerTotals all;
  LedgerTotals estimator;  // hypergradient-estimation payloads only
};

struct LedgerReport {
  std::vector<LedgerRoundSummary> rounds;
  LedgerTotals cumulative;
  LedgerTotals estimator_cumulative;
  std::int64_t full_hessian_baseline = 0;  // sum over rounds of S * d^2
  std::int64_t fedavg_baseline = 0;        // sum over rounds of S * 2d
  double estimator_vs_hessian = 0.0;       // estimator scalars / full-Hessian baseline
  double total_vs_fedavg = 0.0;            // all scalars / FedAvg traffic
};

/// True for payload kinds produced by a hypergradient estimator.
bool is_estimator_payload(std::string_view kind);

/// Per-round and cumulative summary. `clients_per_round` is S, `dim` is d.
LedgerReport ledger_report(const CommLedger& ledger, Index dim, Index clients_per_round);

}  // namespace fedbio
