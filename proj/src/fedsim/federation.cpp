#include "fedbio/fedsim/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "fedbio/compression/record.hpp"

namespace fedbio {
namespace {

constexpr std::uint64_t kSampleStream = 0x100;
constexpr std::uint64_t kEstimatorSampleStream = 0x101;
constexpr std::uint64_t kSketchStream = 0x102;

std::int64_t dense_record(Index n) { return static_cast<std::int64_t>(record::dense_bytes(n)); }

class Stopwatch {
 public:
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double grad_norm_sq(const BilevelProblem& p, const Vector& x, const Vector& y) {
  return exact_hypergradient(p, x, y).value.squaredNorm();
}

TraceRecord make_record(const BilevelProblem& p, const RoundConfig& cfg, int round, const Vector& x, const Vector& y,
                        const CommLedger& ledger, const Stopwatch& clock) {
  TraceRecord rec;
  rec.round = round;
  rec.x = x;
  rec.y = y;
  rec.outer_loss = p.outer_value(x, y);
  if (cfg.grad_norm_diagnostic) rec.grad_norm_sq = grad_norm_sq(p, x, y);
  rec.ledger = ledger.totals();
  rec.wall_ms = clock.elapsed_ms();
  return rec;
}

/// One round of local SGD on the sampled clients followed by the weighted delta average.
Vector inner_round(const BilevelProblem& p, const RoundConfig& cfg, const std::vector<Index>& clients, const Vector& x,
                   const Vector& y, bool broadcast_outer, CommLedger& ledger) {
  const Index l = p.outer_dim();
  const Index d = p.inner_dim();
  for (Index c : clients) {
    if (broadcast_outer) {
      ledger.downlink(payload::kModelBroadcast, static_cast<int>(c), l + d, dense_record(l) + dense_record(d));
    } else {
      ledger.downlink(payload::kModelBroadcast, static_cast<int>(c), d, dense_record(d));
    }
  }
  const auto results = run_clients(
      clients.size(), [&](std::size_t m) { return local_sgd(p, clients[m], x, y, cfg.local_steps, cfg.inner_lr); },
      cfg.parallel);
  for (Index c : clients) ledger.uplink(payload::kInnerUpdate, static_cast<int>(c), d, dense_record(d));
  const auto weights = sample_weights(p, clients);
  return aggregate_inner(y, results, weights);
}

}  // namespace

Vector local_sgd(const BilevelProblem& p, Index client, const Vector& x, const Vector& y0, int steps, double lr) {
  require(steps >= 1, "local_sgd: need at least one local step");
  Vector y = y0;
  for (int t = 0; t < steps; ++t) {
    const Vector g = p.client_inner_grad(client, x, y);
    if (!g.allFinite()) {
      throw NumericError("local_sgd: non-finite gradient on client " + std::to_string(client) + " at local step " +
                         std::to_string(t));
    }
    y -= lr * g;
  }
  return y;
}

Vector aggregate_inner(const Vector& server_y, std::span<const Vector> client_results, std::span<const double> weights) {
  require(client_results.size() == weights.size() && !weights.empty(), "aggregate_inner: need one weight per client");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0.0, "aggregate_inner: weights must sum to a positive value");
  Vector delta = Vector::Zero(server_y.size());
  for (std::size_t m = 0; m < weights.size(); ++m) {
    require(client_results[m].size() == server_y.size(), "aggregate_inner: dimension mismatch");
    delta += weights[m] * (client_results[m] - server_y);
  }
  return server_y + delta / total;
}

EstimatorMethod estimator_method(const EstimatorConfig& cfg) {
  if (std::holds_alternative<IterSolverConfig>(cfg)) return EstimatorMethod::kIterative;
  if (std::holds_alternative<NonIterSolverConfig>(cfg)) return EstimatorMethod::kNonIterative;
  return EstimatorMethod::kExact;
}

void validate(const RoundConfig& cfg, const BilevelProblem& p) {
  if (cfg.rounds < 0) throw ConfigError("rounds must be non-negative");
  if (cfg.local_steps < 1) throw ConfigError("local_steps must be at least 1");
  if (!(cfg.inner_lr > 0.0)) throw ConfigError("inner learning rate must be positive");
  if (cfg.outer_lr < 0.0) throw ConfigError("outer learning rate must be non-negative");
  if (cfg.clients_per_round < 1 || cfg.clients_per_round > p.num_clients()) {
    throw ConfigError("clients_per_round must be in [1, M]");
  }
  if (cfg.x0 && cfg.x0->size() != p.outer_dim()) throw ConfigError("x0 has the wrong dimension");
  if (cfg.y0 && cfg.y0->size() != p.inner_dim()) throw ConfigError("y0 has the wrong dimension");
  if (cfg.inner_smoothness > 0.0 && cfg.inner_lr >= 2.0 / cfg.inner_smoothness) {
    warn("inner learning rate " + std::to_string(cfg.inner_lr) + " is not below 2 / L_G = " +
         std::to_string(2.0 / cfg.inner_smoothness));
  }
}

std::vector<Index> sample_clients(Index total, Index count, std::uint64_t seed) {
  require(count >= 1 && count <= total, "sample_clients: need 1 <= S <= M");
  std::vector<Index> all(static_cast<std::size_t>(total));
  std::iota(all.begin(), all.end(), Index{0});
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (Index i = 0; i < count; ++i) {
    std::uniform_int_distribution<Index> pick(i, total - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<Vector> run_clients(std::size_t n, const std::function<Vector(std::size_t)>& job, bool parallel) {
  std::vector<Vector> out(n);
  if (!parallel || n <= 1) {
    for (std::size_t m = 0; m < n; ++m) out[m] = job(m);
    return out;
  }
  std::vector<std::future<Vector>> futures;
  futures.reserve(n);
  for (std::size_t m = 0; m < n; ++m) futures.push_back(std::async(std::launch::async, job, m));
  for (std::size_t m = 0; m < n; ++m) out[m] = futures[m].get();
  return out;
}

TrainTrace comm_fedbio(const BilevelProblem& p, const RoundConfig& cfg, const RoundObserver& observer,
                       TrainTrace* partial) {
  validate(cfg, p);
  Stopwatch clock;
  TrainTrace trace;
  Vector x = cfg.x0 ? *cfg.x0 : p.initial_outer();
  Vector y = cfg.y0 ? *cfg.y0 : p.initial_inner();
  std::optional<Vector> previous_v;
  int deficient_rounds = 0;

  trace.records.push_back(make_record(p, cfg, 0, x, y, trace.ledger, clock));
  if (observer) observer(trace.records.back());

  int k = 0;
  try {
    for (k = 0; k < cfg.rounds; ++k) {
      trace.ledger.set_round(k);
      const auto clients = sample_clients(p.num_clients(), cfg.clients_per_round, derive_seed(cfg.seed, kSampleStream, k));
      y = inner_round(p, cfg, clients, x, y, true, trace.ledger);
      if (cfg.exact_inner) y = solve_inner(p, x, y).y;

      const auto est_clients = cfg.resample_estimator_clients
                                   ? sample_clients(p.num_clients(), cfg.clients_per_round,
                                                    derive_seed(cfg.seed, kEstimatorSampleStream, k))
                                   : clients;

      HypergradientEstimate est;
      if (const auto* iter = std::get_if<IterSolverConfig>(&cfg.estimator)) {
        IterSolverConfig round_cfg = *iter;
        round_cfg.sketch_seed = hash3(iter->sketch_seed, kSketchStream, static_cast<std::uint64_t>(k));
        if (cfg.warm_start_v && previous_v) round_cfg.v0 = *previous_v;
        est = iterative_approx(p, x, y, round_cfg, est_clients, trace.ledger);
        previous_v = est.v_solution;
      } else if (const auto* non_iter = std::get_if<NonIterSolverConfig>(&cfg.estimator)) {
        NonIterSolverConfig round_cfg = *non_iter;
        round_cfg.seed1 = hash3(non_iter->seed1, kSketchStream, static_cast<std::uint64_t>(k));
        round_cfg.seed2 = hash3(non_iter->seed2, kSketchStream, static_cast<std::uint64_t>(k));
        round_cfg.warn_on_deficiency = false;
        est = non_iterative_approx(p, x, y, round_cfg, est_clients, trace.ledger);
        if (est.conditioning_warning && deficient_rounds++ == 0) {
          warn("round " + std::to_string(k) + ": sketched system is rank deficient (rank " + std::to_string(est.rank) +
               " < r1 = " + std::to_string(round_cfg.rows1) + "); using minimum-norm solutions");
        }
      } else {
        est = exact_hypergradient(p, x, y);
      }

      x -= cfg.outer_lr * est.value;
      p.project_outer(x);
      if (!x.allFinite()) throw NumericError("outer iterate became non-finite");

      trace.records.push_back(make_record(p, cfg, k + 1, x, y, trace.ledger, clock));
      if (estimator_method(cfg.estimator) == EstimatorMethod::kNonIterative) {
        trace.records.back().metrics["rank"] = static_cast<double>(est.rank);
      }
      trace.completed_rounds = k + 1;
      if (observer) observer(trace.records.back());
    }
  } catch (const DivergenceError& e) {
    if (partial) *partial = trace;
    throw RoundError(k, e.what(), true);
  } catch (const NumericError& e) {
    if (partial) *partial = trace;
    throw RoundError(k, e.what(), false);
  } catch (const DefinitenessError& e) {
    if (partial) *partial = trace;
    throw RoundError(k, e.what(), false);
  }
  return trace;
}

TrainTrace fedavg(const BilevelProblem& p, const Vector& x_fixed, const RoundConfig& cfg, const RoundObserver& observer,
                  TrainTrace* partial) {
  validate(cfg, p);
  require(x_fixed.size() == p.outer_dim(), "fedavg: x has the wrong dimension");
  RoundConfig plain = cfg;
  plain.grad_norm_diagnostic = false;
  Stopwatch clock;
  TrainTrace trace;
  Vector y = cfg.y0 ? *cfg.y0 : p.initial_inner();
  trace.records.push_back(make_record(p, plain, 0, x_fixed, y, trace.ledger, clock));
  if (observer) observer(trace.records.back());
  int k = 0;
  try {
    for (k = 0; k < cfg.rounds; ++k) {
      trace.ledger.set_round(k);
      const auto clients = sample_clients(p.num_clients(), cfg.clients_per_round, derive_seed(cfg.seed, kSampleStream, k));
      y = inner_round(p, cfg, clients, x_fixed, y, false, trace.ledger);
      trace.records.push_back(make_record(p, plain, k + 1, x_fixed, y, trace.ledger, clock));
      trace.completed_rounds = k + 1;
      if (observer) observer(trace.records.back());
    }
  } catch (const NumericError& e) {
    if (partial) *partial = trace;
    throw RoundError(k, e.what(), false);
  }
  return trace;
}

bool is_estimator_payload(std::string_view kind) {
  return kind == payload::kVBroadcast || kind == payload::kHvpDense || kind == payload::kHvpTopK ||
         kind == payload::kHvpSketch || kind == payload::kXyProduct || kind == payload::kSketchSeeds ||
         kind == payload::kSketchedHessian || kind == payload::kSketchedCross || kind == payload::kOmegaBroadcast;
}

LedgerReport ledger_report(const CommLedger& ledger, Index dim, Index clients_per_round) {
  LedgerReport report;
  report.cumulative = ledger.totals();
  int max_round = -1;
  for (const auto& r : ledger.records()) max_round = std::max(max_round, r.round);
  report.rounds.resize(static_cast<std::size_t>(max_round + 1));
  for (int k = 0; k <= max_round; ++k) report.rounds[static_cast<std::size_t>(k)].round = k;
  auto add = [](LedgerTotals& t, const LedgerRecord& r) {
    if (r.direction == Direction::kUplink) {
      t.uplink_scalars += r.scalars;
      t.uplink_bytes += r.bytes;
    } else {
      t.downlink_scalars += r.scalars;
      t.downlink_bytes += r.bytes;
    }
  };
  for (const auto& r : ledger.records()) {
    auto& row = report.rounds[static_cast<std::size_t>(r.round)];
    add(row.all, r);
    if (is_estimator_payload(r.kind)) {
      add(row.estimator, r);
      add(report.estimator_cumulative, r);
    }
  }
  const auto rounds = static_cast<std::int64_t>(report.rounds.size());
  report.full_hessian_baseline = rounds * clients_per_round * dim * dim;
  report.fedavg_baseline = rounds * clients_per_round * 2 * dim;
  if (report.full_hessian_baseline > 0) {
    report.estimator_vs_hessian = static_cast<double>(report.estimator_cumulative.scalars()) /
                                  static_cast<double>(report.full_hessian_baseline);
  }
  if (report.fedavg_baseline > 0) {
    report.total_vs_fedavg =
        static_cast<double>(report.cumulative.scalars()) / static_cast<double>(report.fedavg_baseline);
  }
  return report;
}

}  // namespace fedbio
