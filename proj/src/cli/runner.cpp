#include "fedbio/cli/runner.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>

#include "fedbio/cli/validation.hpp"
#include "fedbio/compression/count_sketch.hpp"
#include "fedbio/noisylabel/shapley.hpp"
#include "fedbio/noisylabel/weighted_erm.hpp"

namespace fedbio {
namespace {

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

struct RoundMetrics {
  double val_accuracy = std::nan("");
  double test_accuracy = std::nan("");
  double f1 = std::nan("");
};

RoundMetrics noisy_metrics(const BilevelProblem& p, const TraceRecord& r) {
  RoundMetrics m;
  if (const auto* w = dynamic_cast<const WeightedERMProblem*>(&p)) {
    m.val_accuracy = w->accuracy(w->data().validation, r.y);
    if (w->data().test.size() > 0) m.test_accuracy = w->accuracy(w->data().test, r.y);
    m.f1 = f1_score(classify_noisy(r.x), w->data().flipped);
  }
  return m;
}

std::string metrics_csv(const BilevelProblem& p, const TrainTrace& trace) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : trace.records) {
    const auto m = noisy_metrics(p, r);
    out += std::to_string(r.round) + "," + num(r.outer_loss) + "," + num(m.val_accuracy) + "," + num(m.test_accuracy) +
           "," + num(r.grad_norm_sq) + "," + num(m.f1) + "," + std::to_string(r.ledger.uplink_scalars) + "," +
           std::to_string(r.ledger.downlink_scalars) + "," + std::to_string(r.ledger.bytes()) + "\n";
  }
  return out;
}

std::string ledger_csv(const LedgerReport& report) {
  std::string out =
      "round,uplink_scalars,downlink_scalars,uplink_bytes,downlink_bytes,estimator_uplink_scalars,"
      "estimator_downlink_scalars\n";
  for (const auto& r : report.rounds) {
    out += std::to_string(r.round) + "," + std::to_string(r.all.uplink_scalars) + "," +
           std::to_string(r.all.downlink_scalars) + "," + std::to_string(r.all.uplink_bytes) + "," +
           std::to_string(r.all.downlink_bytes) + "," + std::to_string(r.estimator.uplink_scalars) + "," +
           std::to_string(r.estimator.downlink_scalars) + "\n";
  }
  return out;
}

nlohmann::json totals_json(const LedgerTotals& t) {
  return {{"uplink_scalars", t.uplink_scalars},
          {"downlink_scalars", t.downlink_scalars},
          {"uplink_bytes", t.uplink_bytes},
          {"downlink_bytes", t.downlink_bytes}};
}

nlohmann::json seeds_json(const ExperimentConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : cfg.resolved)
    if (e.key.find("seed") != std::string::npos) j[e.section + "." + e.key] = std::stoull(e.value);
  return j;
}

struct RunOutcome {
  int exit_code = kExitOk;
  TrainTrace trace;
  std::string error;
};

/// Runs comm_fedbio for cfg and writes every artifact into dir.
RunOutcome execute(const ExperimentConfig& cfg, const BilevelProblem& p, RoundConfig round,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "config.ini", cfg.resolved_ini());
  RunOutcome outcome;
  TrainTrace partial;
  try {
    outcome.trace = comm_fedbio(p, round, {}, &partial);
  } catch (const RoundError& e) {
    outcome.exit_code = kExitDivergence;
    outcome.error = e.what();
    outcome.trace = std::move(partial);
  }
  const auto& trace = outcome.trace;
  write_file(dir / "metrics.csv", metrics_csv(p, trace));
  const auto report = ledger_report(trace.ledger, p.inner_dim(), round.clients_per_round);
  write_file(dir / "ledger.csv", ledger_csv(report));

  nlohmann::json manifest;
  manifest["tool"] = "fedbio";
  manifest["version"] = "1.0.0";
  manifest["config"] = cfg.to_json();
  manifest["seeds"] = seeds_json(cfg);
  manifest["problem_sha1"] = git_blob_sha1(cfg.problem_text());
  manifest["outer_dim"] = p.outer_dim();
  manifest["inner_dim"] = p.inner_dim();
  manifest["estimator"] = std::string(to_string(estimator_method(round.estimator)));
  manifest["status"] = outcome.exit_code == kExitOk ? "completed" : "diverged";
  manifest["completed_rounds"] = trace.completed_rounds;
  if (!outcome.error.empty()) manifest["error"] = outcome.error;
  manifest["ledger"] = {{"cumulative", totals_json(report.cumulative)},
                        {"estimator", totals_json(report.estimator_cumulative)},
                        {"full_hessian_baseline_scalars", report.full_hessian_baseline},
                        {"fedavg_baseline_scalars", report.fedavg_baseline},
                        {"estimator_vs_full_hessian", report.estimator_vs_hessian},
                        {"total_vs_fedavg", report.total_vs_fedavg}};
  if (!trace.records.empty()) {
    const auto& last = trace.records.back();
    const auto m = noisy_metrics(p, last);
    nlohmann::json fin = {{"round", last.round}, {"outer_loss", last.outer_loss}};
    if (std::isfinite(m.f1)) {
      fin["f1"] = m.f1;
      fin["val_accuracy"] = m.val_accuracy;
      if (std::isfinite(m.test_accuracy)) fin["test_accuracy"] = m.test_accuracy;
    }
    manifest["final"] = fin;
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

/// Relative hypergradient error of the configured estimator at (x, y) over all clients;
/// NaN when the dense oracle is too large to build.
double hypergradient_error(const BilevelProblem& p, const EstimatorConfig& est, const Vector& x, const Vector& y) {
  constexpr Index kOracleDimLimit = 1000;
  if (p.inner_dim() > kOracleDimLimit) return std::nan("");
  const auto exact = exact_hypergradient(p, x, y);
  const auto clients = p.all_clients();
  CommLedger scratch;
  Vector approx;
  if (const auto* it = std::get_if<IterSolverConfig>(&est)) {
    approx = iterative_approx(p, x, y, *it, clients, scratch).value;
  } else if (const auto* ni = std::get_if<NonIterSolverConfig>(&est)) {
    NonIterSolverConfig quiet = *ni;
    quiet.warn_on_deficiency = false;
    approx = non_iterative_approx(p, x, y, quiet, clients, scratch).value;
  } else {
    approx = exact.value;
  }
  return (approx - exact.value).norm() / std::max(exact.value.norm(), 1e-300);
}

std::string rate_label(double rate) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "rate_%g", rate);
  return buf;
}

}  // namespace

std::filesystem::path resolve_output_dir(const std::optional<std::string>& flag, const std::string& config_out) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv("FEDBIO_OUT"); env && *env) return env;
  if (!config_out.empty()) return config_out;
  return "fedbio_out";
}

int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto problem = build_problem(cfg.problem);
  RoundConfig round = cfg.federation;
  round.estimator = resolve_estimator(cfg, problem->inner_dim());
  round.parallel = opts.parallel;
  validate(round, *problem);
  const auto outcome = execute(cfg, *problem, round, opts.out);
  if (!outcome.error.empty()) std::fprintf(stderr, "fedbio: %s\n", outcome.error.c_str());
  return outcome.exit_code;
}

int sweep_compression(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto problem = build_problem(cfg.problem);
  const Index d = problem->inner_dim();
  const auto method = estimator_method(cfg.federation.estimator);
  if (method == EstimatorMethod::kExact) throw ConfigError("sweep-compression needs an iterative or non-iterative estimator");
  const auto* base_iter = std::get_if<IterSolverConfig>(&cfg.federation.estimator);
  if (base_iter && base_iter->compressor == CompressorKind::kNone) {
    throw ConfigError("sweep-compression with the iterative estimator needs [estimator] compressor");
  }

  // Resolve and check every rate before running anything.
  std::vector<RoundConfig> rounds;
  std::vector<std::string> sizes;
  for (const double rate : cfg.rates) {
    RoundConfig round = cfg.federation;
    round.parallel = false;
    if (base_iter) {
      IterSolverConfig it = *base_iter;
      if (rate == 1.0) {
        it.compressor = CompressorKind::kNone;
        it.budget = 0;
        sizes.push_back(std::to_string(d));
      } else {
        it.budget = static_cast<Index>(std::floor(static_cast<double>(d) / rate));
        if (it.budget < 1) throw ConfigError("sweep: rate " + num(rate) + " leaves no budget for d = " + std::to_string(d));
        if (it.compressor == CompressorKind::kCountSketch) {
          const auto g = sketch_geometry(d, it.budget, it.sketch_delta);
          sizes.push_back(std::to_string(g.rows) + "x" + std::to_string(g.cols));
        } else {
          sizes.push_back(std::to_string(it.budget));
        }
      }
      round.estimator = it;
    } else {
      NonIterSolverConfig ni = std::get<NonIterSolverConfig>(cfg.federation.estimator);
      const double shrink = std::sqrt(rate);
      ni.rows1 = std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(ni.rows1) / shrink)));
      ni.rows2 = std::max<Index>(1, static_cast<Index>(std::ceil(static_cast<double>(ni.rows2) / shrink)));
      sizes.push_back(std::to_string(ni.rows1) + "x" + std::to_string(ni.rows2));
      round.estimator = ni;
    }
    validate(round, *problem);
    rounds.push_back(round);
  }

  std::filesystem::create_directories(opts.out);
  std::vector<RunOutcome> outcomes(rounds.size());
  auto job = [&](std::size_t i) {
    const auto dir = opts.out / rate_label(cfg.rates[i]);
    outcomes[i] = execute(cfg, *problem, rounds[i], dir);
  };
  if (opts.parallel) {
    std::vector<std::future<void>> futures;
    for (std::size_t i = 0; i < rounds.size(); ++i) futures.push_back(std::async(std::launch::async, job, i));
    for (auto& f : futures) f.get();
  } else {
    for (std::size_t i = 0; i < rounds.size(); ++i) job(i);
  }

  std::string summary =
      "rate,estimator,compressed_size,status,completed_rounds,final_f1,final_val_accuracy,final_outer_loss,"
      "hypergradient_rel_error,estimator_uplink_scalars\n";
  int code = kExitOk;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.exit_code != kExitOk) code = kExitDivergence;
    const auto& last = o.trace.records.back();
    const auto m = noisy_metrics(*problem, last);
    const double err = hypergradient_error(*problem, rounds[i].estimator, last.x, last.y);
    const auto report = ledger_report(o.trace.ledger, d, rounds[i].clients_per_round);
    summary += num(cfg.rates[i]) + "," + std::string(to_string(method)) + "," + sizes[i] + "," +
               (o.exit_code == kExitOk ? "completed" : "diverged") + "," + std::to_string(o.trace.completed_rounds) +
               "," + num(m.f1) + "," + num(m.val_accuracy) + "," + num(last.outer_loss) + "," + num(err) + "," +
               std::to_string(report.estimator_cumulative.uplink_scalars) + "\n";
  }
  write_file(opts.out / "summary.csv", summary);
  return code;
}

int validate_suite(const std::string& suite, const RunOptions& opts) {
  const auto checks = suite_checks(suite);
  const auto report = run_suite(suite, checks, [](const CheckResult& r) {
    std::printf("%s\n", format_result(r).c_str());
    std::fflush(stdout);
  });
  std::filesystem::create_directories(opts.out);
  write_file(opts.out / "verdict.json", report.to_json().dump(2) + "\n");
  return report.pass() ? kExitOk : kExitValidationFailed;
}

}  // namespace fedbio
