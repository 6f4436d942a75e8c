#include "fedbio/cli/validation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "fedbio/bilevel/estimators.hpp"
#include "fedbio/bilevel/quadratic.hpp"
#include "fedbio/cli/presets.hpp"
#include "fedbio/compression/count_sketch.hpp"
#include "fedbio/compression/sparse_embedding.hpp"
#include "fedbio/fedsim/federation.hpp"
#include "fedbio/noisylabel/shapley.hpp"
#include "fedbio/noisylabel/weighted_erm.hpp"

namespace fedbio {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double rel_error(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Vector gaussian_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = n01(rng);
  return v;
}

Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  return m;
}

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Separable quadratic with diagonal client Hessians; cheap at large d, used for ledger checks.
class DiagonalQuadratic final : public BilevelProblem {
 public:
  DiagonalQuadratic(Index l, Index d, Index clients, std::uint64_t seed) : l_(l), d_(d) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(1.0, 2.0);
    for (Index m = 0; m < clients; ++m) {
      Vector a(d);
      for (Index i = 0; i < d; ++i) a[i] = u(rng);
      a_.push_back(a);
      b_.push_back(gaussian_matrix(d, l, derive_seed(seed, 1, static_cast<std::uint64_t>(m))) / std::sqrt(double(d)));
    }
    target_ = gaussian_vector(d, derive_seed(seed, 2));
  }
  Index outer_dim() const override { return l_; }
  Index inner_dim() const override { return d_; }
  Index num_clients() const override { return static_cast<Index>(a_.size()); }
  Index client_samples(Index) const override { return 10; }
  double outer_value(const Vector&, const Vector& y) const override { return 0.5 * (y - target_).squaredNorm(); }
  Vector outer_grad_x(const Vector&, const Vector&) const override { return Vector::Zero(l_); }
  Vector outer_grad_y(const Vector&, const Vector& y) const override { return y - target_; }
  double client_inner_value(Index c, const Vector& x, const Vector& y) const override {
    const auto k = static_cast<std::size_t>(c);
    return 0.5 * y.dot(a_[k].cwiseProduct(y)) - y.dot(b_[k] * x);
  }
  Vector client_inner_grad(Index c, const Vector& x, const Vector& y) const override {
    const auto k = static_cast<std::size_t>(c);
    return a_[k].cwiseProduct(y) - b_[k] * x;
  }
  Vector client_hvp_yy(Index c, const Vector&, const Vector&, const Vector& v) const override {
    return a_[static_cast<std::size_t>(c)].cwiseProduct(v);
  }
  Vector client_hvp_xy(Index c, const Vector&, const Vector&, const Vector& v) const override {
    return -(b_[static_cast<std::size_t>(c)].transpose() * v);
  }
  double strong_convexity() const override { return 1.0; }

 private:
  Index l_;
  Index d_;
  std::vector<Vector> a_;
  std::vector<Matrix> b_;
  Vector target_;
};

struct NoisyRunOutcome {
  double f1 = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

NoisyRunOutcome evaluate_noisy(const WeightedERMProblem& p, const TraceRecord& r) {
  return {f1_score(classify_noisy(r.x), p.data().flipped), p.accuracy(p.data().validation, r.y),
          p.accuracy(p.data().test, r.y)};
}

}  // namespace

bool SuiteReport::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

nlohmann::json SuiteReport::to_json() const {
  nlohmann::json j;
  j["suite"] = suite;
  j["pass"] = pass();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"criterion", c.criterion}, {"name", c.name}, {"pass", c.pass}, {"detail", c.detail},
                           {"data", c.data}});
  }
  return j;
}

std::string format_result(const CheckResult& r) {
  std::ostringstream os;
  os << (r.pass ? "PASS" : "FAIL") << ' ';
  if (r.criterion > 0) os << "criterion " << r.criterion << ' ';
  os << r.name << ": " << r.detail << fmt(" [%.1fs]", r.seconds);
  return os.str();
}

CheckResult check_oracle_correctness() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 1, .name = "hypergradient oracle"};
  const QuadraticBilevelProblem p(QuadraticConfig{.outer_dim = 20, .inner_dim = 100, .seed = 101});
  const Vector x = gaussian_vector(p.outer_dim(), 102);
  const Vector y = p.inner_solution(x);
  const Vector exact = exact_hypergradient(p, x, y).value;
  const double err_closed = rel_error(exact, p.closed_form_hypergradient(x));

  const double h = 1e-4;
  Vector fd(p.outer_dim());
  for (Index j = 0; j < p.outer_dim(); ++j) {
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    fd[j] = (outer_objective(p, xp, y) - outer_objective(p, xm, y)) / (2.0 * h);
  }
  const double err_fd = rel_error(exact, fd);
  r.seconds = seconds_since(t0);
  const double tol = 1e-4;
  r.pass = err_closed <= tol && err_fd <= tol && r.seconds < 5.0;
  r.detail = fmt("rel err vs closed form %.2e, vs central differences %.2e (tol %.0e, budget 5 s)", err_closed, err_fd, tol);
  r.data = {{"closed_form_rel_error", err_closed}, {"finite_difference_rel_error", err_fd}};
  return r;
}

CheckResult check_iterative_rate() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 2, .name = "iterative estimator rate"};
  const std::vector<int> iters = {16, 32, 64, 128, 256};
  std::vector<std::vector<double>> errs(iters.size());
  std::vector<double> seed_slopes;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const QuadraticBilevelProblem p(QuadraticConfig{.outer_dim = 20, .inner_dim = 100, .mu = 1.0, .smooth = 3.0,
                                                    .seed = 200 + seed});
    const Vector x = gaussian_vector(p.outer_dim(), 300 + seed);
    const Vector y = p.inner_solution(x);
    const auto exact = exact_hypergradient(p, x, y);
    const auto clients = p.all_clients();
    // Relative floor keeps log() finite once the error reaches round-off.
    const double floor = 1e-30 * exact.v_solution.squaredNorm();
    std::vector<double> mine;
    for (std::size_t t = 0; t < iters.size(); ++t) {
      IterSolverConfig cfg{.iterations = iters[t], .step_mode = StepMode::kSchedule};
      CommLedger ledger;
      const auto est = iterative_approx(p, x, y, cfg, clients, ledger);
      const double e = std::max((est.v_solution - exact.v_solution).squaredNorm(), floor);
      errs[t].push_back(e);
      mine.push_back(e);
    }
    seed_slopes.push_back(loglog_slope(std::vector<double>(iters.begin(), iters.end()), mine));
  }
  std::vector<double> med;
  for (const auto& e : errs) med.push_back(median(e));
  const double slope = loglog_slope(std::vector<double>(iters.begin(), iters.end()), med);
  r.seconds = seconds_since(t0);
  r.pass = slope <= -0.8 && r.seconds < 30.0;
  r.detail = fmt("slope of median |v^I - v*|^2 over I=16..256 is %.2f (need <= -0.8); median per-seed slope %.2f; "
                 "median error at I=256 %.2e",
                 slope, median(seed_slopes), med.back());
  r.data = {{"iterations", iters}, {"median_sq_error", med}, {"slope", slope}, {"per_seed_slopes", seed_slopes}};
  return r;
}

CheckResult check_noniterative_bound() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 3, .name = "non-iterative estimator bound"};
  const QuadraticBilevelProblem p(QuadraticConfig{.outer_dim = 20,
                                                  .inner_dim = 200,
                                                  .spectrum = QuadraticSpectrum::kLowRank,
                                                  .mu = 1.0,
                                                  .rank = 3,
                                                  .dominant = 100.0,
                                                  .seed = 401});
  const Vector x = gaussian_vector(p.outer_dim(), 402);
  const Vector y = p.inner_solution(x);
  const auto exact = exact_hypergradient(p, x, y);
  const double vnorm = exact.v_solution.norm();
  const auto clients = p.all_clients();
  const std::vector<std::pair<Index, Index>> settings = {{20, 60}, {40, 120}, {80, 240}};
  std::vector<double> medians;
  for (const auto& [r1, r2] : settings) {
    std::vector<double> errs;
    for (std::uint64_t s = 0; s < 40; ++s) {
      NonIterSolverConfig cfg{.rows1 = r1, .rows2 = r2, .seed1 = derive_seed(s, 1), .seed2 = derive_seed(s, 2),
                              .warn_on_deficiency = false};
      CommLedger ledger;
      const auto est = non_iterative_approx(p, x, y, cfg, clients, ledger);
      errs.push_back((est.value - exact.value).norm() / vnorm);
    }
    medians.push_back(median(errs));
  }
  const bool monotone = std::is_sorted(medians.rbegin(), medians.rend());
  r.seconds = seconds_since(t0);
  r.pass = monotone && medians.back() <= 0.5 && r.seconds < 60.0;
  r.detail = fmt("median |err|/|v*| at (20,60),(40,120),(80,240): %.3f, %.3f, %.3f (need non-increasing, last <= 0.5)",
                 medians[0], medians[1], medians[2]);
  r.data = {{"median_normalized_error", medians}};
  return r;
}

CheckResult check_sketch_statistics() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 4, .name = "sketch statistics"};

  // (a) approximate matrix multiplication of a sparse embedding.
  const Index n = 200;
  const double eps = 0.5;
  const double delta_amm = 0.4;
  const Index r_amm = 360;  // twice the 18 / (eps^2 delta) = 180 row bound
  const Matrix a = gaussian_matrix(n, 4, 501);
  const Matrix b = gaussian_matrix(n, 4, 502);
  const Matrix atb = a.transpose() * b;
  const double bound = eps * a.norm() * b.norm();
  int amm_fail = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const SparseEmbedding se = se_generate(r_amm, n, derive_seed(503, s));
    if ((se.apply(a).transpose() * se.apply(b) - atb).norm() > bound) ++amm_fail;
  }
  const double amm_freq = amm_fail / 200.0;

  // (b) heavy-hitter recovery: one coordinate holds a tau fraction of the squared mass.
  const Index d = 1024;
  const double tau = 0.01;
  const double delta_hh = 0.05;
  const auto hh_rows = static_cast<Index>(std::ceil(std::log(static_cast<double>(d) / delta_hh)));
  const auto hh_cols = static_cast<Index>(std::ceil(2.0 / tau));
  int hits = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Vector g = gaussian_vector(d, derive_seed(504, s));
    const auto heavy = static_cast<Index>(derive_seed(505, s) % static_cast<std::uint64_t>(d));
    g[heavy] = 0.0;
    g[heavy] = std::sqrt(tau / (1.0 - tau) * g.squaredNorm());
    const auto table = cs_sketch(g, hh_rows, hh_cols, derive_seed(506, s));
    const auto out = cs_decompress_topk(table, hh_cols);
    if (std::binary_search(out.indices().begin(), out.indices().end(), heavy)) ++hits;
  }
  const double hh_freq = hits / 200.0;

  r.seconds = seconds_since(t0);
  r.pass = amm_freq <= delta_amm && hh_freq >= 1.0 - delta_hh && r.seconds < 60.0;
  r.detail = fmt("AMM failure frequency %.3f at r=%ld, eps=0.5 (need <= 0.4); heavy-hitter recovery %.3f with a %ldx%ld "
                 "table, k=%ld (need >= 0.95)",
                 amm_freq, static_cast<long>(r_amm), hh_freq, static_cast<long>(hh_rows), static_cast<long>(hh_cols),
                 static_cast<long>(hh_cols));
  r.data = {{"amm_failure_frequency", amm_freq}, {"heavy_hitter_recovery", hh_freq},
            {"table_rows", hh_rows}, {"table_cols", hh_cols}};
  return r;
}

CheckResult check_error_feedback() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 5, .name = "error feedback necessity"};
  std::vector<double> with_ef, without_ef;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const QuadraticBilevelProblem p(QuadraticConfig{.outer_dim = 20, .inner_dim = 100, .seed = 600 + seed});
    const Vector x = gaussian_vector(p.outer_dim(), 700 + seed);
    const Vector y = p.inner_solution(x);
    const auto exact = exact_hypergradient(p, x, y);
    const auto clients = p.all_clients();
    for (const bool ef : {true, false}) {
      IterSolverConfig cfg{.iterations = 500,
                           .step_mode = StepMode::kSchedule,
                           .compressor = CompressorKind::kTopK,
                           .budget = p.inner_dim() / 20,
                           .error_feedback = ef};
      CommLedger ledger;
      double err = std::numeric_limits<double>::infinity();
      try {
        err = (iterative_approx(p, x, y, cfg, clients, ledger).v_solution - exact.v_solution).norm();
      } catch (const DivergenceError&) {
        // Counts as an unbounded error.
      }
      (ef ? with_ef : without_ef).push_back(err);
    }
  }
  const double m_ef = median(with_ef);
  const double m_no = median(without_ef);
  r.seconds = seconds_since(t0);
  r.pass = 2.0 * m_ef <= m_no;
  r.detail = fmt("median |v^I - v*| with error feedback %.3e, without %.3e, ratio %.1f (need >= 2)", m_ef, m_no, m_no / m_ef);
  r.data = {{"with_error_feedback", with_ef}, {"without_error_feedback", without_ef}};
  return r;
}

CheckResult check_ledger_exactness() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 6, .name = "communication ledger exactness"};
  std::vector<std::string> failures;
  auto expect = [&](const std::string& what, std::int64_t got, std::int64_t want) {
    if (got != want) failures.push_back(what + " = " + std::to_string(got) + ", expected " + std::to_string(want));
  };

  const Index l = 100, d = 2000, S = 10;
  const DiagonalQuadratic p(l, d, S, 801);
  const Vector x = gaussian_vector(l, 802);
  const Vector y = Vector::Zero(d);
  const auto clients = p.all_clients();

  // Non-iterative, r1 = 40, r2 = 120.
  {
    CommLedger ledger;
    const NonIterSolverConfig cfg{.rows1 = 40, .rows2 = 120, .warn_on_deficiency = false};
    non_iterative_approx(p, x, y, cfg, clients, ledger);
    for (Index c : clients) {
      const auto up = ledger.totals_where({}, -1, static_cast<int>(c)).uplink_scalars;
      expect("non-iterative uplink of client " + std::to_string(c), up, 40 * 120 + l * 40);
    }
    const auto report = ledger_report(ledger, d, S);
    expect("non-iterative estimator scalars per round", report.estimator_cumulative.scalars(), 88040);
    expect("full-Hessian baseline", report.full_hessian_baseline, 40000000);
    r.data["noniterative_estimator_scalars"] = report.estimator_cumulative.scalars();
    r.data["noniterative_vs_hessian"] = report.estimator_vs_hessian;
  }
  // Iterative, count sketch at 20x: table size m = d / 20 = 100 per client per iteration.
  {
    CommLedger ledger;
    const int iterations = 7;
    IterSolverConfig cfg{.iterations = iterations, .step = 0.5, .compressor = CompressorKind::kCountSketch,
                         .budget = d / 20, .sketch_seed = 803};
    iterative_approx(p, x, y, cfg, clients, ledger);
    std::int64_t records = 0;
    for (const auto& rec : ledger.records()) {
      if (rec.kind != payload::kHvpSketch) continue;
      ++records;
      expect("sketch uplink scalars", rec.scalars, 100);
    }
    expect("sketch uplink messages", records, iterations * S);
    expect("sketch uplink total", ledger.totals_where(payload::kHvpSketch).uplink_scalars, iterations * S * 100);
  }
  // Iterative without compression: I * S * d HVP uplink.
  {
    CommLedger ledger;
    const int iterations = 5;
    IterSolverConfig cfg{.iterations = iterations, .step = 0.5};
    iterative_approx(p, x, y, cfg, clients, ledger);
    expect("dense HVP uplink", ledger.totals_where(payload::kHvpDense).uplink_scalars, iterations * S * d);
  }
  r.seconds = seconds_since(t0);
  r.pass = failures.empty();
  if (r.pass) {
    r.detail = "non-iterative 4800 + 4000 per client and 88040 per round; sketch 100 per client per iteration; dense I*S*d";
  } else {
    for (const auto& f : failures) r.detail += f + "; ";
  }
  return r;
}

CheckResult check_noisy_label_recovery() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 7, .name = "end-to-end noisy-label recovery"};
  std::vector<double> f1s, gaps, fedbio_val, fedavg_val, test_gaps;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto preset = recovery_preset(seed);
    const WeightedERMProblem p(preset.data, preset.reg);
    const auto trace = comm_fedbio(p, preset.round);
    const auto baseline = fedavg(p, p.initial_outer(), preset.round);
    const auto ours = evaluate_noisy(p, trace.records.back());
    const auto theirs = evaluate_noisy(p, baseline.records.back());
    f1s.push_back(ours.f1);
    fedbio_val.push_back(ours.val_accuracy);
    fedavg_val.push_back(theirs.val_accuracy);
    gaps.push_back(ours.val_accuracy - theirs.val_accuracy);
    test_gaps.push_back(ours.test_accuracy - theirs.test_accuracy);
  }
  const double f1 = median(f1s);
  const double gap = median(gaps);
  r.seconds = seconds_since(t0);
  r.pass = f1 >= 0.8 && gap >= 0.05 && r.seconds < 600.0;
  r.detail = fmt("median F1 %.3f (need >= 0.8); median validation accuracy gain over FedAvg %.1f points (need >= 5); "
                 "held-out test gain %.1f points",
                 f1, 100.0 * gap, 100.0 * median(test_gaps));
  r.data = {{"f1", f1s}, {"fedbio_val_accuracy", fedbio_val}, {"fedavg_val_accuracy", fedavg_val},
            {"test_accuracy_gain", test_gaps}};
  return r;
}

CheckResult check_shapley_consistency() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 8, .name = "Shapley consistency"};
  const auto preset = shapley_preset();
  const Vector phi = exact_shapley(preset.data, preset.shapley);
  const WeightedERMProblem p(preset.data, preset.shapley.reg);
  const auto trace = comm_fedbio(p, preset.round);
  const Vector lambda = trace.records.back().x;
  const double rho = spearman(phi, lambda);
  // Tie-conservative: all flipped samples lie among the four lowest weights even if ties are broken against them.
  double worst_flipped = -1.0;
  for (Index j = 0; j < lambda.size(); ++j)
    if (preset.data.flipped[static_cast<std::size_t>(j)]) worst_flipped = std::max(worst_flipped, lambda[j]);
  Index at_or_below = 0;
  for (Index j = 0; j < lambda.size(); ++j) at_or_below += lambda[j] <= worst_flipped;
  r.seconds = seconds_since(t0);
  r.pass = rho > 0.5 && at_or_below <= 4 && preset.data.flip_count() == 3 && r.seconds < 300.0;
  std::vector<double> lam(lambda.data(), lambda.data() + lambda.size());
  std::vector<double> ph(phi.data(), phi.data() + phi.size());
  r.detail = fmt("Spearman(phi, lambda) = %.3f (need > 0.5); %ld samples have weight <= the largest flipped weight "
                 "(need <= 4)",
                 rho, static_cast<long>(at_or_below));
  r.data = {{"spearman", rho}, {"lambda", lam}, {"shapley", ph}, {"flipped", preset.data.flipped}};
  return r;
}

CheckResult check_compression_trend() {
  const auto t0 = Clock::now();
  CheckResult r{.criterion = 9, .name = "compression-rate trend"};
  const std::vector<double> rates = {1, 20, 100, 1000};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  nlohmann::json table = nlohmann::json::object();
  std::map<std::string, std::map<double, std::vector<double>>> f1;
  for (const auto seed : seeds) {
    const auto base = rate_sweep_preset(seed);
    const WeightedERMProblem p(base.data, base.reg);
    for (const auto kind : {CompressorKind::kTopK, CompressorKind::kCountSketch}) {
      const std::string name = kind == CompressorKind::kTopK ? "iter_topk" : "iter_sketch";
      for (const double rate : rates) {
        if (rate == 1 && kind == CompressorKind::kCountSketch) continue;  // shared uncompressed run
        RoundConfig cfg = base.round;
        auto iter = std::get<IterSolverConfig>(cfg.estimator);
        iter.compressor = rate == 1 ? CompressorKind::kNone : kind;
        iter.budget = rate == 1 ? 0 : static_cast<Index>(static_cast<double>(p.inner_dim()) / rate);
        cfg.estimator = iter;
        const double score = evaluate_noisy(p, comm_fedbio(p, cfg).records.back()).f1;
        f1[name][rate].push_back(score);
        if (rate == 1) f1["iter_sketch"][rate].push_back(score);
      }
    }
    const auto small = noniterative_sweep_preset(seed);
    const WeightedERMProblem q(small.data, small.reg);
    for (const double rate : {10.0, 100.0, 1000.0}) {
      RoundConfig cfg = small.round;
      auto non_iter = std::get<NonIterSolverConfig>(cfg.estimator);
      const auto rows = static_cast<Index>(std::ceil(static_cast<double>(q.inner_dim()) / std::sqrt(rate)));
      non_iter.rows1 = rows;
      non_iter.rows2 = rows;
      cfg.estimator = non_iter;
      f1["non_iter"][rate].push_back(evaluate_noisy(q, comm_fedbio(q, cfg).records.back()).f1);
    }
  }
  std::map<std::string, std::map<double, double>> med;
  for (const auto& [name, by_rate] : f1) {
    for (const auto& [rate, scores] : by_rate) {
      med[name][rate] = median(scores);
      table[name][fmt("%g", rate)] = {{"median_f1", med[name][rate]}, {"f1", scores}};
    }
  }
  const bool topk_drop = med["iter_topk"][1000] < med["iter_topk"][20];
  const bool sketch_drop = med["iter_sketch"][1000] < med["iter_sketch"][20];
  const bool non_iter_flat = std::abs(med["non_iter"][100] - med["non_iter"][10]) <= 0.1;
  r.seconds = seconds_since(t0);
  r.pass = topk_drop && sketch_drop && non_iter_flat;
  r.detail = fmt("median F1 iter-topk 1x/20x/100x/1000x = %.3f/%.3f/%.3f/%.3f, iter-sketch = %.3f/%.3f/%.3f/%.3f "
                 "(need 1000x < 20x); non-iter 10x/100x/1000x = %.3f/%.3f/%.3f (need |100x - 10x| <= 0.1)",
                 med["iter_topk"][1], med["iter_topk"][20], med["iter_topk"][100], med["iter_topk"][1000],
                 med["iter_sketch"][1], med["iter_sketch"][20], med["iter_sketch"][100], med["iter_sketch"][1000],
                 med["non_iter"][10], med["non_iter"][100], med["non_iter"][1000]);
  r.data = table;
  return r;
}

CheckResult check_estimator_oracle_agreement() {
  const auto t0 = Clock::now();
  CheckResult r{.name = "estimator oracle agreement"};
  const QuadraticBilevelProblem p(QuadraticConfig{.outer_dim = 20, .inner_dim = 100, .seed = 901});
  const Vector x = gaussian_vector(p.outer_dim(), 902);
  const Vector y = p.inner_solution(x);
  const auto exact = exact_hypergradient(p, x, y);
  const auto clients = p.all_clients();
  CommLedger ledger;
  const double step = 1.0 / 3.0;  // 1 / L with L = 3
  const auto iter = iterative_approx(p, x, y, IterSolverConfig{.iterations = 1000, .step = step}, clients, ledger);
  const auto ident = non_iterative_approx(
      p, x, y, NonIterSolverConfig{.rows1 = 100, .rows2 = 100, .identity_sketch = true}, clients, ledger);
  const double e_iter = rel_error(iter.value, exact.value);
  const double e_ident = rel_error(ident.value, exact.value);
  const double stationarity = quadratic_grad(p, x, y, exact.v_solution, clients).norm();
  r.seconds = seconds_since(t0);
  r.pass = e_iter <= 1e-8 && e_ident <= 1e-8 && stationarity <= 1e-9;
  r.detail = fmt("iterative I=1000 rel err %.1e, identity-sketch non-iterative %.1e (tol 1e-8); |grad q(v*)| = %.1e",
                 e_iter, e_ident, stationarity);
  return r;
}

CheckResult check_subspace_embedding() {
  const auto t0 = Clock::now();
  CheckResult r{.name = "subspace embedding"};
  const Index n = 200, cols = 5;
  const double eps = 0.5, delta = 0.4;
  // (eps / l, delta) sketch size from the sparse-embedding row bound.
  const auto rows = static_cast<Index>(std::ceil(18.0 / ((eps / cols) * (eps / cols) * delta)));
  const Matrix a = gaussian_matrix(n, cols, 1001);
  const Matrix probes = gaussian_matrix(cols, 100, 1002);
  const Matrix ax = a * probes;
  int failures = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Matrix sax = se_generate(rows, n, derive_seed(1003, s)).apply(ax);
    for (Index t = 0; t < probes.cols(); ++t) {
      const double ratio = sax.col(t).squaredNorm() / ax.col(t).squaredNorm();
      if (ratio < 1.0 - eps || ratio > 1.0 + eps) {
        ++failures;
        break;
      }
    }
  }
  const double freq = failures / 200.0;
  r.seconds = seconds_since(t0);
  r.pass = freq <= delta;
  r.detail = fmt("failure frequency %.3f with r=%ld rows (need <= %.1f)", freq, static_cast<long>(rows), delta);
  return r;
}

SuiteReport run_suite(const std::string& suite, const std::vector<CheckFn>& checks,
                      const std::function<void(const CheckResult&)>& on_result) {
  SuiteReport report{.suite = suite};
  for (const auto& check : checks) {
    const auto t0 = Clock::now();
    CheckResult result;
    try {
      result = check();
    } catch (const std::exception& e) {
      result.name = "check raised an exception";
      result.pass = false;
      result.detail = e.what();
    }
    result.seconds = seconds_since(t0);
    if (on_result) on_result(result);
    report.checks.push_back(std::move(result));
  }
  return report;
}

std::vector<std::string> suite_names() { return {"estimators", "sketches", "shapley", "experiments", "all"}; }

std::vector<CheckFn> suite_checks(const std::string& suite) {
  if (suite == "estimators") {
    return {check_oracle_correctness, check_iterative_rate, check_noniterative_bound, check_error_feedback,
            check_ledger_exactness, check_estimator_oracle_agreement};
  }
  if (suite == "sketches") return {check_sketch_statistics, check_subspace_embedding};
  if (suite == "shapley") return {check_shapley_consistency};
  if (suite == "experiments") return {check_noisy_label_recovery, check_compression_trend};
  if (suite == "all") {
    return {check_oracle_correctness,    check_iterative_rate,        check_noniterative_bound,
            check_sketch_statistics,     check_error_feedback,        check_ledger_exactness,
            check_noisy_label_recovery,  check_shapley_consistency,   check_compression_trend};
  }
  throw ConfigError("unknown validation suite '" + suite + "'");
}

}  // namespace fedbio
