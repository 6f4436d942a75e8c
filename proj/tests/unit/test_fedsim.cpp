#include <doctest.h>

#include <cmath>
#include <random>

#include "fedbio/bilevel/quadratic.hpp"
#include "fedbio/fedsim/federation.hpp"
#include "test_problems.hpp"

using namespace fedbio;
using fedbio::testing::ScaledIdentityProblem;

namespace {

Matrix randn(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  return m;
}

QuadraticConfig small_quadratic() {
  QuadraticConfig q;
  q.outer_dim = 6;
  q.inner_dim = 12;
  q.clients = 4;
  q.samples = {50, 100, 150, 200};
  q.outer_reg = 0.5;
  q.seed = 31;
  return q;
}

}  // namespace

TEST_CASE("local_sgd on a half squared norm halves the iterate every step") {
  const ScaledIdentityProblem p({1.0}, Matrix::Zero(3, 1), Vector::Zero(3));
  const Vector x = Vector::Zero(1);
  const Vector y0 = Vector::Ones(3);
  for (int t : {1, 2, 5}) {
    const Vector y = local_sgd(p, 0, x, y0, t, 0.5);
    CHECK((y - std::pow(0.5, t) * y0).norm() < 1e-15);
  }
  CHECK_THROWS_AS(local_sgd(p, 0, x, y0, 0, 0.5), ContractViolation);
}

TEST_CASE("local_sgd with one step is a single gradient step") {
  const QuadraticBilevelProblem p(small_quadratic());
  const Vector x = randn(6, 1, 1).col(0), y = randn(12, 1, 2).col(0);
  const Vector expect = y - 0.2 * p.client_inner_grad(2, x, y);
  CHECK((local_sgd(p, 2, x, y, 1, 0.2) - expect).norm() < 1e-14);
}

TEST_CASE("local_sgd contracts toward the client minimizer") {
  const QuadraticBilevelProblem p(small_quadratic());
  const Vector x = randn(6, 1, 3).col(0);
  const Index c = 1;
  const Matrix& a = p.client_hessian(c);
  // minimizer of g_c: A_c y = A_c y0 - grad g_c(y0) at y0 = 0
  const Vector y_star = a.ldlt().solve(-p.client_inner_grad(c, x, Vector::Zero(12)));
  const Vector y0 = randn(12, 1, 4).col(0);
  const double lr = 0.3, mu = 1.0;
  const int steps = 7;
  const Vector y = local_sgd(p, c, x, y0, steps, lr);
  CHECK((y - y_star).norm() <= std::pow(1.0 - lr * mu, steps) * (y0 - y_star).norm() + 1e-12);
}

TEST_CASE("aggregate_inner weighted averages") {
  const Vector server = Vector::Constant(3, 2.0);
  const Vector a = randn(3, 1, 5).col(0), b = randn(3, 1, 6).col(0);
  {
    const std::vector<Vector> same = {a, a, a};
    const std::vector<double> w = {1, 5, 2};
    CHECK((aggregate_inner(server, same, w) - a).norm() < 1e-14);
  }
  {
    const std::vector<Vector> one = {b};
    const std::vector<double> w = {7};
    CHECK((aggregate_inner(server, one, w) - b).norm() < 1e-14);
  }
  {
    const std::vector<Vector> two = {a, b};
    const std::vector<double> w = {3, 3};
    CHECK((aggregate_inner(server, two, w) - 0.5 * (a + b)).norm() < 1e-14);
    const std::vector<double> skew = {1, 3};
    CHECK((aggregate_inner(server, two, skew) - (0.25 * a + 0.75 * b)).norm() < 1e-14);
  }
  const std::vector<Vector> two = {a, b};
  const std::vector<double> short_w = {1};
  CHECK_THROWS_AS(aggregate_inner(server, two, short_w), ContractViolation);
}

TEST_CASE("round config validation") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  cfg.clients_per_round = 2;
  CHECK_NOTHROW(validate(cfg, p));
  auto bad = cfg;
  bad.local_steps = 0;
  CHECK_THROWS_AS(validate(bad, p), ConfigError);
  bad = cfg;
  bad.clients_per_round = 5;
  CHECK_THROWS_AS(validate(bad, p), ConfigError);
  bad = cfg;
  bad.clients_per_round = 0;
  CHECK_THROWS_AS(validate(bad, p), ConfigError);
  bad = cfg;
  bad.inner_lr = 0.0;
  CHECK_THROWS_AS(validate(bad, p), ConfigError);
  bad = cfg;
  bad.outer_lr = -1.0;
  CHECK_THROWS_AS(validate(bad, p), ConfigError);
  bad = cfg;
  bad.x0 = Vector::Zero(5);
  CHECK_THROWS_AS(validate(bad, p), ConfigError);
  bad = cfg;
  bad.rounds = -1;
  CHECK_THROWS_AS(comm_fedbio(p, bad), ConfigError);
}

TEST_CASE("one exact round matches a hand-rolled reference step") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  cfg.rounds = 1;
  cfg.local_steps = 4;
  cfg.inner_lr = 0.2;
  cfg.outer_lr = 0.3;
  cfg.clients_per_round = 4;
  cfg.x0 = randn(6, 1, 7).col(0);
  cfg.y0 = randn(12, 1, 8).col(0);
  const auto trace = comm_fedbio(p, cfg);
  REQUIRE(trace.records.size() == 2);

  const Vector& x0 = *cfg.x0;
  const Vector& y0 = *cfg.y0;
  Vector y1 = Vector::Zero(12);
  double total = 0.0;
  for (Index c = 0; c < 4; ++c) {
    Vector y = y0;
    for (int t = 0; t < cfg.local_steps; ++t) y -= cfg.inner_lr * p.client_inner_grad(c, x0, y);
    y1 += static_cast<double>(p.client_samples(c)) * y;
    total += static_cast<double>(p.client_samples(c));
  }
  y1 /= total;
  const Vector grad = 0.5 * x0 + p.aggregate_cross().transpose() *
                                     p.aggregate_hessian().ldlt().solve(y1 - p.target());
  const Vector x1 = x0 - cfg.outer_lr * grad;
  CHECK((trace.records[1].y - y1).norm() < 1e-12);
  CHECK((trace.records[1].x - x1).norm() < 1e-12);
  CHECK(trace.completed_rounds == 1);
}

TEST_CASE("zero outer learning rate keeps x fixed") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  cfg.rounds = 5;
  cfg.outer_lr = 0.0;
  cfg.clients_per_round = 2;
  cfg.x0 = randn(6, 1, 9).col(0);
  const auto trace = comm_fedbio(p, cfg);
  for (const auto& r : trace.records) CHECK(r.x == *cfg.x0);
  CHECK(trace.records.size() == 6);
}

TEST_CASE("full participation with the exact estimator drives the hypergradient to zero") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  // one local step with all clients is exact descent on G, so there is no client drift
  cfg.rounds = 200;
  cfg.local_steps = 1;
  cfg.inner_lr = 0.3;
  cfg.outer_lr = 1.0 / p.hypergradient_lipschitz();
  cfg.clients_per_round = 4;
  cfg.grad_norm_diagnostic = true;
  const auto trace = comm_fedbio(p, cfg);
  const Vector& x = trace.records.back().x;
  CHECK(p.closed_form_hypergradient(x).squaredNorm() < 1e-6);
  CHECK(trace.records.back().grad_norm_sq < 1e-6);
  CHECK((x - p.outer_minimizer()).norm() < 1e-3);
}

TEST_CASE("fedavg with one client and one local step is centralized gradient descent") {
  const Matrix b = randn(5, 2, 10);
  const ScaledIdentityProblem p({1.5}, b, Vector::Zero(5));
  const Vector x = randn(2, 1, 11).col(0);
  RoundConfig cfg;
  cfg.rounds = 12;
  cfg.local_steps = 1;
  cfg.inner_lr = 0.4;
  cfg.clients_per_round = 1;
  const auto trace = fedavg(p, x, cfg);
  Vector y = Vector::Zero(5);
  for (int k = 1; k <= cfg.rounds; ++k) {
    y -= cfg.inner_lr * (1.5 * y - b * x);
    CHECK((trace.records[static_cast<std::size_t>(k)].y - y).norm() < 1e-13);
  }
}

TEST_CASE("fedavg over identical shards matches centralized descent") {
  const Matrix b = randn(4, 3, 12);
  const ScaledIdentityProblem p({2.0, 2.0, 2.0}, b, Vector::Zero(4));
  const Vector x = randn(3, 1, 13).col(0);
  RoundConfig cfg;
  cfg.rounds = 6;
  cfg.local_steps = 3;
  cfg.inner_lr = 0.2;
  cfg.clients_per_round = 2;
  const auto trace = fedavg(p, x, cfg);
  Vector y = Vector::Zero(4);
  for (int step = 0; step < cfg.rounds * cfg.local_steps; ++step) y -= cfg.inner_lr * (2.0 * y - b * x);
  CHECK((trace.records.back().y - y).norm() < 1e-13);
  for (const auto& r : trace.records) CHECK(r.x == x);
  // FedAvg traffic is d down and d up per client per round
  CHECK(trace.ledger.totals().scalars() == cfg.rounds * 2 * 2 * 4);
}

TEST_CASE("non-iterative ledger: 4800 + 4000 per client and 88040 per round") {
  set_warning_handler([](const std::string&) {});
  const Index l = 100, d = 2000, clients = 10;
  const ScaledIdentityProblem p(std::vector<double>(clients, 1.0), randn(d, l, 14), Vector::Ones(d));
  RoundConfig cfg;
  cfg.rounds = 1;
  cfg.local_steps = 1;
  cfg.inner_lr = 0.5;
  cfg.clients_per_round = clients;
  cfg.estimator = NonIterSolverConfig{.rows1 = 40, .rows2 = 120};
  const auto trace = comm_fedbio(p, cfg);
  for (int c = 0; c < clients; ++c) {
    CHECK(trace.ledger.totals_where(payload::kSketchedHessian, -1, c).uplink_scalars == 4800);
    CHECK(trace.ledger.totals_where(payload::kSketchedCross, -1, c).uplink_scalars == 4000);
  }
  const auto report = ledger_report(trace.ledger, d, clients);
  CHECK(report.estimator_cumulative.scalars() == 88040);
  CHECK(report.full_hessian_baseline == 40000000);
  CHECK(report.estimator_vs_hessian == doctest::Approx(88040.0 / 4e7));
  CHECK(report.fedavg_baseline == 2 * clients * d);
  set_warning_handler(nullptr);
}

TEST_CASE("iterative ledger scalars per iteration") {
  const Index l = 10, d = 2000;
  const ScaledIdentityProblem p({1.0, 1.5, 2.0}, randn(d, l, 15), randn(d, 1, 16).col(0));
  RoundConfig cfg;
  cfg.rounds = 2;
  cfg.local_steps = 1;
  cfg.inner_lr = 0.3;
  cfg.outer_lr = 0.01;
  cfg.clients_per_round = 2;
  const int iterations = 6;

  SUBCASE("dense") {
    cfg.estimator = IterSolverConfig{.iterations = iterations, .step = 0.3};
    const auto trace = comm_fedbio(p, cfg);
    CHECK(trace.ledger.totals_where(payload::kHvpDense).uplink_scalars ==
          cfg.rounds * iterations * cfg.clients_per_round * d);
  }
  SUBCASE("count sketch at 20x") {
    cfg.estimator = IterSolverConfig{.iterations = iterations, .step = 0.3, .compressor = CompressorKind::kCountSketch,
                                     .budget = d / 20, .sketch_seed = 3};
    const auto trace = comm_fedbio(p, cfg);
    int records = 0;
    for (const auto& r : trace.ledger.records()) {
      if (r.kind != payload::kHvpSketch) continue;
      ++records;
      CHECK(r.scalars == 100);
    }
    CHECK(records == cfg.rounds * iterations * cfg.clients_per_round);
  }
  SUBCASE("top-k") {
    cfg.estimator = IterSolverConfig{.iterations = iterations, .step = 0.3, .compressor = CompressorKind::kTopK,
                                     .budget = 25};
    const auto trace = comm_fedbio(p, cfg);
    int records = 0;
    for (const auto& r : trace.ledger.records()) {
      if (r.kind != payload::kHvpTopK) continue;
      ++records;
      CHECK(r.scalars <= 25);
    }
    CHECK(records == cfg.rounds * iterations * cfg.clients_per_round);
  }
  // training traffic: (l + d) down and d up per sampled client per round
  const auto trace = comm_fedbio(p, cfg);
  CHECK(trace.ledger.totals_where(payload::kModelBroadcast).downlink_scalars ==
        cfg.rounds * cfg.clients_per_round * (l + d));
  CHECK(trace.ledger.totals_where(payload::kInnerUpdate).uplink_scalars == cfg.rounds * cfg.clients_per_round * d);
  CHECK(trace.records.back().ledger.scalars() == trace.ledger.totals().scalars());
}

TEST_CASE("sample_clients is sorted, distinct and deterministic") {
  const auto a = sample_clients(20, 7, 99);
  CHECK(a.size() == 7);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(a.front() >= 0);
  CHECK(a.back() < 20);
  CHECK(sample_clients(20, 7, 99) == a);
  const auto all = sample_clients(5, 5, 1);
  CHECK(all == std::vector<Index>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(sample_clients(5, 6, 1), ContractViolation);
}

TEST_CASE("parallel client execution matches serial") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  cfg.rounds = 8;
  cfg.local_steps = 3;
  cfg.inner_lr = 0.2;
  cfg.outer_lr = 0.2;
  cfg.clients_per_round = 3;
  cfg.seed = 5;
  cfg.estimator = IterSolverConfig{.iterations = 10, .step = 0.3, .compressor = CompressorKind::kTopK, .budget = 4};
  const auto serial = comm_fedbio(p, cfg);
  cfg.parallel = true;
  const auto parallel = comm_fedbio(p, cfg);
  REQUIRE(serial.records.size() == parallel.records.size());
  for (std::size_t k = 0; k < serial.records.size(); ++k) {
    CHECK(serial.records[k].x == parallel.records[k].x);
    CHECK(serial.records[k].y == parallel.records[k].y);
  }
  CHECK(serial.ledger.totals().bytes() == parallel.ledger.totals().bytes());
}

TEST_CASE("divergence surfaces as a round error with a partial trace") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  cfg.rounds = 5;
  cfg.clients_per_round = 4;
  cfg.inner_lr = 0.2;
  cfg.estimator = IterSolverConfig{.iterations = 200, .step = 2.0};
  TrainTrace partial;
  bool caught = false;
  try {
    comm_fedbio(p, cfg, {}, &partial);
  } catch (const RoundError& e) {
    caught = true;
    CHECK(e.divergence());
    CHECK(e.round() == 0);
  }
  CHECK(caught);
  CHECK(partial.records.size() == 1);
  CHECK(partial.completed_rounds == 0);
}

TEST_CASE("observer sees every record and the trace has K + 1 records") {
  const QuadraticBilevelProblem p(small_quadratic());
  RoundConfig cfg;
  cfg.rounds = 4;
  cfg.clients_per_round = 2;
  std::vector<int> seen;
  const auto trace = comm_fedbio(p, cfg, [&](TraceRecord& r) {
    seen.push_back(r.round);
    r.metrics["tag"] = 1.0;
  });
  CHECK(seen == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(trace.records.size() == 5);
  CHECK(trace.records[3].metrics.at("tag") == 1.0);
}
