#include <doctest.h>

#include <cmath>
#include <random>

#include "fedbio/bilevel/estimators.hpp"
#include "fedbio/bilevel/quadratic.hpp"
#include "test_problems.hpp"

using namespace fedbio;
using fedbio::testing::ScaledIdentityProblem;

namespace {

Vector randn(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = n01(rng);
  return v;
}

Matrix randn(Index r, Index c, std::uint64_t seed) {
  Matrix m(r, c);
  m = Eigen::Map<Matrix>(randn(r * c, seed).data(), r, c);
  return m;
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

// Independent dense computation: rho x + B^T A^{-1} (A^{-1}(B x + c) - y0).
Vector reference_hypergradient(const QuadraticBilevelProblem& p, const Vector& x) {
  const Eigen::PartialPivLU<Matrix> lu(p.aggregate_hessian());
  const Vector y = lu.solve(p.aggregate_cross() * x + p.aggregate_shift());
  return p.config().outer_reg * x + p.aggregate_cross().transpose() * lu.solve(Vector(y - p.target()));
}

}  // namespace

TEST_CASE("quadratic: exact hypergradient matches an independent dense solve") {
  for (const auto spectrum : {QuadraticSpectrum::kUniform, QuadraticSpectrum::kLowRank}) {
    const QuadraticBilevelProblem p(QuadraticConfig{.spectrum = spectrum, .outer_reg = 0.3, .seed = 5});
    const Vector x = randn(p.outer_dim(), 6);
    const Vector y = p.inner_solution(x);
    const auto est = exact_hypergradient(p, x, y);
    CHECK(rel(est.value, reference_hypergradient(p, x)) < 1e-10);
    CHECK(rel(p.closed_form_hypergradient(x), reference_hypergradient(p, x)) < 1e-10);
    // value = grad_x F - grad^2_xy G v, recomputed from its parts
    const auto clients = p.all_clients();
    const Vector parts = p.outer_grad_x(x, y) - inner_hvp_xy(p, x, y, est.v_solution, clients);
    CHECK(rel(est.value, parts) < 1e-12);
  }
}

TEST_CASE("quadratic: exact hypergradient matches central differences of h") {
  const QuadraticBilevelProblem p(QuadraticConfig{.outer_dim = 5, .inner_dim = 30, .seed = 9});
  const Vector x = randn(5, 10);
  const Vector g = exact_hypergradient(p, x, p.inner_solution(x)).value;
  const double h = 1e-4;
  Vector fd(5);
  for (Index j = 0; j < 5; ++j) {
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    fd[j] = (outer_objective(p, xp, Vector::Zero(30)) - outer_objective(p, xm, Vector::Zero(30))) / (2 * h);
  }
  CHECK(rel(g, fd) < 1e-4);
}

TEST_CASE("quadratic: Hessian-vector products are symmetric, strongly convex and match differences") {
  const QuadraticBilevelProblem p(QuadraticConfig{.inner_dim = 40, .seed = 2});
  const Vector x = randn(p.outer_dim(), 3), y = randn(40, 4);
  for (Index c = 0; c < p.num_clients(); ++c) {
    const Vector u = randn(40, 10 + c), v = randn(40, 20 + c);
    CHECK(u.dot(p.client_hvp_yy(c, x, y, v)) == doctest::Approx(v.dot(p.client_hvp_yy(c, x, y, u))).epsilon(1e-12));
    CHECK(v.dot(p.client_hvp_yy(c, x, y, v)) >= p.strong_convexity() * v.squaredNorm() * (1 - 1e-12));
    const double h = 1e-5;
    const Vector fd = (p.client_inner_grad(c, x, y + h * v) - p.client_inner_grad(c, x, y - h * v)) / (2 * h);
    CHECK(rel(fd, p.client_hvp_yy(c, x, y, v)) < 1e-8);
  }
}

TEST_CASE("outer objective independent of y gives v* = 0") {
  const ScaledIdentityProblem p({2.0, 3.0}, randn(6, 3, 1), Vector::Zero(6), 0.5);
  const Vector x = randn(3, 2), y = randn(6, 3);
  const auto exact = exact_hypergradient(p, x, y);
  CHECK(exact.v_solution.norm() == 0.0);
  CHECK(exact.value == p.outer_grad_x(x, y));
  CommLedger ledger;
  const auto clients = p.all_clients();
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto ni = non_iterative_approx(p, x, y, NonIterSolverConfig{.rows1 = 3, .rows2 = 4, .seed1 = seed, .seed2 = seed + 9},
                                         clients, ledger);
    CHECK(ni.value == p.outer_grad_x(x, y));
  }
}

TEST_CASE("quadratic_grad") {
  const Vector b = randn(5, 1);
  const ScaledIdentityProblem id({1.0}, randn(5, 2, 2), b);
  const Vector x = randn(2, 3), y = randn(5, 4), v = randn(5, 5);
  const std::vector<Index> one = {0};
  CHECK((quadratic_grad(id, x, y, v, one) - (v - b)).norm() < 1e-14);

  const QuadraticBilevelProblem p(QuadraticConfig{.inner_dim = 30, .seed = 8});
  const Vector xq = randn(p.outer_dim(), 9);
  const Vector yq = p.inner_solution(xq);
  const auto all = p.all_clients();
  const Vector vstar = exact_hypergradient(p, xq, yq).v_solution;
  CHECK(quadratic_grad(p, xq, yq, vstar, all).norm() < 1e-10);

  // single client, v = e_1: column 1 of that client's Hessian minus grad_y F, Hessian column by differences
  Vector e1 = Vector::Zero(30);
  e1[1] = 1.0;
  const std::vector<Index> client = {2};
  const double h = 1e-5;
  const Vector column = (p.client_inner_grad(2, xq, yq + h * e1) - p.client_inner_grad(2, xq, yq - h * e1)) / (2 * h);
  CHECK(rel(quadratic_grad(p, xq, yq, e1, client), Vector(column - p.outer_grad_y(xq, yq))) < 1e-8);
}

TEST_CASE("schedule constants") {
  CHECK(default_shift(0.05) == doctest::Approx(79.49683531626299).epsilon(1e-14));
  CHECK(default_shift(1.0) == doctest::Approx(3.414213562373095).epsilon(1e-14));
  CHECK(default_shift(0.2) == doctest::Approx(19.486832980505138).epsilon(1e-14));
  const IterSolverConfig topk{.compressor = CompressorKind::kTopK, .budget = 5};
  CHECK(compression_tau(topk, 100) == doctest::Approx(0.05));
  CHECK(compression_tau(IterSolverConfig{}, 100) == 1.0);
  const IterSolverConfig sched{.step_mode = StepMode::kSchedule};
  CHECK(iteration_step(sched, 7, 2.0, 10.0) == doctest::Approx(8.0 / (2.0 * 17.0)));
  CHECK(iteration_step(IterSolverConfig{.step = 0.25}, 7, 2.0, 10.0) == 0.25);
}

TEST_CASE("iterative: identity Hessian with unit step converges in one iteration") {
  const Vector b = randn(8, 3);
  const ScaledIdentityProblem p({1.0, 1.0}, randn(8, 3, 4), b);
  CommLedger ledger;
  const auto est = iterative_approx(p, randn(3, 5), randn(8, 6), IterSolverConfig{.iterations = 1, .step = 1.0},
                                    p.all_clients(), ledger);
  CHECK((est.v_solution - b).norm() == 0.0);
}

TEST_CASE("iterative: schedule error decreases with I") {
  // kappa = 30 and a = 8 L / mu, so the first step is 1 / L and the error is far from round-off at I = 128
  const QuadraticBilevelProblem p(QuadraticConfig{.mu = 0.1, .smooth = 3.0, .seed = 14});
  const Vector x = randn(p.outer_dim(), 15);
  const Vector y = p.inner_solution(x);
  const Vector vstar = exact_hypergradient(p, x, y).v_solution;
  auto err = [&](int iters) {
    CommLedger ledger;
    const auto e = iterative_approx(p, x, y, IterSolverConfig{.iterations = iters, .step_mode = StepMode::kSchedule, .shift = 240.0},
                                    p.all_clients(), ledger);
    return (e.v_solution - vstar).squaredNorm();
  };
  const double e64 = err(64), e128 = err(128);
  CHECK(e128 * 1.5 <= e64);
}

TEST_CASE("iterative: uncompressed agrees with the oracle at I = 1000") {
  const QuadraticBilevelProblem p(QuadraticConfig{.inner_dim = 200, .seed = 21});
  const Vector x = randn(p.outer_dim(), 22);
  const Vector y = p.inner_solution(x);
  const auto exact = exact_hypergradient(p, x, y);
  CommLedger ledger;
  const auto est = iterative_approx(p, x, y, IterSolverConfig{.iterations = 1000, .step = 1.0 / 3.0}, p.all_clients(), ledger);
  CHECK(rel(est.value, exact.value) < 1e-8);
}

TEST_CASE("iterative: weighted averaging and warm start") {
  const QuadraticBilevelProblem p(QuadraticConfig{.seed = 31});
  const Vector x = randn(p.outer_dim(), 32);
  const Vector y = p.inner_solution(x);
  const auto exact = exact_hypergradient(p, x, y);
  CommLedger ledger;
  const auto avg = iterative_approx(p, x, y,
                                    IterSolverConfig{.iterations = 300, .step_mode = StepMode::kSchedule,
                                                     .averaging = Averaging::kWeighted},
                                    p.all_clients(), ledger);
  CHECK(rel(avg.v_solution, exact.v_solution) < 0.05);
  const auto warm = iterative_approx(p, x, y, IterSolverConfig{.iterations = 1, .step = 0.1, .v0 = exact.v_solution},
                                     p.all_clients(), ledger);
  CHECK(rel(warm.v_solution, exact.v_solution) < 1e-10);
}

TEST_CASE("iterative: top-k error feedback beats no feedback") {
  const QuadraticBilevelProblem p(QuadraticConfig{.seed = 41});
  const Vector x = randn(p.outer_dim(), 42);
  const Vector y = p.inner_solution(x);
  const Vector vstar = exact_hypergradient(p, x, y).v_solution;
  auto err = [&](bool ef) {
    CommLedger ledger;
    const IterSolverConfig cfg{.iterations = 500, .step_mode = StepMode::kSchedule, .compressor = CompressorKind::kTopK,
                               .budget = 5, .error_feedback = ef};
    return (iterative_approx(p, x, y, cfg, p.all_clients(), ledger).v_solution - vstar).norm();
  };
  CHECK(2.0 * err(true) <= err(false));
}

TEST_CASE("iterative: divergence guard") {
  const ScaledIdentityProblem p({1.0}, randn(4, 2, 1), randn(4, 2));
  CommLedger ledger;
  CHECK_THROWS_AS(iterative_approx(p, randn(2, 3), randn(4, 4), IterSolverConfig{.iterations = 200, .step = 5.0},
                                   p.all_clients(), ledger),
                  DivergenceError);
}

TEST_CASE("iterative: invalid configurations") {
  const ScaledIdentityProblem p({1.0}, randn(4, 2, 1), randn(4, 2));
  CommLedger ledger;
  const auto c = p.all_clients();
  CHECK_THROWS_AS(iterative_approx(p, randn(2, 3), randn(4, 4), IterSolverConfig{.step = 0.0}, c, ledger), ConfigError);
  CHECK_THROWS_AS(iterative_approx(p, randn(2, 3), randn(4, 4),
                                   IterSolverConfig{.compressor = CompressorKind::kTopK, .budget = 9}, c, ledger),
                  ConfigError);
  CHECK_THROWS_AS(iterative_approx(p, randn(3, 3), randn(4, 4), IterSolverConfig{}, c, ledger), ContractViolation);
}

TEST_CASE("non-iterative: identity sketch recovers the exact hypergradient") {
  const QuadraticBilevelProblem p(QuadraticConfig{.inner_dim = 60, .seed = 51});
  const Vector x = randn(p.outer_dim(), 52);
  const Vector y = p.inner_solution(x);
  const auto exact = exact_hypergradient(p, x, y);
  CommLedger ledger;
  const auto est = non_iterative_approx(p, x, y, NonIterSolverConfig{.rows1 = 60, .rows2 = 60, .identity_sketch = true},
                                        p.all_clients(), ledger);
  CHECK(rel(est.value, exact.value) < 1e-9);
  CHECK(est.rank == 60);
  CHECK_FALSE(est.conditioning_warning);
}

TEST_CASE("non-iterative: stable-rank-3 error bound and monotone median") {
  const QuadraticBilevelProblem p(QuadraticConfig{.inner_dim = 200, .spectrum = QuadraticSpectrum::kLowRank, .seed = 61});
  const Vector x = randn(p.outer_dim(), 62);
  const Vector y = p.inner_solution(x);
  const auto exact = exact_hypergradient(p, x, y);
  auto errors = [&](Index r1, Index r2) {
    std::vector<double> e;
    for (std::uint64_t s = 0; s < 40; ++s) {
      CommLedger ledger;
      const auto est = non_iterative_approx(
          p, x, y, NonIterSolverConfig{.rows1 = r1, .rows2 = r2, .seed1 = 3 * s + 1, .seed2 = 3 * s + 2, .warn_on_deficiency = false},
          p.all_clients(), ledger);
      e.push_back((est.value - exact.value).norm() / exact.v_solution.norm());
    }
    std::sort(e.begin(), e.end());
    return e;
  };
  const auto mid = errors(40, 120);
  const auto within = std::count_if(mid.begin(), mid.end(), [](double e) { return e <= 0.5; });
  CHECK(within >= 30);
  auto median = [](const std::vector<double>& e) { return 0.5 * (e[19] + e[20]); };
  const auto small = errors(20, 60), large = errors(80, 240);
  CHECK(median(small) >= median(mid));
  CHECK(median(mid) >= median(large));
}

TEST_CASE("non-iterative: rank deficiency is flagged and configuration is checked") {
  const ScaledIdentityProblem p({1.0}, randn(6, 2, 1), randn(6, 2));
  CommLedger ledger;
  const auto c = p.all_clients();
  // r2 < r1 leaves a wide system, which has rank at most r2
  const auto est = non_iterative_approx(p, randn(2, 3), randn(6, 4),
                                        NonIterSolverConfig{.rows1 = 5, .rows2 = 2, .warn_on_deficiency = false}, c, ledger);
  CHECK(est.conditioning_warning);
  CHECK(est.rank <= 2);
  CHECK_THROWS_AS(non_iterative_approx(p, randn(2, 3), randn(6, 4), NonIterSolverConfig{.rows1 = 7}, c, ledger), ConfigError);
  CHECK_THROWS_AS(non_iterative_approx(p, randn(2, 3), randn(6, 4), NonIterSolverConfig{.rows1 = 5, .identity_sketch = true},
                                       c, ledger),
                  ConfigError);
}

TEST_CASE("exact oracle rejects an indefinite Hessian") {
  const ScaledIdentityProblem p({-1.0}, randn(3, 2, 1), randn(3, 2));
  CHECK_THROWS_AS(exact_hypergradient(p, randn(2, 3), randn(3, 4)), DefinitenessError);
}

TEST_CASE("inner solve and quadratic accessors") {
  const QuadraticBilevelProblem p(QuadraticConfig{.outer_reg = 0.5, .seed = 71});
  const Vector x = randn(p.outer_dim(), 72);
  const auto solved = solve_inner(p, x, Vector::Zero(p.inner_dim()));
  CHECK(solved.converged);
  CHECK(rel(solved.y, p.inner_solution(x)) < 1e-9);
  // h is quadratic with a known minimizer; the hypergradient vanishes there
  CHECK(p.closed_form_hypergradient(p.outer_minimizer()).norm() < 1e-9);
  CHECK(p.hypergradient_lipschitz() > 0.5);
  const double lh = estimate_hypergradient_lipschitz(p, x, Vector::Zero(p.inner_dim()));
  CHECK(lh == doctest::Approx(p.hypergradient_lipschitz()).epsilon(1e-3));
}
