#include "fedbio/bilevel/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedbio/compression/count_sketch.hpp"
#include "fedbio/compression/record.hpp"
#include "fedbio/compression/sparse_embedding.hpp"
#include "fedbio/compression/topk.hpp"

namespace fedbio {
namespace {

std::int64_t as_bytes(std::size_t n) { return static_cast<std::int64_t>(n); }

void broadcast_state(const BilevelProblem& p, std::span<const Index> clients, CommLedger& ledger) {
  const Index l = p.outer_dim();
  const Index d = p.inner_dim();
  for (Index c : clients) {
    ledger.downlink(payload::kStateBroadcast, static_cast<int>(c), l + d,
                    as_bytes(record::dense_bytes(l) + record::dense_bytes(d)));
  }
}

/// Clients receive v, return grad^2_xy g_m v; the server averages with weights N_m.
Vector gather_cross_product(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                            std::span<const Index> clients, std::span<const double> weights, CommLedger& ledger) {
  Vector out = Vector::Zero(p.outer_dim());
  for (std::size_t m = 0; m < clients.size(); ++m) {
    const Index c = clients[m];
    ledger.downlink(payload::kVBroadcast, static_cast<int>(c), v.size(), as_bytes(record::dense_bytes(v.size())));
    out += weights[m] * p.client_hvp_xy(c, x, y, v);
    const Index support = p.client_outer_support(c);
    ledger.uplink(payload::kXyProduct, static_cast<int>(c), support, as_bytes(record::dense_bytes(support)));
  }
  return out;
}

}  // namespace

std::string_view to_string(EstimatorMethod m) {
  switch (m) {
    case EstimatorMethod::kExact:
      return "exact";
    case EstimatorMethod::kIterative:
      return "iterative";
    case EstimatorMethod::kNonIterative:
      return "non-iterative";
  }
  return "unknown";
}

HypergradientEstimate exact_hypergradient(const BilevelProblem& p, const Vector& x, const Vector& y) {
  require(x.size() == p.outer_dim() && y.size() == p.inner_dim(), "exact_hypergradient: dimension mismatch");
  const auto clients = p.all_clients();
  const Matrix h = materialize_inner_hessian(p, x, y, clients);
  Eigen::LLT<Matrix> llt(h);
  const double scale = std::max(h.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (llt.info() != Eigen::Success) {
    throw DefinitenessError("exact_hypergradient: aggregated inner Hessian is not positive definite");
  }
  const Vector pivots = Matrix(llt.matrixL()).diagonal();
  if (pivots.array().square().minCoeff() <= 1e-12 * scale) {
    throw DefinitenessError("exact_hypergradient: aggregated inner Hessian is singular within tolerance");
  }
  HypergradientEstimate est;
  est.method = EstimatorMethod::kExact;
  est.v_solution = llt.solve(p.outer_grad_y(x, y));
  est.value = p.outer_grad_x(x, y) - inner_hvp_xy(p, x, y, est.v_solution, clients);
  return est;
}

Vector quadratic_grad(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                      std::span<const Index> clients) {
  require(v.size() == p.inner_dim(), "quadratic_grad: v has wrong dimension");
  return inner_hvp_yy(p, x, y, v, clients) - p.outer_grad_y(x, y);
}

double default_shift(double tau) {
  require(tau > 0.0 && tau <= 1.0, "default_shift: tau must be in (0, 1]");
  const double bound = ((2.0 - tau) / tau) * (std::sqrt(2.0 / (2.0 - tau)) + 1.0);
  return std::max(1.0, bound) + 1.0;
}

double compression_tau(const IterSolverConfig& cfg, Index dim) {
  if (cfg.compressor == CompressorKind::kNone || cfg.budget <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(cfg.budget) / static_cast<double>(dim));
}

double iteration_step(const IterSolverConfig& cfg, int i, double mu, double shift) {
  if (cfg.step_mode == StepMode::kConstant) return cfg.step;
  return 8.0 / (mu * (static_cast<double>(i) + shift));
}

HypergradientEstimate iterative_approx(const BilevelProblem& p, const Vector& x, const Vector& y,
                                       const IterSolverConfig& cfg, std::span<const Index> clients,
                                       CommLedger& ledger) {
  const Index d = p.inner_dim();
  require(x.size() == p.outer_dim() && y.size() == d, "iterative_approx: dimension mismatch");
  require(cfg.iterations >= 1, "iterative_approx: need at least one iteration");
  if (cfg.step_mode == StepMode::kConstant && !(cfg.step > 0.0)) throw ConfigError("iterative_approx: step must be positive");
  if (cfg.compressor != CompressorKind::kNone && (cfg.budget < 1 || cfg.budget > d)) {
    throw ConfigError("iterative_approx: compression budget must be in [1, d]");
  }

  const std::int64_t ledger_before = ledger.totals().scalars();
  const auto weights = sample_weights(p, clients);
  const double mu = cfg.mu > 0.0 ? cfg.mu : p.strong_convexity();
  const double shift = cfg.shift > 0.0 ? cfg.shift : default_shift(compression_tau(cfg, d));
  if (cfg.step_mode == StepMode::kSchedule) {
    require(mu > 0.0, "iterative_approx: schedule needs mu_G > 0");
    const double tau = compression_tau(cfg, d);
    const double admissible = std::max(1.0, ((2.0 - tau) / tau) * (std::sqrt(2.0 / (2.0 - tau)) + 1.0));
    if (shift <= admissible) warn("iterative_approx: shift constant is below the admissible bound");
  }

  broadcast_state(p, clients, ledger);
  const Vector b = p.outer_grad_y(x, y);
  const double guard = 1e6 * std::max(b.norm(), 1e-300) / (mu > 0.0 ? mu : 1.0);

  Vector v = cfg.v0 ? *cfg.v0 : Vector::Zero(d);
  require(v.size() == d, "iterative_approx: v0 has wrong dimension");

  // Count-sketch state: one hash family per call, shared by every client and the server accumulator.
  std::shared_ptr<const SketchHashes> hashes;
  std::optional<CountSketchTable> sketch_error;
  Index decompress_k = 0;
  if (cfg.compressor == CompressorKind::kCountSketch) {
    const auto geom = sketch_geometry(d, cfg.budget, cfg.sketch_delta);
    hashes = std::make_shared<const SketchHashes>(geom.rows, geom.cols, d, cfg.sketch_seed);
    sketch_error.emplace(hashes);
    decompress_k = std::min(d, cfg.decompress_k > 0 ? cfg.decompress_k : geom.cols);
  }
  std::vector<Vector> client_error;
  if (cfg.compressor == CompressorKind::kTopK && cfg.error_feedback) {
    client_error.assign(clients.size(), Vector::Zero(d));
  }

  Vector v_avg = Vector::Zero(d);
  double avg_weight = 0.0;

  for (int i = 0; i < cfg.iterations; ++i) {
    const double alpha = iteration_step(cfg, i, mu, shift);
    Vector delta = Vector::Zero(d);

    switch (cfg.compressor) {
      case CompressorKind::kNone: {
        for (std::size_t m = 0; m < clients.size(); ++m) {
          const Index c = clients[m];
          ledger.downlink(payload::kVBroadcast, static_cast<int>(c), d, as_bytes(record::dense_bytes(d)));
          delta += (alpha * weights[m]) * p.client_hvp_yy(c, x, y, v);
          ledger.uplink(payload::kHvpDense, static_cast<int>(c), d, as_bytes(record::dense_bytes(d)));
        }
        break;
      }
      case CompressorKind::kTopK: {
        for (std::size_t m = 0; m < clients.size(); ++m) {
          const Index c = clients[m];
          ledger.downlink(payload::kVBroadcast, static_cast<int>(c), d, as_bytes(record::dense_bytes(d)));
          Vector u = alpha * p.client_hvp_yy(c, x, y, v);
          if (cfg.error_feedback) u += client_error[m];
          const TopKSparse sent = topk_compress(u, cfg.budget);
          if (cfg.error_feedback) {
            client_error[m] = u;
            sent.add_to(client_error[m], -1.0);
          }
          ledger.uplink(payload::kHvpTopK, static_cast<int>(c), sent.size(), as_bytes(record::topk_bytes(sent.size())));
          sent.add_to(delta, weights[m]);
        }
        break;
      }
      case CompressorKind::kCountSketch: {
        CountSketchTable aggregate(hashes);
        for (std::size_t m = 0; m < clients.size(); ++m) {
          const Index c = clients[m];
          ledger.downlink(payload::kVBroadcast, static_cast<int>(c), d, as_bytes(record::dense_bytes(d)));
          CountSketchTable local(hashes);
          local.insert(p.client_hvp_yy(c, x, y, v));
          ledger.uplink(payload::kHvpSketch, static_cast<int>(c), local.size(),
                        as_bytes(record::sketch_bytes(local.rows(), local.cols())));
          aggregate.merge(local, weights[m]);
        }
        // Server, sketch space: T = alpha S_G + S(e); Delta = U(T); S(e) <- T - S(Delta).
        aggregate.scale(alpha);
        if (cfg.error_feedback) aggregate.merge(*sketch_error);
        const TopKSparse recovered = cs_decompress_topk(aggregate, decompress_k);
        recovered.add_to(delta);
        if (cfg.error_feedback) {
          aggregate.insert(recovered, -1.0);
          *sketch_error = std::move(aggregate);
        }
        break;
      }
    }

    v -= delta - alpha * b;

    const double vnorm = v.norm();
    if (!std::isfinite(vnorm) || vnorm > guard) {
      throw DivergenceError("iterative_approx: |v| exceeded the divergence guard at iteration " + std::to_string(i) +
                            " (learning rate too large)");
    }
    if (cfg.averaging == Averaging::kWeighted) {
      const double w = (static_cast<double>(i) + shift) * (static_cast<double>(i) + shift);
      v_avg += w * v;
      avg_weight += w;
    }
  }

  HypergradientEstimate est;
  est.method = EstimatorMethod::kIterative;
  est.iterations = cfg.iterations;
  est.v_solution = cfg.averaging == Averaging::kWeighted ? Vector(v_avg / avg_weight) : v;
  est.value = p.outer_grad_x(x, y) - gather_cross_product(p, x, y, est.v_solution, clients, weights, ledger);
  est.comm_cost = ledger.totals().scalars() - ledger_before;
  return est;
}

HypergradientEstimate non_iterative_approx(const BilevelProblem& p, const Vector& x, const Vector& y,
                                           const NonIterSolverConfig& cfg, std::span<const Index> clients,
                                           CommLedger& ledger) {
  const Index d = p.inner_dim();
  const Index l = p.outer_dim();
  require(x.size() == l && y.size() == d, "non_iterative_approx: dimension mismatch");
  if (cfg.rows1 < 1 || cfg.rows1 > d || cfg.rows2 < 1) {
    throw ConfigError("non_iterative_approx: need 1 <= r1 <= d and r2 >= 1");
  }
  if (cfg.identity_sketch && (cfg.rows1 != d || cfg.rows2 != d)) {
    throw ConfigError("non_iterative_approx: identity sketch requires r1 = r2 = d");
  }

  const std::int64_t ledger_before = ledger.totals().scalars();
  const auto weights = sample_weights(p, clients);
  const Index r1 = cfg.rows1;
  const Index r2 = cfg.rows2;
  const SparseEmbedding s1 = cfg.identity_sketch ? SparseEmbedding::identity(d) : se_generate(r1, d, cfg.seed1);
  const SparseEmbedding s2 = cfg.identity_sketch ? SparseEmbedding::identity(d) : se_generate(r2, d, cfg.seed2);

  broadcast_state(p, clients, ledger);
  ledger.downlink(payload::kSketchSeeds, kAllClients, 0, 2 * static_cast<std::int64_t>(sizeof(std::uint64_t)));

  std::vector<Vector> probes;
  probes.reserve(static_cast<std::size_t>(r1));
  for (Index j = 0; j < r1; ++j) probes.push_back(s1.transpose_column(j));

  Matrix sketched_hessian = Matrix::Zero(r2, r1);
  Matrix sketched_cross = Matrix::Zero(l, r1);
  for (std::size_t m = 0; m < clients.size(); ++m) {
    const Index c = clients[m];
    Matrix local_h(r2, r1);
    Matrix local_x(l, r1);
    for (Index j = 0; j < r1; ++j) {
      const Vector& z = probes[static_cast<std::size_t>(j)];
      local_h.col(j) = s2.apply(p.client_hvp_yy(c, x, y, z));
      local_x.col(j) = p.client_hvp_xy(c, x, y, z);
    }
    const Index support = p.client_outer_support(c);
    ledger.uplink(payload::kSketchedHessian, static_cast<int>(c), r1 * r2, as_bytes(record::dense_bytes(r1 * r2)));
    ledger.uplink(payload::kSketchedCross, static_cast<int>(c), support * r1,
                  as_bytes(record::dense_bytes(support * r1)));
    sketched_hessian += weights[m] * local_h;
    sketched_cross += weights[m] * local_x;
  }

  const Vector rhs = s2.apply(p.outer_grad_y(x, y));
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
  cod.setThreshold(cfg.lstsq_tol);
  cod.compute(sketched_hessian);
  const Vector omega = cod.solve(rhs);
  ledger.downlink(payload::kOmegaBroadcast, kAllClients, r1, as_bytes(record::dense_bytes(r1)));

  HypergradientEstimate est;
  est.method = EstimatorMethod::kNonIterative;
  est.rank = cod.rank();
  est.conditioning_warning = est.rank < r1;
  if (est.conditioning_warning && cfg.warn_on_deficiency) {
    warn("non_iterative_approx: sketched system is rank deficient (rank " + std::to_string(est.rank) + " < r1 = " +
         std::to_string(r1) + "); using the minimum-norm solution");
  }
  est.v_solution = s1.apply_transpose(omega);
  est.value = p.outer_grad_x(x, y) - sketched_cross * omega;
  est.comm_cost = ledger.totals().scalars() - ledger_before;
  return est;
}

double estimate_hypergradient_lipschitz(const BilevelProblem& p, const Vector& x, const Vector& y_hint, int iterations,
                                        double probe, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Vector u(p.outer_dim());
  for (Index i = 0; i < u.size(); ++i) u[i] = n01(rng);
  u.normalize();
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const Vector xp = x + probe * u;
    const Vector xm = x - probe * u;
    const Vector gp = exact_hypergradient(p, xp, solve_inner(p, xp, y_hint).y).value;
    const Vector gm = exact_hypergradient(p, xm, solve_inner(p, xm, y_hint).y).value;
    const Vector hu = (gp - gm) / (2.0 * probe);
    lambda = hu.norm();
    if (lambda == 0.0) break;
    u = hu / lambda;
  }
  return lambda;
}

}  // namespace fedbio
