#pragma once

#include <cstdint>
#include <vector>

#include "fedbio/bilevel/problem.hpp"

namespace fedbio {

enum class QuadraticSpectrum {
  kUniform,  // each client's Hessian has eigenvalues uniform in [mu, L] under its own random rotation
  kLowRank,  // mu I + U diag(s_i) U^T with a shared d x rank basis U; stable rank close to `rank`
};

struct QuadraticConfig {
  Index outer_dim = 20;
  Index inner_dim = 100;
  Index clients = 4;
  std::vector<Index> samples;  // per-client N_i; empty means 100 each
  QuadraticSpectrum spectrum = QuadraticSpectrum::kUniform;
  double mu = 1.0;      // lower spectral bound (strong convexity)
  double smooth = 3.0;  // upper spectral bound L for kUniform
  Index rank = 3;       // dominant directions for kLowRank
  double dominant = 100.0;
  double cross_scale = 1.0;  // spectral norm of the aggregated grad^2_xy G
  double outer_reg = 0.0;    // F gets (outer_reg / 2) |x|^2
  std::uint64_t seed = 1;
};

/// Synthetic federated quadratic:
///   g_i(x, y) = 1/2 y^T A_i y - y^T (B_i x + c_i),   F(x, y) = 1/2 |y - y0|^2 + (rho/2)|x|^2.
/// With A = sum w_i A_i etc., the hypergradient is rho x + B^T A^{-1} (A^{-1}(B x + c) - y0).
class QuadraticBilevelProblem final : public BilevelProblem {
 public:
  explicit QuadraticBilevelProblem(const QuadraticConfig& cfg);

  Index outer_dim() const override { return cfg_.outer_dim; }
  Index inner_dim() const override { return cfg_.inner_dim; }
  Index num_clients() const override { return cfg_.clients; }
  Index client_samples(Index client) const override { return samples_[static_cast<std::size_t>(client)]; }

  double outer_value(const Vector& x, const Vector& y) const override;
  Vector outer_grad_x(const Vector& x, const Vector& y) const override;
  Vector outer_grad_y(const Vector& x, const Vector& y) const override;

  double client_inner_value(Index client, const Vector& x, const Vector& y) const override;
  Vector client_inner_grad(Index client, const Vector& x, const Vector& y) const override;
  Vector client_hvp_yy(Index client, const Vector& x, const Vector& y, const Vector& v) const override;
  Vector client_hvp_xy(Index client, const Vector& x, const Vector& y, const Vector& v) const override;

  double strong_convexity() const override { return mu_; }

  const QuadraticConfig& config() const { return cfg_; }
  const Matrix& client_hessian(Index client) const { return a_[static_cast<std::size_t>(client)]; }
  const Matrix& aggregate_hessian() const { return a_bar_; }
  const Matrix& aggregate_cross() const { return b_bar_; }
  const Vector& aggregate_shift() const { return c_bar_; }
  const Vector& target() const { return target_; }

  /// Exact inner minimizer A^{-1}(B x + c).
  Vector inner_solution(const Vector& x) const;
  /// Closed-form hypergradient.
  Vector closed_form_hypergradient(const Vector& x) const;
  /// Exact minimizer of h when outer_reg > 0.
  Vector outer_minimizer() const;
  /// Largest eigenvalue of the (constant) Hessian of h.
  double hypergradient_lipschitz() const;

 private:
  QuadraticConfig cfg_;
  std::vector<Index> samples_;
  std::vector<Matrix> a_;
  std::vector<Matrix> b_;
  std::vector<Vector> c_;
  Matrix a_bar_;
  Matrix b_bar_;
  Vector c_bar_;
  Vector target_;
  double mu_ = 0.0;
};

}  // namespace fedbio
