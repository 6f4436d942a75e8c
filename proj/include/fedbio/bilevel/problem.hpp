#pragma once

#include <span>
#include <vector>

#include "fedbio/core.hpp"

namespace fedbio {

/// Federated bilevel problem
///
///   min_x h(x) = F(x, y_x)   s.t.   y_x = argmin_y G(x, y) = sum_i (N_i / N) g_i(x, y).
///
/// x has outer dimension l, y has inner dimension d. Implementations must be safe
/// to call concurrently from several threads (all members are logically const).
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual Index outer_dim() const = 0;
  virtual Index inner_dim() const = 0;
  virtual Index num_clients() const = 0;
  virtual Index client_samples(Index client) const = 0;

  virtual double outer_value(const Vector& x, const Vector& y) const = 0;
  virtual Vector outer_grad_x(const Vector& x, const Vector& y) const = 0;
  virtual Vector outer_grad_y(const Vector& x, const Vector& y) const = 0;

  virtual double client_inner_value(Index client, const Vector& x, const Vector& y) const = 0;
  virtual Vector client_inner_grad(Index client, const Vector& x, const Vector& y) const = 0;
  /// grad^2_yy g_i(x, y) v, a d-vector.
  virtual Vector client_hvp_yy(Index client, const Vector& x, const Vector& y, const Vector& v) const = 0;
  /// grad^2_xy g_i(x, y) v, an l-vector.
  virtual Vector client_hvp_xy(Index client, const Vector& x, const Vector& y, const Vector& v) const = 0;

  /// Number of entries of client_hvp_xy that can be nonzero; this is what a client uploads.
  virtual Index client_outer_support(Index /*client*/) const { return outer_dim(); }

  /// Strong-convexity constant mu_G of G in y.
  virtual double strong_convexity() const = 0;

  /// Projection onto the feasible outer set, applied after every outer step.
  virtual void project_outer(Vector& /*x*/) const {}

  virtual Vector initial_outer() const { return Vector::Zero(outer_dim()); }
  virtual Vector initial_inner() const { return Vector::Zero(inner_dim()); }

  Index total_samples() const;
  std::vector<Index> all_clients() const;
};

/// N_m / sum of N over the subset, in subset order.
std::vector<double> sample_weights(const BilevelProblem& p, std::span<const Index> clients);

// Weighted aggregates over a client subset (weights N_m normalized over the subset).
double inner_value(const BilevelProblem& p, const Vector& x, const Vector& y, std::span<const Index> clients);
Vector inner_grad(const BilevelProblem& p, const Vector& x, const Vector& y, std::span<const Index> clients);
Vector inner_hvp_yy(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                    std::span<const Index> clients);
Vector inner_hvp_xy(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                    std::span<const Index> clients);

/// Dense aggregated Hessian sum_i (N_i/N) grad^2_yy g_i built from d HVP probes H e_j.
Matrix materialize_inner_hessian(const BilevelProblem& p, const Vector& x, const Vector& y,
                                 std::span<const Index> clients);

struct InnerSolveResult {
  Vector y;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
};

/// Damped Newton on G(x, .) with the dense Hessian; oracle-side tool for small d.
InnerSolveResult solve_inner(const BilevelProblem& p, const Vector& x, const Vector& y0, double tol = 1e-11,
                             int max_iter = 100);

/// h(x) = F(x, y_x) with the inner problem solved to tolerance.
double outer_objective(const BilevelProblem& p, const Vector& x, const Vector& y_hint, double tol = 1e-11);

}  // namespace fedbio
