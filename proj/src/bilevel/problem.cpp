#include "fedbio/bilevel/problem.hpp"

#include <cmath>
#include <numeric>

namespace fedbio {

Index BilevelProblem::total_samples() const {
  Index n = 0;
  for (Index i = 0; i < num_clients(); ++i) n += client_samples(i);
  return n;
}

std::vector<Index> BilevelProblem::all_clients() const {
  std::vector<Index> c(static_cast<std::size_t>(num_clients()));
  std::iota(c.begin(), c.end(), Index{0});
  return c;
}

std::vector<double> sample_weights(const BilevelProblem& p, std::span<const Index> clients) {
  require(!clients.empty(), "client subset must be non-empty");
  double total = 0.0;
  for (Index c : clients) {
    require(c >= 0 && c < p.num_clients(), "client index out of range");
    total += static_cast<double>(p.client_samples(c));
  }
  std::vector<double> w;
  w.reserve(clients.size());
  for (Index c : clients) w.push_back(static_cast<double>(p.client_samples(c)) / total);
  return w;
}

double inner_value(const BilevelProblem& p, const Vector& x, const Vector& y, std::span<const Index> clients) {
  const auto w = sample_weights(p, clients);
  double out = 0.0;
  for (std::size_t m = 0; m < clients.size(); ++m) out += w[m] * p.client_inner_value(clients[m], x, y);
  return out;
}

Vector inner_grad(const BilevelProblem& p, const Vector& x, const Vector& y, std::span<const Index> clients) {
  const auto w = sample_weights(p, clients);
  Vector out = Vector::Zero(p.inner_dim());
  for (std::size_t m = 0; m < clients.size(); ++m) out += w[m] * p.client_inner_grad(clients[m], x, y);
  return out;
}

Vector inner_hvp_yy(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                    std::span<const Index> clients) {
  const auto w = sample_weights(p, clients);
  Vector out = Vector::Zero(p.inner_dim());
  for (std::size_t m = 0; m < clients.size(); ++m) out += w[m] * p.client_hvp_yy(clients[m], x, y, v);
  return out;
}

Vector inner_hvp_xy(const BilevelProblem& p, const Vector& x, const Vector& y, const Vector& v,
                    std::span<const Index> clients) {
  const auto w = sample_weights(p, clients);
  Vector out = Vector::Zero(p.outer_dim());
  for (std::size_t m = 0; m < clients.size(); ++m) out += w[m] * p.client_hvp_xy(clients[m], x, y, v);
  return out;
}

Matrix materialize_inner_hessian(const BilevelProblem& p, const Vector& x, const Vector& y,
                                 std::span<const Index> clients) {
  const Index d = p.inner_dim();
  Matrix h(d, d);
  Vector e = Vector::Zero(d);
  for (Index j = 0; j < d; ++j) {
    e[j] = 1.0;
    h.col(j) = inner_hvp_yy(p, x, y, e, clients);
    e[j] = 0.0;
  }
  // Symmetrize away probe round-off.
  return 0.5 * (h + h.transpose());
}

InnerSolveResult solve_inner(const BilevelProblem& p, const Vector& x, const Vector& y0, double tol, int max_iter) {
  const auto clients = p.all_clients();
  InnerSolveResult res{y0, 0, 0.0, false};
  for (int it = 0; it < max_iter; ++it) {
    const Vector g = inner_grad(p, x, res.y, clients);
    res.grad_norm = g.norm();
    res.iterations = it;
    if (!std::isfinite(res.grad_norm)) throw NumericError("solve_inner: non-finite gradient");
    if (res.grad_norm <= tol) {
      res.converged = true;
      return res;
    }
    const Matrix h = materialize_inner_hessian(p, x, res.y, clients);
    Eigen::LLT<Matrix> llt(h);
    if (llt.info() != Eigen::Success) throw DefinitenessError("solve_inner: inner Hessian is not positive definite");
    const Vector step = llt.solve(g);
    const double g0 = inner_value(p, x, res.y, clients);
    const double slope = g.dot(step);
    double t = 1.0;
    Vector trial = res.y - step;
    while (t > 1e-8 && inner_value(p, x, trial, clients) > g0 - 0.25 * t * slope + 1e-13 * (1.0 + std::abs(g0))) {
      t *= 0.5;
      trial = res.y - t * step;
    }
    res.y = trial;
  }
  const Vector g = inner_grad(p, x, res.y, clients);
  res.grad_norm = g.norm();
  res.iterations = max_iter;
  res.converged = res.grad_norm <= tol;
  return res;
}

double outer_objective(const BilevelProblem& p, const Vector& x, const Vector& y_hint, double tol) {
  const auto sol = solve_inner(p, x, y_hint, tol);
  return p.outer_value(x, sol.y);
}

}  // namespace fedbio
