#include "fedbio/bilevel/quadratic.hpp"

#include <random>

namespace fedbio {
namespace {

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  return m;
}

Matrix random_orthonormal(Index rows, Index cols, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(rows, cols, rng));
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

}  // namespace

QuadraticBilevelProblem::QuadraticBilevelProblem(const QuadraticConfig& cfg) : cfg_(cfg) {
  require(cfg.outer_dim >= 1 && cfg.inner_dim >= 1 && cfg.clients >= 1, "quadratic problem: dimensions must be positive");
  require(cfg.mu > 0.0, "quadratic problem: mu must be positive");
  samples_ = cfg.samples.empty() ? std::vector<Index>(static_cast<std::size_t>(cfg.clients), 100) : cfg.samples;
  require(static_cast<Index>(samples_.size()) == cfg.clients, "quadratic problem: samples must list one count per client");

  const Index d = cfg.inner_dim;
  const Index l = cfg.outer_dim;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Matrix shared_basis;
  if (cfg.spectrum == QuadraticSpectrum::kLowRank) {
    require(cfg.rank >= 1 && cfg.rank <= d, "quadratic problem: rank must be in [1, d]");
    shared_basis = random_orthonormal(d, cfg.rank, rng);
  } else {
    require(cfg.smooth >= cfg.mu, "quadratic problem: need smooth >= mu");
  }

  const double n_total = static_cast<double>(total_samples());
  a_bar_ = Matrix::Zero(d, d);
  b_bar_ = Matrix::Zero(d, l);
  c_bar_ = Vector::Zero(d);
  for (Index i = 0; i < cfg.clients; ++i) {
    const double w = static_cast<double>(samples_[static_cast<std::size_t>(i)]) / n_total;
    Matrix a;
    if (cfg.spectrum == QuadraticSpectrum::kUniform) {
      const Matrix q = random_orthonormal(d, d, rng);
      Vector eig(d);
      for (Index k = 0; k < d; ++k) eig[k] = cfg.mu + (cfg.smooth - cfg.mu) * unif(rng);
      a = q * eig.asDiagonal() * q.transpose();
    } else {
      Vector s(cfg.rank);
      for (Index k = 0; k < cfg.rank; ++k) s[k] = cfg.dominant * (0.8 + 0.4 * unif(rng));
      a = cfg.mu * Matrix::Identity(d, d) + shared_basis * s.asDiagonal() * shared_basis.transpose();
    }
    a = 0.5 * (a + a.transpose());
    Matrix b = gaussian(d, l, rng);
    Vector c = gaussian(d, 1, rng);
    a_bar_ += w * a;
    b_bar_ += w * b;
    c_bar_ += w * c;
    a_.push_back(std::move(a));
    b_.push_back(std::move(b));
    c_.push_back(std::move(c));
  }
  const double bnorm = Eigen::JacobiSVD<Matrix>(b_bar_).singularValues()(0);
  const double bscale = cfg.cross_scale / bnorm;
  for (auto& b : b_) b *= bscale;
  b_bar_ *= bscale;
  target_ = gaussian(d, 1, rng);
  mu_ = cfg.mu;
}

double QuadraticBilevelProblem::outer_value(const Vector& x, const Vector& y) const {
  return 0.5 * (y - target_).squaredNorm() + 0.5 * cfg_.outer_reg * x.squaredNorm();
}

Vector QuadraticBilevelProblem::outer_grad_x(const Vector& x, const Vector&) const { return cfg_.outer_reg * x; }

Vector QuadraticBilevelProblem::outer_grad_y(const Vector&, const Vector& y) const { return y - target_; }

double QuadraticBilevelProblem::client_inner_value(Index client, const Vector& x, const Vector& y) const {
  const auto k = static_cast<std::size_t>(client);
  return 0.5 * y.dot(a_[k] * y) - y.dot(b_[k] * x + c_[k]);
}

Vector QuadraticBilevelProblem::client_inner_grad(Index client, const Vector& x, const Vector& y) const {
  const auto k = static_cast<std::size_t>(client);
  return a_[k] * y - b_[k] * x - c_[k];
}

Vector QuadraticBilevelProblem::client_hvp_yy(Index client, const Vector&, const Vector&, const Vector& v) const {
  return a_[static_cast<std::size_t>(client)] * v;
}

Vector QuadraticBilevelProblem::client_hvp_xy(Index client, const Vector&, const Vector&, const Vector& v) const {
  return -(b_[static_cast<std::size_t>(client)].transpose() * v);
}

Vector QuadraticBilevelProblem::inner_solution(const Vector& x) const {
  return a_bar_.llt().solve(b_bar_ * x + c_bar_);
}

Vector QuadraticBilevelProblem::closed_form_hypergradient(const Vector& x) const {
  const auto llt = a_bar_.llt();
  const Vector y = llt.solve(b_bar_ * x + c_bar_);
  return cfg_.outer_reg * x + b_bar_.transpose() * llt.solve(y - target_);
}

Vector QuadraticBilevelProblem::outer_minimizer() const {
  // grad h = (rho I + M^T M) x + M^T (A^{-1} c - y0) with M = A^{-1} B.
  const auto llt = a_bar_.llt();
  const Matrix m = llt.solve(b_bar_);
  const Matrix hess = cfg_.outer_reg * Matrix::Identity(outer_dim(), outer_dim()) + m.transpose() * m;
  return hess.ldlt().solve(-(m.transpose() * (llt.solve(c_bar_) - target_)));
}

double QuadraticBilevelProblem::hypergradient_lipschitz() const {
  const Matrix m = a_bar_.llt().solve(b_bar_);
  const Matrix hess = cfg_.outer_reg * Matrix::Identity(outer_dim(), outer_dim()) + m.transpose() * m;
  return Eigen::SelfAdjointEigenSolver<Matrix>(hess).eigenvalues().maxCoeff();
}

}  // namespace fedbio
