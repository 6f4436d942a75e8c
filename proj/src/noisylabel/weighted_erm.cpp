#include "fedbio/noisylabel/weighted_erm.hpp"

#include <cmath>

namespace fedbio {
namespace {

Matrix onehot(const std::vector<int>& labels, int classes) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Index>(i), labels[i]) = 1.0;
  return y;
}

// Stable softmax of each row.
Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

// Per-row -log softmax(logits)_{label} computed with log-sum-exp.
Vector cross_entropy_rows(const Matrix& logits, const Matrix& onehot) {
  const Vector mx = logits.rowwise().maxCoeff();
  const Vector lse = ((logits.colwise() - mx).array().exp().rowwise().sum().log()).matrix() + mx;
  return lse - (logits.cwiseProduct(onehot)).rowwise().sum();
}

}  // namespace

WeightedERMProblem::WeightedERMProblem(LabeledDataset data, double reg)
    : data_(std::move(data)), reg_(reg), features_(data_.feature_dim()), classes_(data_.classes) {
  data_.check();
  require(reg_ > 0.0, "weighted ERM: regularization must be positive for strong convexity");
  require(classes_ >= 2, "weighted ERM: need at least two classes");
  Index offset = 0;
  for (Index m = 0; m < data_.num_clients(); ++m) {
    const Index n = data_.shard_sizes[static_cast<std::size_t>(m)];
    Shard s;
    s.design = design(data_.train.features.middleRows(offset, n));
    std::vector<int> labels(data_.train.labels.begin() + offset, data_.train.labels.begin() + offset + n);
    s.onehot = onehot(labels, classes_);
    s.offset = offset;
    shards_.push_back(std::move(s));
    offset += n;
  }
  val_design_ = design(data_.validation.features);
  val_onehot_ = onehot(data_.validation.labels, classes_);
}

Matrix WeightedERMProblem::design(const Matrix& features) const {
  Matrix out(features.rows(), features_ + 1);
  out.leftCols(features_) = features;
  out.col(features_).setOnes();
  return out;
}

Eigen::Map<const Matrix> WeightedERMProblem::weights(const Vector& y) const {
  return Eigen::Map<const Matrix>(y.data(), features_ + 1, classes_);
}

void WeightedERMProblem::check_dims(const Vector& x, const Vector& y) const {
  require(x.size() == outer_dim(), "weighted ERM: lambda has the wrong dimension");
  require(y.size() == inner_dim(), "weighted ERM: omega has the wrong dimension");
}

Matrix WeightedERMProblem::probabilities(const Matrix& design_matrix, const Vector& y) const {
  return softmax_rows(design_matrix * weights(y));
}

double WeightedERMProblem::outer_value(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return cross_entropy_rows(val_design_ * weights(y), val_onehot_).mean();
}

Vector WeightedERMProblem::outer_grad_x(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  return Vector::Zero(outer_dim());
}

Vector WeightedERMProblem::outer_grad_y(const Vector& x, const Vector& y) const {
  check_dims(x, y);
  const Matrix r = probabilities(val_design_, y) - val_onehot_;
  const Matrix g = val_design_.transpose() * r / static_cast<double>(val_design_.rows());
  return Eigen::Map<const Vector>(g.data(), g.size());
}

double WeightedERMProblem::client_inner_value(Index client, const Vector& x, const Vector& y) const {
  check_dims(x, y);
  const auto& s = shards_[static_cast<std::size_t>(client)];
  const Vector losses = cross_entropy_rows(s.design * weights(y), s.onehot);
  const double n = static_cast<double>(s.design.rows());
  return x.segment(s.offset, s.design.rows()).dot(losses) / n + 0.5 * reg_ * y.squaredNorm();
}

Vector WeightedERMProblem::client_inner_grad(Index client, const Vector& x, const Vector& y) const {
  check_dims(x, y);
  const auto& s = shards_[static_cast<std::size_t>(client)];
  const double n = static_cast<double>(s.design.rows());
  const Matrix r = x.segment(s.offset, s.design.rows()).asDiagonal() * (probabilities(s.design, y) - s.onehot);
  Matrix g = s.design.transpose() * r / n;
  g += reg_ * weights(y);
  return Eigen::Map<const Vector>(g.data(), g.size());
}

Vector WeightedERMProblem::client_hvp_yy(Index client, const Vector& x, const Vector& y, const Vector& v) const {
  check_dims(x, y);
  require(v.size() == inner_dim(), "weighted ERM: direction has the wrong dimension");
  const auto& s = shards_[static_cast<std::size_t>(client)];
  const double n = static_cast<double>(s.design.rows());
  const Matrix p = probabilities(s.design, y);
  const Matrix u = s.design * weights(v);
  // Softmax Jacobian applied row-wise: (diag(p) - p p^T) u.
  const Matrix pu = p.cwiseProduct(u);
  Matrix q = pu - p.cwiseProduct(pu.rowwise().sum().replicate(1, classes_));
  q = x.segment(s.offset, s.design.rows()).asDiagonal() * q;
  Matrix h = s.design.transpose() * q / n;
  h += reg_ * weights(v);
  return Eigen::Map<const Vector>(h.data(), h.size());
}

Vector WeightedERMProblem::client_hvp_xy(Index client, const Vector& x, const Vector& y, const Vector& v) const {
  check_dims(x, y);
  require(v.size() == inner_dim(), "weighted ERM: direction has the wrong dimension");
  const auto& s = shards_[static_cast<std::size_t>(client)];
  const double n = static_cast<double>(s.design.rows());
  const Matrix r = probabilities(s.design, y) - s.onehot;
  const Matrix u = s.design * weights(v);
  Vector out = Vector::Zero(outer_dim());
  out.segment(s.offset, s.design.rows()) = r.cwiseProduct(u).rowwise().sum() / n;
  return out;
}

void WeightedERMProblem::project_outer(Vector& x) const { x = x.cwiseMax(0.0).cwiseMin(1.0); }

std::vector<int> WeightedERMProblem::predict(const Matrix& features, const Vector& y) const {
  const Matrix logits = design(features) * weights(y);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double WeightedERMProblem::accuracy(const LabeledSplit& split, const Vector& y) const {
  if (split.size() == 0) return std::nan("");
  const auto pred = predict(split.features, y);
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == split.labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double WeightedERMProblem::mean_loss(const LabeledSplit& split, const Vector& y) const {
  return cross_entropy_rows(design(split.features) * weights(y), onehot(split.labels, classes_)).mean();
}

Vector WeightedERMProblem::client_sample_losses(Index client, const Vector& y) const {
  const auto& s = shards_[static_cast<std::size_t>(client)];
  return cross_entropy_rows(s.design * weights(y), s.onehot);
}

WeightedERMProblem build_weight_problem(const LabeledDataset& data, double reg) { return WeightedERMProblem(data, reg); }

}  // namespace fedbio
