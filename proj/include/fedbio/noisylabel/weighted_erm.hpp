#pragma once

#include <vector>

#include "fedbio/bilevel/problem.hpp"
#include "fedbio/noisylabel/dataset.hpp"

namespace fedbio {

/// Sample reweighting as a federated bilevel problem.
///
/// x = lambda in [0,1]^N (one weight per training sample, client blocks in shard order),
/// y = omega, the (p+1) x C weight matrix of a multinomial logistic model stored column-major
/// (the last feature row is a constant bias input).
///
///   g_i(lambda, omega) = (1/N_i) sum_j lambda_j l(omega; s_j) + (reg/2) |omega|^2
///   F(lambda, omega)   = mean cross-entropy on the validation split
class WeightedERMProblem final : public BilevelProblem {
 public:
  WeightedERMProblem(LabeledDataset data, double reg);

  Index outer_dim() const override { return data_.train.size(); }
  Index inner_dim() const override { return (features_ + 1) * classes_; }
  Index num_clients() const override { return data_.num_clients(); }
  Index client_samples(Index client) const override { return data_.shard_sizes[static_cast<std::size_t>(client)]; }

  double outer_value(const Vector& x, const Vector& y) const override;
  Vector outer_grad_x(const Vector& x, const Vector& y) const override;
  Vector outer_grad_y(const Vector& x, const Vector& y) const override;

  double client_inner_value(Index client, const Vector& x, const Vector& y) const override;
  Vector client_inner_grad(Index client, const Vector& x, const Vector& y) const override;
  Vector client_hvp_yy(Index client, const Vector& x, const Vector& y, const Vector& v) const override;
  Vector client_hvp_xy(Index client, const Vector& x, const Vector& y, const Vector& v) const override;
  Index client_outer_support(Index client) const override { return client_samples(client); }

  double strong_convexity() const override { return reg_; }
  void project_outer(Vector& x) const override;
  Vector initial_outer() const override { return Vector::Ones(outer_dim()); }

  const LabeledDataset& data() const { return data_; }
  double regularization() const { return reg_; }
  int classes() const { return classes_; }

  /// Row-wise softmax probabilities of a design matrix (bias column included).
  Matrix probabilities(const Matrix& design, const Vector& y) const;
  /// Predicted classes for raw features.
  std::vector<int> predict(const Matrix& features, const Vector& y) const;
  double accuracy(const LabeledSplit& split, const Vector& y) const;
  /// Mean cross-entropy on raw features.
  double mean_loss(const LabeledSplit& split, const Vector& y) const;
  /// Per-sample losses of the training samples of one client.
  Vector client_sample_losses(Index client, const Vector& y) const;

 private:
  struct Shard {
    Matrix design;  // N_i x (p+1)
    Matrix onehot;  // N_i x C
    Index offset = 0;
  };

  Eigen::Map<const Matrix> weights(const Vector& y) const;
  Matrix design(const Matrix& features) const;
  void check_dims(const Vector& x, const Vector& y) const;

  LabeledDataset data_;
  double reg_;
  Index features_;
  int classes_;
  std::vector<Shard> shards_;
  Matrix val_design_;
  Matrix val_onehot_;
};

WeightedERMProblem build_weight_problem(const LabeledDataset& data, double reg = 1e-3);

}  // namespace fedbio
