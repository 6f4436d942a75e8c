#pragma once

#include <vector>

#include "fedbio/noisylabel/dataset.hpp"

namespace fedbio {

struct ShapleyConfig {
  double reg = 1e-3;
  Index max_samples = 12;  // 2^N trainings
  double tol = 1e-10;      // inner gradient norm at which training stops
  int max_iter = 200;
};

/// Exact data Shapley value of every training sample with gain = -(validation loss) of the
/// regularized weighted-ERM minimizer trained on the subset. The empty subset maps to omega = 0.
/// Each of the 2^N subsets is trained once. Throws ConfigError when N exceeds max_samples.
Vector exact_shapley(const LabeledDataset& data, const ShapleyConfig& cfg = {});

/// Gain of every subset, indexed by bitmask over the training samples.
std::vector<double> subset_gains(const LabeledDataset& data, const ShapleyConfig& cfg = {});

/// lambda_j < threshold marks sample j as mislabeled.
std::vector<bool> classify_noisy(const Vector& lambda, double threshold = 0.5);

/// F1 of the positive (mislabeled) class; 1.0 when both masks are empty.
double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& truth);

/// Ranks starting at 1 with ties sharing their average rank.
Vector average_ranks(const Vector& values);

/// Spearman rank correlation (Pearson correlation of average ranks). NaN if either side is constant.
double spearman(const Vector& a, const Vector& b);

}  // namespace fedbio
