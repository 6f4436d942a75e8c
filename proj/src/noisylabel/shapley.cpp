#include "fedbio/noisylabel/shapley.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "fedbio/noisylabel/weighted_erm.hpp"

namespace fedbio {

std::vector<double> subset_gains(const LabeledDataset& data, const ShapleyConfig& cfg) {
  const Index n = data.train.size();
  if (n > cfg.max_samples || n > 30) {
    const double trainings = std::ldexp(1.0, static_cast<int>(std::min<Index>(n, 1023)));
    throw ConfigError("exact Shapley over N = " + std::to_string(n) + " samples needs " + std::to_string(trainings) +
                      " trainings; limit is N <= " + std::to_string(cfg.max_samples));
  }
  const WeightedERMProblem problem(data, cfg.reg);
  const std::size_t subsets = std::size_t{1} << n;
  std::vector<double> gains(subsets);
  const Vector zero = Vector::Zero(problem.inner_dim());
  Vector mask(n);
  for (std::size_t s = 0; s < subsets; ++s) {
    for (Index j = 0; j < n; ++j) mask[j] = (s >> j) & 1U ? 1.0 : 0.0;
    // With no samples the inner objective is the regularizer alone, minimized by omega = 0.
    const Vector omega = s == 0 ? zero : solve_inner(problem, mask, zero, cfg.tol, cfg.max_iter).y;
    gains[s] = -problem.outer_value(mask, omega);
  }
  return gains;
}

Vector exact_shapley(const LabeledDataset& data, const ShapleyConfig& cfg) {
  const auto gains = subset_gains(data, cfg);
  const Index n = data.train.size();
  // weight[k] = 1 / (N * C(N-1, k))
  std::vector<double> weight(static_cast<std::size_t>(n));
  double binom = 1.0;
  for (Index k = 0; k < n; ++k) {
    weight[static_cast<std::size_t>(k)] = 1.0 / (static_cast<double>(n) * binom);
    binom = binom * static_cast<double>(n - 1 - k) / static_cast<double>(k + 1);
  }
  Vector phi = Vector::Zero(n);
  for (std::size_t s = 0; s < gains.size(); ++s) {
    const auto size = static_cast<std::size_t>(std::popcount(s));
    for (Index j = 0; j < n; ++j) {
      const std::size_t bit = std::size_t{1} << j;
      if (s & bit) continue;
      phi[j] += weight[size] * (gains[s | bit] - gains[s]);
    }
  }
  return phi;
}

std::vector<bool> classify_noisy(const Vector& lambda, double threshold) {
  std::vector<bool> out(static_cast<std::size_t>(lambda.size()));
  for (Index i = 0; i < lambda.size(); ++i) out[static_cast<std::size_t>(i)] = lambda[i] < threshold;
  return out;
}

double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  require(predicted.size() == truth.size(), "f1_score: length mismatch");
  Index tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    tp += predicted[i] && truth[i];
    fp += predicted[i] && !truth[i];
    fn += !predicted[i] && truth[i];
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

Vector average_ranks(const Vector& values) {
  const Index n = values.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return values[a] < values[b]; });
  Vector ranks(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && values[order[static_cast<std::size_t>(j + 1)]] == values[order[static_cast<std::size_t>(i)]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index t = i; t <= j; ++t) ranks[order[static_cast<std::size_t>(t)]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(const Vector& a, const Vector& b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length samples");
  const Vector ra = average_ranks(a).array() - average_ranks(a).mean();
  const Vector rb = average_ranks(b).array() - average_ranks(b).mean();
  const double denom = ra.norm() * rb.norm();
  if (denom == 0.0) return std::nan("");
  return ra.dot(rb) / denom;
}

}  // namespace fedbio
