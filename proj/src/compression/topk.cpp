#include "fedbio/compression/topk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedbio {

TopKSparse::TopKSparse(Index dim, std::vector<Index> indices, std::vector<double> values)
    : dim_(dim), indices_(std::move(indices)), values_(std::move(values)) {
  require(indices_.size() == values_.size(), "TopKSparse: index/value length mismatch");
  for (std::size_t n = 0; n < indices_.size(); ++n) {
    require(indices_[n] >= 0 && indices_[n] < dim_, "TopKSparse: index out of range");
    require(n == 0 || indices_[n - 1] < indices_[n], "TopKSparse: indices must be strictly increasing");
  }
}

Vector TopKSparse::dense() const {
  Vector out = Vector::Zero(dim_);
  add_to(out);
  return out;
}

void TopKSparse::add_to(Vector& out, double scale) const {
  require(out.size() == dim_, "TopKSparse::add_to: dimension mismatch");
  for (std::size_t n = 0; n < indices_.size(); ++n) out[indices_[n]] += scale * values_[n];
}

std::vector<Index> select_largest(const Vector& values, Index k) {
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0) order.push_back(i);
  }
  const auto keep = static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(order.size())));
  auto larger = [&](Index a, Index b) {
    const double ma = std::abs(values[a]);
    const double mb = std::abs(values[b]);
    return ma > mb || (ma == mb && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), larger);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

TopKSparse topk_compress(const Vector& g, Index k) {
  require(k >= 1 && k <= g.size(), "topk_compress: need 1 <= k <= d");
  auto idx = select_largest(g, k);
  std::vector<double> vals(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) vals[n] = g[idx[n]];
  return TopKSparse(g.size(), std::move(idx), std::move(vals));
}

}  // namespace fedbio
