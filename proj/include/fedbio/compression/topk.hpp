#pragma once

#include <vector>

#include "fedbio/core.hpp"

namespace fedbio {

/// Sparse d-vector with strictly increasing indices. Coordinates not listed are zero.
class TopKSparse {
 public:
  TopKSparse() = default;
  explicit TopKSparse(Index dim) : dim_(dim) {}
  TopKSparse(Index dim, std::vector<Index> indices, std::vector<double> values);

  Index dim() const { return dim_; }
  Index size() const { return static_cast<Index>(indices_.size()); }
  bool empty() const { return indices_.empty(); }
  const std::vector<Index>& indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }

  Vector dense() const;
  /// out += scale * this
  void add_to(Vector& out, double scale = 1.0) const;

 private:
  Index dim_ = 0;
  std::vector<Index> indices_;
  std::vector<double> values_;
};

/// Indices of the k largest |values[i]|, ties broken by lower index, returned ascending.
/// Exact zeros are never selected.
std::vector<Index> select_largest(const Vector& values, Index k);

/// Keep the k largest-magnitude coordinates of g (ties: lowest index first).
TopKSparse topk_compress(const Vector& g, Index k);

}  // namespace fedbio
