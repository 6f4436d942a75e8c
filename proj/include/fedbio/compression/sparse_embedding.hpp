#pragma once

#include <cstdint>
#include <vector>

#include "fedbio/core.hpp"

namespace fedbio {

/// Implicit r x n matrix with exactly one +/-1 per column: S[h(i), i] = sigma(i).
/// Never materialized densely on the estimation path.
class SparseEmbedding {
 public:
  /// h(i) uniform on [r], sigma(i) uniform on {-1, +1}, both from the seeded hash.
  SparseEmbedding(Index rows, Index cols, std::uint64_t seed);

  /// Test-only identity sketch (r = n, h(i) = i, sigma = +1).
  static SparseEmbedding identity(Index n);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::uint64_t seed() const { return seed_; }
  Index bucket(Index i) const { return bucket_[static_cast<std::size_t>(i)]; }
  double sign(Index i) const { return sign_[static_cast<std::size_t>(i)]; }

  /// S v, cost O(n).
  Vector apply(const Vector& v) const;
  /// S M for an n x k matrix.
  Matrix apply(const Matrix& m) const;
  /// S^T w for an r-vector w.
  Vector apply_transpose(const Vector& w) const;
  /// Column j of S^T, i.e. S^T e_j.
  Vector transpose_column(Index j) const;

  Matrix to_dense() const;

 private:
  SparseEmbedding(Index rows, Index cols, std::uint64_t seed, std::vector<Index> bucket, std::vector<double> sign);

  Index rows_;
  Index cols_;
  std::uint64_t seed_;
  std::vector<Index> bucket_;
  std::vector<double> sign_;
};

inline SparseEmbedding se_generate(Index rows, Index cols, std::uint64_t seed) { return {rows, cols, seed}; }
inline Vector se_apply(const SparseEmbedding& s, const Vector& v) { return s.apply(v); }

}  // namespace fedbio
