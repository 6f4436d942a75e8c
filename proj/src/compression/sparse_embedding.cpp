#include "fedbio/compression/sparse_embedding.hpp"

namespace fedbio {
namespace {
constexpr std::uint64_t kEmbeddingStream = 0x53450001ULL;
}

SparseEmbedding::SparseEmbedding(Index rows, Index cols, std::uint64_t seed) : rows_(rows), cols_(cols), seed_(seed) {
  require(rows >= 1 && cols >= 1, "se_generate: r and n must be positive");
  bucket_.resize(static_cast<std::size_t>(cols));
  sign_.resize(static_cast<std::size_t>(cols));
  const auto r = static_cast<std::uint64_t>(rows);
  for (Index i = 0; i < cols; ++i) {
    const std::uint64_t h = hash3(seed, kEmbeddingStream, static_cast<std::uint64_t>(i));
    bucket_[static_cast<std::size_t>(i)] = static_cast<Index>(((h >> 32) * r) >> 32);
    sign_[static_cast<std::size_t>(i)] = (h & 1U) ? 1.0 : -1.0;
  }
}

SparseEmbedding::SparseEmbedding(Index rows, Index cols, std::uint64_t seed, std::vector<Index> bucket,
                                 std::vector<double> sign)
    : rows_(rows), cols_(cols), seed_(seed), bucket_(std::move(bucket)), sign_(std::move(sign)) {}

SparseEmbedding SparseEmbedding::identity(Index n) {
  require(n >= 1, "SparseEmbedding::identity: n must be positive");
  std::vector<Index> b(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) b[static_cast<std::size_t>(i)] = i;
  return {n, n, 0, std::move(b), std::vector<double>(static_cast<std::size_t>(n), 1.0)};
}

Vector SparseEmbedding::apply(const Vector& v) const {
  require(v.size() == cols_, "se_apply: vector dimension does not match sketch columns");
  Vector out = Vector::Zero(rows_);
  for (Index i = 0; i < cols_; ++i) out[bucket(i)] += sign(i) * v[i];
  return out;
}

Matrix SparseEmbedding::apply(const Matrix& m) const {
  require(m.rows() == cols_, "se_apply: matrix rows do not match sketch columns");
  Matrix out = Matrix::Zero(rows_, m.cols());
  for (Index i = 0; i < cols_; ++i) out.row(bucket(i)) += sign(i) * m.row(i);
  return out;
}

Vector SparseEmbedding::apply_transpose(const Vector& w) const {
  require(w.size() == rows_, "se_apply_transpose: vector dimension does not match sketch rows");
  Vector out(cols_);
  for (Index i = 0; i < cols_; ++i) out[i] = sign(i) * w[bucket(i)];
  return out;
}

Vector SparseEmbedding::transpose_column(Index j) const {
  require(j >= 0 && j < rows_, "transpose_column: row index out of range");
  Vector out = Vector::Zero(cols_);
  for (Index i = 0; i < cols_; ++i) {
    if (bucket(i) == j) out[i] = sign(i);
  }
  return out;
}

Matrix SparseEmbedding::to_dense() const {
  Matrix out = Matrix::Zero(rows_, cols_);
  for (Index i = 0; i < cols_; ++i) out(bucket(i), i) = sign(i);
  return out;
}

}  // namespace fedbio
