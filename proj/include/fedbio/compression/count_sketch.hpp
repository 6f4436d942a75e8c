#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedbio/compression/topk.hpp"
#include "fedbio/core.hpp"

namespace fedbio {

/// Bucket and sign hashes of an r x c count-sketch over d coordinates.
/// Fully determined by (rows, cols, dim, seed).
class SketchHashes {
 public:
  SketchHashes(Index rows, Index cols, Index dim, std::uint64_t seed);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  Index bucket(Index row, Index i) const { return buckets_[static_cast<std::size_t>(row * dim_ + i)]; }
  double sign(Index row, Index i) const { return signs_[static_cast<std::size_t>(row * dim_ + i)]; }

  bool same_family(const SketchHashes& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && dim_ == other.dim_ && seed_ == other.seed_;
  }

 private:
  Index rows_;
  Index cols_;
  Index dim_;
  std::uint64_t seed_;
  std::vector<Index> buckets_;
  std::vector<double> signs_;
};

struct SketchGeometry {
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

/// Table shape for a compressed-dimension budget m over d coordinates.
/// The row target is max(3, ceil(log2(d / delta))); the largest divisor of m in
/// [3, target] is used so that rows * cols == m whenever possible, otherwise
/// rows = target and cols = ceil(m / rows). Throws ConfigError if m < 3.
SketchGeometry sketch_geometry(Index dim, Index budget, double delta = 0.05);

/// r x c grid of counters; a linear, mergeable compressed form of a d-vector.
class CountSketchTable {
 public:
  CountSketchTable(Index rows, Index cols, Index dim, std::uint64_t seed);
  explicit CountSketchTable(std::shared_ptr<const SketchHashes> hashes);

  Index rows() const { return hashes_->rows(); }
  Index cols() const { return hashes_->cols(); }
  Index dim() const { return hashes_->dim(); }
  Index size() const { return rows() * cols(); }
  std::uint64_t seed() const { return hashes_->seed(); }
  const std::shared_ptr<const SketchHashes>& hashes() const { return hashes_; }

  /// Row-major counters.
  const std::vector<double>& counters() const { return counters_; }
  std::vector<double>& mutable_counters() { return counters_; }
  double counter(Index row, Index col) const { return counters_[static_cast<std::size_t>(row * cols() + col)]; }

  /// An all-zero table sharing this table's hash functions.
  CountSketchTable zeros_like() const { return CountSketchTable(hashes_); }

  /// counters(j, h_j(i)) += sign_j(i) * scale * g_i for every row j and index i.
  void insert(const Vector& g, double scale = 1.0);
  void insert(const TopKSparse& g, double scale = 1.0);

  /// counters += weight * other.counters. The tables must share hash functions.
  void merge(const CountSketchTable& other, double weight = 1.0);
  void scale(double factor);
  void clear();

  /// Median over rows of sign_j(i) * counters(j, h_j(i)); even row counts
  /// average the two middle order statistics.
  double estimate(Index i) const;
  Vector estimate_all() const;

 private:
  std::shared_ptr<const SketchHashes> hashes_;
  std::vector<double> counters_;
};

/// Fresh table holding the sketch of g.
CountSketchTable cs_sketch(const Vector& g, Index rows, Index cols, std::uint64_t seed);

/// Query all d coordinates and keep the k with largest |estimate| (ties: lowest index).
/// Zero estimates are dropped, so an empty table decompresses to an empty vector.
TopKSparse cs_decompress_topk(const CountSketchTable& table, Index k);

}  // namespace fedbio
