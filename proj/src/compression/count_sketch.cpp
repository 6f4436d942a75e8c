#include "fedbio/compression/count_sketch.hpp"

#include <algorithm>
#include <cmath>

namespace fedbio {

SketchHashes::SketchHashes(Index rows, Index cols, Index dim, std::uint64_t seed)
    : rows_(rows), cols_(cols), dim_(dim), seed_(seed) {
  require(rows >= 1 && cols >= 1 && dim >= 1, "count sketch: rows, cols and dim must be positive");
  const auto n = static_cast<std::size_t>(rows * dim);
  buckets_.resize(n);
  signs_.resize(n);
  const auto c = static_cast<std::uint64_t>(cols);
  for (Index j = 0; j < rows; ++j) {
    for (Index i = 0; i < dim; ++i) {
      const std::uint64_t h = hash3(seed, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i));
      // Lemire's multiply-shift range reduction on the high 32 bits; the low bit drives the sign.
      buckets_[static_cast<std::size_t>(j * dim + i)] = static_cast<Index>(((h >> 32) * c) >> 32);
      signs_[static_cast<std::size_t>(j * dim + i)] = (h & 1U) ? 1.0 : -1.0;
    }
  }
}

SketchGeometry sketch_geometry(Index dim, Index budget, double delta) {
  if (budget < 3) {
    throw ConfigError("count sketch budget " + std::to_string(budget) + " is smaller than the minimum of 3 rows");
  }
  require(dim >= 1 && delta > 0.0 && delta < 1.0, "sketch_geometry: need d >= 1 and delta in (0,1)");
  const auto target = std::max<Index>(3, static_cast<Index>(std::ceil(std::log2(static_cast<double>(dim) / delta))));
  for (Index r = std::min(target, budget); r >= 3; --r) {
    if (budget % r == 0) return {r, budget / r};
  }
  const Index rows = std::min(target, budget);
  return {rows, (budget + rows - 1) / rows};
}

CountSketchTable::CountSketchTable(Index rows, Index cols, Index dim, std::uint64_t seed)
    : CountSketchTable(std::make_shared<const SketchHashes>(rows, cols, dim, seed)) {}

CountSketchTable::CountSketchTable(std::shared_ptr<const SketchHashes> hashes)
    : hashes_(std::move(hashes)), counters_(static_cast<std::size_t>(hashes_->rows() * hashes_->cols()), 0.0) {}

void CountSketchTable::insert(const Vector& g, double scale) {
  require(g.size() == dim(), "cs_insert: vector dimension " + std::to_string(g.size()) +
                                 " does not match table dimension " + std::to_string(dim()));
  const Index c = cols();
  const Index d = dim();
  for (Index j = 0; j < rows(); ++j) {
    double* row = counters_.data() + j * c;
    for (Index i = 0; i < d; ++i) row[hashes_->bucket(j, i)] += hashes_->sign(j, i) * scale * g[i];
  }
}

void CountSketchTable::insert(const TopKSparse& g, double scale) {
  require(g.dim() == dim(), "cs_insert: sparse vector dimension does not match table dimension");
  const Index c = cols();
  for (Index j = 0; j < rows(); ++j) {
    double* row = counters_.data() + j * c;
    for (std::size_t n = 0; n < g.indices().size(); ++n) {
      const Index i = g.indices()[n];
      row[hashes_->bucket(j, i)] += hashes_->sign(j, i) * scale * g.values()[n];
    }
  }
}

void CountSketchTable::merge(const CountSketchTable& other, double weight) {
  require(hashes_->same_family(*other.hashes_), "cs_merge: tables use different hash functions");
  for (std::size_t n = 0; n < counters_.size(); ++n) counters_[n] += weight * other.counters_[n];
}

void CountSketchTable::scale(double factor) {
  for (double& c : counters_) c *= factor;
}

void CountSketchTable::clear() { std::fill(counters_.begin(), counters_.end(), 0.0); }

double CountSketchTable::estimate(Index i) const {
  require(i >= 0 && i < dim(), "cs_estimate: index out of range");
  const Index r = rows();
  double buf[64];
  std::vector<double> heap_buf;
  double* vals = buf;
  if (r > 64) {
    heap_buf.resize(static_cast<std::size_t>(r));
    vals = heap_buf.data();
  }
  for (Index j = 0; j < r; ++j) vals[j] = hashes_->sign(j, i) * counter(j, hashes_->bucket(j, i));
  const Index mid = r / 2;
  std::nth_element(vals, vals + mid, vals + r);
  if (r % 2 == 1) return vals[mid];
  const double upper = vals[mid];
  const double lower = *std::max_element(vals, vals + mid);
  return 0.5 * (lower + upper);
}

Vector CountSketchTable::estimate_all() const {
  Vector out(dim());
  for (Index i = 0; i < dim(); ++i) out[i] = estimate(i);
  return out;
}

CountSketchTable cs_sketch(const Vector& g, Index rows, Index cols, std::uint64_t seed) {
  CountSketchTable t(rows, cols, g.size(), seed);
  t.insert(g);
  return t;
}

TopKSparse cs_decompress_topk(const CountSketchTable& table, Index k) {
  require(k >= 1 && k <= table.dim(), "cs_decompress_topk: need 1 <= k <= d");
  const Vector est = table.estimate_all();
  auto idx = select_largest(est, k);
  std::vector<double> vals(idx.size());
  for (std::size_t n = 0; n < idx.size(); ++n) vals[n] = est[idx[n]];
  return TopKSparse(table.dim(), std::move(idx), std::move(vals));
}

}  // namespace fedbio
