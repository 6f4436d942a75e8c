#include "fedbio/compression/record.hpp"

#include <bit>
#include <cstring>

namespace fedbio::record {
namespace {

static_assert(std::endian::native == std::endian::little, "record encoding assumes a little-endian host");

class Writer {
 public:
  explicit Writer(std::size_t reserve) { buf_.reserve(reserve); }
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void header(std::uint32_t magic) {
    put(magic);
    put(kVersion);
    put(std::uint16_t{0});
  }
  std::vector<std::uint8_t> finish() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    require(pos_ + sizeof(T) <= bytes_.size(), "record: truncated input");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  void header(std::uint32_t magic) {
    require(get<std::uint32_t>() == magic, "record: bad magic");
    require(get<std::uint16_t>() == kVersion, "record: unsupported version");
    get<std::uint16_t>();
  }
  void finish() const { require(pos_ == bytes_.size(), "record: trailing bytes"); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t sketch_bytes(Index rows, Index cols) {
  return kHeaderBytes + 4 * sizeof(std::uint64_t) + static_cast<std::size_t>(rows * cols) * sizeof(double);
}

std::size_t topk_bytes(Index count) {
  return kHeaderBytes + 2 * sizeof(std::uint64_t) + static_cast<std::size_t>(count) * (sizeof(std::uint64_t) + sizeof(double));
}

std::size_t dense_bytes(Index dim) {
  return kHeaderBytes + sizeof(std::uint64_t) + static_cast<std::size_t>(dim) * sizeof(double);
}

std::vector<std::uint8_t> encode(const CountSketchTable& table) {
  Writer w(sketch_bytes(table.rows(), table.cols()));
  w.header(kSketchMagic);
  w.put(static_cast<std::uint64_t>(table.rows()));
  w.put(static_cast<std::uint64_t>(table.cols()));
  w.put(table.seed());
  w.put(static_cast<std::uint64_t>(table.dim()));
  for (double c : table.counters()) w.put(c);
  return w.finish();
}

std::vector<std::uint8_t> encode(const TopKSparse& sparse) {
  Writer w(topk_bytes(sparse.size()));
  w.header(kTopKMagic);
  w.put(static_cast<std::uint64_t>(sparse.dim()));
  w.put(static_cast<std::uint64_t>(sparse.size()));
  for (Index n = 0; n < sparse.size(); ++n) {
    w.put(static_cast<std::uint64_t>(sparse.indices()[static_cast<std::size_t>(n)]));
    w.put(sparse.values()[static_cast<std::size_t>(n)]);
  }
  return w.finish();
}

std::vector<std::uint8_t> encode(const Vector& dense) {
  Writer w(dense_bytes(dense.size()));
  w.header(kDenseMagic);
  w.put(static_cast<std::uint64_t>(dense.size()));
  for (Index i = 0; i < dense.size(); ++i) w.put(dense[i]);
  return w.finish();
}

CountSketchTable decode_sketch(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.header(kSketchMagic);
  const auto rows = static_cast<Index>(r.get<std::uint64_t>());
  const auto cols = static_cast<Index>(r.get<std::uint64_t>());
  const auto seed = r.get<std::uint64_t>();
  const auto dim = static_cast<Index>(r.get<std::uint64_t>());
  CountSketchTable table(rows, cols, dim, seed);
  for (double& c : table.mutable_counters()) c = r.get<double>();
  r.finish();
  return table;
}

TopKSparse decode_topk(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.header(kTopKMagic);
  const auto dim = static_cast<Index>(r.get<std::uint64_t>());
  const auto count = r.get<std::uint64_t>();
  std::vector<Index> idx;
  std::vector<double> vals;
  for (std::uint64_t n = 0; n < count; ++n) {
    idx.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    vals.push_back(r.get<double>());
  }
  r.finish();
  return TopKSparse(dim, std::move(idx), std::move(vals));
}

Vector decode_dense(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.header(kDenseMagic);
  const auto dim = static_cast<Index>(r.get<std::uint64_t>());
  Vector out(dim);
  for (Index i = 0; i < dim; ++i) out[i] = r.get<double>();
  r.finish();
  return out;
}

}  // namespace fedbio::record
