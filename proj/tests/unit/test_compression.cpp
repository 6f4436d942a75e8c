#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fedbio/compression/count_sketch.hpp"
#include "fedbio/compression/record.hpp"
#include "fedbio/compression/sparse_embedding.hpp"
#include "fedbio/compression/topk.hpp"

using namespace fedbio;

namespace {

Vector randn(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = n01(rng);
  return v;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("topk keeps the largest magnitudes") {
  const auto out = topk_compress(vec({-1, 3, -7, 2}), 2);
  CHECK(out.indices() == std::vector<Index>{1, 2});
  CHECK(out.values() == std::vector<double>{3, -7});
}

TEST_CASE("topk ties go to the lowest index") {
  const auto out = topk_compress(vec({2, -2, 1}), 1);
  CHECK(out.indices() == std::vector<Index>{0});
  CHECK(out.values() == std::vector<double>{2});
}

TEST_CASE("topk with k = d is the identity and zeros are never kept") {
  const Vector g = randn(17, 3);
  CHECK(topk_compress(g, 17).dense() == g);
  const auto sparse = topk_compress(vec({0, 0, 4, 0}), 3);
  CHECK(sparse.indices() == std::vector<Index>{2});
}

TEST_CASE("topk stored magnitudes dominate dropped ones and recompression is idempotent") {
  const Vector g = randn(200, 4);
  const auto out = topk_compress(g, 15);
  double smallest_kept = INFINITY;
  for (double v : out.values()) smallest_kept = std::min(smallest_kept, std::abs(v));
  const Vector dense = out.dense();
  for (Index i = 0; i < g.size(); ++i)
    if (dense[i] == 0.0) CHECK(std::abs(g[i]) <= smallest_kept);
  const auto again = topk_compress(dense, 15);
  CHECK(again.indices() == out.indices());
  CHECK(again.values() == out.values());
}

TEST_CASE("count sketch: shared hashes give identical counters, zero vector gives zero counters") {
  const Vector g = randn(64, 5);
  const auto a = cs_sketch(g, 5, 16, 99);
  const auto b = cs_sketch(g, 5, 16, 99);
  CHECK(a.counters() == b.counters());
  const auto z = cs_sketch(Vector::Zero(64), 5, 16, 99);
  CHECK(std::all_of(z.counters().begin(), z.counters().end(), [](double c) { return c == 0.0; }));
  auto t = a;
  t.insert(Vector::Zero(64));
  CHECK(t.counters() == a.counters());
}

TEST_CASE("count sketch counters follow the hash definition") {
  const Vector g = randn(40, 6);
  const auto t = cs_sketch(g, 3, 7, 12);
  std::vector<double> expect(21, 0.0);
  for (Index j = 0; j < 3; ++j)
    for (Index i = 0; i < 40; ++i) expect[static_cast<std::size_t>(j * 7 + t.hashes()->bucket(j, i))] += t.hashes()->sign(j, i) * g[i];
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(t.counters()[k] == doctest::Approx(expect[k]).epsilon(1e-14));
}

TEST_CASE("count sketch recovers a 1-sparse vector exactly") {
  Vector g = Vector::Zero(8);
  g[3] = 5.0;
  const auto t = cs_sketch(g, 3, 4, 7);
  CHECK(t.estimate(3) == 5.0);
  const auto out = cs_decompress_topk(t, 1);
  CHECK(out.indices() == std::vector<Index>{3});
  CHECK(out.values() == std::vector<double>{5.0});
}

TEST_CASE("count sketch fresh table estimates zero and decompresses to nothing") {
  const CountSketchTable t(4, 8, 32, 1);
  for (Index i = 0; i < 32; ++i) CHECK(t.estimate(i) == 0.0);
  CHECK(cs_decompress_topk(t, 5).empty());
}

TEST_CASE("count sketch is linear and mergeable") {
  const Vector g1 = randn(32, 7), g2 = randn(32, 8);
  auto seq = cs_sketch(g1, 4, 8, 21);
  seq.insert(g2);
  const auto sum = cs_sketch(g1 + g2, 4, 8, 21);
  auto merged = cs_sketch(g1, 4, 8, 21);
  merged.merge(cs_sketch(g2, 4, 8, 21));
  for (std::size_t k = 0; k < sum.counters().size(); ++k) {
    CHECK(seq.counters()[k] == doctest::Approx(sum.counters()[k]).epsilon(1e-13));
    CHECK(merged.counters()[k] == doctest::Approx(sum.counters()[k]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(merged.merge(cs_sketch(g2, 4, 8, 22)), ContractViolation);
}

TEST_CASE("count sketch even row count averages the two middle estimates") {
  Vector g = Vector::Zero(16);
  g[2] = 1.0;
  g[9] = 3.0;
  const auto t = cs_sketch(g, 4, 2, 5);
  std::vector<double> rows;
  for (Index j = 0; j < 4; ++j) rows.push_back(t.hashes()->sign(j, 2) * t.counter(j, t.hashes()->bucket(j, 2)));
  std::sort(rows.begin(), rows.end());
  CHECK(t.estimate(2) == doctest::Approx(0.5 * (rows[1] + rows[2])));
}

TEST_CASE("sketch geometry from a budget") {
  // d = 2000, delta = 0.05: log2(40000) = 15.3, so the row target is 16; 100 = 10 x 10 is the largest divisor fit.
  const auto g = sketch_geometry(2000, 100);
  CHECK(g.rows == 10);
  CHECK(g.cols == 10);
  const auto prime = sketch_geometry(2000, 101);  // no divisor in [3, 16]
  CHECK(prime.rows == 16);
  CHECK(prime.cols == 7);
  CHECK_THROWS_AS(sketch_geometry(2000, 2), ConfigError);
}

TEST_CASE("count sketch recovers three planted heavy hitters") {
  const Index d = 512;
  const double tau = 0.1, delta = 0.05;
  const auto rows = static_cast<Index>(std::ceil(std::log(d / delta)));
  // all three must land in the output at once, so the column constant is 3 rather than 2
  const auto cols = static_cast<Index>(std::ceil(3.0 / tau));
  int all_three = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Vector g = randn(d, 1000 + s);
    const std::vector<Index> heavy = {static_cast<Index>(s % 512), static_cast<Index>((s * 7 + 100) % 512),
                                      static_cast<Index>((s * 13 + 300) % 512)};
    for (Index h : heavy) g[h] = 0.0;
    const double light = g.squaredNorm();
    // each heavy coordinate holds a tau share of the final squared norm
    const double each = tau * light / (1.0 - 3.0 * tau);
    for (Index h : heavy) g[h] = (s % 2 ? -1.0 : 1.0) * std::sqrt(each);
    const auto out = cs_decompress_topk(cs_sketch(g, rows, cols, 2000 + s), cols);
    all_three += std::all_of(heavy.begin(), heavy.end(), [&](Index h) {
      return std::binary_search(out.indices().begin(), out.indices().end(), h);
    });
  }
  CHECK(all_three >= 95);
}

TEST_CASE("sparse embedding structure and determinism") {
  const auto s = se_generate(4, 6, 3);
  const Matrix m = s.to_dense();
  CHECK((m.array() != 0.0).count() == 6);
  for (Index j = 0; j < 6; ++j) {
    CHECK((m.col(j).array() != 0.0).count() == 1);
    CHECK(m.col(j).cwiseAbs().sum() == 1.0);
  }
  const auto again = se_generate(4, 6, 3);
  for (Index i = 0; i < 6; ++i) {
    CHECK(again.bucket(i) == s.bucket(i));
    CHECK(again.sign(i) == s.sign(i));
  }
}

TEST_CASE("sparse embedding maps basis vectors and is linear") {
  const auto s = se_generate(5, 9, 8);
  for (Index i = 0; i < 9; ++i) {
    Vector e = Vector::Zero(9);
    e[i] = 1.0;
    Vector expect = Vector::Zero(5);
    expect[s.bucket(i)] = s.sign(i);
    CHECK(se_apply(s, e) == expect);
    CHECK(s.transpose_column(s.bucket(i))[i] == s.sign(i));
  }
  const Vector v = randn(9, 1), w = randn(9, 2);
  CHECK((s.apply(Vector(2.0 * v - 3.0 * w)) - (2.0 * s.apply(v) - 3.0 * s.apply(w))).norm() < 1e-12);
  const Vector u = randn(5, 3);
  CHECK(s.apply(v).dot(u) == doctest::Approx(v.dot(s.apply_transpose(u))));
  CHECK((s.apply(Matrix(v)) - s.to_dense() * v).norm() < 1e-12);
}

TEST_CASE("sparse embedding preserves inner products in expectation") {
  const Vector v = randn(50, 11), w = randn(50, 12);
  double mean = 0.0, sq = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const auto s = se_generate(10, 50, 500 + static_cast<std::uint64_t>(t));
    const double ip = s.apply(v).dot(s.apply(w));
    mean += ip / trials;
    sq += ip * ip / trials;
  }
  const double stderr_mean = std::sqrt((sq - mean * mean) / trials);
  CHECK(std::abs(mean - v.dot(w)) < 4.0 * stderr_mean);
}

TEST_CASE("identity embedding") {
  const auto s = SparseEmbedding::identity(7);
  const Vector v = randn(7, 4);
  CHECK(s.apply(v) == v);
}

TEST_CASE("binary records round-trip and reject corruption") {
  const auto table = cs_sketch(randn(30, 9), 3, 5, 77);
  auto bytes = record::encode(table);
  CHECK(bytes.size() == record::sketch_bytes(3, 5));
  const auto back = record::decode_sketch(bytes);
  CHECK(back.counters() == table.counters());
  CHECK(back.seed() == 77);
  CHECK(back.dim() == 30);
  CHECK(back.hashes()->same_family(*table.hashes()));

  const auto sparse = topk_compress(randn(20, 10), 4);
  const auto sb = record::encode(sparse);
  CHECK(sb.size() == record::topk_bytes(4));
  const auto sparse_back = record::decode_topk(sb);
  CHECK(sparse_back.indices() == sparse.indices());
  CHECK(sparse_back.values() == sparse.values());

  const Vector dense = randn(6, 11);
  CHECK(record::decode_dense(record::encode(dense)) == dense);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(record::decode_sketch(truncated), ContractViolation);
  bytes[0] ^= 0xff;
  CHECK_THROWS_AS(record::decode_sketch(bytes), ContractViolation);
  CHECK_THROWS_AS(record::decode_topk(record::encode(dense)), ContractViolation);
}
