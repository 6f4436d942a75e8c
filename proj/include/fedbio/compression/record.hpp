#pragma once

// Self-describing little-endian binary records for compressed payloads.
//
// Count-sketch record:
//   u32 magic 'FBCS' | u16 version | u16 reserved | u64 rows | u64 cols | u64 seed | u64 dim
//   | rows*cols f64 counters (row-major)
// Top-k record:
//   u32 magic 'FBTK' | u16 version | u16 reserved | u64 dim | u64 count | count x (u64 index, f64 value)
// Dense record:
//   u32 magic 'FBDV' | u16 version | u16 reserved | u64 dim | dim f64 values

#include <cstdint>
#include <span>
#include <vector>

#include "fedbio/compression/count_sketch.hpp"
#include "fedbio/compression/topk.hpp"

namespace fedbio::record {

inline constexpr std::uint32_t kSketchMagic = 0x53434246;  // "FBCS"
inline constexpr std::uint32_t kTopKMagic = 0x4b544246;    // "FBTK"
inline constexpr std::uint32_t kDenseMagic = 0x56444246;   // "FBDV"
inline constexpr std::uint16_t kVersion = 1;

inline constexpr std::size_t kHeaderBytes = 8;

std::size_t sketch_bytes(Index rows, Index cols);
std::size_t topk_bytes(Index count);
std::size_t dense_bytes(Index dim);

std::vector<std::uint8_t> encode(const CountSketchTable& table);
std::vector<std::uint8_t> encode(const TopKSparse& sparse);
std::vector<std::uint8_t> encode(const Vector& dense);

/// Throws ContractViolation on bad magic, unsupported version, or truncated input.
CountSketchTable decode_sketch(std::span<const std::uint8_t> bytes);
TopKSparse decode_topk(std::span<const std::uint8_t> bytes);
Vector decode_dense(std::span<const std::uint8_t> bytes);

}  // namespace fedbio::record
