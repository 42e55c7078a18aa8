#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ccr/tensor.hpp"

namespace ccr {

// On-disk tensor record:
//
//   offset 0  4 bytes   magic "CCRT"
//   offset 4  1 byte    version (1)
//   offset 5  4 bytes   header length L, little-endian uint32
//   offset 9  L bytes   ASCII header "rank=<r>;extents=<e0>,<e1>,...;dtype=<f32|i32>;name=<name>"
//   offset 9+L          payload, little-endian, row-major, product(extents) * 4 bytes
enum class DType { kF32, kI32 };

inline constexpr std::uint8_t kBlobVersion = 1;

struct Blob {
  std::string name;
  DType dtype = DType::kF32;
  Shape extents;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  std::size_t count() const { return numel(extents); }
};

Blob make_blob(std::string name, const Tensor& t);  // f32, rounds each value
Blob make_blob(std::string name, Shape extents, std::vector<std::int32_t> values);
Tensor to_tensor(const Blob& b);  // widens f32 or i32 to float64

void write_blob(std::ostream& os, const Blob& blob);
// Throws std::runtime_error naming the offending field; returns false only
// on a clean end of stream before the first magic byte.
bool read_blob(std::istream& is, Blob& blob);

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

}  // namespace ccr
