#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "ccr/rng.hpp"
#include "ccr/tasks.hpp"
#include "ccr/tensor.hpp"

namespace ccr::fixture {

// Entries uniform in [lo, hi).
Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false);
// [B x C x h x w] with every pixel vector unit length.
Tensor random_unit_map(std::size_t b, std::size_t c, std::size_t h, std::size_t w, Rng& rng);

// Class ids in [0, classes) with roughly `ignore_rate` ignored pixels.
LabelMap random_discrete(std::size_t h, std::size_t w, std::size_t classes, double ignore_rate, Rng& rng);
// Depth-like scalars quantized to a few levels so label ties occur.
LabelMap random_scalar(std::size_t h, std::size_t w, double ignore_rate, Rng& rng);
// Unit 2-vectors at a handful of angles.
LabelMap random_unit_vectors(std::size_t h, std::size_t w, double ignore_rate, Rng& rng);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace ccr::fixture
