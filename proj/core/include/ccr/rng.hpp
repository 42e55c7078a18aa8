#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ccr {

// Seeded generator with deterministic child streams. Every consumer gets its
// own stream via split(), so adding draws in one subsystem never perturbs
// another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  // Child stream derived from (seed, tag); independent of how many draws
  // this generator has made.
  Rng split(std::string_view tag) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);

  // k distinct values drawn uniformly from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ccr
