#include "ccr/rng.hpp"

#include <stdexcept>
#include <unordered_map>

namespace ccr {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::string_view tag) const { return Rng(splitmix64(seed_ ^ fnv1a(tag))); }

Rng Rng::split(std::uint64_t index) const {
  return Rng(splitmix64(splitmix64(seed_) + 0x632be59bd9b4e019ULL * (index + 1)));
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("rng: uniform_index(0)");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

double Rng::uniform(double lo, double hi) {
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(engine_);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("rng: cannot draw " + std::to_string(k) + " of " + std::to_string(n));
  // Sparse partial Fisher-Yates.
  std::unordered_map<std::size_t, std::size_t> swapped;
  std::vector<std::size_t> out;
  out.reserve(k);
  auto at = [&](std::size_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(n - i);
    const std::size_t vi = at(i), vj = at(j);
    out.push_back(vj);
    swapped[j] = vi;
    swapped[i] = vj;
  }
  return out;
}

}  // namespace ccr
