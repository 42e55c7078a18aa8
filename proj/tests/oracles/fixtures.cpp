#include "oracles/fixtures.hpp"

#include <cmath>
#include <numbers>
#include <system_error>
#include <unistd.h>

namespace ccr::fixture {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor random_unit_map(std::size_t b, std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Tensor t = random_tensor({b, c, h, w}, rng);
  auto d = t.mutable_data();
  const std::size_t hw = h * w;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      double s = 0;
      for (std::size_t ch = 0; ch < c; ++ch) s += d[(n * c + ch) * hw + p] * d[(n * c + ch) * hw + p];
      s = std::sqrt(s);
      for (std::size_t ch = 0; ch < c; ++ch) d[(n * c + ch) * hw + p] /= s;
    }
  }
  return t;
}

LabelMap random_discrete(std::size_t h, std::size_t w, std::size_t classes, double ignore_rate, Rng& rng) {
  std::vector<std::int32_t> v(h * w);
  for (auto& x : v) {
    x = rng.uniform() < ignore_rate ? LabelMap::kIgnore : static_cast<std::int32_t>(rng.uniform_index(classes));
  }
  return LabelMap::discrete(h, w, std::move(v));
}

LabelMap random_scalar(std::size_t h, std::size_t w, double ignore_rate, Rng& rng) {
  std::vector<double> v(h * w);
  std::vector<std::uint8_t> ok(h * w);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = 0.1 + 0.1 * static_cast<double>(rng.uniform_index(10));
    ok[i] = rng.uniform() >= ignore_rate;
  }
  return LabelMap::continuous(1, h, w, std::move(v), std::move(ok));
}

LabelMap random_unit_vectors(std::size_t h, std::size_t w, double ignore_rate, Rng& rng) {
  const std::size_t hw = h * w;
  std::vector<double> v(2 * hw);
  std::vector<std::uint8_t> ok(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(rng.uniform_index(12)) / 12.0;
    v[i] = std::cos(a);
    v[hw + i] = std::sin(a);
    ok[i] = rng.uniform() >= ignore_rate;
  }
  return LabelMap::continuous(2, h, w, std::move(v), std::move(ok));
}

TempDir::TempDir(const std::string& tag) {
  path_ = std::filesystem::temp_directory_path() /
          ("ccr-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace ccr::fixture
