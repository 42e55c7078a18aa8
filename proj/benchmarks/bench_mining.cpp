#include <benchmark/benchmark.h>

#include <cmath>

#include "ccr/contrastive.hpp"
#include "ccr/rng.hpp"

namespace {

using namespace ccr;

// Unit-norm [1 x C x h x w] projections.
Tensor unit_map(std::size_t c, std::size_t hw, Rng& rng) {
  Tensor t({1, c, hw, hw});
  auto d = t.mutable_data();
  for (double& v : d) v = rng.uniform() * 2.0 - 1.0;
  const std::size_t n = hw * hw;
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += d[k * n + p] * d[k * n + p];
    for (std::size_t k = 0; k < c; ++k) d[k * n + p] /= std::sqrt(s);
  }
  return t;
}

LabelMap segmentation(std::size_t hw, Rng& rng) {
  std::vector<std::int32_t> ids(hw * hw);
  for (auto& v : ids) v = static_cast<std::int32_t>(rng.uniform_index(7));
  return LabelMap::discrete(hw, hw, std::move(ids));
}

LabelMap depth(std::size_t hw, Rng& rng) {
  std::vector<double> v(hw * hw);
  for (double& x : v) x = 0.1 + 0.9 * rng.uniform();
  return LabelMap::continuous(1, hw, hw, std::move(v), std::vector<std::uint8_t>(hw * hw, 1));
}

// Arg 0: sampling (0 semi-hard, 1 uniform). 32x32 projection map, defaults
// otherwise, so about 10 anchors per image.
void BM_MineDiscrete(benchmark::State& state) {
  Rng rng(1);
  Tensor f = unit_map(32, 32, rng);
  LabelMap l = segmentation(32, rng);
  CcrConfig cfg;
  cfg.sampling = state.range(0) ? Sampling::kUniform : Sampling::kSemiHard;
  for (auto _ : state) {
    Rng r(2);
    benchmark::DoNotOptimize(mine_triplets(f, 0, l, LabelMetric::kExactMatch, cfg, r).triplet_count());
  }
}
BENCHMARK(BM_MineDiscrete)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_MineContinuous(benchmark::State& state) {
  Rng rng(3);
  Tensor f = unit_map(32, 32, rng);
  LabelMap l = depth(32, rng);
  CcrConfig cfg;
  cfg.sampling = state.range(0) ? Sampling::kUniform : Sampling::kSemiHard;
  for (auto _ : state) {
    Rng r(4);
    benchmark::DoNotOptimize(mine_triplets(f, 0, l, LabelMetric::kL1, cfg, r).triplet_count());
  }
}
BENCHMARK(BM_MineContinuous)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

}  // namespace
