#include <benchmark/benchmark.h>

#include "ccr/ops.hpp"
#include "ccr/rng.hpp"

namespace {

using namespace ccr;

Tensor random(Shape shape, Rng& rng, bool grad = false) {
  Tensor t(std::move(shape), grad);
  for (double& v : t.mutable_data()) v = rng.uniform() * 2.0 - 1.0;
  return t;
}

// Args: channels, spatial size. Batch of 4, 3x3 kernel.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  Tensor x = random({4, c, hw, hw}, rng), w = random({c, c, 3, 3}, rng), b = random({c}, rng);
  for (auto _ : state) {
    Graph g(Graph::Mode::kNoGrad);
    benchmark::DoNotOptimize(ops::conv2d(g, x, w, b).data().data());
  }
  state.SetItemsProcessed(state.iterations() * 4 * static_cast<std::int64_t>(c * c * 9 * hw * hw));
}
BENCHMARK(BM_Conv2dForward)->Args({32, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  Tensor x = random({4, c, hw, hw}, rng, true), w = random({c, c, 3, 3}, rng, true), b = random({c}, rng, true);
  for (auto _ : state) {
    Graph g;
    Tensor loss = ops::sum(g, ops::conv2d(g, x, w, b));
    g.backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_BatchNormTrain(benchmark::State& state) {
  Rng rng(3);
  Tensor x = random({4, 32, 64, 64}, rng), gamma = Tensor::full({32}, 1.0), beta({32});
  ops::BatchNormBuffers buf{Tensor({32}), Tensor::full({32}, 1.0)};
  for (auto _ : state) {
    Graph g(Graph::Mode::kNoGrad);
    benchmark::DoNotOptimize(ops::batch_norm(g, x, gamma, beta, buf, {}).data().data());
  }
}
BENCHMARK(BM_BatchNormTrain)->Unit(benchmark::kMillisecond);

}  // namespace
