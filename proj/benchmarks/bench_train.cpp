#include <benchmark/benchmark.h>

#include "ccr/config.hpp"
#include "ccr/harness.hpp"
#include "ccr/synth.hpp"

namespace {

using namespace ccr;

const PreparedData& data() {
  static const PreparedData d = [] {
    RunConfig cfg = default_config();
    SynthOptions o;
    o.classes = cfg.data.classes;
    Rng rng(1);
    std::vector<SceneSample> s;
    for (int i = 0; i < 8; ++i) s.push_back(generate_scene(o, rng));
    return prepare_data(s, cfg.task_specs());
  }();
  return d;
}

// One epoch over 8 images at the default 64x64 size: two optimizer steps.
void BM_TrainEpoch(benchmark::State& state) {
  RunConfig cfg = default_config();
  cfg.train.mode = static_cast<Mode>(state.range(0));
  cfg.train.epochs = 1;
  cfg.finalize();
  for (auto _ : state) {
    nn::MultiTaskNet net = train_network(cfg, data(), nullptr);
    benchmark::DoNotOptimize(net.parameters().size());
  }
  state.SetLabel(to_string(cfg.train.mode));
}
BENCHMARK(BM_TrainEpoch)
    ->Arg(static_cast<int>(Mode::kBaseline))
    ->Arg(static_cast<int>(Mode::kCcrBasic))
    ->Arg(static_cast<int>(Mode::kProjSsCts))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
