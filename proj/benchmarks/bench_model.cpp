#include <benchmark/benchmark.h>

#include "surfreg/adam.hpp"
#include "surfreg/model.hpp"
#include "surfreg/synth.hpp"
#include "surfreg/training.hpp"

namespace {

using namespace surfreg;

PointCloud member(std::size_t n, std::uint64_t seed) {
  SynthFamilyConfig fc;
  fc.points = n;
  fc.size = 1;
  fc.seed = seed;
  return generate_family(fc)[0];
}

void BM_Register(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Model model{ModelConfig{}};
  const auto source = member(n, 1), target = member(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.register_cloud(source, target));
}
BENCHMARK(BM_Register)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_RegisterChunked(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Model model{ModelConfig{}};
  const auto source = member(1000, 1), target = member(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.register_cloud(source, target, {.chunk = 1024}));
}
BENCHMARK(BM_RegisterChunked)->Arg(1000)->Arg(20000)->Unit(benchmark::kMillisecond);

// One optimizer step on a single training pair.
void BM_TrainStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Model model{ModelConfig{}};
  const auto source = prepare(model, member(n, 1)), target = prepare(model, member(n, 2));
  Adam adam(model.params().tensors(), {});
  for (auto _ : state) {
    adam.zero_grad();
    supervised_loss(model, source, target).backward();
    adam.step();
  }
}
BENCHMARK(BM_TrainStep)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
