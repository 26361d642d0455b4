#include <benchmark/benchmark.h>

#include <random>

#include "surfreg/geometry.hpp"
#include "surfreg/ops.hpp"
#include "surfreg/synth.hpp"

namespace {

using namespace surfreg;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(g(rng));
  return Tensor::from_values({rows, cols}, std::move(v), grad);
}

std::vector<Point3> cloud(std::size_t n, std::uint64_t seed) {
  return sample_base_shape(BaseShape::kCylinderFigure, n, seed);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, 64, 1), b = random_matrix(64, 512, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * 64 * 512);
}
BENCHMARK(BM_Matmul)->Arg(200)->Arg(1000);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_matrix(n, 64, 1, true), b = random_matrix(64, 512, 2, true);
  for (auto _ : state) {
    ops::reduce_sum(ops::matmul(a, b)).backward();
    a.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(200)->Arg(1000);

void BM_WeightedSoftmax(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  auto logits = random_matrix(32, m, 3);
  std::vector<Real> w(m, Real(0.5));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::weighted_softmax(logits, w));
}
BENCHMARK(BM_WeightedSoftmax)->Arg(1000)->Arg(10000);

void BM_Areas(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_areas(pts, kDefaultAreaRadius));
}
BENCHMARK(BM_Areas)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_Chamfer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 5), b = cloud(n, 6);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer_distance(a, b));
}
BENCHMARK(BM_Chamfer)->Arg(1000)->Arg(5000);

void BM_NearestNeighbor(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(n, 7), b = cloud(n, 8);
  for (auto _ : state) benchmark::DoNotOptimize(nearest_neighbor_match(a, b));
}
BENCHMARK(BM_NearestNeighbor)->Arg(1000)->Arg(5000);

void BM_GeodesicRow(benchmark::State& state) {
  const auto pts = cloud(static_cast<std::size_t>(state.range(0)), 9);
  GeodesicGraph graph(pts, 8);
  std::size_t source = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(graph.distances_from(source));
    source = (source + 1) % pts.size();
  }
}
BENCHMARK(BM_GeodesicRow)->Arg(1000)->Arg(5000);

}  // namespace

BENCHMARK_MAIN();
