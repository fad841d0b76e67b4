#include <random>

#include <benchmark/benchmark.h>

#include "dscene/metrics.hpp"

namespace {

using namespace dscene;

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(Vec3(u(rng), u(rng), 0.05 * u(rng)));
  return c;
}

void BM_ChamferKdTree(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_cloud(n, 1), b = random_cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer(a, b));
}
BENCHMARK(BM_ChamferKdTree)->RangeMultiplier(4)->Range(256, 16384)->Unit(benchmark::kMillisecond);

void BM_ChamferBrute(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_cloud(n, 1), b = random_cloud(n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(chamfer_brute(a, b));
}
BENCHMARK(BM_ChamferBrute)->RangeMultiplier(4)->Range(256, 4096)->Unit(benchmark::kMillisecond);

}  // namespace
