#include <random>

#include <benchmark/benchmark.h>

#include "dscene/tensor.hpp"

namespace {

using namespace dscene;

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  for (auto _ : state) {
    ad::Tape tape;
    const auto x = tape.leaf({n, n}, a);
    const auto y = tape.leaf({n, n}, b);
    tape.backward(ad::sum(ad::matmul(x, y)));
    benchmark::DoNotOptimize(x.grad().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->RangeMultiplier(2)->Range(16, 256);

void BM_SoftmaxLayerNorm(benchmark::State& state) {
  const std::size_t rows = 256, cols = static_cast<std::size_t>(state.range(0));
  const auto a = noise(rows * cols, 3);
  for (auto _ : state) {
    ad::Tape tape;
    const auto x = tape.leaf({rows, cols}, a);
    tape.backward(ad::sum(ad::softmax_lastdim(ad::layer_norm_lastdim(x, tape.constant({cols}, std::vector<double>(cols, 1.0)),
                                                                   tape.constant({cols}, std::vector<double>(cols, 0.0))))));
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_SoftmaxLayerNorm)->Arg(16)->Arg(64)->Arg(256);

}  // namespace
