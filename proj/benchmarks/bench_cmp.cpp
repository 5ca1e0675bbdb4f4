#include <benchmark/benchmark.h>

#include "cmpnet/cmp.hpp"
#include "cmpnet/ops.hpp"

using namespace cmpnet;

static void BM_CmpForward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = Tensor::uniform(rng, {1, channels, 7, 7}, -1, 1);
  const CmpConfig cfg = make_cmp_config(channels, 16, suggest_stride(channels, 16));
  for (auto _ : state) {
    auto [y, cache] = cmp_forward(x, cfg);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_CmpForward)->Arg(512)->Arg(2048)->Arg(2208);

static void BM_CmpBackward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = Tensor::uniform(rng, {1, channels, 7, 7}, -1, 1);
  const CmpConfig cfg = make_cmp_config(channels, 16, suggest_stride(channels, 16));
  auto [y, cache] = cmp_forward(x, cfg);
  const Tensor grad = Tensor::uniform(rng, y.shape(), -1, 1);
  for (auto _ : state) {
    Tensor grad_x = cmp_backward(grad, cache, cfg);
    benchmark::DoNotOptimize(grad_x.data());
  }
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_CmpBackward)->Arg(512)->Arg(2048)->Arg(2208);

static void BM_Conv3x3(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor x = Tensor::uniform(rng, {8, channels, 16, 16}, -1, 1);
  const Tensor w = Tensor::uniform(rng, {channels, channels, 3, 3}, -1, 1);
  const Tensor b = Tensor::uniform(rng, {channels}, -1, 1);
  for (auto _ : state) {
    Tensor y = conv2d_forward(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.data());
  }
  const std::int64_t macs = 8LL * channels * channels * 16 * 16 * 9;
  state.SetItemsProcessed(state.iterations() * macs);
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(16)->Arg(32);

BENCHMARK_MAIN();
