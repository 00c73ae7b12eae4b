#include <benchmark/benchmark.h>

#include "vqab/ops.hpp"

using namespace vqab;

static void BM_Conv2d(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  int hw = static_cast<int>(state.range(1));
  Rng rng(1);
  Tensor x = Tensor::uniform({1, c, hw, hw}, -1, 1, rng);
  Tensor w = Tensor::uniform({c, c, 3, 3}, -1, 1, rng);
  Tensor b = Tensor::uniform({c}, -1, 1, rng);
  for (auto _ : state) {
    Tensor y = ops::conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(c) * c * hw * hw * 9);
}
BENCHMARK(BM_Conv2d)->Args({8, 32})->Args({16, 32})->Args({32, 16});

static void BM_Conv2dBackward(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  int hw = static_cast<int>(state.range(1));
  Rng rng(1);
  Tensor x = Tensor::uniform({1, c, hw, hw}, -1, 1, rng);
  x.set_requires_grad(true);
  Tensor w = Tensor::uniform({c, c, 3, 3}, -1, 1, rng);
  w.set_requires_grad(true);
  Tensor b = Tensor::uniform({c}, -1, 1, rng);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    TapeScope scope;
    Tensor y = ops::mean(ops::conv2d(x, w, b, 1, 1));
    scope.backward(y);
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({8, 32})->Args({16, 16});

static void BM_GroupNorm(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor x = Tensor::uniform({4, c, 32, 32}, -1, 1, rng);
  Tensor gamma = Tensor::full({c}, 1.0);
  Tensor beta = Tensor::zeros({c});
  for (auto _ : state) {
    Tensor y = ops::group_norm(x, std::min(32, c), gamma, beta, 1e-6);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_GroupNorm)->Arg(16)->Arg(64);
