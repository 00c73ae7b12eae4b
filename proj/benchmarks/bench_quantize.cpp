#include <benchmark/benchmark.h>

#include "vqab/codebook.hpp"

using namespace vqab;

static void BM_Quantize(benchmark::State& state) {
  int k = static_cast<int>(state.range(0));
  int d = static_cast<int>(state.range(1));
  Rng rng(1);
  Codebook cb(k, d, rng);
  Tensor z = Tensor::uniform({5, d, 16, 16}, -1, 1, rng);
  for (auto _ : state) {
    auto q = cb.quantize(z);
    benchmark::DoNotOptimize(q.indices.data());
  }
  state.SetItemsProcessed(state.iterations() * 5 * 16 * 16 * static_cast<int64_t>(k) * d);
}
BENCHMARK(BM_Quantize)->Args({32, 8})->Args({512, 64})->Args({1024, 256});
