#include <benchmark/benchmark.h>

#include "vqab/pca.hpp"

using namespace vqab;

static void BM_PcaFit(benchmark::State& state) {
  int m = static_cast<int>(state.range(0));
  int s = static_cast<int>(state.range(1));
  Rng rng(1);
  std::vector<Tensor> imgs;
  for (int i = 0; i < m; ++i) imgs.push_back(Tensor::uniform({3, s, s}, -1, 1, rng));
  for (auto _ : state) {
    PCAModel model = pca_fit(imgs);
    benchmark::DoNotOptimize(model.n_max);
  }
}
BENCHMARK(BM_PcaFit)->Args({16, 16})->Args({32, 16})->Args({16, 32})->Unit(benchmark::kMillisecond);

static void BM_PcaReconstruct(benchmark::State& state) {
  int m = static_cast<int>(state.range(0));
  Rng rng(1);
  std::vector<Tensor> imgs;
  for (int i = 0; i < m; ++i) imgs.push_back(Tensor::uniform({3, 16, 16}, -1, 1, rng));
  PCAModel model = pca_fit(imgs);
  for (auto _ : state) {
    Tensor rec = pca_reconstruct(model, imgs[0], model.n_max);
    benchmark::DoNotOptimize(rec.value().data());
  }
}
BENCHMARK(BM_PcaReconstruct)->Args({32});

BENCHMARK_MAIN();
