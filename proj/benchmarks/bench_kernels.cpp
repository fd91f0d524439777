#include <benchmark/benchmark.h>

#include <span>

#include "lre/ops.hpp"
#include "lre/rng.hpp"

using namespace lre;

namespace {

void BM_matmul_128(benchmark::State& state) {
  Rng rng(1);
  auto a = Tensor::randn({128, 128}, rng, 1.0);
  auto b = Tensor::randn({128, 512}, rng, 1.0);
  NoGradGuard ng;
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_matmul_128);

void BM_softmax_rows(benchmark::State& state) {
  Rng rng(2);
  auto x = Tensor::randn({64, 128}, rng, 3.0);
  NoGradGuard ng;
  for (auto _ : state) {
    auto y = softmax(x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_softmax_rows);

void BM_layer_norm_rows(benchmark::State& state) {
  Rng rng(3);
  auto x = Tensor::randn({64, 128}, rng, 1.0);
  auto g = Tensor::full({128}, 1.0f);
  auto b = Tensor::zeros({128});
  NoGradGuard ng;
  for (auto _ : state) {
    auto y = layer_norm(x, g, b);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_layer_norm_rows);

void BM_gelu(benchmark::State& state) {
  Rng rng(4);
  auto x = Tensor::randn({64, 512}, rng, 1.0);
  NoGradGuard ng;
  for (auto _ : state) {
    auto y = gelu(x);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_gelu);

}  // namespace

BENCHMARK_MAIN();
