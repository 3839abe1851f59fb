#include <benchmark/benchmark.h>

#include <random>

#include "convqa/tensor.hpp"

using namespace convqa;

namespace {

TensorF random_tensor(Shape shape, std::mt19937& rng) {
  TensorF t = TensorF::zeros(std::move(shape));
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  const int64_t n = state.range(0);
  std::mt19937 rng(1);
  TensorF a = random_tensor({n, n}, rng);
  TensorF b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulTrainStep(benchmark::State& state) {
  const int64_t n = state.range(0);
  std::mt19937 rng(1);
  TensorF a = random_tensor({n, n}, rng);
  TensorF b = random_tensor({n, n}, rng);
  a.set_requires_grad();
  b.set_requires_grad();
  for (auto _ : state) {
    Tape<float> tape;
    auto loss = sum(matmul(a, b));
    tape.backward(loss);
    a.zero_grad();
    b.zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * 6 * n * n * n);
}
BENCHMARK(BM_MatmulTrainStep)->Arg(64)->Arg(128);

void BM_MaskedSoftmaxRows(benchmark::State& state) {
  const int64_t m = state.range(0);
  std::mt19937 rng(2);
  TensorF logits = random_tensor({m, m}, rng);
  BoolMask mask(static_cast<size_t>(m), 1);
  mask[static_cast<size_t>(m) - 1] = 0;
  for (auto _ : state) {
    auto p = masked_softmax_rows(logits, mask);
    benchmark::DoNotOptimize(p.values().data());
  }
}
BENCHMARK(BM_MaskedSoftmaxRows)->Arg(128)->Arg(384);

}  // namespace

BENCHMARK_MAIN();
