#include <benchmark/benchmark.h>

#include <random>

#include "convqa/encoder.hpp"
#include "convqa/heads.hpp"
#include "convqa/history_attention.hpp"

using namespace convqa;

namespace {

EncoderConfig bench_config(int64_t hidden, int64_t seq_len) {
  EncoderConfig c;
  c.hidden_size = static_cast<int32_t>(hidden);
  c.layer_count = 2;
  c.head_count = 4;
  c.ffn_size = static_cast<int32_t>(4 * hidden);
  c.max_seq_len = static_cast<int32_t>(seq_len);
  c.vocab_size = 512;
  c.max_history_turns = 11;
  c.dropout = 0.0;
  return c;
}

TokenSequence bench_sequence(const EncoderConfig& c, std::mt19937& rng) {
  TokenSequence seq;
  const auto m = static_cast<size_t>(c.max_seq_len);
  seq.token_ids.resize(m);
  seq.segment_ids.resize(m);
  seq.position_ids.resize(m);
  seq.history_ids.assign(m, 0);
  seq.attention_mask.assign(m, 1);
  for (size_t p = 0; p < m; ++p) {
    seq.token_ids[p] = static_cast<int32_t>(rng() % 512);
    seq.segment_ids[p] = p > m / 3 ? 1 : 0;
    seq.position_ids[p] = static_cast<int32_t>(p);
    if (p % 9 == 0) seq.history_ids[p] = static_cast<int32_t>(1 + rng() % 11);
  }
  return seq;
}

void BM_EncoderForward(benchmark::State& state) {
  auto config = bench_config(state.range(0), state.range(1));
  std::mt19937 rng(3);
  Encoder<float> enc(config, rng);
  auto seq = bench_sequence(config, rng);
  for (auto _ : state) {
    auto [tokens, pooled] = enc.encode(seq, {});
    benchmark::DoNotOptimize(pooled.values().data());
  }
}
BENCHMARK(BM_EncoderForward)->Args({64, 128})->Args({128, 384});

void BM_FineGrainedAttention(benchmark::State& state) {
  const int64_t slots = state.range(0);
  const int64_t m = 128, h = 64;
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<TensorF> token_reps, seq_reps;
  for (int64_t i = 0; i < slots; ++i) {
    TensorF t = TensorF::zeros({m, h});
    for (float& v : t.values()) v = dist(rng);
    token_reps.push_back(t);
    TensorF s = TensorF::zeros({h});
    for (float& v : s.values()) v = dist(rng);
    seq_reps.push_back(s);
  }
  auto stack = pad_stack(std::move(token_reps), std::move(seq_reps), 11);
  TensorF probe = TensorF::zeros({h});
  for (float& v : probe.values()) v = dist(rng);
  for (auto _ : state) {
    auto agg = attend_fine_grained(stack.token_reps, stack.turn_mask, probe);
    benchmark::DoNotOptimize(agg.values().data());
  }
}
BENCHMARK(BM_FineGrainedAttention)->Arg(3)->Arg(11);

void BM_DecodeSpan(benchmark::State& state) {
  const int64_t m = state.range(0);
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
  TensorF lb = TensorF::zeros({m}), le = TensorF::zeros({m});
  for (float& v : lb.values()) v = dist(rng);
  for (float& v : le.values()) v = dist(rng);
  BoolMask mask(static_cast<size_t>(m), 1);
  auto pb = masked_softmax(lb, mask);
  auto pe = masked_softmax(le, mask);
  SpanConstraints c{2, static_cast<int32_t>(m), static_cast<int32_t>(m) - 1, 40};
  for (auto _ : state) {
    auto pred = decode_span<float>(pb.values(), pe.values(), c);
    benchmark::DoNotOptimize(pred.score);
  }
}
BENCHMARK(BM_DecodeSpan)->Arg(128)->Arg(384);

}  // namespace

BENCHMARK_MAIN();
