#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "convqa/encoder.hpp"

using namespace convqa;

namespace {

EncoderConfig toy_config() {
  EncoderConfig c;
  c.hidden_size = 8;
  c.layer_count = 1;
  c.head_count = 2;
  c.ffn_size = 16;
  c.max_seq_len = 16;
  c.vocab_size = 24;
  c.max_history_turns = 3;
  c.dropout = 0.0;
  return c;
}

TokenSequence toy_sequence(int real_tokens, const EncoderConfig& c, uint32_t seed = 1) {
  std::mt19937 rng(seed);
  TokenSequence seq;
  const auto m = static_cast<size_t>(c.max_seq_len);
  seq.token_ids.assign(m, 0);
  seq.segment_ids.assign(m, 0);
  seq.position_ids.resize(m);
  seq.history_ids.assign(m, 0);
  seq.attention_mask.assign(m, 0);
  for (size_t p = 0; p < m; ++p) seq.position_ids[p] = static_cast<int32_t>(p);
  for (int p = 0; p < real_tokens; ++p) {
    seq.token_ids[static_cast<size_t>(p)] = static_cast<int32_t>(4 + rng() % 16);
    seq.segment_ids[static_cast<size_t>(p)] = p > real_tokens / 2 ? 1 : 0;
    seq.history_ids[static_cast<size_t>(p)] =
        (p % 5 == 3) ? static_cast<int32_t>(1 + rng() % 3) : 0;
    seq.attention_mask[static_cast<size_t>(p)] = 1;
  }
  seq.passage_begin = real_tokens / 2;
  seq.passage_end = real_tokens;
  seq.sentinel_pos = real_tokens - 1;
  seq.gold_begin = seq.gold_end = seq.sentinel_pos;
  return seq;
}

}  // namespace

TEST_CASE("encode: output shapes follow the config") {
  auto cfg = toy_config();
  std::mt19937 rng(3);
  Encoder<double> enc(cfg, rng);
  auto seq = toy_sequence(10, cfg);
  auto [tokens, pooled] = enc.encode(seq, {});
  CHECK(tokens.shape() == Shape{16, 8});
  CHECK(pooled.shape() == Shape{8});

  auto cfg16 = cfg;
  cfg16.hidden_size = 16;
  cfg16.ffn_size = 32;
  Encoder<double> enc16(cfg16, rng);
  auto [t2, s2] = enc16.encode(toy_sequence(10, cfg16), {});
  CHECK(s2.shape() == Shape{16});
}

TEST_CASE("embed: all-zero marker ids reduce to row 0 everywhere") {
  auto cfg = toy_config();
  std::mt19937 rng(3);
  Encoder<double> enc(cfg, rng);
  auto seq = toy_sequence(10, cfg);
  for (auto& id : seq.history_ids) id = 0;

  // zeroing marker row 0 must change nothing relative to a zeroed table
  auto baseline = enc.embed(seq, {});
  auto& table = enc.tables().history;
  std::vector<double> saved(table.values().begin(), table.values().end());
  // wipe rows 1..I; row 0 must be the only contributor
  for (int64_t r = 1; r < table.dim(0); ++r)
    for (int64_t j = 0; j < table.dim(1); ++j)
      table.values()[static_cast<size_t>(r * table.dim(1) + j)] = 99.0;
  auto wiped = enc.embed(seq, {});
  for (size_t i = 0; i < baseline.values().size(); ++i)
    CHECK(baseline.values()[i] == wiped.values()[i]);
  std::copy(saved.begin(), saved.end(), table.values().begin());
}

TEST_CASE("embed: collapsed marker mode maps every nonzero id to the shared row") {
  auto cfg = toy_config();
  cfg.collapse_history_markers = true;
  std::mt19937 rng(3);
  Encoder<double> enc(cfg, rng);

  auto seq1 = toy_sequence(10, cfg);
  auto seq2 = seq1;
  // different nonzero marker ids must embed identically when collapsed
  for (auto& id : seq1.history_ids)
    if (id != 0) id = 1;
  for (auto& id : seq2.history_ids)
    if (id != 0) id = 3;
  auto a = enc.embed(seq1, {});
  auto b = enc.embed(seq2, {});
  for (size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("embed: out-of-range ids raise index errors") {
  auto cfg = toy_config();
  std::mt19937 rng(3);
  Encoder<double> enc(cfg, rng);
  auto seq = toy_sequence(10, cfg);
  seq.history_ids[2] = cfg.max_history_turns + 1;
  CHECK_THROWS_AS(enc.embed(seq, {}), std::out_of_range);
}

TEST_CASE("encode: padding content cannot leak into real positions") {
  auto cfg = toy_config();
  std::mt19937 rng(5);
  Encoder<double> enc(cfg, rng);
  auto seq = toy_sequence(9, cfg);
  auto [t1, s1] = enc.encode(seq, {});

  auto altered = seq;
  for (size_t p = 9; p < altered.token_ids.size(); ++p) {
    altered.token_ids[p] = static_cast<int32_t>(5 + p % 7);
    altered.history_ids[p] = static_cast<int32_t>(p % 3);
  }
  auto [t2, s2] = enc.encode(altered, {});
  const int64_t h = cfg.hidden_size;
  for (int64_t p = 0; p < 9; ++p)
    for (int64_t j = 0; j < h; ++j)
      CHECK(t1.values()[static_cast<size_t>(p * h + j)] ==
            doctest::Approx(t2.values()[static_cast<size_t>(p * h + j)]).epsilon(1e-12));
  for (int64_t j = 0; j < h; ++j)
    CHECK(s1.values()[static_cast<size_t>(j)] ==
          doctest::Approx(s2.values()[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("encode: changing one marker id changes the output") {
  auto cfg = toy_config();
  std::mt19937 rng(11);
  Encoder<double> enc(cfg, rng);
  auto seq = toy_sequence(10, cfg);
  auto [t1, s1] = enc.encode(seq, {});
  auto altered = seq;
  altered.history_ids[4] = (seq.history_ids[4] == 2) ? 1 : 2;
  auto [t2, s2] = enc.encode(altered, {});
  double diff = 0.0;
  for (size_t i = 0; i < t1.values().size(); ++i)
    diff += std::abs(t1.values()[i] - t2.values()[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("pool_sequence: mode examples") {
  auto cfg = toy_config();
  std::mt19937 rng(2);
  Encoder<double> enc(cfg, rng);

  // average of identical rows is that row
  TensorD t = TensorD::zeros({4, 8});
  for (int64_t r = 0; r < 4; ++r)
    for (int64_t j = 0; j < 8; ++j) t.values()[static_cast<size_t>(r * 8 + j)] = 0.5 * static_cast<double>(j);
  BoolMask mask{1, 1, 1, 0};
  auto avg = enc.pool_sequence(t, mask, PoolingMode::kAverage);
  for (int64_t j = 0; j < 8; ++j)
    CHECK(avg.values()[static_cast<size_t>(j)] == doctest::Approx(0.5 * static_cast<double>(j)));

  // columnwise max
  TensorD t2 = TensorD::zeros({2, 8});
  t2.values()[0] = 1;
  t2.values()[1] = 5;
  t2.values()[8] = 3;
  t2.values()[9] = 2;
  auto mx = enc.pool_sequence(t2, BoolMask{1, 1}, PoolingMode::kMax);
  CHECK(mx.values()[0] == 3.0);
  CHECK(mx.values()[1] == 5.0);

  // zero projection -> zero vector under cls pooling
  for (auto& v : enc.cls_proj().values()) v = 0.0;
  auto cls = enc.pool_sequence(t2, BoolMask{1, 1}, PoolingMode::kClsDenseTanh);
  for (double v : cls.values()) CHECK(v == 0.0);
}

TEST_CASE("pool_sequence: modes agree on a single-token sequence") {
  auto cfg = toy_config();
  std::mt19937 rng(8);
  Encoder<double> enc(cfg, rng);
  auto seq = toy_sequence(1, cfg);
  auto [tokens, pooled] = enc.encode(seq, {});
  BoolMask mask = seq.attention_mask;
  auto avg = enc.pool_sequence(tokens, mask, PoolingMode::kAverage);
  auto mx = enc.pool_sequence(tokens, mask, PoolingMode::kMax);
  for (int64_t j = 0; j < cfg.hidden_size; ++j) {
    CHECK(avg.values()[static_cast<size_t>(j)] ==
          doctest::Approx(tokens.values()[static_cast<size_t>(j)]));
    CHECK(mx.values()[static_cast<size_t>(j)] ==
          doctest::Approx(tokens.values()[static_cast<size_t>(j)]));
  }
}

TEST_CASE("encoder gradient check at h=8, one layer, M=16") {
  auto cfg = toy_config();
  std::mt19937 rng(21);
  Encoder<double> enc(cfg, rng);
  std::vector<std::pair<std::string, Tensor<double>>> named;
  enc.collect_parameters(named);
  std::vector<Tensor<double>> params;
  for (auto& [name, p] : named) {
    p.set_requires_grad();
    params.push_back(p);
  }
  auto seq = toy_sequence(7, cfg);
  auto fn = [&] {
    auto [tokens, pooled] = enc.encode(seq, {});
    return add(mean(mul(tokens, tokens)), sum(tanh(pooled)));
  };
  const double err = grad_check<double>(fn, params, 1e-5);
  CHECK(err <= 1e-3);
}
