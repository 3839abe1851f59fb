#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "convqa/heads.hpp"

using namespace convqa;

namespace {

TensorD random_tensor(Shape shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t = TensorD::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Exhaustive search over all valid (begin, end) pairs; the decoding oracle.
SpanPrediction brute_force_decode(std::span<const double> pb, std::span<const double> pe,
                                  const SpanConstraints& c) {
  SpanPrediction best;
  bool have = false;
  for (int32_t b = c.passage_begin; b < c.passage_end; ++b)
    for (int32_t e = c.passage_begin; e < c.passage_end; ++e) {
      if (e < b || e - b + 1 > c.max_answer_len) continue;
      const double s = std::log(pb[static_cast<size_t>(b)]) + std::log(pe[static_cast<size_t>(e)]);
      if (!have || s > best.score ||
          (s == best.score && (b < best.begin || (b == best.begin && e < best.end)))) {
        best = SpanPrediction{b, e, s, false, 0, ""};
        have = true;
      }
    }
  best.is_cannot_answer = (best.begin == c.sentinel_pos && best.end == c.sentinel_pos);
  return best;
}

std::pair<TensorD, TensorD> random_distributions(int64_t m, const BoolMask& mask,
                                                 std::mt19937& rng, double spread = 3.0) {
  auto lb = random_tensor({m}, rng, -spread, spread);
  auto le = random_tensor({m}, rng, -spread, spread);
  return {masked_softmax(lb, mask), masked_softmax(le, mask)};
}

}  // namespace

TEST_CASE("span_distributions: examples") {
  std::mt19937 rng(1);
  const int64_t m = 6, h = 4;
  TensorD reps = random_tensor({m, h}, rng);
  BoolMask mask{1, 1, 1, 1, 0, 0};

  SpanHead<double> zero_head{TensorD::zeros({h}), TensorD::zeros({h})};
  auto [pb, pe] = span_distributions(reps, zero_head, mask);
  for (size_t i = 0; i < 4; ++i) CHECK(pb.values()[i] == doctest::Approx(0.25));
  for (size_t i = 4; i < 6; ++i) CHECK(pb.values()[i] <= 1e-6);
  double sum = 0.0;
  for (double v : pe.values()) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  BoolMask one{0, 0, 1, 0, 0, 0};
  auto [pb1, pe1] = span_distributions(reps, zero_head, one);
  CHECK(pb1.values()[2] == doctest::Approx(1.0));

  // crafted logits (0, ln 2) over two positions
  TensorD crafted = TensorD::zeros({2, 1});
  crafted.values()[0] = 0.0;
  crafted.values()[1] = std::log(2.0);
  SpanHead<double> unit{TensorD::from({1}, {1.0}), TensorD::from({1}, {1.0})};
  auto [pb2, pe2] = span_distributions(crafted, unit, BoolMask{1, 1});
  CHECK(pb2.values()[0] == doctest::Approx(1.0 / 3.0));
  CHECK(pb2.values()[1] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("span_loss: analytic examples") {
  TensorD pb = TensorD::from({3}, {1.0, 0.0, 0.0});
  TensorD pe = TensorD::from({3}, {0.0, 1.0, 0.0});
  BoolMask mask{1, 1, 1};
  CHECK(span_loss(pb, pe, 0, 1, mask).item() == doctest::Approx(0.0));

  TensorD half = TensorD::from({2}, {0.5, 0.5});
  CHECK(span_loss(half, half, 0, 1, BoolMask{1, 1}).item() == doctest::Approx(std::log(2.0)));

  TensorD pb2 = TensorD::from({4}, {0.5, 0.3, 0.1, 0.1});
  TensorD pe2 = TensorD::from({4}, {0.25, 0.25, 0.25, 0.25});
  const double expect = 0.5 * (std::log(2.0) + std::log(4.0));
  CHECK(span_loss(pb2, pe2, 0, 2, BoolMask{1, 1, 1, 1}).item() == doctest::Approx(expect));

  CHECK_THROWS_AS(span_loss(pb, pe, 0, 1, BoolMask{1, 0, 1}), ContractError);
}

TEST_CASE("dialog acts: examples") {
  const int64_t h = 5;
  TensorD rep = TensorD::from({h}, {0.3, -0.2, 0.9, 0.1, -0.5});

  DialogActHead<double> zero{TensorD::zeros({3, h}), TensorD::zeros({3, h})};
  auto [pa, pc] = dialog_act_distributions(rep, zero);
  for (double v : pa.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
  auto [la, lc] = dialog_act_loss(pa, pc, Affirmation::kYes, Continuation::kFollowUp);
  CHECK(la.item() == doctest::Approx(std::log(3.0)));

  // a huge margin on the gold row drives the loss to zero
  DialogActHead<double> margin{TensorD::zeros({3, h}), TensorD::zeros({3, h})};
  for (int64_t j = 0; j < h; ++j)
    margin.affirm_weights.values()[static_cast<size_t>(h + j)] =
        50.0 * rep.values()[static_cast<size_t>(j)];
  auto [pa2, pc2] = dialog_act_distributions(rep, margin);
  auto [la2, lc2] = dialog_act_loss(pa2, pc2, Affirmation::kNo, Continuation::kFollowUp);
  CHECK(la2.item() <= 1e-6);
  CHECK(argmax_class(pa2) == static_cast<int32_t>(Affirmation::kNo));

  // logits (0, ln 2, 0) with gold class 1 -> -log(2/4) = ln 2
  TensorD probs = masked_softmax(TensorD::from({3}, {0.0, std::log(2.0), 0.0}), BoolMask{1, 1, 1});
  CHECK(cross_entropy(probs, 1).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("dialog act predictions ignore constant logit shifts") {
  std::mt19937 rng(2);
  const int64_t h = 6;
  TensorD rep = random_tensor({h}, rng);
  DialogActHead<double> head{random_tensor({3, h}, rng), random_tensor({3, h}, rng)};
  auto [pa, pc] = dialog_act_distributions(rep, head);

  // adding the same row vector to all classes shifts all logits equally
  DialogActHead<double> shifted = head;
  TensorD delta = random_tensor({h}, rng);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t j = 0; j < h; ++j)
      shifted.affirm_weights.values()[static_cast<size_t>(r * h + j)] +=
          delta.values()[static_cast<size_t>(j)];
  auto [pa2, pc2] = dialog_act_distributions(rep, shifted);
  CHECK(argmax_class(pa) == argmax_class(pa2));
  for (size_t i = 0; i < 3; ++i)
    CHECK(pa.values()[i] == doctest::Approx(pa2.values()[i]).epsilon(1e-9));
}

TEST_CASE("decode_span: peaked examples") {
  const int64_t m = 12;
  SpanConstraints c{3, 12, 11, 40};

  TensorD pb = TensorD::filled({m}, 1e-9);
  TensorD pe = TensorD::filled({m}, 1e-9);
  pb.values()[4] = 0.9;
  pe.values()[6] = 0.9;
  auto pred = decode_span<double>(pb.values(), pe.values(), c);
  CHECK(pred.begin == 4);
  CHECK(pred.end == 6);
  CHECK(!pred.is_cannot_answer);

  // end peak strictly before begin peak: a different valid span wins, and it
  // must match brute force
  TensorD pb2 = TensorD::filled({m}, 1e-6);
  TensorD pe2 = TensorD::filled({m}, 1e-6);
  pb2.values()[8] = 0.9;
  pe2.values()[4] = 0.9;
  auto pred2 = decode_span<double>(pb2.values(), pe2.values(), c);
  auto oracle2 = brute_force_decode(pb2.values(), pe2.values(), c);
  CHECK(pred2.begin == oracle2.begin);
  CHECK(pred2.end == oracle2.end);
  CHECK(pred2.begin <= pred2.end);

  // length cap forces the best pair within the limit
  SpanConstraints capped{3, 12, 11, 3};
  TensorD pb3 = TensorD::filled({m}, 1e-6);
  TensorD pe3 = TensorD::filled({m}, 1e-6);
  pb3.values()[3] = 0.9;
  pe3.values()[10] = 0.9;  // span 3..10 is too long now
  auto pred3 = decode_span<double>(pb3.values(), pe3.values(), capped);
  auto oracle3 = brute_force_decode(pb3.values(), pe3.values(), capped);
  CHECK(pred3.begin == oracle3.begin);
  CHECK(pred3.end == oracle3.end);
  CHECK(pred3.end - pred3.begin + 1 <= 3);
}

TEST_CASE("decode_span: 1000 random instances match brute force") {
  std::mt19937 rng(77);
  for (int round = 0; round < 1000; ++round) {
    const int64_t m = 8 + static_cast<int64_t>(rng() % 57);  // M <= 64
    SpanConstraints c;
    c.passage_begin = 1 + static_cast<int32_t>(rng() % (m / 2));
    c.passage_end = static_cast<int32_t>(m) - static_cast<int32_t>(rng() % 3);
    c.sentinel_pos = c.passage_end - 1;
    c.max_answer_len = (round % 3 == 0) ? 40 : 1 + static_cast<int32_t>(rng() % 12);
    BoolMask mask(static_cast<size_t>(m), 0);
    for (int32_t p = c.passage_begin; p < c.passage_end; ++p) mask[static_cast<size_t>(p)] = 1;
    auto [pb, pe] = random_distributions(m, mask, rng);
    // occasionally pile mass on the sentinel to exercise CANNOTANSWER
    if (round % 5 == 0) {
      pb.values()[static_cast<size_t>(c.sentinel_pos)] += 0.5;
      pe.values()[static_cast<size_t>(c.sentinel_pos)] += 0.5;
    }
    auto fast = decode_span<double>(pb.values(), pe.values(), c);
    auto oracle = brute_force_decode(pb.values(), pe.values(), c);
    REQUIRE(fast.begin == oracle.begin);
    REQUIRE(fast.end == oracle.end);
    REQUIRE(fast.is_cannot_answer == oracle.is_cannot_answer);

    // validity constraints always hold
    CHECK(fast.begin >= c.passage_begin);
    CHECK(fast.end < c.passage_end);
    CHECK(fast.begin <= fast.end);
    CHECK(fast.end - fast.begin + 1 <= c.max_answer_len);
  }
}

TEST_CASE("decode_span: positive rescaling of logits never changes the argmax") {
  std::mt19937 rng(31);
  for (int round = 0; round < 50; ++round) {
    const int64_t m = 16;
    SpanConstraints c{2, 16, 15, 40};
    BoolMask mask(static_cast<size_t>(m), 0);
    for (int32_t p = c.passage_begin; p < c.passage_end; ++p) mask[static_cast<size_t>(p)] = 1;
    TensorD lb = random_tensor({m}, rng, -2.0, 2.0);
    TensorD le = random_tensor({m}, rng, -2.0, 2.0);
    auto base = decode_span<double>(masked_softmax(lb, mask).values(),
                                    masked_softmax(le, mask).values(), c);
    auto scaled = decode_span<double>(masked_softmax(scale(lb, 3.7), mask).values(),
                                      masked_softmax(scale(le, 3.7), mask).values(), c);
    CHECK(base.begin == scaled.begin);
    CHECK(base.end == scaled.end);
  }
}

TEST_CASE("aggregate_windows: examples") {
  SpanPrediction w0{2, 4, -1.2, false, 0, "alpha"};
  SpanPrediction w1{5, 6, -0.7, false, 1, "beta"};
  CHECK(aggregate_windows({w0}).text == "alpha");
  CHECK(aggregate_windows({w0, w1}).text == "beta");

  // equal scores -> earliest window
  SpanPrediction tie0{2, 4, -1.0, false, 0, "first"};
  SpanPrediction tie1{3, 5, -1.0, false, 1, "second"};
  CHECK(aggregate_windows({tie1, tie0}).text == "first");

  // a real span beats the sentinel on an equal score
  SpanPrediction ca{9, 9, -1.0, true, 0, "CANNOTANSWER"};
  SpanPrediction real{2, 3, -1.0, false, 1, "real"};
  CHECK(aggregate_windows({ca, real}).text == "real");
}
