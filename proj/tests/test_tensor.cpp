#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "convqa/tensor.hpp"

using namespace convqa;

namespace {

// Independent triple-loop product used as the matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int64_t m, int64_t k, int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      for (int64_t l = 0; l < k; ++l)
        c[static_cast<size_t>(i * n + j)] +=
            a[static_cast<size_t>(i * k + l)] * b[static_cast<size_t>(l * n + j)];
  return c;
}

TensorD random_tensor(Shape shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t = TensorD::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("matmul matches hand values and the triple-loop oracle") {
  TensorD eye = TensorD::from({2, 2}, {1, 0, 0, 1});
  TensorD a = TensorD::from({2, 2}, {1, 2, 3, 4});
  auto id_prod = matmul(eye, a);
  for (size_t i = 0; i < 4; ++i) CHECK(id_prod.values()[i] == a.values()[i]);

  TensorD b = TensorD::from({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  // expected values frozen from naive_matmul
  auto expect = naive_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
  CHECK(expect == std::vector<double>{19, 22, 43, 50});
  for (size_t i = 0; i < 4; ++i) CHECK(c.values()[i] == doctest::Approx(expect[i]));

  TensorD zero = TensorD::zeros({2, 2});
  auto z = matmul(zero, b);
  for (double v : z.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(matmul(TensorD::zeros({2, 3}), TensorD::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul agrees with the oracle exactly on small integer matrices") {
  std::mt19937 rng(123);
  std::uniform_int_distribution<int> dist(-4, 4);
  for (int round = 0; round < 20; ++round) {
    const int64_t m = 1 + static_cast<int64_t>(rng() % 5);
    const int64_t k = 1 + static_cast<int64_t>(rng() % 5);
    const int64_t n = 1 + static_cast<int64_t>(rng() % 5);
    std::vector<double> av(static_cast<size_t>(m * k)), bv(static_cast<size_t>(k * n));
    for (auto& v : av) v = dist(rng);
    for (auto& v : bv) v = dist(rng);
    auto got = matmul(TensorD::from({m, k}, av), TensorD::from({k, n}, bv));
    auto expect = naive_matmul(av, bv, m, k, n);
    for (size_t i = 0; i < expect.size(); ++i) CHECK(got.values()[i] == expect[i]);
  }
}

TEST_CASE("matmul associativity matches the oracle in 64-bit mode") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> dist(-3, 3);
  std::vector<double> av(12), bv(12), cv(9);
  for (auto& v : av) v = dist(rng);
  for (auto& v : bv) v = dist(rng);
  for (auto& v : cv) v = dist(rng);
  TensorD a = TensorD::from({4, 3}, av), b = TensorD::from({3, 4}, bv), c = TensorD::from({4, 3}, cv);
  auto left = matmul(matmul(a, b), c);
  auto right = matmul(a, matmul(b, c));
  auto expect = naive_matmul(naive_matmul(av, bv, 4, 3, 4), cv, 4, 4, 3);
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(left.values()[i] == expect[i]);
    CHECK(right.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("masked_softmax examples") {
  auto single = masked_softmax(TensorD::from({1}, {5.0}), BoolMask{1});
  CHECK(single.values()[0] == doctest::Approx(1.0));

  auto equal = masked_softmax(TensorD::from({3}, {2.5, 2.5, 2.5}), BoolMask{1, 1, 1});
  for (double v : equal.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto analytic = masked_softmax(TensorD::from({2}, {0.0, std::log(2.0)}), BoolMask{1, 1});
  CHECK(analytic.values()[0] == doctest::Approx(1.0 / 3.0));
  CHECK(analytic.values()[1] == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(masked_softmax(TensorD::from({2}, {1.0, 2.0}), BoolMask{0, 0}), ContractError);
}

TEST_CASE("masked_softmax invariants: sums, masking, shift invariance") {
  std::mt19937 rng(42);
  for (int round = 0; round < 50; ++round) {
    const int64_t n = 2 + static_cast<int64_t>(rng() % 10);
    TensorD logits = random_tensor({n}, rng, -5.0, 5.0);
    BoolMask mask(static_cast<size_t>(n));
    bool any = false;
    for (auto& b : mask) {
      b = rng() % 2;
      any = any || b;
    }
    if (!any) mask[0] = 1;
    auto p = masked_softmax(logits, mask);
    double sum = 0.0;
    for (size_t i = 0; i < mask.size(); ++i) {
      sum += p.values()[i];
      if (!mask[i]) CHECK(p.values()[i] <= 1e-6);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

    TensorD shifted = TensorD::zeros({n});
    for (int64_t i = 0; i < n; ++i) shifted.values()[static_cast<size_t>(i)] = logits.values()[static_cast<size_t>(i)] + 3.25;
    auto q = masked_softmax(shifted, mask);
    for (size_t i = 0; i < mask.size(); ++i)
      CHECK(std::abs(q.values()[i] - p.values()[i]) <= 1e-6);
  }
}

TEST_CASE("cross_entropy examples and errors") {
  CHECK(cross_entropy(TensorD::from({2}, {1.0, 0.0}), 0).item() == doctest::Approx(0.0));
  CHECK(cross_entropy(TensorD::from({2}, {0.5, 0.5}), 1).item() == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy(TensorD::from({4}, {0.25, 0.25, 0.25, 0.25}), 2).item() ==
        doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(cross_entropy(TensorD::from({2}, {0.5, 0.5}), 2), std::out_of_range);
  CHECK_THROWS_AS(cross_entropy(TensorD::from({2}, {0.5, 0.5}), -1), std::out_of_range);
}

TEST_CASE("elementwise examples") {
  CHECK(tanh(TensorD::scalar(0.0)).item() == 0.0);
  CHECK(mean(TensorD::from({3}, {2, 4, 6})).item() == doctest::Approx(4.0));

  TensorD x = TensorD::from({3}, {1, 3, 2});
  x.set_requires_grad();
  Tape<double> tape;
  auto m = max(x);
  CHECK(m.item() == 3.0);
  tape.backward(m);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);

  CHECK_THROWS_AS(add(TensorD::zeros({2}), TensorD::zeros({3})), ShapeError);
}

TEST_CASE("max backward breaks ties toward the lowest index") {
  TensorD x = TensorD::from({4}, {7, 7, 7, 1});
  x.set_requires_grad();
  Tape<double> tape;
  tape.backward(max(x));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward: analytic examples") {
  // loss = x^2 at x = 3 -> grad 6
  TensorD x = TensorD::scalar(3.0);
  x.set_requires_grad();
  {
    Tape<double> tape;
    tape.backward(mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
  }
  // loss = sum(A v) -> dA = 1 v^T rows
  TensorD a = TensorD::from({2, 2}, {1, 2, 3, 4});
  TensorD v = TensorD::from({2}, {5, 7});
  a.set_requires_grad();
  {
    Tape<double> tape;
    tape.backward(sum(matvec(a, v)));
    CHECK(a.grad()[0] == 5.0);
    CHECK(a.grad()[1] == 7.0);
    CHECK(a.grad()[2] == 5.0);
    CHECK(a.grad()[3] == 7.0);
  }
}

TEST_CASE("backward accumulates both contributions when a tensor is used twice") {
  TensorD x = TensorD::scalar(2.0);
  x.set_requires_grad();
  Tape<double> tape;
  // loss = x*x + 3x -> dL/dx = 2x + 3 = 7
  auto loss = add(mul(x, x), scale(x, 3.0));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("backward on an untracked tensor is a contract violation") {
  TensorD x = TensorD::scalar(1.0);
  Tape<double> tape;
  CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("grad_check: quadratic is exact to rounding") {
  TensorD x = TensorD::scalar(3.0);
  x.set_requires_grad();
  const double err = grad_check<double>([&] { return mul(x, x); }, {x}, 1e-4);
  CHECK(err <= 1e-6);
}

TEST_CASE("grad_check: masked_softmax + cross_entropy on 5 logits") {
  std::mt19937 rng(5);
  TensorD logits = random_tensor({5}, rng, -2.0, 2.0);
  logits.set_requires_grad();
  BoolMask mask{1, 1, 0, 1, 1};
  const double err = grad_check<double>(
      [&] { return cross_entropy(masked_softmax(logits, mask), 3); }, {logits}, 1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("grad_check rejects non-scalar functions") {
  TensorD x = TensorD::from({2}, {1, 2});
  x.set_requires_grad();
  CHECK_THROWS_AS(grad_check<double>([&] { return add(x, x); }, {x}), ContractError);
}

TEST_CASE("grad_check passes for every differentiable op at random points") {
  std::mt19937 rng(99);
  for (int round = 0; round < 5; ++round) {
    TensorD a = random_tensor({3, 4}, rng);
    TensorD b = random_tensor({4, 2}, rng);
    TensorD c = random_tensor({3, 4}, rng);
    TensorD bias = random_tensor({4}, rng);
    TensorD gain = random_tensor({4}, rng, 0.5, 1.5);
    TensorD shift = random_tensor({4}, rng);
    TensorD vec = random_tensor({4}, rng);
    TensorD probe = random_tensor({2}, rng);
    for (auto* t : {&a, &b, &c, &bias, &gain, &shift, &vec, &probe}) t->set_requires_grad();
    BoolMask row_mask{1, 0, 1, 1};

    auto fn = [&] {
      auto x = add_rows(add(a, c), bias);             // [3x4]
      x = layer_norm(x, gain, shift);
      x = gelu(x);
      auto y = matmul(x, b);                          // [3x2]
      auto pooled = pool_max(transposed(y), BoolMask{1, 1});  // [3]
      auto pooled2 = pool_mean(x, BoolMask{1, 1, 1});         // [4]
      auto probs = masked_softmax(matvec(x, vec), BoolMask{1, 1, 1});
      auto sm = masked_softmax_rows(x, row_mask);
      auto fused = add(scale(sum(mul(y, y)), 0.25),
                       add(cross_entropy(probs, 1), sum(tanh(pooled))));
      fused = add(fused, sum(mul(sm, sm)));
      fused = add(fused, mean(reshaped(pooled2, {2, 2})));
      auto dots = stack_dots(probe, {row(y, 0), row(y, 2)});
      auto w = masked_softmax(dots, BoolMask{1, 1});
      auto agg = weighted_sum({rows(x, 0, 2), rows(x, 1, 3)}, w);
      auto cols_part = cols(agg, 1, 3);
      auto prw = per_row_weighted_sum({cols_part, mul(cols_part, cols_part)},
                                      masked_softmax_rows(cols_part, BoolMask{1, 1}));
      return add(fused, sum(prw));
    };
    const double err =
        grad_check<double>(fn, {a, b, c, bias, gain, shift, vec, probe}, 1e-5);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("embed_rows gathers and scatter-adds") {
  TensorD table = TensorD::from({3, 2}, {1, 2, 3, 4, 5, 6});
  table.set_requires_grad();
  Tape<double> tape;
  auto out = embed_rows(table, {2, 0, 2});
  CHECK(out.values()[0] == 5.0);
  CHECK(out.values()[2] == 1.0);
  tape.backward(sum(out));
  CHECK(table.grad()[0] == 1.0);  // row 0 used once
  CHECK(table.grad()[4] == 2.0);  // row 2 used twice
  CHECK(table.grad()[2] == 0.0);  // row 1 unused
  CHECK_THROWS_AS(embed_rows(table, {3}), std::out_of_range);
}

TEST_CASE("finite outputs on finite inputs across exposed ops") {
  std::mt19937 rng(17);
  TensorD a = random_tensor({6, 6}, rng, -30.0, 30.0);
  TensorD b = random_tensor({6, 6}, rng, -30.0, 30.0);
  BoolMask mask(6, 1);
  mask[3] = 0;
  CHECK(matmul(a, b).all_finite());
  CHECK(masked_softmax_rows(a, mask).all_finite());
  CHECK(gelu(a).all_finite());
  CHECK(tanh(a).all_finite());
  CHECK(layer_norm(a, TensorD::filled({6}, 1.0), TensorD::zeros({6})).all_finite());
  CHECK(pool_max(a, mask).all_finite());
  CHECK(pool_mean(a, mask).all_finite());
}

TEST_CASE("dropout replays identically from an equally seeded rng") {
  std::mt19937 rng_a(33), rng_b(33);
  std::mt19937 data_rng(1);
  TensorD x = random_tensor({8, 8}, data_rng);
  auto a = dropout(x, 0.4, rng_a);
  auto b = dropout(x, 0.4, rng_b);
  for (size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}
