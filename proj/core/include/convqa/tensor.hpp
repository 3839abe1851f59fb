#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// Tensors are value-semantic handles onto shared buffers. Every operation
// produces a fresh tensor; buffers are never mutated after an op has written
// them, so snapshots taken for backward closures stay valid. Gradients are
// recorded on a thread_local Tape: executing an op while a tape is active
// appends a backward closure, and Tape::backward replays the closures in
// reverse execution order (a valid reverse topological order, each node
// visited exactly once). Instantiate with float for training throughput and
// with double for finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "convqa/errors.hpp"

namespace convqa {

using Shape = std::vector<int64_t>;
using BoolMask = std::vector<std::uint8_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out << " x ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace detail {

template <typename S>
struct TensorImpl {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // lazily allocated, same length as values
  bool requires_grad = false;
  bool tracked = false;  // produced by (or feeding) a taped op

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), S(0));
  }
};

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Impl = detail::TensorImpl<S>;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), S(0)); }

  static Tensor filled(Shape shape, S value) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->values.assign(static_cast<size_t>(shape_numel(shape)), value);
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("tensor literal: shape " + shape_str(shape) + " wants " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    return t;
  }

  static Tensor scalar(S v) { return from({}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

  std::span<S> values() { return impl_->values; }
  std::span<const S> values() const { return impl_->values; }

  S item() const {
    if (size() != 1)
      throw ContractError("item(): tensor has " + std::to_string(size()) +
                          " elements, expected a scalar");
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const S> grad() const { return impl_->grad; }
  std::span<S> grad_mut() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
  }

  bool all_finite() const {
    for (S v : impl_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::shared_ptr<Impl> impl_;  // ops reach in directly
};

template <typename S>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded closures newest-first.
  void backward(const Tensor<S>& loss) {
    if (!loss.defined() || !loss.impl_->tracked)
      throw ContractError("backward: tensor was not produced by tracked operations");
    if (loss.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(loss.shape()));
    loss.impl_->ensure_grad();
    loss.impl_->grad[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  static thread_local Tape* active_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::active_ = nullptr;

namespace detail {

template <typename S>
bool wants_grad(const Tensor<S>& t) {
  return t.impl_->requires_grad || t.impl_->tracked;
}

template <typename S, typename... Ts>
bool any_wants_grad(const Tensor<S>& first, const Ts&... rest) {
  if (wants_grad(first)) return true;
  if constexpr (sizeof...(rest) > 0) return any_wants_grad(rest...);
  return false;
}

// Registers `fn` on the active tape when any input participates in autodiff.
template <typename S, typename F>
void track(Tensor<S>& out, bool inputs_want_grad, F&& fn) {
  Tape<S>* tape = Tape<S>::active();
  if (!tape || !inputs_want_grad) return;
  out.impl_->tracked = true;
  tape->record(std::forward<F>(fn));
}

template <typename S>
bool has_out_grad(const std::shared_ptr<TensorImpl<S>>& out) {
  return !out->grad.empty();
}

// ---- raw kernels (row-major) ------------------------------------------------

// c[m x n] += a[m x k] * b[k x n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t l = 0; l < k; ++l) {
      const S av = arow[l];
      const S* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc = S(0);
      for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t l = 0; l < k; ++l) {
    const S* arow = a + l * m;
    const S* brow = b + l * n;
    for (int64_t i = 0; i < m; ++i) {
      const S av = arow[i];
      S* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---- shape helpers ----------------------------------------------------------

template <typename S>
void check_rank(const Tensor<S>& t, int rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// ---- core ops ---------------------------------------------------------------

// Standard matrix product a[m x k] * b[k x n].
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  detail::gemm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n);

  detail::track(out, detail::any_wants_grad(a, b), [ai = a.impl_, bi = b.impl_, oi = out.impl_, m, k, n] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    bi->ensure_grad();
    // dA += dC * B^T, dB += A^T * dC
    detail::gemm_nt(oi->grad.data(), bi->values.data(), ai->grad.data(), m, n, k);
    detail::gemm_tn(ai->values.data(), oi->grad.data(), bi->grad.data(), n, m, k);
  });
  return out;
}

// y[m] = A[m x k] * x[k]
template <typename S>
Tensor<S> matvec(const Tensor<S>& a, const Tensor<S>& x) {
  check_rank(a, 2, "matvec");
  check_rank(x, 1, "matvec");
  const int64_t m = a.dim(0), k = a.dim(1);
  if (x.dim(0) != k)
    throw ShapeError("matvec: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(x.shape()));
  Tensor<S> out = Tensor<S>::zeros({m});
  const S* ap = a.values().data();
  const S* xp = x.values().data();
  S* op = out.values().data();
  for (int64_t i = 0; i < m; ++i) {
    S acc = S(0);
    const S* arow = ap + i * k;
    for (int64_t l = 0; l < k; ++l) acc += arow[l] * xp[l];
    op[i] = acc;
  }
  detail::track(out, detail::any_wants_grad(a, x), [ai = a.impl_, xi = x.impl_, oi = out.impl_, m, k] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    xi->ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      const S g = oi->grad[static_cast<size_t>(i)];
      if (g == S(0)) continue;
      S* agrow = ai->grad.data() + i * k;
      const S* arow = ai->values.data() + i * k;
      for (int64_t l = 0; l < k; ++l) {
        agrow[l] += g * xi->values[static_cast<size_t>(l)];
        xi->grad[static_cast<size_t>(l)] += g * arow[l];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> transposed(const Tensor<S>& a) {
  check_rank(a, 2, "transposed");
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor<S> out = Tensor<S>::zeros({n, m});
  const S* ap = a.values().data();
  S* op = out.values().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) op[j * m + i] = ap[i * n + j];
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, m, n] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        ai->grad[static_cast<size_t>(i * n + j)] += oi->grad[static_cast<size_t>(j * m + i)];
  });
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const size_t n = a.impl_->values.size();
  for (size_t i = 0; i < n; ++i) out.impl_->values[i] = a.impl_->values[i] + b.impl_->values[i];
  detail::track(out, detail::any_wants_grad(a, b), [ai = a.impl_, bi = b.impl_, oi = out.impl_, n] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    bi->ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      ai->grad[i] += oi->grad[i];
      bi->grad[i] += oi->grad[i];
    }
  });
  return out;
}

// Adds a length-c bias row to every row of x[r x c].
template <typename S>
Tensor<S> add_rows(const Tensor<S>& x, const Tensor<S>& bias) {
  check_rank(x, 2, "add_rows");
  check_rank(bias, 1, "add_rows");
  const int64_t r = x.dim(0), c = x.dim(1);
  if (bias.dim(0) != c)
    throw ShapeError("add_rows: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      out.impl_->values[static_cast<size_t>(i * c + j)] =
          x.impl_->values[static_cast<size_t>(i * c + j)] + bias.impl_->values[static_cast<size_t>(j)];
  detail::track(out, detail::any_wants_grad(x, bias), [xi = x.impl_, bi = bias.impl_, oi = out.impl_, r, c] {
    if (!detail::has_out_grad(oi)) return;
    xi->ensure_grad();
    bi->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) {
        const S g = oi->grad[static_cast<size_t>(i * c + j)];
        xi->grad[static_cast<size_t>(i * c + j)] += g;
        bi->grad[static_cast<size_t>(j)] += g;
      }
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const size_t n = a.impl_->values.size();
  for (size_t i = 0; i < n; ++i) out.impl_->values[i] = a.impl_->values[i] * b.impl_->values[i];
  detail::track(out, detail::any_wants_grad(a, b), [ai = a.impl_, bi = b.impl_, oi = out.impl_, n] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    bi->ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      ai->grad[i] += oi->grad[i] * bi->values[i];
      bi->grad[i] += oi->grad[i] * ai->values[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const size_t n = a.impl_->values.size();
  const S cs = static_cast<S>(c);
  for (size_t i = 0; i < n; ++i) out.impl_->values[i] = a.impl_->values[i] * cs;
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, n, cs] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * cs;
  });
  return out;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const size_t n = a.impl_->values.size();
  for (size_t i = 0; i < n; ++i) out.impl_->values[i] = std::tanh(a.impl_->values[i]);
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, n] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      const S y = oi->values[i];
      ai->grad[i] += oi->grad[i] * (S(1) - y * y);
    }
  });
  return out;
}

// Exact (erf-based) gaussian error linear unit.
template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const size_t n = a.impl_->values.size();
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  for (size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a.impl_->values[i]);
    out.impl_->values[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, n, kInvSqrt2, kInvSqrt2Pi] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(ai->values[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ai->grad[i] += oi->grad[i] * static_cast<S>(cdf + x * pdf);
    }
  });
  return out;
}

namespace detail {

// One softmax row with -1e9 additive masking and max-subtraction.
template <typename S>
void softmax_row(const S* x, const std::uint8_t* mask, S* p, int64_t n) {
  constexpr S kMaskedLogit = S(-1e9);
  S mx = -std::numeric_limits<S>::infinity();
  for (int64_t j = 0; j < n; ++j) {
    const S z = mask[j] ? x[j] : x[j] + kMaskedLogit;
    if (z > mx) mx = z;
  }
  S denom = S(0);
  for (int64_t j = 0; j < n; ++j) {
    const S z = mask[j] ? x[j] : x[j] + kMaskedLogit;
    p[j] = std::exp(z - mx);
    denom += p[j];
  }
  for (int64_t j = 0; j < n; ++j) p[j] /= denom;
}

template <typename S>
void softmax_row_backward(const S* p, const S* gout, S* gin, int64_t n) {
  S dot = S(0);
  for (int64_t j = 0; j < n; ++j) dot += gout[j] * p[j];
  for (int64_t j = 0; j < n; ++j) gin[j] += p[j] * (gout[j] - dot);
}

inline void check_mask_any(const std::uint8_t* mask, int64_t n, const char* op) {
  for (int64_t j = 0; j < n; ++j)
    if (mask[j]) return;
  throw ContractError(std::string(op) + ": all positions are masked");
}

}  // namespace detail

// Exp-normalizes the unmasked entries of a vector; masked entries get
// (numerically) zero probability. Requires at least one unmasked entry.
template <typename S>
Tensor<S> masked_softmax(const Tensor<S>& logits, const BoolMask& mask) {
  check_rank(logits, 1, "masked_softmax");
  const int64_t n = logits.dim(0);
  if (static_cast<int64_t>(mask.size()) != n)
    throw ShapeError("masked_softmax: mask size " + std::to_string(mask.size()) +
                     " does not match logits " + shape_str(logits.shape()));
  detail::check_mask_any(mask.data(), n, "masked_softmax");
  Tensor<S> out = Tensor<S>::zeros(logits.shape());
  detail::softmax_row(logits.values().data(), mask.data(), out.values().data(), n);
  detail::track(out, detail::wants_grad(logits), [li = logits.impl_, oi = out.impl_, n] {
    if (!detail::has_out_grad(oi)) return;
    li->ensure_grad();
    detail::softmax_row_backward(oi->values.data(), oi->grad.data(), li->grad.data(), n);
  });
  return out;
}

// Row-wise masked softmax on logits[r x n]. The mask is either one shared row
// of length n or a full r x n matrix.
template <typename S>
Tensor<S> masked_softmax_rows(const Tensor<S>& logits, const BoolMask& mask) {
  check_rank(logits, 2, "masked_softmax_rows");
  const int64_t r = logits.dim(0), n = logits.dim(1);
  const bool per_row = static_cast<int64_t>(mask.size()) == r * n;
  if (!per_row && static_cast<int64_t>(mask.size()) != n)
    throw ShapeError("masked_softmax_rows: mask size " + std::to_string(mask.size()) +
                     " matches neither row length nor full shape of " +
                     shape_str(logits.shape()));
  Tensor<S> out = Tensor<S>::zeros(logits.shape());
  for (int64_t i = 0; i < r; ++i) {
    const std::uint8_t* mrow = per_row ? mask.data() + i * n : mask.data();
    detail::check_mask_any(mrow, n, "masked_softmax_rows");
    detail::softmax_row(logits.values().data() + i * n, mrow, out.values().data() + i * n, n);
  }
  detail::track(out, detail::wants_grad(logits), [li = logits.impl_, oi = out.impl_, r, n] {
    if (!detail::has_out_grad(oi)) return;
    li->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      detail::softmax_row_backward(oi->values.data() + i * n, oi->grad.data() + i * n,
                                   li->grad.data() + i * n, n);
  });
  return out;
}

// -log(p[target]) for a probability vector p.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& probs, int64_t target) {
  check_rank(probs, 1, "cross_entropy");
  const int64_t n = probs.dim(0);
  if (target < 0 || target >= n)
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                            " out of range [0, " + std::to_string(n) + ")");
  S sum = S(0);
  for (S v : probs.values()) sum += v;
  if (std::abs(static_cast<double>(sum) - 1.0) > 1e-3)
    throw ContractError("cross_entropy: probabilities sum to " +
                        std::to_string(static_cast<double>(sum)) + ", expected 1");
  constexpr S kTiny = std::numeric_limits<S>::min();
  const S p = std::max(probs.values()[static_cast<size_t>(target)], kTiny);
  Tensor<S> out = Tensor<S>::scalar(-std::log(p));
  detail::track(out, detail::wants_grad(probs), [pi = probs.impl_, oi = out.impl_, target, kTiny] {
    if (!detail::has_out_grad(oi)) return;
    pi->ensure_grad();
    const S pv = std::max(pi->values[static_cast<size_t>(target)], kTiny);
    pi->grad[static_cast<size_t>(target)] -= oi->grad[0] / pv;
  });
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = S(0);
  for (S v : a.values()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (S& g : ai->grad) g += oi->grad[0];
  });
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  const size_t n = a.impl_->values.size();
  if (n == 0) throw ContractError("mean: empty tensor");
  S acc = S(0);
  for (S v : a.values()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, n] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    const S g = oi->grad[0] / static_cast<S>(n);
    for (S& gi : ai->grad) gi += g;
  });
  return out;
}

// Global max. Backward routes the gradient to the first (lowest-index) argmax.
template <typename S>
Tensor<S> max(const Tensor<S>& a) {
  const size_t n = a.impl_->values.size();
  if (n == 0) throw ContractError("max: empty tensor");
  size_t arg = 0;
  for (size_t i = 1; i < n; ++i)
    if (a.impl_->values[i] > a.impl_->values[arg]) arg = i;
  Tensor<S> out = Tensor<S>::scalar(a.impl_->values[arg]);
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, arg] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    ai->grad[arg] += oi->grad[0];
  });
  return out;
}

// Row slice [begin, end) of a rank-2 tensor.
template <typename S>
Tensor<S> rows(const Tensor<S>& a, int64_t begin, int64_t end) {
  check_rank(a, 2, "rows");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (begin < 0 || end > r || begin >= end)
    throw std::out_of_range("rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") out of range for " + shape_str(a.shape()));
  Tensor<S> out = Tensor<S>::zeros({end - begin, c});
  std::copy_n(a.values().data() + begin * c, (end - begin) * c, out.values().data());
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, begin, end, c] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (int64_t i = 0; i < end - begin; ++i)
      for (int64_t j = 0; j < c; ++j)
        ai->grad[static_cast<size_t>((begin + i) * c + j)] += oi->grad[static_cast<size_t>(i * c + j)];
  });
  return out;
}

// Extracts row i of a rank-2 tensor as a vector.
template <typename S>
Tensor<S> row(const Tensor<S>& a, int64_t i) {
  check_rank(a, 2, "row");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (i < 0 || i >= r)
    throw std::out_of_range("row: index " + std::to_string(i) + " out of range for " +
                            shape_str(a.shape()));
  Tensor<S> out = Tensor<S>::zeros({c});
  std::copy_n(a.values().data() + i * c, c, out.values().data());
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, i, c] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (int64_t j = 0; j < c; ++j)
      ai->grad[static_cast<size_t>(i * c + j)] += oi->grad[static_cast<size_t>(j)];
  });
  return out;
}

// Column slice [begin, end) of a rank-2 tensor.
template <typename S>
Tensor<S> cols(const Tensor<S>& a, int64_t begin, int64_t end) {
  check_rank(a, 2, "cols");
  const int64_t r = a.dim(0), c = a.dim(1);
  if (begin < 0 || end > c || begin >= end)
    throw std::out_of_range("cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                            ") out of range for " + shape_str(a.shape()));
  const int64_t w = end - begin;
  Tensor<S> out = Tensor<S>::zeros({r, w});
  for (int64_t i = 0; i < r; ++i)
    std::copy_n(a.values().data() + i * c + begin, w, out.values().data() + i * w);
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_, r, c, begin, w] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < w; ++j)
        ai->grad[static_cast<size_t>(i * c + begin + j)] += oi->grad[static_cast<size_t>(i * w + j)];
  });
  return out;
}

// Concatenates rank-2 tensors with equal row counts along columns.
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const int64_t r = parts[0].dim(0);
  int64_t total = 0;
  bool wants = false;
  for (const auto& p : parts) {
    check_rank(p, 2, "concat_cols");
    if (p.dim(0) != r)
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    total += p.dim(1);
    wants = wants || detail::wants_grad(p);
  }
  Tensor<S> out = Tensor<S>::zeros({r, total});
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t w = p.dim(1);
    for (int64_t i = 0; i < r; ++i)
      std::copy_n(p.values().data() + i * w, w, out.values().data() + i * total + off);
    off += w;
  }
  std::vector<std::shared_ptr<detail::TensorImpl<S>>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) impls.push_back(p.impl_);
  detail::track(out, wants, [impls, oi = out.impl_, r, total] {
    if (!detail::has_out_grad(oi)) return;
    int64_t off = 0;
    for (auto& pi : impls) {
      const int64_t w = pi->shape[1];
      pi->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < w; ++j)
          pi->grad[static_cast<size_t>(i * w + j)] += oi->grad[static_cast<size_t>(i * total + off + j)];
      off += w;
    }
  });
  return out;
}

// Same data, new shape (copying); backward is the identity scatter.
template <typename S>
Tensor<S> reshaped(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshaped: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  Tensor<S> out = Tensor<S>::from(std::move(shape),
                                  {a.impl_->values.begin(), a.impl_->values.end()});
  detail::track(out, detail::wants_grad(a), [ai = a.impl_, oi = out.impl_] {
    if (!detail::has_out_grad(oi)) return;
    ai->ensure_grad();
    for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
  });
  return out;
}

// Gathers rows of an embedding table; backward scatter-adds into the table.
template <typename S>
Tensor<S> embed_rows(const Tensor<S>& table, const std::vector<int32_t>& ids) {
  check_rank(table, 2, "embed_rows");
  const int64_t v = table.dim(0), h = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embed_rows: id " + std::to_string(id) +
                              " out of range for table " + shape_str(table.shape()));
  const int64_t n = static_cast<int64_t>(ids.size());
  Tensor<S> out = Tensor<S>::zeros({n, h});
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(table.values().data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * h, h,
                out.values().data() + i * h);
  detail::track(out, detail::wants_grad(table), [ti = table.impl_, oi = out.impl_, ids, h, n] {
    if (!detail::has_out_grad(oi)) return;
    ti->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      S* trow = ti->grad.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * h;
      const S* grow = oi->grad.data() + i * h;
      for (int64_t j = 0; j < h; ++j) trow[j] += grow[j];
    }
  });
  return out;
}

// out = sum_i w[i] * parts[i]; the convex aggregation of a stack of
// same-shape tensors under one weight vector.
template <typename S>
Tensor<S> weighted_sum(const std::vector<Tensor<S>>& parts, const Tensor<S>& w) {
  if (parts.empty()) throw ContractError("weighted_sum: no parts");
  check_rank(w, 1, "weighted_sum");
  if (w.dim(0) != static_cast<int64_t>(parts.size()))
    throw ShapeError("weighted_sum: " + std::to_string(parts.size()) + " parts vs weights " +
                     shape_str(w.shape()));
  bool wants = detail::wants_grad(w);
  for (const auto& p : parts) {
    check_same_shape(p, parts[0], "weighted_sum");
    wants = wants || detail::wants_grad(p);
  }
  Tensor<S> out = Tensor<S>::zeros(parts[0].shape());
  const size_t n = out.impl_->values.size();
  for (size_t i = 0; i < parts.size(); ++i) {
    const S wi = w.values()[i];
    const S* pv = parts[i].values().data();
    S* ov = out.values().data();
    for (size_t j = 0; j < n; ++j) ov[j] += wi * pv[j];
  }
  std::vector<std::shared_ptr<detail::TensorImpl<S>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl_);
  detail::track(out, wants, [impls, wi_ = w.impl_, oi = out.impl_, n] {
    if (!detail::has_out_grad(oi)) return;
    wi_->ensure_grad();
    for (size_t i = 0; i < impls.size(); ++i) {
      auto& pi = impls[i];
      pi->ensure_grad();
      const S wv = wi_->values[i];
      S dw = S(0);
      for (size_t j = 0; j < n; ++j) {
        pi->grad[j] += wv * oi->grad[j];
        dw += pi->values[j] * oi->grad[j];
      }
      wi_->grad[i] += dw;
    }
  });
  return out;
}

// Per-row convex aggregation: out[m,:] = sum_i weights[m,i] * parts[i][m,:].
template <typename S>
Tensor<S> per_row_weighted_sum(const std::vector<Tensor<S>>& parts, const Tensor<S>& weights) {
  if (parts.empty()) throw ContractError("per_row_weighted_sum: no parts");
  check_rank(parts[0], 2, "per_row_weighted_sum");
  check_rank(weights, 2, "per_row_weighted_sum");
  const int64_t m = parts[0].dim(0), h = parts[0].dim(1);
  const int64_t count = static_cast<int64_t>(parts.size());
  if (weights.dim(0) != m || weights.dim(1) != count)
    throw ShapeError("per_row_weighted_sum: weights " + shape_str(weights.shape()) +
                     " want [" + std::to_string(m) + " x " + std::to_string(count) + "]");
  bool wants = detail::wants_grad(weights);
  for (const auto& p : parts) {
    check_same_shape(p, parts[0], "per_row_weighted_sum");
    wants = wants || detail::wants_grad(p);
  }
  Tensor<S> out = Tensor<S>::zeros({m, h});
  for (int64_t i = 0; i < count; ++i) {
    const S* pv = parts[static_cast<size_t>(i)].values().data();
    const S* wv = weights.values().data();
    S* ov = out.values().data();
    for (int64_t r = 0; r < m; ++r) {
      const S wri = wv[r * count + i];
      for (int64_t j = 0; j < h; ++j) ov[r * h + j] += wri * pv[r * h + j];
    }
  }
  std::vector<std::shared_ptr<detail::TensorImpl<S>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl_);
  detail::track(out, wants, [impls, wi_ = weights.impl_, oi = out.impl_, m, h, count] {
    if (!detail::has_out_grad(oi)) return;
    wi_->ensure_grad();
    for (int64_t i = 0; i < count; ++i) {
      auto& pi = impls[static_cast<size_t>(i)];
      pi->ensure_grad();
      for (int64_t r = 0; r < m; ++r) {
        const S wri = wi_->values[static_cast<size_t>(r * count + i)];
        S dw = S(0);
        for (int64_t j = 0; j < h; ++j) {
          const S g = oi->grad[static_cast<size_t>(r * h + j)];
          pi->grad[static_cast<size_t>(r * h + j)] += wri * g;
          dw += pi->values[static_cast<size_t>(r * h + j)] * g;
        }
        wi_->grad[static_cast<size_t>(r * count + i)] += dw;
      }
    }
  });
  return out;
}

// logits[i] = dot(probe, parts[i]) over a list of equal-length vectors.
template <typename S>
Tensor<S> stack_dots(const Tensor<S>& probe, const std::vector<Tensor<S>>& parts) {
  check_rank(probe, 1, "stack_dots");
  if (parts.empty()) throw ContractError("stack_dots: no parts");
  const int64_t h = probe.dim(0);
  bool wants = detail::wants_grad(probe);
  for (const auto& p : parts) {
    check_rank(p, 1, "stack_dots");
    if (p.dim(0) != h)
      throw ShapeError("stack_dots: part " + shape_str(p.shape()) + " vs probe " +
                       shape_str(probe.shape()));
    wants = wants || detail::wants_grad(p);
  }
  const int64_t n = static_cast<int64_t>(parts.size());
  Tensor<S> out = Tensor<S>::zeros({n});
  for (int64_t i = 0; i < n; ++i) {
    S acc = S(0);
    const S* pv = parts[static_cast<size_t>(i)].values().data();
    for (int64_t j = 0; j < h; ++j) acc += probe.values()[static_cast<size_t>(j)] * pv[j];
    out.values()[static_cast<size_t>(i)] = acc;
  }
  std::vector<std::shared_ptr<detail::TensorImpl<S>>> impls;
  for (const auto& p : parts) impls.push_back(p.impl_);
  detail::track(out, wants, [impls, di = probe.impl_, oi = out.impl_, h, n] {
    if (!detail::has_out_grad(oi)) return;
    di->ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const S g = oi->grad[static_cast<size_t>(i)];
      if (g == S(0)) continue;
      auto& pi = impls[static_cast<size_t>(i)];
      pi->ensure_grad();
      for (int64_t j = 0; j < h; ++j) {
        di->grad[static_cast<size_t>(j)] += g * pi->values[static_cast<size_t>(j)];
        pi->grad[static_cast<size_t>(j)] += g * di->values[static_cast<size_t>(j)];
      }
    }
  });
  return out;
}

// Column-wise max over unmasked rows of x[m x h]. Ties and backward routing
// go to the lowest qualifying row index.
template <typename S>
Tensor<S> pool_max(const Tensor<S>& x, const BoolMask& mask) {
  check_rank(x, 2, "pool_max");
  const int64_t m = x.dim(0), h = x.dim(1);
  if (static_cast<int64_t>(mask.size()) != m)
    throw ShapeError("pool_max: mask size " + std::to_string(mask.size()) + " vs " +
                     shape_str(x.shape()));
  detail::check_mask_any(mask.data(), m, "pool_max");
  Tensor<S> out = Tensor<S>::zeros({h});
  std::vector<int64_t> arg(static_cast<size_t>(h), -1);
  for (int64_t j = 0; j < h; ++j) {
    for (int64_t i = 0; i < m; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      const S v = x.values()[static_cast<size_t>(i * h + j)];
      if (arg[static_cast<size_t>(j)] < 0 || v > out.values()[static_cast<size_t>(j)]) {
        out.values()[static_cast<size_t>(j)] = v;
        arg[static_cast<size_t>(j)] = i;
      }
    }
  }
  detail::track(out, detail::wants_grad(x), [xi = x.impl_, oi = out.impl_, arg, h] {
    if (!detail::has_out_grad(oi)) return;
    xi->ensure_grad();
    for (int64_t j = 0; j < h; ++j)
      xi->grad[static_cast<size_t>(arg[static_cast<size_t>(j)] * h + j)] += oi->grad[static_cast<size_t>(j)];
  });
  return out;
}

// Column-wise mean over unmasked rows of x[m x h].
template <typename S>
Tensor<S> pool_mean(const Tensor<S>& x, const BoolMask& mask) {
  check_rank(x, 2, "pool_mean");
  const int64_t m = x.dim(0), h = x.dim(1);
  if (static_cast<int64_t>(mask.size()) != m)
    throw ShapeError("pool_mean: mask size " + std::to_string(mask.size()) + " vs " +
                     shape_str(x.shape()));
  int64_t live = 0;
  for (auto b : mask) live += b ? 1 : 0;
  if (live == 0) throw ContractError("pool_mean: all positions are masked");
  Tensor<S> out = Tensor<S>::zeros({h});
  for (int64_t i = 0; i < m; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    for (int64_t j = 0; j < h; ++j)
      out.values()[static_cast<size_t>(j)] += x.values()[static_cast<size_t>(i * h + j)];
  }
  for (int64_t j = 0; j < h; ++j) out.values()[static_cast<size_t>(j)] /= static_cast<S>(live);
  detail::track(out, detail::wants_grad(x), [xi = x.impl_, oi = out.impl_, mask, m, h, live] {
    if (!detail::has_out_grad(oi)) return;
    xi->ensure_grad();
    for (int64_t i = 0; i < m; ++i) {
      if (!mask[static_cast<size_t>(i)]) continue;
      for (int64_t j = 0; j < h; ++j)
        xi->grad[static_cast<size_t>(i * h + j)] += oi->grad[static_cast<size_t>(j)] / static_cast<S>(live);
    }
  });
  return out;
}

// Row-wise layer normalization with learned gain/shift, fused backward.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& shift,
                     double eps = 1e-12) {
  check_rank(x, 2, "layer_norm");
  check_rank(gain, 1, "layer_norm");
  check_rank(shift, 1, "layer_norm");
  const int64_t r = x.dim(0), c = x.dim(1);
  if (gain.dim(0) != c || shift.dim(0) != c)
    throw ShapeError("layer_norm: params " + shape_str(gain.shape()) + " vs rows of " +
                     shape_str(x.shape()));
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto norm = std::make_shared<std::vector<S>>(static_cast<size_t>(r * c));
  auto inv_sd = std::make_shared<std::vector<S>>(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    const S* xr = x.values().data() + i * c;
    S mu = S(0);
    for (int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<S>(c);
    S var = S(0);
    for (int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<S>(c);
    const S isd = S(1) / std::sqrt(var + static_cast<S>(eps));
    (*inv_sd)[static_cast<size_t>(i)] = isd;
    for (int64_t j = 0; j < c; ++j) {
      const S xn = (xr[j] - mu) * isd;
      (*norm)[static_cast<size_t>(i * c + j)] = xn;
      out.values()[static_cast<size_t>(i * c + j)] =
          gain.values()[static_cast<size_t>(j)] * xn + shift.values()[static_cast<size_t>(j)];
    }
  }
  detail::track(out, detail::any_wants_grad(x, gain, shift),
                [xi = x.impl_, gi = gain.impl_, si = shift.impl_, oi = out.impl_, norm, inv_sd, r, c] {
    if (!detail::has_out_grad(oi)) return;
    xi->ensure_grad();
    gi->ensure_grad();
    si->ensure_grad();
    for (int64_t i = 0; i < r; ++i) {
      const S* grow = oi->grad.data() + i * c;
      const S* nrow = norm->data() + i * c;
      const S isd = (*inv_sd)[static_cast<size_t>(i)];
      S g_mean = S(0), gn_mean = S(0);
      for (int64_t j = 0; j < c; ++j) {
        const S gh = grow[j] * gi->values[static_cast<size_t>(j)];
        g_mean += gh;
        gn_mean += gh * nrow[j];
        gi->grad[static_cast<size_t>(j)] += grow[j] * nrow[j];
        si->grad[static_cast<size_t>(j)] += grow[j];
      }
      g_mean /= static_cast<S>(c);
      gn_mean /= static_cast<S>(c);
      for (int64_t j = 0; j < c; ++j) {
        const S gh = grow[j] * gi->values[static_cast<size_t>(j)];
        xi->grad[static_cast<size_t>(i * c + j)] += (gh - g_mean - nrow[j] * gn_mean) * isd;
      }
    }
  });
  return out;
}

// Inverted dropout. rate == 0 is the identity; the mask is drawn from rng so
// a seeded run replays the same pattern.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, std::mt19937& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  const size_t n = x.impl_->values.size();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(n);
  std::bernoulli_distribution take(1.0 - rate);
  for (size_t i = 0; i < n; ++i) (*keep)[i] = take(rng) ? 1 : 0;
  const S inv = static_cast<S>(1.0 / (1.0 - rate));
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (size_t i = 0; i < n; ++i)
    out.impl_->values[i] = (*keep)[i] ? x.impl_->values[i] * inv : S(0);
  detail::track(out, detail::wants_grad(x), [xi = x.impl_, oi = out.impl_, keep, inv, n] {
    if (!detail::has_out_grad(oi)) return;
    xi->ensure_grad();
    for (size_t i = 0; i < n; ++i)
      if ((*keep)[i]) xi->grad[i] += oi->grad[i] * inv;
  });
  return out;
}

// ---- gradient checking ------------------------------------------------------

// Compares analytic gradients against central finite differences for every
// entry of every parameter. relative error = |a - n| / max(|a| + |n|, 1e-8).
// Meaningful only for S = double; float rounding drowns the differences.
template <typename S>
double grad_check(const std::function<Tensor<S>()>& fn, std::vector<Tensor<S>> params,
                  double eps = 1e-4) {
  std::vector<std::vector<S>> analytic;
  {
    for (auto& p : params) p.zero_grad();
    Tape<S> tape;
    Tensor<S> loss = fn();
    if (loss.size() != 1)
      throw ContractError("grad_check: function output must be a scalar, got " +
                          shape_str(loss.shape()));
    tape.backward(loss);
    for (auto& p : params) {
      p.impl_->ensure_grad();
      analytic.emplace_back(p.impl_->grad.begin(), p.impl_->grad.end());
    }
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].impl_->values;
    for (size_t i = 0; i < vals.size(); ++i) {
      const S saved = vals[i];
      vals[i] = saved + static_cast<S>(eps);
      const double up = static_cast<double>(fn().item());
      vals[i] = saved - static_cast<S>(eps);
      const double dn = static_cast<double>(fn().item());
      vals[i] = saved;
      const double numeric = (up - dn) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-8);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// ---- initialization ---------------------------------------------------------

// Normal(0, stddev) resampled until within +/- 2 stddev.
template <typename S>
void fill_truncated_normal(Tensor<S>& t, std::mt19937& rng, double stddev = 0.02) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (S& v : t.values()) {
    double d = dist(rng);
    while (std::abs(d) > 2.0 * stddev) d = dist(rng);
    v = static_cast<S>(d);
  }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace convqa
