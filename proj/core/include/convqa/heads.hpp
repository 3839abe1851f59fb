#pragma once

// Answer span prediction and dialog act prediction over aggregated
// representations, plus inference-time span decoding under validity
// constraints (begin <= end, length cap, passage segment only).

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/errors.hpp"
#include "convqa/tensor.hpp"

namespace convqa {

template <typename S>
struct SpanHead {
  Tensor<S> begin_vec;  // [h]
  Tensor<S> end_vec;    // [h]
};

template <typename S>
struct DialogActHead {
  Tensor<S> affirm_weights;  // [3 x h]
  Tensor<S> cont_weights;    // [3 x h]
};

// Begin/end probability distributions over token positions of the aggregated
// token representations [M x h]; each sums to 1 over unmasked positions.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> span_distributions(const Tensor<S>& token_reps,
                                                   const SpanHead<S>& head, const BoolMask& mask) {
  Tensor<S> p_begin = masked_softmax(matvec(token_reps, head.begin_vec), mask);
  Tensor<S> p_end = masked_softmax(matvec(token_reps, head.end_vec), mask);
  return {std::move(p_begin), std::move(p_end)};
}

// 0.5 * (-log p_begin[gold_begin] - log p_end[gold_end]).
template <typename S>
Tensor<S> span_loss(const Tensor<S>& p_begin, const Tensor<S>& p_end, int64_t gold_begin,
                    int64_t gold_end, const BoolMask& mask) {
  if (gold_begin < 0 || gold_begin >= static_cast<int64_t>(mask.size()) ||
      gold_end < 0 || gold_end >= static_cast<int64_t>(mask.size()) ||
      !mask[static_cast<size_t>(gold_begin)] || !mask[static_cast<size_t>(gold_end)])
    throw ContractError("span_loss: gold label at a masked position (begin " +
                        std::to_string(gold_begin) + ", end " + std::to_string(gold_end) + ")");
  return scale(add(cross_entropy(p_begin, gold_begin), cross_entropy(p_end, gold_end)), 0.5);
}

// Class distributions for the two dialog acts.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> dialog_act_distributions(const Tensor<S>& seq_rep,
                                                         const DialogActHead<S>& head) {
  const BoolMask all(static_cast<size_t>(kDialogActClasses), 1);
  Tensor<S> p_affirm = masked_softmax(matvec(head.affirm_weights, seq_rep), all);
  Tensor<S> p_cont = masked_softmax(matvec(head.cont_weights, seq_rep), all);
  return {std::move(p_affirm), std::move(p_cont)};
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> dialog_act_loss(const Tensor<S>& p_affirm, const Tensor<S>& p_cont,
                                                Affirmation affirmation, Continuation continuation) {
  return {cross_entropy(p_affirm, static_cast<int64_t>(affirmation)),
          cross_entropy(p_cont, static_cast<int64_t>(continuation))};
}

template <typename S>
int32_t argmax_class(const Tensor<S>& probs) {
  int32_t best = 0;
  for (int32_t i = 1; i < static_cast<int32_t>(probs.size()); ++i)
    if (probs.values()[static_cast<size_t>(i)] > probs.values()[static_cast<size_t>(best)]) best = i;
  return best;
}

// Decoding constraints for one packed window.
struct SpanConstraints {
  int32_t passage_begin = 0;   // first passage-content position
  int32_t passage_end = 0;     // one past the sentinel
  int32_t sentinel_pos = 0;    // the CANNOTANSWER token position
  int32_t max_answer_len = 40; // in tokens
};

struct SpanPrediction {
  int32_t begin = 0;  // sequence positions
  int32_t end = 0;
  double score = 0.0;  // log p_begin[begin] + log p_end[end]
  bool is_cannot_answer = false;
  int32_t window_index = 0;
  std::string text;
};

// Argmax over all (b, e) with b <= e, length <= max_answer_len, both inside
// the passage segment (which also rules out question overlap). Ties prefer
// the lower begin, then the lower end. The sentinel is always a candidate,
// so a valid answer always exists.
template <typename S>
SpanPrediction decode_span(std::span<const S> p_begin, std::span<const S> p_end,
                           const SpanConstraints& c) {
  if (c.passage_begin < 0 || c.passage_end <= c.passage_begin ||
      c.passage_end > static_cast<int32_t>(p_begin.size()) ||
      c.sentinel_pos < c.passage_begin || c.sentinel_pos >= c.passage_end)
    throw ContractError("decode_span: inconsistent constraints");
  if (p_begin.size() != p_end.size())
    throw ShapeError("decode_span: distribution sizes differ, " +
                     std::to_string(p_begin.size()) + " vs " + std::to_string(p_end.size()));

  SpanPrediction best;
  bool have = false;
  for (int32_t e = c.passage_begin; e < c.passage_end; ++e) {
    const double log_pe = std::log(static_cast<double>(p_end[static_cast<size_t>(e)]));
    const int32_t b_lo = std::max(c.passage_begin, e - c.max_answer_len + 1);
    for (int32_t b = b_lo; b <= e; ++b) {
      const double s =
          std::log(static_cast<double>(p_begin[static_cast<size_t>(b)])) + log_pe;
      if (!have || s > best.score ||
          (s == best.score && (b < best.begin || (b == best.begin && e < best.end)))) {
        best.begin = b;
        best.end = e;
        best.score = s;
        have = true;
      }
    }
  }
  best.is_cannot_answer = (best.begin == c.sentinel_pos && best.end == c.sentinel_pos);
  return best;
}

// Merges per-window predictions for one question: highest score wins; on a
// tie a real span beats CANNOTANSWER, then the earlier window, then the
// earlier begin.
SpanPrediction aggregate_windows(const std::vector<SpanPrediction>& windows);

}  // namespace convqa
