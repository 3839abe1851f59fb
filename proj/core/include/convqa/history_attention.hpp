#pragma once

// Soft selection over history-turn variations. A learned probe vector maps
// each variation's representation to a logit; masked softmax over the
// variation axis yields the attention weights used to aggregate token- and
// sequence-level representations. The fine-grained path computes one weight
// row per token position instead of one weight per variation.

#include <cstdint>
#include <string>
#include <vector>

#include "convqa/errors.hpp"
#include "convqa/tensor.hpp"

namespace convqa {

// Representations of all variations of one instance, padded to the maximum
// history turn count. Padded slots are zero tensors and masked out.
template <typename S>
struct VariationStack {
  std::vector<Tensor<S>> token_reps;  // I entries of [M x h]
  std::vector<Tensor<S>> seq_reps;    // I entries of [h]
  BoolMask turn_mask;                 // true = real variation

  int64_t slots() const { return static_cast<int64_t>(token_reps.size()); }
};

// Pads per-variation representations out to `max_slots` zero entries.
template <typename S>
VariationStack<S> pad_stack(std::vector<Tensor<S>> token_reps, std::vector<Tensor<S>> seq_reps,
                            int64_t max_slots) {
  if (token_reps.empty() || token_reps.size() != seq_reps.size())
    throw ContractError("pad_stack: need matching non-empty representation lists");
  if (static_cast<int64_t>(token_reps.size()) > max_slots)
    throw ContractError("pad_stack: " + std::to_string(token_reps.size()) +
                        " variations exceed the stack size " + std::to_string(max_slots));
  VariationStack<S> stack;
  stack.turn_mask.assign(static_cast<size_t>(max_slots), 0);
  for (size_t i = 0; i < token_reps.size(); ++i) stack.turn_mask[i] = 1;
  const Shape token_shape = token_reps[0].shape();
  const Shape seq_shape = seq_reps[0].shape();
  stack.token_reps = std::move(token_reps);
  stack.seq_reps = std::move(seq_reps);
  while (static_cast<int64_t>(stack.token_reps.size()) < max_slots) {
    stack.token_reps.push_back(Tensor<S>::zeros(token_shape));
    stack.seq_reps.push_back(Tensor<S>::zeros(seq_shape));
  }
  return stack;
}

// Sequence-level attention weights: w = masked_softmax(probe . seq_rep_i).
template <typename S>
Tensor<S> attend_sequence(const std::vector<Tensor<S>>& seq_reps, const BoolMask& mask,
                          const Tensor<S>& probe) {
  return masked_softmax(stack_dots(probe, seq_reps), mask);
}

// Exactly uniform weights over unmasked slots (attention-disabled ablation).
template <typename S>
Tensor<S> uniform_weights(const BoolMask& mask) {
  int64_t live = 0;
  for (auto b : mask) live += b ? 1 : 0;
  if (live == 0) throw ContractError("uniform_weights: all slots masked");
  Tensor<S> w = Tensor<S>::zeros({static_cast<int64_t>(mask.size())});
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) w.values()[i] = S(1) / static_cast<S>(live);
  return w;
}

// Weighted sums of the stacked representations under one weight vector.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> aggregate(const VariationStack<S>& stack, const Tensor<S>& w) {
  return {weighted_sum(stack.token_reps, w), weighted_sum(stack.seq_reps, w)};
}

// Per-token-position attention over variations: for every position m the
// weights are softmax_i(probe . token_rep_i[m]) and the aggregated row is
// their convex combination. Returns [M x h].
template <typename S>
Tensor<S> attend_fine_grained(const std::vector<Tensor<S>>& token_reps, const BoolMask& mask,
                              const Tensor<S>& probe) {
  if (token_reps.empty()) throw ContractError("attend_fine_grained: empty stack");
  const int64_t m = token_reps[0].dim(0);
  std::vector<Tensor<S>> logit_cols;
  logit_cols.reserve(token_reps.size());
  for (const auto& t : token_reps) logit_cols.push_back(reshaped(matvec(t, probe), {m, 1}));
  Tensor<S> weights = masked_softmax_rows(concat_cols(logit_cols), mask);
  return per_row_weighted_sum(token_reps, weights);
}

// The fine-grained weight matrix [M x I] alone (for records/export).
template <typename S>
Tensor<S> fine_grained_weights(const std::vector<Tensor<S>>& token_reps, const BoolMask& mask,
                               const Tensor<S>& probe) {
  if (token_reps.empty()) throw ContractError("fine_grained_weights: empty stack");
  const int64_t m = token_reps[0].dim(0);
  std::vector<Tensor<S>> logit_cols;
  logit_cols.reserve(token_reps.size());
  for (const auto& t : token_reps) logit_cols.push_back(reshaped(matvec(t, probe), {m, 1}));
  return masked_softmax_rows(concat_cols(logit_cols), mask);
}

// Uniform [M x I] weight rows for the ablation path.
template <typename S>
Tensor<S> uniform_weight_rows(const BoolMask& mask, int64_t positions) {
  Tensor<S> w = uniform_weights<S>(mask);
  Tensor<S> out = Tensor<S>::zeros({positions, static_cast<int64_t>(mask.size())});
  for (int64_t r = 0; r < positions; ++r)
    std::copy(w.values().begin(), w.values().end(),
              out.values().begin() + r * static_cast<int64_t>(mask.size()));
  return out;
}

// Attention weights captured at prediction time for one (question, window):
// one row per stack slot, one column per token position. Sequence-level
// weights broadcast across columns; masked slots stay all-zero.
struct AttentionRecord {
  std::string qid;
  int32_t turn_index = 1;
  int32_t window_index = 0;
  std::vector<int32_t> relative_positions;     // per slot; 0 = no history
  std::vector<std::uint8_t> slot_mask;         // per slot
  std::vector<std::vector<double>> weights;    // slots x M
  std::vector<std::string> tokens;             // M token strings
};

template <typename S>
AttentionRecord make_attention_record(const Tensor<S>& weights, bool fine_grained,
                                      const BoolMask& slot_mask, int64_t positions) {
  AttentionRecord rec;
  rec.slot_mask.assign(slot_mask.begin(), slot_mask.end());
  const int64_t slots = static_cast<int64_t>(slot_mask.size());
  rec.weights.assign(static_cast<size_t>(slots),
                     std::vector<double>(static_cast<size_t>(positions), 0.0));
  if (fine_grained) {
    // weights is [M x I]; transpose into slot-major rows.
    if (weights.dim(0) != positions || weights.dim(1) != slots)
      throw ShapeError("attention record: weights " + shape_str(weights.shape()) +
                       " do not match " + std::to_string(slots) + " slots x " +
                       std::to_string(positions) + " positions");
    for (int64_t r = 0; r < positions; ++r)
      for (int64_t i = 0; i < slots; ++i)
        if (slot_mask[static_cast<size_t>(i)])
          rec.weights[static_cast<size_t>(i)][static_cast<size_t>(r)] =
              static_cast<double>(weights.values()[static_cast<size_t>(r * slots + i)]);
  } else {
    // weights is [I]; every column of the record equals it.
    if (weights.dim(0) != slots)
      throw ShapeError("attention record: weights " + shape_str(weights.shape()) + " vs " +
                       std::to_string(slots) + " slots");
    for (int64_t i = 0; i < slots; ++i) {
      if (!slot_mask[static_cast<size_t>(i)]) continue;
      const double wi = static_cast<double>(weights.values()[static_cast<size_t>(i)]);
      std::fill(rec.weights[static_cast<size_t>(i)].begin(),
                rec.weights[static_cast<size_t>(i)].end(), wi);
    }
  }
  return rec;
}

}  // namespace convqa
