#pragma once

// The full model: encoder over every history variation of a group, soft
// selection across the variation stack, then span and dialog-act heads on
// the aggregated representations.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "convqa/encoder.hpp"
#include "convqa/heads.hpp"
#include "convqa/history_attention.hpp"
#include "convqa/sequencing.hpp"
#include "convqa/tensor.hpp"

namespace convqa {

struct ModelConfig {
  EncoderConfig encoder;
  bool fine_grained = true;        // per-token attention over variations
  bool history_attention = true;   // false: exactly uniform weights
  int32_t max_answer_len = 40;

  void validate() const { encoder.validate(); }
};

template <typename S>
class Model {
 public:
  Model() = default;

  Model(ModelConfig config, uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937 rng(static_cast<uint32_t>(seed));
    encoder_ = Encoder<S>(config_.encoder, rng);
    const int64_t h = config_.encoder.hidden_size;
    attn_probe_ = Tensor<S>::zeros({h});
    span_head_.begin_vec = Tensor<S>::zeros({h});
    span_head_.end_vec = Tensor<S>::zeros({h});
    act_head_.affirm_weights = Tensor<S>::zeros({kDialogActClasses, h});
    act_head_.cont_weights = Tensor<S>::zeros({kDialogActClasses, h});
    for (Tensor<S>* t : {&attn_probe_, &span_head_.begin_vec, &span_head_.end_vec,
                         &act_head_.affirm_weights, &act_head_.cont_weights})
      fill_truncated_normal(*t, rng);
    for (auto& [name, tensor] : named_parameters()) tensor.set_requires_grad();
  }

  const ModelConfig& config() const { return config_; }
  Encoder<S>& encoder() { return encoder_; }
  Tensor<S>& attention_probe() { return attn_probe_; }
  SpanHead<S>& span_head() { return span_head_; }
  DialogActHead<S>& act_head() { return act_head_; }

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> params;
    encoder_.collect_parameters(params);
    params.emplace_back("history_attention.probe", attn_probe_);
    params.emplace_back("span.begin_vec", span_head_.begin_vec);
    params.emplace_back("span.end_vec", span_head_.end_vec);
    params.emplace_back("acts.affirm.weight", act_head_.affirm_weights);
    params.emplace_back("acts.cont.weight", act_head_.cont_weights);
    return params;
  }

  struct GroupForward {
    Tensor<S> agg_tokens;     // [M x h]
    Tensor<S> agg_seq;        // [h]
    Tensor<S> seq_weights;    // [I]
    Tensor<S> token_weights;  // [M x I]; defined in fine-grained mode only
    Tensor<S> p_begin, p_end; // [M]
    Tensor<S> p_affirm, p_cont;  // [3]
    BoolMask attention_mask;
    BoolMask turn_mask;
  };

  // Encodes every variation of one (question, window) group, aggregates the
  // stack under the configured attention granularity, and runs both heads.
  GroupForward forward_group(const SequencedGroup& group, ForwardCtx ctx) const {
    if (group.sequences.empty()) throw ContractError("forward_group: empty group");
    std::vector<Tensor<S>> token_reps, seq_reps;
    token_reps.reserve(group.sequences.size());
    seq_reps.reserve(group.sequences.size());
    for (const auto& seq : group.sequences) {
      auto [t, s] = encoder_.encode(seq, ctx);
      token_reps.push_back(std::move(t));
      seq_reps.push_back(std::move(s));
    }
    VariationStack<S> stack = pad_stack(std::move(token_reps), std::move(seq_reps),
                                        config_.encoder.max_history_turns);

    GroupForward out;
    out.attention_mask = group.sequences.front().attention_mask;
    out.turn_mask = stack.turn_mask;

    if (config_.history_attention) {
      out.seq_weights = attend_sequence(stack.seq_reps, stack.turn_mask, attn_probe_);
    } else {
      out.seq_weights = uniform_weights<S>(stack.turn_mask);
      verify_uniform(out.seq_weights, stack.turn_mask);
    }
    out.agg_seq = weighted_sum(stack.seq_reps, out.seq_weights);

    if (config_.fine_grained) {
      const int64_t m = config_.encoder.max_seq_len;
      out.token_weights =
          config_.history_attention
              ? fine_grained_weights(stack.token_reps, stack.turn_mask, attn_probe_)
              : uniform_weight_rows<S>(stack.turn_mask, m);
      out.agg_tokens = per_row_weighted_sum(stack.token_reps, out.token_weights);
    } else {
      out.agg_tokens = weighted_sum(stack.token_reps, out.seq_weights);
    }

    auto [pb, pe] = span_distributions(out.agg_tokens, span_head_, out.attention_mask);
    out.p_begin = std::move(pb);
    out.p_end = std::move(pe);
    auto [pa, pc] = dialog_act_distributions(out.agg_seq, act_head_);
    out.p_affirm = std::move(pa);
    out.p_cont = std::move(pc);
    return out;
  }

  SpanConstraints constraints_for(const SequencedGroup& group) const {
    const TokenSequence& seq = group.sequences.front();
    return {seq.passage_begin, seq.passage_end, seq.sentinel_pos, config_.max_answer_len};
  }

 private:
  // The disabled-attention path must yield exactly 1/live on unmasked slots.
  static void verify_uniform(const Tensor<S>& w, const BoolMask& mask) {
    int64_t live = 0;
    for (auto b : mask) live += b ? 1 : 0;
    const S expect = S(1) / static_cast<S>(live);
    for (size_t i = 0; i < mask.size(); ++i) {
      const S got = w.values()[i];
      if ((mask[i] && got != expect) || (!mask[i] && got != S(0)))
        throw NumericError("equal-weights ablation produced a non-uniform weight");
    }
  }

  ModelConfig config_;
  Encoder<S> encoder_;
  Tensor<S> attn_probe_;
  SpanHead<S> span_head_;
  DialogActHead<S> act_head_;
};

}  // namespace convqa
