#pragma once

// Transformer encoder over packed token sequences. Four embeddings are
// summed per position: token, segment, absolute position, and the
// history-answer marker embedding that carries which history turn (by
// relative position) covered a passage token. Post-norm blocks, GELU
// feed-forward, scaled dot-product self-attention with key padding masks.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "convqa/errors.hpp"
#include "convqa/sequencing.hpp"
#include "convqa/tensor.hpp"

namespace convqa {

enum class PoolingMode { kClsDenseTanh, kAverage, kMax };

PoolingMode pooling_from_string(const std::string& name);
std::string to_string(PoolingMode mode);

struct EncoderConfig {
  int32_t hidden_size = 64;
  int32_t layer_count = 2;
  int32_t head_count = 4;
  int32_t ffn_size = 256;
  int32_t max_seq_len = 384;       // M
  int32_t vocab_size = 0;          // token table rows; set from the vocabulary
  int32_t max_history_turns = 11;  // I; marker table has I + 1 rows
  double dropout = 0.1;
  PoolingMode pooling = PoolingMode::kMax;
  // Ablation: ignore marker positions, mapping every nonzero marker to the
  // shared "in history" row 1.
  bool collapse_history_markers = false;

  void validate() const {
    if (hidden_size < 1 || layer_count < 1 || head_count < 1 || ffn_size < 1)
      throw ConfigError("encoder: sizes must be positive");
    if (hidden_size % head_count != 0)
      throw ConfigError("encoder: hidden_size " + std::to_string(hidden_size) +
                        " not divisible by head_count " + std::to_string(head_count));
    if (max_seq_len < 8) throw ConfigError("encoder: max_seq_len must be >= 8");
    if (max_history_turns < 1) throw ConfigError("encoder: max_history_turns must be >= 1");
    if (vocab_size < 1) throw ConfigError("encoder: vocab_size is unset");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0, 1)");
  }
};

// Per-forward context: training enables dropout, and rng feeds it.
struct ForwardCtx {
  bool training = false;
  std::mt19937* rng = nullptr;
};

template <typename S>
struct EmbeddingTables {
  Tensor<S> token;     // [vocab x h]
  Tensor<S> segment;   // [2 x h]
  Tensor<S> position;  // [M x h]
  Tensor<S> history;   // [(I+1) x h]; row 0 = "not in a history answer"
  Tensor<S> norm_gain;
  Tensor<S> norm_shift;
};

template <typename S>
struct EncoderLayer {
  Tensor<S> query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
  Tensor<S> attn_ln_gain, attn_ln_shift;
  Tensor<S> ffn_in_w, ffn_in_b, ffn_out_w, ffn_out_b;
  Tensor<S> ffn_ln_gain, ffn_ln_shift;
};

template <typename S>
class Encoder {
 public:
  Encoder() = default;

  Encoder(EncoderConfig config, std::mt19937& rng) : config_(config) {
    config_.validate();
    const int64_t h = config_.hidden_size;
    tables_.token = Tensor<S>::zeros({config_.vocab_size, h});
    tables_.segment = Tensor<S>::zeros({2, h});
    tables_.position = Tensor<S>::zeros({config_.max_seq_len, h});
    tables_.history = Tensor<S>::zeros({config_.max_history_turns + 1, h});
    tables_.norm_gain = Tensor<S>::filled({h}, S(1));
    tables_.norm_shift = Tensor<S>::zeros({h});
    for (Tensor<S>* t : {&tables_.token, &tables_.segment, &tables_.position, &tables_.history})
      fill_truncated_normal(*t, rng);

    for (int32_t l = 0; l < config_.layer_count; ++l) {
      EncoderLayer<S> layer;
      for (Tensor<S>* w : {&layer.query_w, &layer.key_w, &layer.value_w, &layer.out_w}) {
        *w = Tensor<S>::zeros({h, h});
        fill_truncated_normal(*w, rng);
      }
      layer.query_b = Tensor<S>::zeros({h});
      layer.key_b = Tensor<S>::zeros({h});
      layer.value_b = Tensor<S>::zeros({h});
      layer.out_b = Tensor<S>::zeros({h});
      layer.attn_ln_gain = Tensor<S>::filled({h}, S(1));
      layer.attn_ln_shift = Tensor<S>::zeros({h});
      layer.ffn_in_w = Tensor<S>::zeros({h, config_.ffn_size});
      fill_truncated_normal(layer.ffn_in_w, rng);
      layer.ffn_in_b = Tensor<S>::zeros({config_.ffn_size});
      layer.ffn_out_w = Tensor<S>::zeros({config_.ffn_size, h});
      fill_truncated_normal(layer.ffn_out_w, rng);
      layer.ffn_out_b = Tensor<S>::zeros({h});
      layer.ffn_ln_gain = Tensor<S>::filled({h}, S(1));
      layer.ffn_ln_shift = Tensor<S>::zeros({h});
      layers_.push_back(std::move(layer));
    }
    cls_proj_ = Tensor<S>::zeros({h, h});
    fill_truncated_normal(cls_proj_, rng);
  }

  const EncoderConfig& config() const { return config_; }
  EmbeddingTables<S>& tables() { return tables_; }
  std::vector<EncoderLayer<S>>& layers() { return layers_; }
  Tensor<S>& cls_proj() { return cls_proj_; }

  void collect_parameters(std::vector<std::pair<std::string, Tensor<S>>>& out) {
    out.emplace_back("embed.token", tables_.token);
    out.emplace_back("embed.segment", tables_.segment);
    out.emplace_back("embed.position", tables_.position);
    out.emplace_back("embed.history", tables_.history);
    out.emplace_back("embed.ln_gain", tables_.norm_gain);
    out.emplace_back("embed.ln_shift", tables_.norm_shift);
    for (size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& layer = layers_[l];
      out.emplace_back(p + "query.weight", layer.query_w);
      out.emplace_back(p + "query.bias", layer.query_b);
      out.emplace_back(p + "key.weight", layer.key_w);
      out.emplace_back(p + "key.bias", layer.key_b);
      out.emplace_back(p + "value.weight", layer.value_w);
      out.emplace_back(p + "value.bias", layer.value_b);
      out.emplace_back(p + "attn_out.weight", layer.out_w);
      out.emplace_back(p + "attn_out.bias", layer.out_b);
      out.emplace_back(p + "attn.ln_gain", layer.attn_ln_gain);
      out.emplace_back(p + "attn.ln_shift", layer.attn_ln_shift);
      out.emplace_back(p + "ffn_in.weight", layer.ffn_in_w);
      out.emplace_back(p + "ffn_in.bias", layer.ffn_in_b);
      out.emplace_back(p + "ffn_out.weight", layer.ffn_out_w);
      out.emplace_back(p + "ffn_out.bias", layer.ffn_out_b);
      out.emplace_back(p + "ffn.ln_gain", layer.ffn_ln_gain);
      out.emplace_back(p + "ffn.ln_shift", layer.ffn_ln_shift);
    }
    out.emplace_back("pooler.weight", cls_proj_);
  }

  // Sum of the four embedding rows per position, then layer norm + dropout.
  Tensor<S> embed(const TokenSequence& seq, ForwardCtx ctx) const {
    check_ids(seq);
    Tensor<S> x = embed_rows(tables_.token, seq.token_ids);
    x = add(x, embed_rows(tables_.segment, seq.segment_ids));
    x = add(x, embed_rows(tables_.position, seq.position_ids));
    std::vector<int32_t> marker_ids = seq.history_ids;
    if (config_.collapse_history_markers)
      for (int32_t& id : marker_ids)
        if (id > 0) id = 1;
    x = add(x, embed_rows(tables_.history, marker_ids));
    x = layer_norm(x, tables_.norm_gain, tables_.norm_shift);
    return apply_dropout(x, ctx);
  }

  // Token-level representations [M x h] and the pooled sequence vector [h].
  std::pair<Tensor<S>, Tensor<S>> encode(const TokenSequence& seq, ForwardCtx ctx) const {
    Tensor<S> x = embed(seq, ctx);
    for (const auto& layer : layers_) x = encode_layer(layer, x, seq.attention_mask, ctx);
    Tensor<S> pooled = pool_sequence(x, seq.attention_mask, config_.pooling);
    return {std::move(x), std::move(pooled)};
  }

  // cls_dense_tanh pools through the dense projection of the first token;
  // average/max reduce over unmasked positions only.
  Tensor<S> pool_sequence(const Tensor<S>& token_reps, const BoolMask& mask,
                          PoolingMode mode) const {
    switch (mode) {
      case PoolingMode::kClsDenseTanh:
        return tanh(matvec(cls_proj_, row(token_reps, 0)));
      case PoolingMode::kAverage:
        return pool_mean(token_reps, mask);
      case PoolingMode::kMax:
        return pool_max(token_reps, mask);
    }
    throw ConfigError("unknown pooling mode");
  }

 private:
  void check_ids(const TokenSequence& seq) const {
    if (seq.length() != config_.max_seq_len)
      throw ShapeError("encode: sequence length " + std::to_string(seq.length()) +
                       " vs configured max_seq_len " + std::to_string(config_.max_seq_len));
    for (int32_t id : seq.history_ids)
      if (id < 0 || id > config_.max_history_turns)
        throw std::out_of_range("encode: history marker id " + std::to_string(id) +
                                " outside [0, " + std::to_string(config_.max_history_turns) + "]");
  }

  Tensor<S> apply_dropout(const Tensor<S>& x, ForwardCtx ctx) const {
    if (!ctx.training || config_.dropout <= 0.0) return x;
    if (ctx.rng == nullptr) throw ContractError("training forward pass needs an rng for dropout");
    return dropout(x, config_.dropout, *ctx.rng);
  }

  Tensor<S> encode_layer(const EncoderLayer<S>& layer, const Tensor<S>& x, const BoolMask& mask,
                         ForwardCtx ctx) const {
    const int64_t h = config_.hidden_size;
    const int64_t heads = config_.head_count;
    const int64_t head_dim = h / heads;

    Tensor<S> q = add_rows(matmul(x, layer.query_w), layer.query_b);
    Tensor<S> k = add_rows(matmul(x, layer.key_w), layer.key_b);
    Tensor<S> v = add_rows(matmul(x, layer.value_w), layer.value_b);

    std::vector<Tensor<S>> head_ctx;
    head_ctx.reserve(static_cast<size_t>(heads));
    const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int64_t a = 0; a < heads; ++a) {
      Tensor<S> qa = cols(q, a * head_dim, (a + 1) * head_dim);
      Tensor<S> ka = cols(k, a * head_dim, (a + 1) * head_dim);
      Tensor<S> va = cols(v, a * head_dim, (a + 1) * head_dim);
      Tensor<S> scores = scale(matmul(qa, transposed(ka)), inv_sqrt_dim);
      Tensor<S> probs = masked_softmax_rows(scores, mask);  // key padding mask
      head_ctx.push_back(matmul(probs, va));
    }
    Tensor<S> attn = add_rows(matmul(concat_cols(head_ctx), layer.out_w), layer.out_b);
    attn = apply_dropout(attn, ctx);
    Tensor<S> x1 = layer_norm(add(x, attn), layer.attn_ln_gain, layer.attn_ln_shift);

    Tensor<S> inner = gelu(add_rows(matmul(x1, layer.ffn_in_w), layer.ffn_in_b));
    Tensor<S> ffn = add_rows(matmul(inner, layer.ffn_out_w), layer.ffn_out_b);
    ffn = apply_dropout(ffn, ctx);
    return layer_norm(add(x1, ffn), layer.ffn_ln_gain, layer.ffn_ln_shift);
  }

  EncoderConfig config_;
  EmbeddingTables<S> tables_;
  std::vector<EncoderLayer<S>> layers_;
  Tensor<S> cls_proj_;
};

inline PoolingMode pooling_from_string(const std::string& name) {
  if (name == "cls_dense_tanh") return PoolingMode::kClsDenseTanh;
  if (name == "average") return PoolingMode::kAverage;
  if (name == "max") return PoolingMode::kMax;
  throw ConfigError("unknown pooling mode '" + name + "' (cls_dense_tanh|average|max)");
}

inline std::string to_string(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::kClsDenseTanh: return "cls_dense_tanh";
    case PoolingMode::kAverage: return "average";
    case PoolingMode::kMax: return "max";
  }
  return "max";
}

}  // namespace convqa
