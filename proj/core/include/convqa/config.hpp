#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "convqa/encoder.hpp"
#include "convqa/model.hpp"
#include "convqa/sequencing.hpp"
#include "convqa/tokenizer.hpp"
#include "convqa/training.hpp"

namespace convqa {

// Flat key-value run configuration. Sources are merged in precedence order
// file < environment (CONVQA_<KEY>) < command-line override.
struct RunConfig {
  // data
  std::string tokenizer_mode = "whitespace";
  std::string vocab_file;  // required for subword mode

  // sequence layout
  int64_t max_seq_len = 384;
  int64_t max_question_len = 64;
  int64_t doc_stride = 128;
  int64_t max_history_turns = 11;

  // encoder
  int64_t hidden_size = 768;
  int64_t layer_count = 12;
  int64_t head_count = 12;
  int64_t ffn_size = 3072;
  double dropout = 0.1;
  std::string pooling = "max";

  // training
  int64_t batch_size = 24;
  int64_t total_steps = 30000;
  double learning_rate = 3e-5;
  double warmup_fraction = 0.1;
  double lambda = 0.1;
  double mu = 0.8;
  uint64_t seed = 42;
  int64_t eval_every = 500;
  int64_t max_answer_len = 40;

  // ablation switches
  bool fine_grained = true;
  bool history_attention = true;
  bool positional_history = true;
  bool span_task = true;
  bool dialog_act_task = true;

  static RunConfig from_json(const std::string& json_text);
  static RunConfig from_file(const std::filesystem::path& file);
  std::string to_json() const;

  // Environment variables override file values: CONVQA_<UPPERCASE_KEY>.
  void apply_env(const char* prefix = "CONVQA_");
  // "key=value"; flags override environment and file.
  void apply_override(const std::string& assignment);
  // --ablation names: no-fine-grained | no-history-attention |
  // no-positional-history | no-span-task | no-dialog-act-task
  void apply_ablation(const std::string& name);

  void validate() const;

  SequenceLayout layout() const;
  EncoderConfig encoder_config(int32_t vocab_size) const;
  ModelConfig model_config(int32_t vocab_size) const;
  TrainConfig train_config() const;
};

}  // namespace convqa
