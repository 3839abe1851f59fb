#include "convqa/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

using nlohmann::json;

namespace {

struct FieldBinding {
  std::function<void(RunConfig&, const json&)> from_json;
  std::function<json(const RunConfig&)> to_json;
};

template <typename T>
FieldBinding bind_field(T RunConfig::* member) {
  return {[member](RunConfig& c, const json& v) {
            try {
              c.*member = v.get<T>();
            } catch (const json::exception& e) {
              throw ConfigError(std::string("config value has the wrong type: ") + e.what());
            }
          },
          [member](const RunConfig& c) { return json(c.*member); }};
}

// Ordered so config dumps are stable and diffable.
const std::map<std::string, FieldBinding>& field_table() {
  static const std::map<std::string, FieldBinding> table = {
      {"tokenizer_mode", bind_field(&RunConfig::tokenizer_mode)},
      {"vocab_file", bind_field(&RunConfig::vocab_file)},
      {"max_seq_len", bind_field(&RunConfig::max_seq_len)},
      {"max_question_len", bind_field(&RunConfig::max_question_len)},
      {"doc_stride", bind_field(&RunConfig::doc_stride)},
      {"max_history_turns", bind_field(&RunConfig::max_history_turns)},
      {"hidden_size", bind_field(&RunConfig::hidden_size)},
      {"layer_count", bind_field(&RunConfig::layer_count)},
      {"head_count", bind_field(&RunConfig::head_count)},
      {"ffn_size", bind_field(&RunConfig::ffn_size)},
      {"dropout", bind_field(&RunConfig::dropout)},
      {"pooling", bind_field(&RunConfig::pooling)},
      {"batch_size", bind_field(&RunConfig::batch_size)},
      {"total_steps", bind_field(&RunConfig::total_steps)},
      {"learning_rate", bind_field(&RunConfig::learning_rate)},
      {"warmup_fraction", bind_field(&RunConfig::warmup_fraction)},
      {"lambda", bind_field(&RunConfig::lambda)},
      {"mu", bind_field(&RunConfig::mu)},
      {"seed", bind_field(&RunConfig::seed)},
      {"eval_every", bind_field(&RunConfig::eval_every)},
      {"max_answer_len", bind_field(&RunConfig::max_answer_len)},
      {"fine_grained", bind_field(&RunConfig::fine_grained)},
      {"history_attention", bind_field(&RunConfig::history_attention)},
      {"positional_history", bind_field(&RunConfig::positional_history)},
      {"span_task", bind_field(&RunConfig::span_task)},
      {"dialog_act_task", bind_field(&RunConfig::dialog_act_task)},
  };
  return table;
}

json parse_scalar(const std::string& text) {
  // Accept bare strings where JSON parsing fails (tokenizer_mode=whitespace).
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig config;
  const auto& table = field_table();
  for (const auto& [key, value] : doc.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second.from_json(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::from_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string RunConfig::to_json() const {
  json doc;
  for (const auto& [key, binding] : field_table()) doc[key] = binding.to_json(*this);
  return doc.dump(2);
}

void RunConfig::apply_env(const char* prefix) {
  for (const auto& [key, binding] : field_table()) {
    std::string var = prefix;
    for (char c : key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    const char* value = std::getenv(var.c_str());
    if (value == nullptr) continue;
    try {
      binding.from_json(*this, parse_scalar(value));
    } catch (const ConfigError& e) {
      throw ConfigError("environment variable " + var + ": " + e.what());
    }
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const auto& table = field_table();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.from_json(*this, parse_scalar(value));
  } catch (const ConfigError& e) {
    throw ConfigError("override '" + assignment + "': " + e.what());
  }
}

void RunConfig::apply_ablation(const std::string& name) {
  if (name == "no-fine-grained") {
    fine_grained = false;
  } else if (name == "no-history-attention") {
    history_attention = false;
  } else if (name == "no-positional-history") {
    positional_history = false;
  } else if (name == "no-span-task") {
    span_task = false;
  } else if (name == "no-dialog-act-task") {
    dialog_act_task = false;
  } else {
    throw ConfigError("unknown ablation '" + name +
                      "' (no-fine-grained | no-history-attention | no-positional-history | "
                      "no-span-task | no-dialog-act-task)");
  }
}

void RunConfig::validate() const {
  layout().validate();
  tokenizer_mode_from_string(tokenizer_mode);
  pooling_from_string(pooling);
  if (tokenizer_mode == "subword" && vocab_file.empty())
    throw ConfigError("subword tokenizer_mode requires vocab_file");
  train_config().validate();
  if (max_answer_len < 1) throw ConfigError("max_answer_len must be >= 1");
  if (hidden_size % head_count != 0)
    throw ConfigError("hidden_size must be divisible by head_count");
}

SequenceLayout RunConfig::layout() const {
  SequenceLayout l;
  l.max_seq_len = static_cast<int32_t>(max_seq_len);
  l.max_question_len = static_cast<int32_t>(max_question_len);
  l.doc_stride = static_cast<int32_t>(doc_stride);
  l.max_history_turns = static_cast<int32_t>(max_history_turns);
  return l;
}

EncoderConfig RunConfig::encoder_config(int32_t vocab_size) const {
  EncoderConfig e;
  e.hidden_size = static_cast<int32_t>(hidden_size);
  e.layer_count = static_cast<int32_t>(layer_count);
  e.head_count = static_cast<int32_t>(head_count);
  e.ffn_size = static_cast<int32_t>(ffn_size);
  e.max_seq_len = static_cast<int32_t>(max_seq_len);
  e.vocab_size = vocab_size;
  e.max_history_turns = static_cast<int32_t>(max_history_turns);
  e.dropout = dropout;
  e.pooling = pooling_from_string(pooling);
  e.collapse_history_markers = !positional_history;
  return e;
}

ModelConfig RunConfig::model_config(int32_t vocab_size) const {
  ModelConfig m;
  m.encoder = encoder_config(vocab_size);
  m.fine_grained = fine_grained;
  m.history_attention = history_attention;
  m.max_answer_len = static_cast<int32_t>(max_answer_len);
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lambda_weight = lambda;
  t.mu_weight = mu;
  t.batch_size = batch_size;
  t.total_steps = total_steps;
  t.learning_rate = learning_rate;
  t.warmup_fraction = warmup_fraction;
  t.seed = seed;
  t.eval_every = eval_every;
  t.fine_grained = fine_grained;
  t.history_attention = history_attention;
  t.positional_history = positional_history;
  t.span_task = span_task;
  t.dialog_act_task = dialog_act_task;
  return t;
}

}  // namespace convqa
