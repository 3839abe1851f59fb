#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "convqa/cache.hpp"
#include "convqa/checkpoint.hpp"
#include "convqa/config.hpp"
#include "convqa/inference.hpp"
#include "convqa/metrics.hpp"
#include "convqa/train_loop.hpp"

namespace convqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::vector<std::string> ablations;
  std::vector<std::string> overrides;
  int64_t limit = 0;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file");
  cmd->add_option("--seed", opts.seed, "Override the run seed");
  cmd->add_option("--ablation", opts.ablations, "Disable a component (repeatable)");
  cmd->add_option("--set", opts.overrides, "Override a config key, key=value (repeatable)");
  cmd->add_option("--limit", opts.limit, "Use only the first N dialogs");
}

// file < environment < command-line flags
RunConfig resolve_config(const CommonOptions& opts) {
  RunConfig config =
      opts.config_path.empty() ? RunConfig{} : RunConfig::from_file(opts.config_path);
  config.apply_env();
  for (const auto& assignment : opts.overrides) config.apply_override(assignment);
  if (opts.seed) config.seed = *opts.seed;
  for (const auto& name : opts.ablations) config.apply_ablation(name);
  config.validate();
  std::cerr << "resolved configuration:\n" << config.to_json() << "\n";
  return config;
}

std::vector<Dialog> maybe_limit(std::vector<Dialog> dialogs, int64_t limit) {
  if (limit > 0 && static_cast<int64_t>(dialogs.size()) > limit)
    dialogs.resize(static_cast<size_t>(limit));
  return dialogs;
}

struct LoadedData {
  std::vector<Dialog> dialogs;
  Vocabulary vocab;
  bool vocab_from_cache = false;
};

// --data accepts either a compiled cache directory or a raw corpus file.
LoadedData load_data(const std::string& path, int64_t limit) {
  LoadedData data;
  if (fs::is_directory(path)) {
    DatasetCache cache = read_dataset_cache(path);
    data.dialogs = maybe_limit(std::move(cache.dialogs), limit);
    data.vocab = std::move(cache.vocabulary);
    data.vocab_from_cache = true;
  } else {
    data.dialogs = maybe_limit(load_corpus_file(path), limit);
  }
  return data;
}

int cmd_compile_data(const CommonOptions& common, const std::string& corpus_path,
                     const std::string& out_dir) {
  const RunConfig config = resolve_config(common);
  DatasetCache cache;
  cache.dialogs = maybe_limit(load_corpus_file(corpus_path), common.limit);
  cache.tokenizer_mode = tokenizer_mode_from_string(config.tokenizer_mode);
  cache.vocabulary = config.vocab_file.empty() ? build_corpus_vocabulary(cache.dialogs)
                                               : Vocabulary::load(config.vocab_file);
  cache.summary = summarize_corpus(cache.dialogs);
  write_dataset_cache(cache, out_dir);

  const CorpusSummary& s = cache.summary;
  std::cout << "dialogs: " << s.dialog_count << "\n";
  std::cout << "questions: " << s.question_count << "\n";
  char line[128];
  std::snprintf(line, sizeof(line),
                "history turns per question (min/avg/med/max): %lld/%.1f/%g/%lld\n",
                static_cast<long long>(s.min_history), s.avg_history, s.median_history,
                static_cast<long long>(s.max_history));
  std::cout << line;
  std::cout << "histogram:";
  for (size_t h = 0; h < s.history_turn_histogram.size(); ++h)
    std::cout << " " << h << ":" << s.history_turn_histogram[h];
  std::cout << "\ncache written to " << out_dir << "\n";
  return kExitOk;
}

// Builds model + sequenced corpus from a cache and the resolved config.
struct TrainSetup {
  DatasetCache cache;
  SequencedCorpus corpus;
  Model<float> model;
  std::string config_json;
};

TrainSetup make_train_setup(const RunConfig& config, const std::string& cache_dir,
                            int64_t limit) {
  TrainSetup setup;
  setup.cache = read_dataset_cache(cache_dir);
  setup.cache.dialogs = maybe_limit(std::move(setup.cache.dialogs), limit);
  tokenize_corpus(setup.cache.dialogs, setup.cache.tokenizer_mode, &setup.cache.vocabulary);
  setup.corpus = sequence_corpus(setup.cache.dialogs, setup.cache.vocabulary, config.layout(),
                                 setup.cache.tokenizer_mode);
  setup.model = Model<float>(config.model_config(setup.cache.vocabulary.size()), config.seed);
  setup.config_json = config.to_json();
  return setup;
}

int cmd_train(const CommonOptions& common, const std::string& cache_dir,
              const std::string& out_dir, const std::string& eval_corpus_path,
              const std::string& resume_dir) {
  const RunConfig config = resolve_config(common);
  TrainSetup setup = make_train_setup(config, cache_dir, common.limit);
  Trainer<float> trainer(setup.model, config.train_config());

  TrainLoopState state;
  if (!resume_dir.empty()) {
    load_checkpoint<float>(resume_dir, trainer.parameters(), &trainer.optimizer(), &state);
    std::istringstream rng_stream(state.dropout_rng);
    rng_stream >> trainer.dropout_rng();
    std::cerr << "resumed from " << resume_dir << " at step " << state.step << "\n";
  }

  std::vector<Dialog> eval_dialogs;
  SequencedCorpus eval_corpus;
  EvalHook hook;
  if (!eval_corpus_path.empty()) {
    eval_dialogs = load_corpus_file(eval_corpus_path);
    tokenize_corpus(eval_dialogs, setup.cache.tokenizer_mode, &setup.cache.vocabulary);
    eval_corpus = sequence_corpus(eval_dialogs, setup.cache.vocabulary, config.layout(),
                                  setup.cache.tokenizer_mode);
    hook = EvalHook{&eval_dialogs, &eval_corpus};
  }

  int64_t last_print = -1;
  auto result = run_training<float>(
      trainer, setup.corpus, hook, out_dir, setup.config_json, &state, nullptr,
      [&last_print](const StepStats& stats) {
        if (stats.step - last_print >= 50 || stats.step == 0) {
          last_print = stats.step;
          std::cerr << "step " << stats.step << " lr " << stats.lr << " loss "
                    << stats.loss_total << "\n";
        }
      });

  // ship the vocabulary with every checkpoint so prediction is self-contained
  for (const char* name : {"checkpoint-last", "checkpoint-best"}) {
    const fs::path dir = fs::path(out_dir) / name;
    if (fs::exists(dir)) setup.cache.vocabulary.save(dir / "vocab.txt");
  }
  std::cout << "trained " << result.steps_run << " steps";
  if (result.best_eval_step >= 0)
    std::cout << "; best eval F1 " << result.best_eval_f1 << " at step " << result.best_eval_step;
  std::cout << "\ncheckpoints in " << out_dir << "\n";
  return kExitOk;
}

struct RestoredModel {
  RunConfig config;
  Vocabulary vocab;
  Model<float> model;
};

RestoredModel restore_model(const std::string& checkpoint_dir) {
  RestoredModel restored;
  restored.config = RunConfig::from_json(read_checkpoint_config(checkpoint_dir));
  const fs::path vocab_path = fs::path(checkpoint_dir) / "vocab.txt";
  if (!fs::exists(vocab_path))
    throw DataError("checkpoint " + checkpoint_dir + " has no vocab.txt");
  restored.vocab = Vocabulary::load(vocab_path);
  restored.model =
      Model<float>(restored.config.model_config(restored.vocab.size()), restored.config.seed);
  auto params = restored.model.named_parameters();
  load_checkpoint<float>(checkpoint_dir, params);
  return restored;
}

SequencedCorpus sequence_for(const RestoredModel& restored, std::vector<Dialog>& dialogs) {
  const TokenizerMode mode = tokenizer_mode_from_string(restored.config.tokenizer_mode);
  tokenize_corpus(dialogs, mode, &restored.vocab);
  return sequence_corpus(dialogs, restored.vocab, restored.config.layout(), mode);
}

int cmd_predict(const CommonOptions& common, const std::string& checkpoint_dir,
                const std::string& data_path, const std::string& out_file) {
  RestoredModel restored = restore_model(checkpoint_dir);
  std::cerr << "checkpoint configuration:\n" << restored.config.to_json() << "\n";
  LoadedData data = load_data(data_path, common.limit);
  SequencedCorpus corpus = sequence_for(restored, data.dialogs);
  auto predictions = predict_corpus(restored.model, data.dialogs, corpus);
  write_predictions(predictions, out_file);
  std::cout << "wrote predictions for " << data.dialogs.size() << " dialogs to " << out_file
            << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& corpus_path, const std::string& predictions_path,
             const std::string& out_file) {
  auto gold = load_corpus_file(corpus_path);
  auto predictions = read_predictions(predictions_path);
  const EvalReport report = evaluate(gold, predictions);
  std::cout << report.to_table();
  if (!out_file.empty()) {
    std::ofstream out(out_file, std::ios::binary);
    if (!out) throw DataError("cannot write report to " + out_file);
    out << report.to_json() << "\n";
    std::cout << "report written to " << out_file << "\n";
  }
  return kExitOk;
}

int cmd_export_attention(const CommonOptions& common, const std::string& checkpoint_dir,
                         const std::string& data_path, const std::string& out_dir) {
  RestoredModel restored = restore_model(checkpoint_dir);
  std::cerr << "checkpoint configuration:\n" << restored.config.to_json() << "\n";
  LoadedData data = load_data(data_path, common.limit);
  SequencedCorpus corpus = sequence_for(restored, data.dialogs);
  auto records =
      collect_attention_records(restored.model, data.dialogs, corpus, restored.vocab);
  fs::create_directories(out_dir);

  for (size_t r = 0; r < records.size(); ++r) {
    const AttentionRecord& rec = records[r];
    const SequencedGroup& group = corpus.groups[r];
    const Dialog& dialog = data.dialogs[static_cast<size_t>(group.dialog_index)];
    const int32_t turn_count = rec.turn_index;
    const int64_t positions = static_cast<int64_t>(rec.tokens.size());

    // rows labeled by relative history position 0 .. k-1
    std::vector<std::vector<double>> matrix(
        static_cast<size_t>(turn_count), std::vector<double>(static_cast<size_t>(positions), 0.0));
    for (size_t slot = 0; slot < rec.relative_positions.size(); ++slot) {
      const int32_t rel = rec.relative_positions[slot];
      if (rel < 0 || !rec.slot_mask[slot] || rel >= turn_count) continue;
      matrix[static_cast<size_t>(rel)] = rec.weights[slot];
    }

    const std::string stem = rec.qid + "_w" + std::to_string(rec.window_index);
    {
      std::ofstream csv(fs::path(out_dir) / (stem + ".csv"), std::ios::binary);
      csv << "relative_history_position";
      for (int64_t p = 0; p < positions; ++p) csv << ",token_" << p;
      csv << "\n";
      for (int32_t row = 0; row < turn_count; ++row) {
        csv << row;
        for (int64_t p = 0; p < positions; ++p)
          csv << "," << matrix[static_cast<size_t>(row)][static_cast<size_t>(p)];
        csv << "\n";
      }
    }
    {
      json side = json::array();
      for (int32_t t = 0; t < rec.turn_index; ++t) {
        const QuestionTurn& turn = dialog.turns[static_cast<size_t>(t)];
        side.push_back({{"turn", t + 1},
                        {"relative_position", rec.turn_index - (t + 1)},
                        {"question", turn.question},
                        {"answer", t + 1 < rec.turn_index ? turn.answer.text : "to be predicted"}});
      }
      json doc = {{"qid", rec.qid},
                  {"turn", rec.turn_index},
                  {"window", rec.window_index},
                  {"matrix", matrix},
                  {"tokens", rec.tokens},
                  {"dialog", side}};
      std::ofstream js(fs::path(out_dir) / (stem + ".json"), std::ios::binary);
      js << doc.dump(1) << "\n";
    }
  }
  std::cout << "exported " << records.size() << " attention matrices to " << out_dir << "\n";
  return kExitOk;
}

// A tiny deterministic two-dialog corpus for the self-contained check.
std::string grad_check_corpus() {
  json data = json::array();
  const char* contexts[] = {"red fox ran over icy river CANNOTANSWER",
                            "old owl kept four shiny keys CANNOTANSWER"};
  for (int d = 0; d < 2; ++d) {
    std::string context = contexts[d];
    json qas = json::array();
    const char* words[2][3] = {{"fox", "ran", "river"}, {"owl", "kept", "keys"}};
    for (int t = 0; t < 3; ++t) {
      const std::string answer = words[d][t];
      qas.push_back({{"id", "g" + std::to_string(d) + "-q" + std::to_string(t)},
                     {"question", std::string("which word ") + std::to_string(t) + " ?"},
                     {"orig_answer",
                      {{"text", answer}, {"answer_start", context.find(answer)}}},
                     {"yesno", t % 2 ? "y" : "n"},
                     {"followup", t % 2 ? "m" : "n"}});
    }
    data.push_back({{"title", "g" + std::to_string(d)},
                    {"paragraphs",
                     json::array({{{"id", "g" + std::to_string(d)},
                                   {"context", context},
                                   {"qas", qas}}})}});
  }
  return json{{"data", data}}.dump();
}

int cmd_grad_check(const CommonOptions& common, double tolerance) {
  RunConfig config;
  // 64-bit gradient-check defaults: tiny everything, no dropout
  config.hidden_size = 8;
  config.layer_count = 1;
  config.head_count = 2;
  config.ffn_size = 16;
  config.max_seq_len = 16;
  config.max_question_len = 4;
  config.doc_stride = 8;
  config.max_history_turns = 3;
  config.dropout = 0.0;
  if (common.seed) config.seed = *common.seed;
  for (const auto& assignment : common.overrides) config.apply_override(assignment);
  for (const auto& name : common.ablations) config.apply_ablation(name);
  config.validate();
  std::cerr << "resolved configuration:\n" << config.to_json() << "\n";

  auto dialogs = parse_corpus(grad_check_corpus());
  tokenize_corpus(dialogs, TokenizerMode::kWhitespace, nullptr);
  Vocabulary vocab = build_corpus_vocabulary(dialogs);
  SequencedCorpus corpus = sequence_corpus(dialogs, vocab, config.layout());

  double worst = 0.0;
  for (const bool fine_grained : {true, false}) {
    ModelConfig mc = config.model_config(vocab.size());
    mc.fine_grained = fine_grained;
    Model<double> model(mc, config.seed);
    std::vector<Tensor<double>> params;
    for (auto& [name, p] : model.named_parameters()) params.push_back(p);
    // the group with the most history turns exercises the full stack
    const SequencedGroup* group = &corpus.groups.front();
    for (const auto& g : corpus.groups)
      if (g.variation_count() > group->variation_count()) group = &g;
    auto fn = [&] {
      auto fwd = model.forward_group(*group, ForwardCtx{});
      const TokenSequence& seq = group->sequences.front();
      auto l_ans =
          span_loss(fwd.p_begin, fwd.p_end, seq.gold_begin, seq.gold_end, fwd.attention_mask);
      auto [l_a, l_c] = dialog_act_loss(fwd.p_affirm, fwd.p_cont, group->affirmation,
                                        group->continuation);
      return add(scale(l_ans, 0.8), scale(add(l_a, l_c), 0.1));
    };
    const double err = grad_check<double>(fn, params, 1e-5);
    std::cout << (fine_grained ? "fine-grained" : "sequence-level")
              << " attention: max relative error " << err << "\n";
    worst = std::max(worst, err);
  }
  if (worst > tolerance)
    throw NumericError("gradient check failed: " + std::to_string(worst) + " > " +
                       std::to_string(tolerance));
  std::cout << "gradient check passed (tolerance " << tolerance << ")\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"history-attentive conversational question answering"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string corpus_path, cache_dir, out_path, eval_corpus, resume_dir, checkpoint_dir,
      data_path, predictions_path;
  double tolerance = 1e-3;

  auto* compile = app.add_subcommand("compile-data", "Parse a corpus into a dataset cache");
  add_common(compile, common);
  compile->add_option("--corpus", corpus_path, "QuAC-format JSON corpus")->required();
  compile->add_option("--out", out_path, "Cache output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model from a compiled cache");
  add_common(train, common);
  train->add_option("--data", cache_dir, "Compiled dataset cache directory")->required();
  train->add_option("--out", out_path, "Output directory (checkpoints, metrics log)")->required();
  train->add_option("--eval-corpus", eval_corpus, "Held-out corpus for periodic evaluation");
  train->add_option("--resume", resume_dir, "Checkpoint directory to resume from");

  auto* predict = app.add_subcommand("predict", "Write predictions for a corpus");
  add_common(predict, common);
  predict->add_option("--checkpoint", checkpoint_dir, "Trained checkpoint directory")->required();
  predict->add_option("--data", data_path, "Corpus file or cache directory")->required();
  predict->add_option("--out", out_path, "Prediction file (ndjson)")->required();

  auto* eval = app.add_subcommand("eval", "Score a prediction file against gold answers");
  add_common(eval, common);
  eval->add_option("--corpus", corpus_path, "Gold corpus file")->required();
  eval->add_option("--predictions", predictions_path, "Prediction file")->required();
  eval->add_option("--out", out_path, "Optional JSON report path");

  auto* export_attn =
      app.add_subcommand("export-attention", "Export history attention heatmap matrices");
  add_common(export_attn, common);
  export_attn->add_option("--checkpoint", checkpoint_dir, "Trained checkpoint directory")
      ->required();
  export_attn->add_option("--data", data_path, "Corpus file or cache directory")->required();
  export_attn->add_option("--out", out_path, "Output directory")->required();

  auto* gradcheck =
      app.add_subcommand("grad-check", "Finite-difference check of the composed loss (64-bit)");
  add_common(gradcheck, common);
  gradcheck->add_option("--tolerance", tolerance, "Maximum allowed relative error");

  std::vector<const char*> argv{"convqa"};
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? kExitOk : kExitConfig;
    }
    if (compile->parsed()) return cmd_compile_data(common, corpus_path, out_path);
    if (train->parsed()) return cmd_train(common, cache_dir, out_path, eval_corpus, resume_dir);
    if (predict->parsed()) return cmd_predict(common, checkpoint_dir, data_path, out_path);
    if (eval->parsed()) return cmd_eval(corpus_path, predictions_path, out_path);
    if (export_attn->parsed())
      return cmd_export_attention(common, checkpoint_dir, data_path, out_path);
    if (gradcheck->parsed()) return cmd_grad_check(common, tolerance);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace convqa::cli
