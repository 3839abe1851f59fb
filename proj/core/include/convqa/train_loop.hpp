#pragma once

// The step loop around Trainer: epoch batching, the periodic held-out
// evaluation, the metrics log, and best/last checkpoints.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include "convqa/batching.hpp"
#include "convqa/checkpoint.hpp"
#include "convqa/inference.hpp"
#include "convqa/metrics.hpp"
#include "convqa/training.hpp"

namespace convqa {

struct TrainRunResult {
  int64_t steps_run = 0;
  double best_eval_f1 = -1.0;
  int64_t best_eval_step = -1;
};

struct EvalHook {
  const std::vector<Dialog>* dialogs = nullptr;
  const SequencedCorpus* corpus = nullptr;
};

// Runs the trainer until total_steps (or until should_stop returns true at an
// evaluation point). Batches are rebuilt per epoch from seed + epoch, so a
// restored (epoch, cursor) resumes the exact same stream. When out_dir is
// non-empty, appends metric records to metrics.ndjson and keeps
// checkpoint-last / checkpoint-best directories.
template <typename S>
TrainRunResult run_training(
    Trainer<S>& trainer, const SequencedCorpus& data, EvalHook eval_hook,
    const std::filesystem::path& out_dir, const std::string& config_json,
    TrainLoopState* loop_state = nullptr,
    const std::function<bool(int64_t, const EvalReport&)>& should_stop = nullptr,
    const std::function<void(const StepStats&)>& on_step = nullptr) {
  const TrainConfig& config = trainer.config();
  std::vector<int32_t> group_sizes;
  group_sizes.reserve(data.groups.size());
  for (const auto& g : data.groups) group_sizes.push_back(g.variation_count());

  TrainLoopState local_state;
  TrainLoopState& state = loop_state != nullptr ? *loop_state : local_state;
  trainer.set_step(state.step);

  std::ofstream metrics_log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_log.open(out_dir / "metrics.ndjson", std::ios::app | std::ios::binary);
  }

  auto batches = make_batches(group_sizes, config.batch_size, config.seed + static_cast<uint64_t>(state.epoch));
  TrainRunResult result;
  double last_eval_f1 = -1.0;

  const auto save_state = [&](const std::filesystem::path& dir) {
    std::ostringstream rng_stream;
    rng_stream << trainer.dropout_rng();
    state.dropout_rng = rng_stream.str();
    state.step = trainer.step();
    save_checkpoint<S>(dir, trainer.parameters(), config_json, &trainer.optimizer(), &state);
  };

  while (trainer.step() < config.total_steps) {
    if (state.batch_cursor >= static_cast<int64_t>(batches.size())) {
      state.batch_cursor = 0;
      ++state.epoch;
      batches = make_batches(group_sizes, config.batch_size,
                             config.seed + static_cast<uint64_t>(state.epoch));
    }
    const StepStats stats =
        trainer.train_step(data, batches[static_cast<size_t>(state.batch_cursor)],
                           state.batch_cursor);
    ++state.batch_cursor;
    ++result.steps_run;
    state.avg_loss_ans = 0.98 * state.avg_loss_ans + 0.02 * stats.loss_ans;
    state.avg_loss_affirm = 0.98 * state.avg_loss_affirm + 0.02 * stats.loss_affirm;
    state.avg_loss_cont = 0.98 * state.avg_loss_cont + 0.02 * stats.loss_cont;
    if (on_step) on_step(stats);

    const bool eval_now =
        eval_hook.corpus != nullptr &&
        (trainer.step() % config.eval_every == 0 || trainer.step() == config.total_steps);
    if (eval_now) {
      auto predictions = predict_corpus(trainer.model(), *eval_hook.dialogs, *eval_hook.corpus);
      const EvalReport report = evaluate(*eval_hook.dialogs, predictions);
      last_eval_f1 = report.f1;
      if (report.f1 > result.best_eval_f1) {
        result.best_eval_f1 = report.f1;
        result.best_eval_step = trainer.step();
        if (!out_dir.empty()) save_state(out_dir / "checkpoint-best");
      }
      if (should_stop && should_stop(trainer.step(), report)) break;
    }
    if (metrics_log.is_open()) {
      std::ostringstream line;
      line << "{\"step\":" << stats.step << ",\"lr\":" << stats.lr
           << ",\"loss_ans\":" << stats.loss_ans << ",\"loss_A\":" << stats.loss_affirm
           << ",\"loss_C\":" << stats.loss_cont;
      if (last_eval_f1 >= 0.0) line << ",\"f1\":" << last_eval_f1;
      line << "}";
      metrics_log << line.str() << '\n';
    }
  }

  if (!out_dir.empty()) save_state(out_dir / "checkpoint-last");
  return result;
}

}  // namespace convqa
