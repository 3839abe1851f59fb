#pragma once

// Multi-task training: weighted span + dialog-act losses, linear
// warmup/decay schedule, decoupled-weight-decay adaptive-moment updates,
// global-norm gradient clipping, deterministic seeding.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "convqa/batching.hpp"
#include "convqa/errors.hpp"
#include "convqa/model.hpp"
#include "convqa/sequencing.hpp"
#include "convqa/tensor.hpp"

namespace convqa {

struct TrainConfig {
  double lambda_weight = 0.1;  // dialog-act loss factor
  double mu_weight = 0.8;      // span loss factor
  int64_t batch_size = 24;
  int64_t total_steps = 30000;
  double learning_rate = 3e-5;
  double warmup_fraction = 0.1;
  uint64_t seed = 42;
  int64_t eval_every = 500;

  // Ablation switches; all true = the full model.
  bool fine_grained = true;
  bool history_attention = true;
  bool positional_history = true;  // false: markers carry membership only
  bool span_task = true;
  bool dialog_act_task = true;

  // Disabling a task zeroes its factor; span-only training forces mu to 1.
  double effective_mu() const {
    if (!span_task) return 0.0;
    if (!dialog_act_task) return 1.0;
    return mu_weight;
  }
  double effective_lambda() const { return dialog_act_task ? lambda_weight : 0.0; }

  void validate() const {
    if (lambda_weight < 0.0 || mu_weight < 0.0)
      throw ConfigError("loss factors must be non-negative");
    if (effective_mu() == 0.0 && effective_lambda() == 0.0)
      throw ConfigError("both tasks are disabled; nothing to train");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
      throw ConfigError("warmup_fraction must be in [0, 1)");
    if (batch_size < 1 || total_steps < 1) throw ConfigError("batch_size and total_steps must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
  }
};

// mu * L_ans + lambda * (L_affirm + L_cont) with ablation flags applied.
inline double total_loss(double loss_ans, double loss_affirm, double loss_cont,
                         const TrainConfig& config) {
  return config.effective_mu() * loss_ans +
         config.effective_lambda() * (loss_affirm + loss_cont);
}

// Linear ramp 0 -> base over the warmup window, then linear decay to 0 at
// total_steps.
inline double lr_schedule(int64_t step, int64_t total_steps, double base_lr,
                          double warmup_fraction) {
  if (step < 0 || step > total_steps)
    throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + "]");
  const auto warmup = static_cast<int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total_steps == warmup) return step == total_steps ? 0.0 : base_lr;
  return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

// Scales all gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
template <typename S>
double clip_gradients(std::vector<std::pair<std::string, Tensor<S>>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params)
    for (S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& [name, p] : params)
      for (S& g : p.grad_mut()) g *= factor;
  }
  return norm;
}

// Adam with decoupled weight decay. Layer-norm parameters and biases are
// excluded from decay.
template <typename S>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.01;
  };

  AdamW() = default;

  explicit AdamW(const std::vector<std::pair<std::string, Tensor<S>>>& params,
                 Options options = {})
      : options_(options) {
    for (const auto& [name, p] : params) {
      const bool no_decay = name.ends_with("bias") || name.find("ln_") != std::string::npos;
      decay_.push_back(!no_decay);
      first_.emplace_back(p.size(), S(0));
      second_.emplace_back(p.size(), S(0));
    }
  }

  void step(std::vector<std::pair<std::string, Tensor<S>>>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor<S>& p = params[pi].second;
      auto grads = p.grad_mut();
      auto vals = p.values();
      auto& m = first_[pi];
      auto& v = second_[pi];
      for (size_t i = 0; i < vals.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        m[i] = static_cast<S>(options_.beta1 * static_cast<double>(m[i]) + (1.0 - options_.beta1) * g);
        v[i] = static_cast<S>(options_.beta2 * static_cast<double>(v[i]) + (1.0 - options_.beta2) * g * g);
        const double mh = static_cast<double>(m[i]) / bc1;
        const double vh = static_cast<double>(v[i]) / bc2;
        double update = mh / (std::sqrt(vh) + options_.eps);
        if (decay_[pi]) update += options_.weight_decay * static_cast<double>(vals[i]);
        vals[i] = static_cast<S>(static_cast<double>(vals[i]) - lr * update);
      }
    }
  }

  int64_t update_count() const { return t_; }
  void set_update_count(int64_t t) { t_ = t; }
  std::vector<std::vector<S>>& first_moments() { return first_; }
  std::vector<std::vector<S>>& second_moments() { return second_; }
  const Options& options() const { return options_; }

 private:
  Options options_;
  std::vector<bool> decay_;
  std::vector<std::vector<S>> first_;
  std::vector<std::vector<S>> second_;
  int64_t t_ = 0;
};

struct StepStats {
  int64_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_ans = 0.0;    // mean over groups in the batch
  double loss_affirm = 0.0;
  double loss_cont = 0.0;
  double grad_norm = 0.0;   // pre-clip
};

inline constexpr double kMaxGradNorm = 1.0;

template <typename S>
class Trainer {
 public:
  Trainer(Model<S>& model, TrainConfig config)
      : model_(model),
        config_(config),
        params_(model.named_parameters()),
        optimizer_(params_),
        dropout_rng_(static_cast<uint32_t>(config.seed ^ 0x9e3779b9u)) {
    config_.validate();
  }

  // One forward/backward/update over a batch of groups.
  StepStats train_step(const SequencedCorpus& data, const Batch& batch, int64_t batch_id = -1) {
    StepStats stats;
    stats.step = step_;
    stats.lr = lr_schedule(step_, config_.total_steps, config_.learning_rate,
                           config_.warmup_fraction);
    ForwardCtx ctx{true, &dropout_rng_};
    const double mu = config_.effective_mu();
    const double lambda = config_.effective_lambda();

    Tape<S> tape;
    Tensor<S> batch_loss;
    int64_t group_count = 0;
    for (int32_t gi : batch.group_indices) {
      const SequencedGroup& group = data.groups[static_cast<size_t>(gi)];
      auto fwd = model_.forward_group(group, ctx);
      Tensor<S> group_loss;
      if (config_.span_task) {
        const TokenSequence& seq = group.sequences.front();
        Tensor<S> l_ans = span_loss(fwd.p_begin, fwd.p_end, seq.gold_begin, seq.gold_end,
                                    fwd.attention_mask);
        stats.loss_ans += static_cast<double>(l_ans.item());
        group_loss = scale(l_ans, mu);
      }
      if (config_.dialog_act_task) {
        auto [l_a, l_c] = dialog_act_loss(fwd.p_affirm, fwd.p_cont, group.affirmation,
                                          group.continuation);
        stats.loss_affirm += static_cast<double>(l_a.item());
        stats.loss_cont += static_cast<double>(l_c.item());
        Tensor<S> acts = scale(add(l_a, l_c), lambda);
        group_loss = group_loss.defined() ? add(group_loss, acts) : acts;
      }
      batch_loss = batch_loss.defined() ? add(batch_loss, group_loss) : group_loss;
      ++group_count;
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(group_count));
    const double loss_value = static_cast<double>(batch_loss.item());
    if (!std::isfinite(loss_value))
      throw NumericError("non-finite loss " + std::to_string(loss_value) + " at step " +
                         std::to_string(step_) + " in batch " + std::to_string(batch_id) +
                         " (first group qid " +
                         data.groups[static_cast<size_t>(batch.group_indices.front())].qid + ")");
    stats.loss_total = loss_value;
    stats.loss_ans /= static_cast<double>(group_count);
    stats.loss_affirm /= static_cast<double>(group_count);
    stats.loss_cont /= static_cast<double>(group_count);

    tape.backward(batch_loss);
    stats.grad_norm = clip_gradients(params_, kMaxGradNorm);
    optimizer_.step(params_, stats.lr);
    for (auto& [name, p] : params_) p.zero_grad();
    ++step_;
    return stats;
  }

  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }
  const TrainConfig& config() const { return config_; }
  Model<S>& model() { return model_; }
  AdamW<S>& optimizer() { return optimizer_; }
  std::vector<std::pair<std::string, Tensor<S>>>& parameters() { return params_; }
  std::mt19937& dropout_rng() { return dropout_rng_; }

 private:
  Model<S>& model_;
  TrainConfig config_;
  std::vector<std::pair<std::string, Tensor<S>>> params_;
  AdamW<S> optimizer_;
  std::mt19937 dropout_rng_;
  int64_t step_ = 0;
};

}  // namespace convqa
