#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "synth/adam.hpp"
#include "synth/model.hpp"
#include "synth/tasks.hpp"

namespace synth {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t eval_every = 200;
  std::size_t batch_size = 32;
  AdamConfig adam;
  // Stop at an evaluation that reaches either threshold; values > 1 disable.
  double early_stop_seq_acc = 2.0;
  double early_stop_tok_acc = 2.0;
  std::uint64_t model_seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EvalMetrics {
  double loss = 0.0;     // teacher-forced mean NLL over scored tokens
  double tok_acc = 0.0;  // greedy decoding
  double seq_acc = 0.0;
  std::size_t tokens = 0;
  std::size_t sequences = 0;

  double ppl() const;
};

struct MetricRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double ppl = 0.0;
  double tok_acc = 0.0;
  double seq_acc = 0.0;
  double secs = 0.0;           // training wall-clock so far
  double steps_per_sec = 0.0;  // since the previous record
};

struct MetricLog {
  std::vector<MetricRecord> records;

  /// One JSON object per line.
  std::string to_jsonl() const;
  static MetricLog from_jsonl(std::string_view text);
  /// Equality over the deterministic fields (everything but timing).
  bool same_metrics(const MetricLog& other) const;
};

/// Logits [b,L,V] for a batch.
using LogitFn = std::function<Tensor(const Batch&)>;

/// Greedy-decoded accuracy plus teacher-forced loss. For autoregressive
/// batches the scored positions are decoded by feeding predictions back in;
/// the logit function must then be causal.
EvalMetrics evaluate(const LogitFn& logits, const std::vector<Batch>& batches);
EvalMetrics evaluate(const Transformer& model, const std::vector<Batch>& batches);

/// Model config sized for a task: vocab and max_len are filled in.
ModelConfig fit_model_to_task(ModelConfig config, const Task& task);

/// A resumable training run. Everything it does is a function of the
/// configs, so a run restored from a checkpoint continues bit-identically.
class TrainRun {
 public:
  TrainRun(ModelConfig model, Task task, TrainConfig train);

  /// Train until `until` optimizer steps are done (capped at train.steps),
  /// evaluating at step 0, every eval_every steps and at train.steps.
  /// Returns false once the run is finished (all steps or early stop).
  bool run_until(std::size_t until);
  void run() { run_until(train_.steps); }

  bool finished() const { return finished_; }
  std::size_t step() const { return step_; }
  double elapsed_secs() const { return elapsed_; }

  const ModelConfig& model_config() const { return model_config_; }
  const Task& task() const { return task_; }
  const TrainConfig& train_config() const { return train_; }
  Transformer& model() { return model_; }
  const Transformer& model() const { return model_; }
  AdamState& optimizer() { return adam_; }
  const AdamState& optimizer() const { return adam_; }
  const MetricLog& log() const { return log_; }
  const std::vector<Batch>& validation() const { return validation_; }

  /// Training loss of the most recent optimizer step.
  double last_train_loss() const { return last_train_loss_; }

  /// Restores progress counters after parameters and optimizer state were
  /// loaded into model() and optimizer().
  void restore(std::size_t step, double elapsed_secs, MetricLog log, bool finished);

  /// One optimizer step on the batch for the current step index.
  void train_step();
  EvalMetrics evaluate_now() const;

 private:
  void record_eval();

  ModelConfig model_config_;
  Task task_;
  TrainConfig train_;
  Transformer model_;
  AdamState adam_;
  std::vector<Batch> validation_;
  MetricLog log_;
  std::size_t step_ = 0;
  double elapsed_ = 0.0;
  double last_train_loss_ = 0.0;
  bool finished_ = false;
};

/// Runs a full training job; `on_finish` sees the finished run (the CLI
/// persists the final checkpoint there).
MetricLog train(const ModelConfig& model, const Task& task, const TrainConfig& config,
                const std::function<void(const TrainRun&)>& on_finish = {});

}  // namespace synth
