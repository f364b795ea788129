#include "synth/trainer.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "synth/errors.hpp"
#include "synth/ops.hpp"
#include "synth/rng.hpp"

namespace synth {
namespace {

using Clock = std::chrono::steady_clock;

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t v = logits.dim(-1);
  const std::size_t rows = logits.numel() / v;
  const auto d = logits.data();
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (d[r * v + j] > d[r * v + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

// Feeds predictions back into the scored region until the input stops
// changing. With a causal model the fixed point is the greedy decode: the
// first i positions are settled after i rounds.
std::vector<int> greedy_decode(const LogitFn& fn, const Batch& batch, std::vector<int> preds) {
  const std::size_t b = batch.input.batch, l = batch.input.length;
  Batch cur = batch;
  for (std::size_t round = 0; round <= l; ++round) {
    std::vector<int> ids = cur.input.ids;
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t p = 0; p + 1 < l; ++p) {
        const std::size_t i = s * l + p;
        if (batch.target_mask[i] && batch.target_mask[i + 1]) ids[i + 1] = preds[i];
      }
    }
    if (ids == cur.input.ids) return preds;
    cur.input = TokenBlock::from_ids(b, l, std::move(ids));
    preds = argmax_rows(fn(cur));
  }
  return preds;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
  adam.validate();
}

double EvalMetrics::ppl() const { return std::exp(loss); }

std::string MetricLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["ppl"] = r.ppl;
    j["tok_acc"] = r.tok_acc;
    j["seq_acc"] = r.seq_acc;
    j["secs"] = r.secs;
    j["steps_per_sec"] = r.steps_per_sec;
    out += j.dump();
    out += '\n';
  }
  return out;
}

MetricLog MetricLog::from_jsonl(std::string_view text) {
  MetricLog log;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.loss = j.at("loss").get<double>();
    r.ppl = j.at("ppl").get<double>();
    r.tok_acc = j.at("tok_acc").get<double>();
    r.seq_acc = j.at("seq_acc").get<double>();
    r.secs = j.at("secs").get<double>();
    r.steps_per_sec = j.value("steps_per_sec", 0.0);
    log.records.push_back(r);
  }
  return log;
}

bool MetricLog::same_metrics(const MetricLog& other) const {
  if (records.size() != other.records.size()) return false;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& a = records[i];
    const auto& b = other.records[i];
    if (a.step != b.step || a.loss != b.loss || a.ppl != b.ppl || a.tok_acc != b.tok_acc || a.seq_acc != b.seq_acc) {
      return false;
    }
  }
  return true;
}

EvalMetrics evaluate(const LogitFn& fn, const std::vector<Batch>& batches) {
  EvalMetrics m;
  double nll = 0.0;
  std::size_t correct = 0, seq_correct = 0;
  for (const auto& batch : batches) {
    const Tensor logits = fn(batch);
    std::size_t scored = 0;
    for (auto f : batch.target_mask) scored += f;
    if (scored == 0) continue;
    nll += cross_entropy(logits, batch.targets, batch.target_mask).item() * static_cast<double>(scored);

    std::vector<int> preds = argmax_rows(logits);
    if (batch.autoregressive) preds = greedy_decode(fn, batch, std::move(preds));
    const std::size_t l = batch.input.length;
    for (std::size_t s = 0; s < batch.input.batch; ++s) {
      bool all = true, any = false;
      for (std::size_t p = 0; p < l; ++p) {
        const std::size_t i = s * l + p;
        if (!batch.target_mask[i]) continue;
        any = true;
        if (preds[i] == batch.targets[i]) {
          ++correct;
        } else {
          all = false;
        }
      }
      if (!any) continue;
      ++m.sequences;
      if (all) ++seq_correct;
    }
    m.tokens += scored;
  }
  if (m.tokens == 0) throw ConfigError("evaluate: no scored positions");
  m.loss = nll / static_cast<double>(m.tokens);
  m.tok_acc = static_cast<double>(correct) / static_cast<double>(m.tokens);
  m.seq_acc = static_cast<double>(seq_correct) / static_cast<double>(m.sequences);
  return m;
}

EvalMetrics evaluate(const Transformer& model, const std::vector<Batch>& batches) {
  return evaluate([&model](const Batch& b) { return model.forward(b); }, batches);
}

ModelConfig fit_model_to_task(ModelConfig config, const Task& task) {
  config.vocab = model_vocab(task);
  config.max_len = formatted_length(task, config.mode);
  return config;
}

TrainRun::TrainRun(ModelConfig model, Task task, TrainConfig train)
    : model_config_(std::move(model)),
      task_(task),
      train_(train),
      model_(model_config_, train.model_seed) {
  train_.validate();
  if (model_vocab(task_) > model_config_.vocab) {
    throw ConfigError("task needs vocab " + std::to_string(model_vocab(task_)) + " but the model has " +
                      std::to_string(model_config_.vocab));
  }
  if (formatted_length(task_, model_config_.mode) > model_config_.max_len) {
    throw MaxLengthError("task sequences of length " + std::to_string(formatted_length(task_, model_config_.mode)) +
                         " exceed model max_len " + std::to_string(model_config_.max_len));
  }
  adam_.config = train_.adam;
  validation_ = generate(task_, Split::Validation, task_.val_size, train_.batch_size, model_config_.mode);
}

void TrainRun::restore(std::size_t step, double elapsed_secs, MetricLog log, bool finished) {
  step_ = step;
  elapsed_ = elapsed_secs;
  log_ = std::move(log);
  finished_ = finished;
}

EvalMetrics TrainRun::evaluate_now() const { return evaluate(model_, validation_); }

void TrainRun::record_eval() {
  const auto t0 = Clock::now();
  const EvalMetrics m = evaluate_now();
  elapsed_ += std::chrono::duration<double>(Clock::now() - t0).count();
  MetricRecord r;
  r.step = step_;
  r.loss = m.loss;
  r.ppl = m.ppl();
  r.tok_acc = m.tok_acc;
  r.seq_acc = m.seq_acc;
  r.secs = elapsed_;
  if (!log_.records.empty()) {
    const auto& prev = log_.records.back();
    const double dt = r.secs - prev.secs;
    if (dt > 0.0) r.steps_per_sec = static_cast<double>(r.step - prev.step) / dt;
  }
  log_.records.push_back(r);
  if (m.seq_acc >= train_.early_stop_seq_acc || m.tok_acc >= train_.early_stop_tok_acc) finished_ = true;
}

void TrainRun::train_step() {
  const auto t0 = Clock::now();
  const Batch batch = train_batch(task_, model_config_.mode, step_, train_.batch_size);
  model_.set_training(true, splitmix64(train_.model_seed ^ splitmix64(step_ + 1)));
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = model_.loss(batch);
    last_train_loss_ = loss.item();
    backward(loss);
  }
  model_.set_training(false);
  adam_step(model_.params(), adam_);
  model_.params().zero_grad();
  ++step_;
  elapsed_ += std::chrono::duration<double>(Clock::now() - t0).count();
}

bool TrainRun::run_until(std::size_t until) {
  if (finished_) return false;
  if (step_ == 0 && log_.records.empty()) record_eval();
  const std::size_t target = std::min(until, train_.steps);
  while (!finished_ && step_ < target) {
    train_step();
    if (step_ % train_.eval_every == 0 || step_ == train_.steps) record_eval();
  }
  if (step_ >= train_.steps) finished_ = true;
  return !finished_;
}

MetricLog train(const ModelConfig& model, const Task& task, const TrainConfig& config,
                const std::function<void(const TrainRun&)>& on_finish) {
  TrainRun run(model, task, config);
  run.run();
  if (on_finish) on_finish(run);
  return run.log();
}

}  // namespace synth
