#include "synth/tasks.hpp"

#include <algorithm>
#include <array>

#include "synth/errors.hpp"
#include "synth/rng.hpp"

namespace synth {
namespace {

struct Alphabet {
  std::array<int, 256> index{};  // char -> data symbol, -1 when absent
  std::size_t size = 0;
};

const Alphabet& corpus_alphabet() {
  static const Alphabet alphabet = [] {
    Alphabet a;
    a.index.fill(-1);
    std::array<bool, 256> seen{};
    for (unsigned char c : char_lm_corpus()) seen[c] = true;
    for (std::size_t c = 0; c < 256; ++c) {
      if (seen[c]) a.index[c] = static_cast<int>(a.size++);
    }
    return a;
  }();
  return alphabet;
}

std::uint64_t split_stream(Split split) { return stream_id(split == Split::Train ? "task.train" : "task.validation"); }

}  // namespace

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Sort: return "sort";
    case TaskKind::CharLm: return "char_lm";
  }
  return "?";
}

TaskKind parse_task(std::string_view text) {
  if (text == "copy") return TaskKind::Copy;
  if (text == "reverse") return TaskKind::Reverse;
  if (text == "sort") return TaskKind::Sort;
  if (text == "char_lm") return TaskKind::CharLm;
  throw ConfigError("unknown task '" + std::string(text) + "' (expected copy, reverse, sort or char_lm)");
}

std::vector<int> task_target(TaskKind kind, std::span<const int> input) {
  std::vector<int> out(input.begin(), input.end());
  switch (kind) {
    case TaskKind::Copy: break;
    case TaskKind::Reverse: std::reverse(out.begin(), out.end()); break;
    case TaskKind::Sort: std::sort(out.begin(), out.end()); break;
    case TaskKind::CharLm: throw ConfigError("char_lm targets come from the corpus, not from the input");
  }
  return out;
}

std::size_t data_vocab(const Task& task) {
  return task.kind == TaskKind::CharLm ? corpus_alphabet().size : task.vocab;
}

std::size_t model_vocab(const Task& task) { return data_vocab(task) + kFirstDataId; }

std::size_t formatted_length(const Task& task, ModelMode mode) {
  if (task.kind == TaskKind::CharLm) return task.seq_len;
  return mode == ModelMode::Decoder ? 2 * task.seq_len : task.seq_len;
}

Example make_example(const Task& task, Split split, std::size_t index) {
  if (task.seq_len == 0) throw ConfigError("task seq_len must be positive");
  const CounterRng rng = CounterRng(task.seed, split_stream(split)).split(index);
  Example ex;
  if (task.kind == TaskKind::CharLm) {
    const auto text = char_lm_corpus();
    if (task.seq_len + 1 >= text.size()) throw ConfigError("char_lm seq_len exceeds the corpus");
    const std::size_t start = rng.below(0, text.size() - task.seq_len - 1);
    const auto& alphabet = corpus_alphabet();
    for (std::size_t i = 0; i <= task.seq_len; ++i) {
      const int id = alphabet.index[static_cast<unsigned char>(text[start + i])] + kFirstDataId;
      if (i < task.seq_len) ex.source.push_back(id);
      if (i > 0) ex.target.push_back(id);
    }
    return ex;
  }
  if (task.vocab == 0) throw ConfigError("task vocab must be positive");
  for (std::size_t i = 0; i < task.seq_len; ++i) {
    ex.source.push_back(static_cast<int>(rng.below(i, task.vocab)) + kFirstDataId);
  }
  ex.target = task_target(task.kind, ex.source);
  return ex;
}

Batch format_batch(const Task& task, std::span<const Example> examples, ModelMode mode) {
  if (examples.empty()) throw ConfigError("format_batch: no examples");
  const std::size_t b = examples.size();
  const std::size_t l = task.seq_len;
  Batch batch;
  if (task.kind == TaskKind::CharLm) {
    if (mode != ModelMode::Decoder) throw ConfigError("char_lm needs a decoder-only model");
    std::vector<int> ids;
    for (const auto& ex : examples) {
      ids.insert(ids.end(), ex.source.begin(), ex.source.end());
      batch.targets.insert(batch.targets.end(), ex.target.begin(), ex.target.end());
    }
    batch.input = TokenBlock::from_ids(b, l, std::move(ids));
    batch.target_mask.assign(b * l, 1);
    return batch;
  }
  std::vector<int> ids, src;
  switch (mode) {
    case ModelMode::Encoder:
      for (const auto& ex : examples) {
        ids.insert(ids.end(), ex.source.begin(), ex.source.end());
        batch.targets.insert(batch.targets.end(), ex.target.begin(), ex.target.end());
      }
      batch.input = TokenBlock::from_ids(b, l, std::move(ids));
      batch.target_mask.assign(b * l, 1);
      break;
    case ModelMode::Decoder:
      for (const auto& ex : examples) {
        ids.insert(ids.end(), ex.source.begin(), ex.source.end());
        ids.push_back(kBosId);
        ids.insert(ids.end(), ex.target.begin(), ex.target.end() - 1);
        batch.targets.insert(batch.targets.end(), l, kPadId);
        batch.targets.insert(batch.targets.end(), ex.target.begin(), ex.target.end());
        batch.target_mask.insert(batch.target_mask.end(), l, 0);
        batch.target_mask.insert(batch.target_mask.end(), l, 1);
      }
      batch.input = TokenBlock::from_ids(b, 2 * l, std::move(ids));
      batch.autoregressive = true;
      break;
    case ModelMode::EncoderDecoder:
      for (const auto& ex : examples) {
        src.insert(src.end(), ex.source.begin(), ex.source.end());
        ids.push_back(kBosId);
        ids.insert(ids.end(), ex.target.begin(), ex.target.end() - 1);
        batch.targets.insert(batch.targets.end(), ex.target.begin(), ex.target.end());
      }
      batch.source = TokenBlock::from_ids(b, l, std::move(src));
      batch.input = TokenBlock::from_ids(b, l, std::move(ids));
      batch.target_mask.assign(b * l, 1);
      batch.autoregressive = true;
      break;
  }
  return batch;
}

std::vector<Batch> generate(const Task& task, Split split, std::size_t count, std::size_t batch_size, ModelMode mode,
                            std::size_t first) {
  if (count == 0) throw ConfigError("generate: count must be >= 1");
  if (batch_size == 0) throw ConfigError("generate: batch_size must be >= 1");
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    std::vector<Example> examples;
    for (std::size_t i = start; i < std::min(count, start + batch_size); ++i) {
      examples.push_back(make_example(task, split, first + i));
    }
    batches.push_back(format_batch(task, examples, mode));
  }
  return batches;
}

Batch train_batch(const Task& task, ModelMode mode, std::size_t step, std::size_t batch_size) {
  std::vector<Example> examples;
  examples.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::size_t index = step * batch_size + i;
    if (task.train_size > 0) index %= task.train_size;
    examples.push_back(make_example(task, Split::Train, index));
  }
  return format_batch(task, examples, mode);
}

Batch pad_batch(const Batch& batch, std::size_t extra) {
  const std::size_t b = batch.input.batch, l = batch.input.length, nl = l + extra;
  Batch out;
  out.source = batch.source;
  out.autoregressive = batch.autoregressive;
  std::vector<int> ids;
  for (std::size_t s = 0; s < b; ++s) {
    ids.insert(ids.end(), batch.input.ids.begin() + static_cast<std::ptrdiff_t>(s * l),
               batch.input.ids.begin() + static_cast<std::ptrdiff_t>((s + 1) * l));
    ids.insert(ids.end(), extra, kPadId);
    out.targets.insert(out.targets.end(), batch.targets.begin() + static_cast<std::ptrdiff_t>(s * l),
                       batch.targets.begin() + static_cast<std::ptrdiff_t>((s + 1) * l));
    out.targets.insert(out.targets.end(), extra, kPadId);
    out.target_mask.insert(out.target_mask.end(), batch.target_mask.begin() + static_cast<std::ptrdiff_t>(s * l),
                           batch.target_mask.begin() + static_cast<std::ptrdiff_t>((s + 1) * l));
    out.target_mask.insert(out.target_mask.end(), extra, 0);
  }
  out.input = TokenBlock::from_ids(b, nl, std::move(ids));
  return out;
}

}  // namespace synth
