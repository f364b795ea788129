#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synth/model.hpp"

namespace synth {

enum class TaskKind { Copy, Reverse, Sort, CharLm };
enum class Split { Train, Validation };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view text);

struct Task {
  TaskKind kind = TaskKind::Copy;
  std::size_t vocab = 16;  // data symbols; char_lm uses the corpus alphabet
  std::size_t seq_len = 16;
  std::uint64_t seed = 1;
  std::size_t train_size = 100000;
  std::size_t val_size = 256;

  bool operator==(const Task&) const = default;
};

/// Raw example in model token ids (data symbols start at kFirstDataId).
struct Example {
  std::vector<int> source;
  std::vector<int> target;
};

/// copy: input; reverse: input reversed; sort: ascending. Not defined for char_lm.
std::vector<int> task_target(TaskKind kind, std::span<const int> input);

/// Number of data symbols: task.vocab, or the corpus alphabet for char_lm.
std::size_t data_vocab(const Task& task);
/// data_vocab plus the pad and BOS ids.
std::size_t model_vocab(const Task& task);
/// Sequence length the model sees for this task and mode.
std::size_t formatted_length(const Task& task, ModelMode mode);

/// Example `index` of a split; a pure function of (task seed, split, index).
/// Train and validation draw from disjoint streams.
Example make_example(const Task& task, Split split, std::size_t index);

/// Lays examples out for a model mode:
///   encoder:  input x, targets y
///   decoder:  input [x, BOS, y0..y(L-2)], targets y at positions L..2L-1
///             (char_lm: input window, targets shifted by one)
///   enc_dec:  source x, input [BOS, y0..y(L-2)], targets y
Batch format_batch(const Task& task, std::span<const Example> examples, ModelMode mode);

/// `count` examples starting at `first`, chunked into batches of batch_size.
std::vector<Batch> generate(const Task& task, Split split, std::size_t count, std::size_t batch_size, ModelMode mode,
                            std::size_t first = 0);

/// Training batch for an optimizer step; cycles through the train split.
Batch train_batch(const Task& task, ModelMode mode, std::size_t step, std::size_t batch_size);

/// Appends `extra` pad positions to every row (targets unscored).
Batch pad_batch(const Batch& batch, std::size_t extra);

/// Bundled public-domain text used by char_lm.
std::string_view char_lm_corpus();

}  // namespace synth
