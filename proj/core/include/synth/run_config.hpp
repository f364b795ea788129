#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "synth/model.hpp"
#include "synth/tasks.hpp"
#include "synth/trainer.hpp"

namespace synth {

/// Everything a run needs, as one flat document.
///
/// Grammar: one `key = value` per line; `#` starts a comment; blank lines are
/// ignored; keys are unique. Booleans are `true`/`false`. Unknown keys are
/// rejected. `variant`, `k`, `fd_a`, `fd_b`, `scale_dot` and
/// `mixture_learnable` set both stacks; `encoder_`/`decoder_` prefixed forms
/// override one stack. `model_vocab` and `max_len` default to what the task
/// needs.
struct RunConfig {
  ModelConfig model;
  Task task;
  TrainConfig train;
  std::string out_dir = "out";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// A config sized for the default task with the given attention variant.
RunConfig default_run_config(const SynthesizerSpec& variant = SynthesizerSpec::dot_product());

RunConfig parse_run_config(std::string_view text);
std::string emit_run_config(const RunConfig& config);
/// Throws ConfigError when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace synth
