#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "synth/run_config.hpp"
#include "synth/trainer.hpp"

namespace synth {

// Binary layout, all integers little-endian:
//   bytes 0..7    magic "SYNTHCKP"
//   u32           format version
//   u64           header length in bytes
//   u64           FNV-1a 64 of the header bytes
//   header        UTF-8 JSON (see README)
//   payload       f64 little-endian, tensors back to back in manifest order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;

  bool operator==(const StoredTensor&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  RunConfig config;
  std::vector<StoredTensor> params;      // model parameters, registry order
  std::uint64_t adam_step = 0;
  std::vector<StoredTensor> adam_m;      // trainable parameters only
  std::vector<StoredTensor> adam_v;
  std::size_t step = 0;
  double elapsed_secs = 0.0;
  bool finished = false;
  MetricLog log;
  // Every random draw is keyed by these seeds and the step counter.
  std::uint64_t data_seed = 0;
  std::uint64_t model_seed = 0;
};

Checkpoint checkpoint_from_run(const TrainRun& run, const RunConfig& config);

/// Rebuilds a run from a checkpoint, continuing where it stopped.
TrainRun resume_run(const Checkpoint& ckpt);

/// Loads parameters and optimizer state into an existing run. Throws
/// CheckpointError when the checkpoint was written under another config.
void restore_run(TrainRun& run, const RunConfig& config, const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, version, length or checksum.
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace synth
