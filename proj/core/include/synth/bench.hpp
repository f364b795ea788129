#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "synth/synthesizer_spec.hpp"

namespace synth {

struct BenchConfig {
  std::vector<SynthesizerSpec> variants;
  std::vector<std::size_t> lengths;
  std::size_t model_dim = 64;
  std::size_t heads = 1;
  std::size_t batch = 1;
  std::size_t repetitions = 5;  // >= 3 timed runs, after 2 discarded warm-ups
  bool with_backward = false;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string variant;
  std::size_t length = 0;
  std::size_t model_dim = 0;
  std::size_t heads = 0;
  double median_secs = 0.0;
  std::uint64_t flops = 0;  // forward, from the cost model
};

inline constexpr std::size_t kBenchWarmup = 2;

/// Median of samples[warmup..]; the leading warm-up samples never count.
double median_after_warmup(std::span<const double> samples, std::size_t warmup = kBenchWarmup);

/// Times one self-attention layer per (variant, length); rows are variant-major.
std::vector<BenchRow> bench(const BenchConfig& config);

/// variant,L,d,heads,median_secs,flops
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace synth
