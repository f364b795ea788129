#include "synth/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>

#include "synth/cost_model.hpp"
#include "synth/errors.hpp"
#include "synth/multi_head.hpp"
#include "synth/ops.hpp"
#include "synth/rng.hpp"

namespace synth {

double median_after_warmup(std::span<const double> samples, std::size_t warmup) {
  if (samples.size() <= warmup) throw ConfigError("median_after_warmup: no samples left after warm-up");
  std::vector<double> kept(samples.begin() + static_cast<std::ptrdiff_t>(warmup), samples.end());
  std::sort(kept.begin(), kept.end());
  const std::size_t n = kept.size();
  return n % 2 == 1 ? kept[n / 2] : 0.5 * (kept[n / 2 - 1] + kept[n / 2]);
}

std::vector<BenchRow> bench(const BenchConfig& config) {
  if (config.repetitions < 3) throw ConfigError("bench: repetitions must be >= 3");
  if (config.variants.empty() || config.lengths.empty()) throw ConfigError("bench: empty variant or length grid");
  if (config.heads == 0 || config.model_dim % config.heads != 0) {
    throw ConfigError("bench: model_dim must be divisible by heads");
  }
  using Clock = std::chrono::steady_clock;
  const std::size_t head_dim = config.model_dim / config.heads;
  std::vector<BenchRow> rows;
  for (const auto& variant : config.variants) {
    for (std::size_t length : config.lengths) {
      const SynthesizerSpec spec = variant.with_dims(length, config.model_dim, head_dim);
      const MultiHeadAttention layer(spec, {config.model_dim, config.heads, length}, config.seed, "bench");
      const Tensor x = seeded_init(GaussianInit{0.0, 1.0}, {config.batch, length, config.model_dim}, config.seed,
                                   stream_id("bench.input"), config.with_backward);
      std::vector<double> samples;
      for (std::size_t r = 0; r < kBenchWarmup + config.repetitions; ++r) {
        const auto t0 = Clock::now();
        if (config.with_backward) {
          Tape tape;
          TapeScope scope(tape);
          backward(sum(layer.forward(x, nullptr).output));
        } else {
          layer.forward(x, nullptr);
        }
        samples.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
      }
      rows.push_back({spec.name(), length, config.model_dim, config.heads, median_after_warmup(samples),
                      flop_count(spec, length, config.model_dim, config.heads)});
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "variant,L,d,heads,median_secs,flops\n";
  for (const auto& r : rows) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, r.median_secs, std::chars_format::general, 9);
    out += r.variant + ',' + std::to_string(r.length) + ',' + std::to_string(r.model_dim) + ',' +
           std::to_string(r.heads) + ',' + std::string(buf, res.ptr) + ',' + std::to_string(r.flops) + '\n';
  }
  return out;
}

}  // namespace synth
