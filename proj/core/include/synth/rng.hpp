#pragma once

#include <cstdint>
#include <string_view>
#include <variant>

#include "synth/tensor.hpp"

namespace synth {

std::uint64_t splitmix64(std::uint64_t x);

/// 64-bit FNV-1a; used to derive stream ids from parameter names.
std::uint64_t stream_id(std::string_view name);

/// Stateless counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so streams can be split without coordination.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t bits(std::uint64_t counter) const;
  // [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const;
  // Standard normal; consumes counters 2c and 2c+1.
  double normal(std::uint64_t counter) const;
  // Integer in [0, n).
  std::uint64_t below(std::uint64_t counter, std::uint64_t n) const;

  CounterRng split(std::uint64_t substream) const;
  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

struct UniformInit {
  double lo;
  double hi;
};

struct GaussianInit {
  double mean = 0.0;
  double stddev = 1.0;
};

using InitDistribution = std::variant<UniformInit, GaussianInit>;

/// Deterministic tensor fill. Throws ConfigError for stddev <= 0 or lo >= hi.
Tensor seeded_init(const InitDistribution& dist, Shape shape, std::uint64_t seed,
                   std::uint64_t stream = 0, bool requires_grad = false);

/// uniform(+-sqrt(6 / (fan_in + fan_out))).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed,
                      std::uint64_t stream, bool requires_grad = true);

}  // namespace synth
