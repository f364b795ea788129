#include "synth/rng.hpp"

#include <cmath>
#include <numbers>

#include "synth/errors.hpp"

namespace synth {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_id(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t CounterRng::bits(std::uint64_t counter) const {
  return splitmix64(splitmix64(splitmix64(seed_) ^ stream_) ^ splitmix64(counter ^ 0x5851f42d4c957f2dULL));
}

double CounterRng::uniform(std::uint64_t counter) const {
  return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t counter) const {
  const double u1 = 1.0 - uniform(2 * counter);  // (0, 1]
  const double u2 = uniform(2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t counter, std::uint64_t n) const {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(counter)) * n) >> 64);
}

CounterRng CounterRng::split(std::uint64_t substream) const {
  return CounterRng(seed_, splitmix64(stream_ ^ splitmix64(substream)));
}

Tensor seeded_init(const InitDistribution& dist, Shape shape, std::uint64_t seed, std::uint64_t stream,
                   bool requires_grad) {
  const CounterRng rng(seed, stream);
  std::vector<double> values(shape_numel(shape));
  if (const auto* u = std::get_if<UniformInit>(&dist)) {
    if (!(u->lo < u->hi)) throw ConfigError("uniform init needs lo < hi");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = u->lo + (u->hi - u->lo) * rng.uniform(i);
  } else {
    const auto& g = std::get<GaussianInit>(dist);
    if (!(g.stddev > 0.0)) throw ConfigError("gaussian init needs stddev > 0");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = g.mean + g.stddev * rng.normal(i);
  }
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed, std::uint64_t stream,
                      bool requires_grad) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return seeded_init(UniformInit{-limit, limit}, {fan_in, fan_out}, seed, stream, requires_grad);
}

}  // namespace synth
