#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "synth/parameters.hpp"

namespace synth {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  std::size_t warmup_steps = 0;  // linear ramp of lr; 0 disables

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

/// Moment buffers keyed by parameter name. Frozen parameters never get one.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update over the trainable entries of `params`,
/// reading their accumulated grads. A non-finite gradient throws NumericError
/// naming the step, the parameter and its gradient norm; nothing is updated.
void adam_step(ParamRegistry& params, AdamState& state);

}  // namespace synth
