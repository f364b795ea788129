#include "synth/adam.hpp"

#include <cmath>

#include "synth/errors.hpp"

namespace synth {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

void adam_step(ParamRegistry& params, AdamState& state) {
  const AdamConfig& c = state.config;
  const std::uint64_t t = state.step + 1;

  // Check everything first so a bad gradient leaves the state untouched.
  for (const auto& p : params.entries()) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    const auto g = p.tensor.impl()->grad;
    double sq = 0.0;
    bool finite = true;
    for (double x : g) {
      if (!std::isfinite(x)) finite = false;
      sq += x * x;
    }
    if (!finite) {
      throw NumericError("non-finite gradient at step " + std::to_string(t) + " in parameter '" + p.name +
                         "' (norm " + std::to_string(std::sqrt(sq)) + ")");
    }
  }

  double lr = c.lr;
  if (c.warmup_steps > 0 && t < c.warmup_steps) lr *= static_cast<double>(t) / static_cast<double>(c.warmup_steps);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));

  for (auto& p : params.entries()) {
    if (!p.trainable) continue;
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    const std::size_t n = p.tensor.numel();
    m.resize(n, 0.0);
    v.resize(n, 0.0);
    // A parameter outside this step's graph sees a zero gradient.
    const auto g = p.tensor.grad();
    auto x = p.tensor.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
  state.step = t;
}

}  // namespace synth
