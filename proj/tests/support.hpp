#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "synth/ops.hpp"
#include "synth/rng.hpp"
#include "synth/tensor.hpp"

namespace synth_test {
using namespace synth;

inline Tensor randn(Shape shape, std::uint64_t seed, double stddev = 1.0, bool requires_grad = false) {
  return seeded_init(GaussianInit{0.0, stddev}, std::move(shape), seed, 0x5eed, requires_grad);
}

/// Scalar loss sum(t * P) with a fixed random P; avoids the degenerate
/// gradients of a plain sum through softmax rows.
inline Tensor projected_loss(const Tensor& t, std::uint64_t seed = 99) {
  return sum(mul(t, randn(t.shape(), seed)));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;         // tensor with the largest error
  std::size_t checked = 0;   // coordinates compared
  std::size_t kinks = 0;     // coordinates whose stencil crossed a relu kink
};

/// Sign pattern of every relu input recorded while evaluating loss_fn.
inline std::vector<std::uint8_t> relu_pattern(const std::function<Tensor()>& loss_fn) {
  Tape tape;
  {
    TapeScope scope(tape);
    loss_fn();
  }
  std::vector<std::uint8_t> signs;
  for (const auto& node : tape.nodes()) {
    if (node.op != "relu") continue;
    for (double v : node.inputs[0]->data) signs.push_back(v > 0);
  }
  return signs;
}

/// Compares backward() against central differences (step h) for every
/// tensor in `wrt`. The error of one tensor is ||analytic - numeric|| /
/// max(||analytic||, ||numeric||), zero when both norms vanish.
/// A coordinate whose +-h perturbation flips the sign of any relu input is
/// not differentiable inside the stencil; it is left out and counted in kinks.
inline GradCheck grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> wrt, double h = 1e-5) {
  for (auto& t : wrt) t.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(loss_fn());
  }
  GradCheck result;
  const auto base_pattern = relu_pattern(loss_fn);
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor& t = wrt[k];
    const std::vector<double> analytic = t.grad();
    std::vector<double> numeric(t.numel());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn().item();
      data[i] = saved - h;
      const double down = loss_fn().item();
      data[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    std::vector<bool> kink(numeric.size(), false);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      if (std::abs(analytic[i] - numeric[i]) <= 1e-9) continue;
      const double saved = data[i];
      data[i] = saved + h;
      const bool up_flips = relu_pattern(loss_fn) != base_pattern;
      data[i] = saved - h;
      const bool down_flips = relu_pattern(loss_fn) != base_pattern;
      data[i] = saved;
      kink[i] = up_flips || down_flips;
      if (kink[i]) ++result.kinks;
    }
    result.checked += numeric.size();
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      if (kink[i]) continue;
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::sqrt(std::max(na, nn));
    const double err = denom < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / denom;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = "tensor #" + std::to_string(k);
    }
    t.zero_grad();
  }
  return result;
}

inline std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace synth_test
