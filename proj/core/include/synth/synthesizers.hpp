#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "synth/parameters.hpp"
#include "synth/synthesizer_spec.hpp"
#include "synth/tensor.hpp"

namespace synth {

// Logit synthesizing functions. Inputs are token blocks x[b,L,d]; weights
// use the x * W convention, so W1 is [d,d] and W2 is [d,N]. Every function
// that reads length-sized parameters truncates them to the actual length L
// and throws MaxLengthError when L > N.

/// Row i = relu(x_i W1) W2, first L columns. Result [b,L,L].
Tensor dense_logits(const Tensor& x, const Tensor& w1, const Tensor& w2);

/// Top-left L x L block of R [N,N]. Result [L,L], input independent.
Tensor random_logits(const Tensor& r, std::size_t length);

/// (R1 R2^T) truncated to L x L, with R1, R2 [N,k]. Result [L,L].
Tensor factorized_random_logits(const Tensor& r1, const Tensor& r2, std::size_t length);

/// Elementwise product of block-tiled A [..,a] and cyclically tiled B [..,b];
/// entry j of the result is A[j / b] * B[j % b].
Tensor tile_compose(const Tensor& a, const Tensor& b);

/// h = relu(x W1); row i = tile_compose(h_i F_A, h_i F_B), first L columns.
Tensor factorized_dense_logits(const Tensor& x, const Tensor& w1, const Tensor& fa, const Tensor& fb);

/// (x W_Q)(x W_K)^T, divided by sqrt(d_h) when scaled. Result [b,L,L].
Tensor dot_product_logits(const Tensor& x, const Tensor& wq, const Tensor& wk, bool scaled = true);

/// sum_i alpha_i * member_i with alpha = softmax(mixing_logits).
Tensor mixture_logits(std::span<const Tensor> members, const Tensor& mixing_logits);

/// A synthesizing function together with the parameters of one head.
class SynthesizingFunction {
 public:
  virtual ~SynthesizingFunction() = default;

  /// Logits [b,L,L] for x [b,L,d]; input-independent variants broadcast over b.
  virtual Tensor logits(const Tensor& x) const = 0;

  /// Appends this function's tensors, named prefix + "." + local name.
  virtual void register_params(ParamRegistry& registry, const std::string& prefix) const = 0;

  /// Number of scalars held by the function (trainable or not).
  virtual std::size_t allocated_scalars() const = 0;

  /// Adopts the length-dependent tensors (R, R1, R2) of an identically
  /// specified function, so both read the same storage.
  virtual void share_from(const SynthesizingFunction& other) = 0;

  const SynthesizerSpec& spec() const { return spec_; }

 protected:
  explicit SynthesizingFunction(SynthesizerSpec spec) : spec_(std::move(spec)) {}
  SynthesizerSpec spec_;
};

/// Builds and initializes a synthesizer. Each tensor is seeded from
/// (seed, name + "." + local name), independent of construction order.
std::unique_ptr<SynthesizingFunction> make_synthesizer(const SynthesizerSpec& spec, std::uint64_t seed,
                                                       const std::string& name);

}  // namespace synth
