#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "synth/parameters.hpp"
#include "synth/synthesizers.hpp"
#include "synth/tensor.hpp"

namespace synth {

struct AttentionDims {
  std::size_t model_dim = 0;
  std::size_t heads = 1;
  std::size_t max_len = 0;
};

struct AttentionOutput {
  Tensor output;   // [b,L,d]
  Tensor logits;   // [b,h,L,L] pre-softmax, inspection mode only
  Tensor weights;  // [b,h,L,L] post-softmax, inspection mode only
};

struct AttendResult {
  Tensor output;   // [b,L,d_h]
  Tensor weights;  // [b,L,Lk]
};

/// One head: row_softmax(logits, mask) * (values_in W_G).
AttendResult attend(const Tensor& logits, const Mask* mask, const Tensor& values_in, const Tensor& w_g);

/// Self-attention whose per-head logits come from a synthesizing function.
/// Each head owns its synthesizer and value projection W_G [d,d_h]; head
/// outputs are concatenated and projected by W_O [h*d_h,d].
class MultiHeadAttention {
 public:
  MultiHeadAttention(const SynthesizerSpec& variant, AttentionDims dims, std::uint64_t seed, std::string name);

  AttentionOutput forward(const Tensor& x, const Mask* mask, bool inspect = false) const;

  void register_params(ParamRegistry& registry) const;
  void share_synthesizers_from(const MultiHeadAttention& other);

  std::size_t heads() const { return synths_.size(); }
  const SynthesizerSpec& spec() const { return spec_; }
  const SynthesizingFunction& synthesizer(std::size_t head) const { return *synths_.at(head); }
  const Tensor& value_projection(std::size_t head) const { return w_g_.at(head); }
  const Tensor& output_projection() const { return w_o_; }
  const std::string& name() const { return name_; }

 private:
  SynthesizerSpec spec_;
  std::string name_;
  std::vector<std::unique_ptr<SynthesizingFunction>> synths_;
  std::vector<Tensor> w_g_;
  Tensor w_o_;
};

/// Free-function form of MultiHeadAttention::forward.
AttentionOutput multi_head_forward(const Tensor& x, const MultiHeadAttention& layer, const Mask* mask,
                                   bool inspect = false);

/// Decoder-to-encoder attention. Always scaled dot-product: queries from the
/// decoder stream, keys and values from the encoder memory.
class CrossAttention {
 public:
  CrossAttention(AttentionDims dims, std::uint64_t seed, std::string name);

  // mask is [b,Lq,Lk] (or broadcastable) over memory positions.
  AttentionOutput forward(const Tensor& x, const Tensor& memory, const Mask* mask, bool inspect = false) const;
  void register_params(ParamRegistry& registry) const;
  std::size_t heads() const { return w_q_.size(); }

 private:
  std::string name_;
  std::vector<Tensor> w_q_, w_k_, w_g_;
  Tensor w_o_;
};

}  // namespace synth
