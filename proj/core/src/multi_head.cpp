#include "synth/multi_head.hpp"

#include <cmath>

#include "synth/errors.hpp"
#include "synth/ops.hpp"
#include "synth/rng.hpp"

namespace synth {
namespace {

std::size_t head_width(const AttentionDims& dims) {
  if (dims.heads == 0 || dims.model_dim % dims.heads != 0) {
    throw ConfigError("model dim " + std::to_string(dims.model_dim) + " is not divisible by " +
                      std::to_string(dims.heads) + " heads");
  }
  return dims.model_dim / dims.heads;
}

// Stacks per-head [b,L,Lk] tensors into a detached [b,h,L,Lk] tensor.
Tensor stack_heads(const std::vector<Tensor>& per_head) {
  const std::size_t b = per_head[0].dim(0), l = per_head[0].dim(1), lk = per_head[0].dim(2);
  const std::size_t h = per_head.size();
  std::vector<double> out(b * h * l * lk);
  for (std::size_t head = 0; head < h; ++head) {
    const auto src = per_head[head].data();
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(src.data() + i * l * lk, l * lk, out.data() + (i * h + head) * l * lk);
    }
  }
  return Tensor({b, h, l, lk}, std::move(out));
}

}  // namespace

AttendResult attend(const Tensor& logits, const Mask* mask, const Tensor& values_in, const Tensor& w_g) {
  Tensor weights = row_softmax(logits, mask);
  return {matmul(weights, matmul(values_in, w_g)), weights};
}

MultiHeadAttention::MultiHeadAttention(const SynthesizerSpec& variant, AttentionDims dims, std::uint64_t seed,
                                       std::string name)
    : name_(std::move(name)) {
  const std::size_t dh = head_width(dims);
  spec_ = variant.with_dims(dims.max_len, dims.model_dim, dh);
  spec_.validate();
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const std::string head = name_ + ".head" + std::to_string(h);
    synths_.push_back(make_synthesizer(spec_, seed, head + ".synth"));
    w_g_.push_back(xavier_uniform(dims.model_dim, dh, seed, stream_id(head + ".wg")));
  }
  w_o_ = xavier_uniform(dims.heads * dh, dims.model_dim, seed, stream_id(name_ + ".wo"));
}

AttentionOutput MultiHeadAttention::forward(const Tensor& x, const Mask* mask, bool inspect) const {
  if (!x.defined() || x.rank() != 3 || x.dim(2) != spec_.model_dim) {
    throw DimensionError("attention input must be [b,L," + std::to_string(spec_.model_dim) + "], got " +
                         (x.defined() ? shape_string(x.shape()) : std::string("<undefined>")));
  }
  if (x.dim(1) > spec_.max_len) {
    throw MaxLengthError("sequence length " + std::to_string(x.dim(1)) + " exceeds maximum length " +
                         std::to_string(spec_.max_len));
  }
  std::vector<Tensor> outputs, logits, weights;
  for (std::size_t h = 0; h < synths_.size(); ++h) {
    Tensor s = synths_[h]->logits(x);
    auto r = attend(s, mask, x, w_g_[h]);
    outputs.push_back(r.output);
    if (inspect) {
      logits.push_back(s.detach());
      weights.push_back(r.weights.detach());
    }
  }
  AttentionOutput out;
  out.output = matmul(outputs.size() == 1 ? outputs[0] : concat_last(outputs), w_o_);
  if (inspect) {
    out.logits = stack_heads(logits);
    out.weights = stack_heads(weights);
  }
  return out;
}

void MultiHeadAttention::register_params(ParamRegistry& registry) const {
  for (std::size_t h = 0; h < synths_.size(); ++h) {
    const std::string head = name_ + ".head" + std::to_string(h);
    synths_[h]->register_params(registry, head + ".synth");
    registry.add(head + ".wg", w_g_[h], true);
  }
  registry.add(name_ + ".wo", w_o_, true);
}

void MultiHeadAttention::share_synthesizers_from(const MultiHeadAttention& other) {
  if (other.spec_ != spec_ || other.heads() != heads()) {
    throw ConfigError("cannot share synthesizers between differently configured layers");
  }
  for (std::size_t h = 0; h < synths_.size(); ++h) synths_[h]->share_from(*other.synths_[h]);
}

AttentionOutput multi_head_forward(const Tensor& x, const MultiHeadAttention& layer, const Mask* mask, bool inspect) {
  return layer.forward(x, mask, inspect);
}

CrossAttention::CrossAttention(AttentionDims dims, std::uint64_t seed, std::string name) : name_(std::move(name)) {
  const std::size_t dh = head_width(dims);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const std::string head = name_ + ".head" + std::to_string(h);
    w_q_.push_back(xavier_uniform(dims.model_dim, dh, seed, stream_id(head + ".wq")));
    w_k_.push_back(xavier_uniform(dims.model_dim, dh, seed, stream_id(head + ".wk")));
    w_g_.push_back(xavier_uniform(dims.model_dim, dh, seed, stream_id(head + ".wg")));
  }
  w_o_ = xavier_uniform(dims.heads * dh, dims.model_dim, seed, stream_id(name_ + ".wo"));
}

AttentionOutput CrossAttention::forward(const Tensor& x, const Tensor& memory, const Mask* mask, bool inspect) const {
  if (x.rank() != 3 || memory.rank() != 3 || x.dim(0) != memory.dim(0) || x.dim(2) != memory.dim(2)) {
    throw DimensionError("cross attention: decoder " + shape_string(x.shape()) + " vs memory " +
                         shape_string(memory.shape()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(w_q_[0].dim(1)));
  std::vector<Tensor> outputs, logits, weights;
  for (std::size_t h = 0; h < w_q_.size(); ++h) {
    Tensor s = scale(matmul(matmul(x, w_q_[h]), transpose_last2(matmul(memory, w_k_[h]))), inv_scale);
    auto r = attend(s, mask, memory, w_g_[h]);
    outputs.push_back(r.output);
    if (inspect) {
      logits.push_back(s.detach());
      weights.push_back(r.weights.detach());
    }
  }
  AttentionOutput out;
  out.output = matmul(outputs.size() == 1 ? outputs[0] : concat_last(outputs), w_o_);
  if (inspect) {
    out.logits = stack_heads(logits);
    out.weights = stack_heads(weights);
  }
  return out;
}

void CrossAttention::register_params(ParamRegistry& registry) const {
  for (std::size_t h = 0; h < w_q_.size(); ++h) {
    const std::string head = name_ + ".head" + std::to_string(h);
    registry.add(head + ".wq", w_q_[h], true);
    registry.add(head + ".wk", w_k_[h], true);
    registry.add(head + ".wg", w_g_[h], true);
  }
  registry.add(name_ + ".wo", w_o_, true);
}

}  // namespace synth
