#include "synth/model.hpp"

#include "synth/errors.hpp"
#include "synth/ops.hpp"
#include "synth/rng.hpp"

namespace synth {

std::string_view mode_name(ModelMode mode) {
  switch (mode) {
    case ModelMode::Encoder: return "encoder";
    case ModelMode::Decoder: return "decoder";
    case ModelMode::EncoderDecoder: return "enc_dec";
  }
  return "?";
}

ModelMode parse_mode(std::string_view text) {
  if (text == "encoder") return ModelMode::Encoder;
  if (text == "decoder") return ModelMode::Decoder;
  if (text == "enc_dec") return ModelMode::EncoderDecoder;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected encoder, decoder or enc_dec)");
}

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || ffn_dim == 0 || vocab == 0 || max_len == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (cross_attention != SynthKind::DotProduct) {
    throw ConfigError("cross-attention must stay dot-product; synthesized cross-attention is not supported");
  }
  const std::size_t dh = d_model / heads;
  if (mode != ModelMode::Decoder) encoder_attention.with_dims(max_len, d_model, dh).validate();
  if (mode != ModelMode::Encoder) decoder_attention.with_dims(max_len, d_model, dh).validate();
}

TokenBlock TokenBlock::from_ids(std::size_t batch, std::size_t length, std::vector<int> ids) {
  if (ids.size() != batch * length) throw DimensionError("token block size mismatch");
  TokenBlock t;
  t.batch = batch;
  t.length = length;
  t.nonpad.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) t.nonpad[i] = ids[i] != kPadId;
  t.ids = std::move(ids);
  return t;
}

Mask attention_mask(const TokenBlock& tokens, bool causal) {
  const std::size_t b = tokens.batch, l = tokens.length;
  Mask m;
  m.shape = {b, l, l};
  m.allow.assign(b * l * l, 0);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t i = 0; i < l; ++i) {
      std::uint8_t* row = m.allow.data() + (s * l + i) * l;
      for (std::size_t j = 0; j < l; ++j) {
        row[j] = tokens.nonpad[s * l + j] && (!causal || j <= i);
      }
      if (!tokens.nonpad[s * l + i]) row[i] = 1;
    }
  }
  return m;
}

Mask cross_mask(const TokenBlock& queries, const TokenBlock& memory) {
  if (queries.batch != memory.batch) throw DimensionError("cross_mask: batch sizes differ");
  const std::size_t b = queries.batch, lq = queries.length, lk = memory.length;
  Mask m;
  m.shape = {b, lq, lk};
  m.allow.resize(b * lq * lk);
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t i = 0; i < lq; ++i) {
      for (std::size_t j = 0; j < lk; ++j) m.allow[(s * lq + i) * lk + j] = memory.nonpad[s * lk + j];
    }
  }
  return m;
}

struct Transformer::Block {
  Tensor ln1_gain, ln1_bias;
  std::unique_ptr<MultiHeadAttention> self_attn;
  Tensor lnc_gain, lnc_bias;
  std::unique_ptr<CrossAttention> cross_attn;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

namespace {

Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }
Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }

}  // namespace

Transformer::Transformer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const AttentionDims dims{d, config_.heads, config_.max_len};
  auto gaussian = [&](Shape shape, const std::string& name) {
    return seeded_init(GaussianInit{0.0, 0.02}, std::move(shape), seed_, stream_id(name), true);
  };
  token_embedding_ = gaussian({config_.vocab, d}, "embed.tokens");
  position_embedding_ = gaussian({config_.max_len, d}, "embed.positions");
  params_.add("embed.tokens", token_embedding_, true);
  params_.add("embed.positions", position_embedding_, true);

  auto build_stack = [&](bool decoder, std::vector<std::unique_ptr<Block>>& stack) {
    const std::string prefix = decoder ? "decoder" : "encoder";
    const SynthesizerSpec& variant = decoder ? config_.decoder_attention : config_.encoder_attention;
    for (std::size_t i = 0; i < config_.layers; ++i) {
      const std::string name = prefix + ".layer" + std::to_string(i);
      auto block = std::make_unique<Block>();
      block->ln1_gain = ones(d);
      block->ln1_bias = zeros(d);
      block->self_attn = std::make_unique<MultiHeadAttention>(variant, dims, seed_, name + ".self_attn");
      if (config_.share_synthesizers && i > 0) block->self_attn->share_synthesizers_from(*stack[0]->self_attn);
      if (decoder && config_.mode == ModelMode::EncoderDecoder) {
        block->lnc_gain = ones(d);
        block->lnc_bias = zeros(d);
        block->cross_attn = std::make_unique<CrossAttention>(dims, seed_, name + ".cross_attn");
      }
      block->ln2_gain = ones(d);
      block->ln2_bias = zeros(d);
      block->ffn_w1 = xavier_uniform(d, config_.ffn_dim, seed_, stream_id(name + ".ffn.w1"));
      block->ffn_b1 = zeros(config_.ffn_dim);
      block->ffn_w2 = xavier_uniform(config_.ffn_dim, d, seed_, stream_id(name + ".ffn.w2"));
      block->ffn_b2 = zeros(d);

      params_.add(name + ".ln1.gain", block->ln1_gain, true);
      params_.add(name + ".ln1.bias", block->ln1_bias, true);
      block->self_attn->register_params(params_);
      if (block->cross_attn) {
        params_.add(name + ".lnc.gain", block->lnc_gain, true);
        params_.add(name + ".lnc.bias", block->lnc_bias, true);
        block->cross_attn->register_params(params_);
      }
      params_.add(name + ".ln2.gain", block->ln2_gain, true);
      params_.add(name + ".ln2.bias", block->ln2_bias, true);
      params_.add(name + ".ffn.w1", block->ffn_w1, true);
      params_.add(name + ".ffn.b1", block->ffn_b1, true);
      params_.add(name + ".ffn.w2", block->ffn_w2, true);
      params_.add(name + ".ffn.b2", block->ffn_b2, true);
      stack.push_back(std::move(block));
    }
  };

  if (config_.mode != ModelMode::Decoder) {
    build_stack(false, encoder_);
    enc_norm_gain_ = ones(d);
    enc_norm_bias_ = zeros(d);
    params_.add("encoder.final_ln.gain", enc_norm_gain_, true);
    params_.add("encoder.final_ln.bias", enc_norm_bias_, true);
  }
  if (config_.mode != ModelMode::Encoder) {
    build_stack(true, decoder_);
    dec_norm_gain_ = ones(d);
    dec_norm_bias_ = zeros(d);
    params_.add("decoder.final_ln.gain", dec_norm_gain_, true);
    params_.add("decoder.final_ln.bias", dec_norm_bias_, true);
  }
  if (!config_.tie_embeddings) {
    head_ = gaussian({d, config_.vocab}, "head.w");
    params_.add("head.w", head_, true);
  }
}

Transformer::~Transformer() = default;
Transformer::Transformer(Transformer&&) noexcept = default;
Transformer& Transformer::operator=(Transformer&&) noexcept = default;

void Transformer::set_training(bool training, std::uint64_t dropout_key) {
  training_ = training;
  dropout_key_ = dropout_key;
}

void Transformer::set_inspect(bool inspect) {
  inspect_ = inspect;
  records_.clear();
}

const MultiHeadAttention& Transformer::self_attention(bool decoder_stack, std::size_t layer) const {
  const auto& stack = decoder_stack ? decoder_ : encoder_;
  if (layer >= stack.size()) {
    throw ConfigError("layer " + std::to_string(layer) + " out of range (" + std::to_string(stack.size()) +
                      " layers in the " + (decoder_stack ? "decoder" : "encoder") + " stack)");
  }
  return *stack[layer]->self_attn;
}

Tensor Transformer::maybe_dropout(const Tensor& x, std::size_t site) const {
  if (!training_ || config_.dropout == 0.0) return x;
  return dropout(x, config_.dropout, splitmix64(dropout_key_ ^ splitmix64(site)));
}

Tensor Transformer::embed(const TokenBlock& tokens) const {
  if (tokens.length > config_.max_len) {
    throw MaxLengthError("sequence length " + std::to_string(tokens.length) + " exceeds maximum length " +
                         std::to_string(config_.max_len));
  }
  Tensor x = embedding(token_embedding_, tokens.ids, tokens.shape());
  return maybe_dropout(add(x, narrow(position_embedding_, 0, 0, tokens.length)), 0);
}

Tensor Transformer::run_block(const Block& block, const Tensor& x, const Mask& self_mask, const Tensor* memory,
                              const Mask* memory_mask, std::size_t site, const char* role, std::size_t layer) const {
  auto attn = block.self_attn->forward(layer_norm(x, block.ln1_gain, block.ln1_bias), &self_mask, inspect_);
  if (inspect_) records_.push_back({role, layer, attn.logits, attn.weights});
  Tensor h = add(x, maybe_dropout(attn.output, site));
  if (block.cross_attn) {
    auto cross = block.cross_attn->forward(layer_norm(h, block.lnc_gain, block.lnc_bias), *memory, memory_mask, inspect_);
    if (inspect_) records_.push_back({"cross", layer, cross.logits, cross.weights});
    h = add(h, maybe_dropout(cross.output, site + 1));
  }
  Tensor f = relu(add(matmul(layer_norm(h, block.ln2_gain, block.ln2_bias), block.ffn_w1), block.ffn_b1));
  f = add(matmul(f, block.ffn_w2), block.ffn_b2);
  return add(h, maybe_dropout(f, site + 2));
}

Tensor Transformer::encode(const TokenBlock& tokens) const {
  if (config_.mode == ModelMode::Decoder) throw ConfigError("encode: decoder-only model has no encoder");
  if (inspect_) records_.clear();
  const Mask mask = attention_mask(tokens, false);
  Tensor x = embed(tokens);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    x = run_block(*encoder_[i], x, mask, nullptr, nullptr, 100 + 10 * i, "encoder", i);
  }
  return x;
}

Tensor Transformer::project_vocab(const Tensor& hidden) const {
  if (config_.tie_embeddings) return matmul(hidden, transpose_last2(token_embedding_));
  return matmul(hidden, head_);
}

Tensor Transformer::decode(const TokenBlock& tokens, const Tensor* memory, const TokenBlock* memory_tokens) const {
  if (config_.mode == ModelMode::Encoder) throw ConfigError("decode: encoder-only model has no decoder");
  const bool needs_memory = config_.mode == ModelMode::EncoderDecoder;
  if (needs_memory && (!memory || !memory_tokens)) {
    throw ConfigError("decode: encoder memory is required in enc_dec mode");
  }
  if (config_.mode == ModelMode::Decoder && inspect_) records_.clear();
  const Mask mask = attention_mask(tokens, true);
  std::optional<Mask> mem_mask;
  if (needs_memory) mem_mask = cross_mask(tokens, *memory_tokens);
  Tensor x = embed(tokens);
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    x = run_block(*decoder_[i], x, mask, needs_memory ? memory : nullptr, mem_mask ? &*mem_mask : nullptr,
                  1000 + 10 * i, "decoder", i);
  }
  return project_vocab(layer_norm(x, dec_norm_gain_, dec_norm_bias_));
}

Tensor Transformer::forward(const Batch& batch) const {
  switch (config_.mode) {
    case ModelMode::Encoder:
      return project_vocab(layer_norm(encode(batch.input), enc_norm_gain_, enc_norm_bias_));
    case ModelMode::Decoder:
      return decode(batch.input, nullptr, nullptr);
    case ModelMode::EncoderDecoder: {
      const Tensor memory = layer_norm(encode(batch.source), enc_norm_gain_, enc_norm_bias_);
      return decode(batch.input, &memory, &batch.source);
    }
  }
  throw ConfigError("unknown model mode");
}

Tensor Transformer::loss(const Batch& batch) const {
  return cross_entropy(forward(batch), batch.targets, batch.target_mask);
}

}  // namespace synth
