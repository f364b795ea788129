#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "synth/multi_head.hpp"
#include "synth/parameters.hpp"
#include "synth/synthesizer_spec.hpp"
#include "synth/tensor.hpp"

namespace synth {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;  // also the separator between source and target in decoder-only tasks
inline constexpr int kFirstDataId = 2;

enum class ModelMode { Encoder, Decoder, EncoderDecoder };

std::string_view mode_name(ModelMode mode);
ModelMode parse_mode(std::string_view text);

struct ModelConfig {
  ModelMode mode = ModelMode::Decoder;
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t vocab = 18;
  std::size_t max_len = 32;
  SynthesizerSpec encoder_attention = SynthesizerSpec::dot_product();
  SynthesizerSpec decoder_attention = SynthesizerSpec::dot_product();
  // Cross-attention cannot be synthesized; anything but DotProduct is rejected.
  SynthKind cross_attention = SynthKind::DotProduct;
  double dropout = 0.0;
  bool tie_embeddings = false;
  // Layers above the first reuse the first layer's R / R1,R2 tensors.
  bool share_synthesizers = false;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// A [batch, length] block of token ids; nonpad is 1 exactly at non-pad positions.
struct TokenBlock {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> nonpad;

  static TokenBlock from_ids(std::size_t batch, std::size_t length, std::vector<int> ids);
  Shape shape() const { return {batch, length}; }
};

struct Batch {
  TokenBlock input;   // encoder input (Encoder) or decoder input
  TokenBlock source;  // encoder input in EncoderDecoder mode, else empty
  std::vector<int> targets;              // one per input position
  std::vector<std::uint8_t> target_mask; // positions scored by loss and accuracy
  // Within the scored region input[p + 1] == targets[p]; greedy decoding
  // feeds its own predictions forward.
  bool autoregressive = false;
};

/// Self-attention mask over keys: key must be non-pad and, when causal, not
/// after the query. A pad query may always see itself so no row is empty.
Mask attention_mask(const TokenBlock& tokens, bool causal);
/// Decoder-query by memory-key mask over non-pad memory positions.
Mask cross_mask(const TokenBlock& queries, const TokenBlock& memory);

struct AttentionRecord {
  std::string role;  // "encoder", "decoder" (self-attention) or "cross"
  std::size_t layer = 0;
  Tensor logits;     // [b,h,L,Lk]
  Tensor weights;    // [b,h,L,Lk]
};

/// Pre-norm Transformer whose self-attention layers use the configured
/// synthesizer. Parameters are initialized from (seed, parameter name).
class Transformer {
 public:
  Transformer(ModelConfig config, std::uint64_t seed);
  ~Transformer();
  Transformer(Transformer&&) noexcept;
  Transformer& operator=(Transformer&&) noexcept;

  /// Embedding + encoder stack, without the final norm. [b,L,d].
  Tensor encode(const TokenBlock& tokens) const;

  /// Causal decoder stack to vocabulary logits [b,L,V]. memory (already
  /// normalized encoder output) is required in EncoderDecoder mode.
  Tensor decode(const TokenBlock& tokens, const Tensor* memory, const TokenBlock* memory_tokens) const;

  /// Vocabulary logits [b,L,V] for the configured mode.
  Tensor forward(const Batch& batch) const;

  /// Mean token NLL over the batch's target mask.
  Tensor loss(const Batch& batch) const;

  const ModelConfig& config() const { return config_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  /// Training mode enables dropout with a per-step key.
  void set_training(bool training, std::uint64_t dropout_key = 0);

  /// When on, each forward records per-layer attention logits and weights.
  void set_inspect(bool inspect);
  const std::vector<AttentionRecord>& attention_records() const { return records_; }

  const MultiHeadAttention& self_attention(bool decoder_stack, std::size_t layer) const;

 private:
  struct Block;
  Tensor embed(const TokenBlock& tokens) const;
  Tensor run_block(const Block& block, const Tensor& x, const Mask& self_mask, const Tensor* memory,
                   const Mask* memory_mask, std::size_t site, const char* role, std::size_t layer) const;
  Tensor project_vocab(const Tensor& hidden) const;
  Tensor maybe_dropout(const Tensor& x, std::size_t site) const;

  ModelConfig config_;
  std::uint64_t seed_;
  Tensor token_embedding_, position_embedding_;
  std::vector<std::unique_ptr<Block>> encoder_, decoder_;
  Tensor enc_norm_gain_, enc_norm_bias_, dec_norm_gain_, dec_norm_bias_;
  Tensor head_;  // [d,V], undefined when tied
  ParamRegistry params_;
  bool training_ = false;
  std::uint64_t dropout_key_ = 0;
  bool inspect_ = false;
  mutable std::vector<AttentionRecord> records_;
};

}  // namespace synth
