#include "synth/synthesizers.hpp"

#include <cmath>

#include "synth/errors.hpp"
#include "synth/ops.hpp"
#include "synth/rng.hpp"

namespace synth {

bool ParamRegistry::add(std::string name, Tensor tensor, bool trainable) {
  for (const auto& e : entries_) {
    if (e.tensor.same_storage(tensor)) return false;
    if (e.name == name) throw ConfigError("parameter name registered twice: " + name);
  }
  entries_.push_back({std::move(name), std::move(tensor), trainable});
  return true;
}

const NamedParam* ParamRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::size_t ParamRegistry::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

namespace {

void check_length(std::size_t length, std::size_t max_len, const char* what) {
  if (length > max_len) {
    throw MaxLengthError(std::string(what) + ": sequence length " + std::to_string(length) +
                         " exceeds maximum length " + std::to_string(max_len));
  }
}

void check_tokens(const Tensor& x, const char* what) {
  if (!x.defined() || x.rank() != 3) throw DimensionError(std::string(what) + ": input must be [b,L,d]");
}

}  // namespace

Tensor dense_logits(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  check_tokens(x, "dense_logits");
  const std::size_t length = x.dim(1);
  check_length(length, w2.dim(-1), "dense_logits");
  return matmul(relu(matmul(x, w1)), narrow(w2, 1, 0, length));
}

Tensor random_logits(const Tensor& r, std::size_t length) {
  check_length(length, r.dim(0), "random_logits");
  return narrow(narrow(r, 0, 0, length), 1, 0, length);
}

Tensor factorized_random_logits(const Tensor& r1, const Tensor& r2, std::size_t length) {
  check_length(length, r1.dim(0), "factorized_random_logits");
  return matmul(narrow(r1, 0, 0, length), transpose_last2(narrow(r2, 0, 0, length)));
}

Tensor tile_compose(const Tensor& a, const Tensor& b) {
  return mul(tile_block(a, b.dim(-1)), tile_cyclic(b, a.dim(-1)));
}

Tensor factorized_dense_logits(const Tensor& x, const Tensor& w1, const Tensor& fa, const Tensor& fb) {
  check_tokens(x, "factorized_dense_logits");
  const std::size_t length = x.dim(1);
  check_length(length, fa.dim(1) * fb.dim(1), "factorized_dense_logits");
  const Tensor hidden = relu(matmul(x, w1));
  return narrow(tile_compose(matmul(hidden, fa), matmul(hidden, fb)), 2, 0, length);
}

Tensor dot_product_logits(const Tensor& x, const Tensor& wq, const Tensor& wk, bool scaled) {
  check_tokens(x, "dot_product_logits");
  Tensor s = matmul(matmul(x, wq), transpose_last2(matmul(x, wk)));
  if (!scaled) return s;
  return scale(s, 1.0 / std::sqrt(static_cast<double>(wq.dim(1))));
}

Tensor mixture_logits(std::span<const Tensor> members, const Tensor& mixing_logits) {
  if (members.empty()) throw ConfigError("mixture_logits: no members");
  if (mixing_logits.numel() != members.size()) {
    throw DimensionError("mixture_logits: " + std::to_string(members.size()) + " members but " +
                         std::to_string(mixing_logits.numel()) + " mixing logits");
  }
  for (const auto& m : members) {
    if (m.shape() != members[0].shape()) {
      throw DimensionError("mixture_logits: member shapes differ, " + shape_string(m.shape()) + " vs " +
                           shape_string(members[0].shape()));
    }
  }
  const Tensor alpha = row_softmax(reshape(mixing_logits, {members.size()}));
  Tensor total = mul(members[0], narrow(alpha, 0, 0, 1));
  for (std::size_t i = 1; i < members.size(); ++i) total = add(total, mul(members[i], narrow(alpha, 0, i, 1)));
  return total;
}

namespace {

Tensor init_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, const std::string& name) {
  return xavier_uniform(rows, cols, seed, stream_id(name), true);
}

Tensor init_gaussian(Shape shape, double stddev, std::uint64_t seed, const std::string& name, bool trainable) {
  return seeded_init(GaussianInit{0.0, stddev}, std::move(shape), seed, stream_id(name), trainable);
}

Tensor as_batch(const Tensor& logits, const Tensor& x) { return expand_batch(logits, x.dim(0)); }

class DotProductSynth final : public SynthesizingFunction {
 public:
  DotProductSynth(const SynthesizerSpec& s, std::uint64_t seed, const std::string& name)
      : SynthesizingFunction(s),
        wq_(init_matrix(s.model_dim, s.head_dim, seed, name + ".wq")),
        wk_(init_matrix(s.model_dim, s.head_dim, seed, name + ".wk")) {}

  Tensor logits(const Tensor& x) const override { return dot_product_logits(x, wq_, wk_, spec_.scale_dot); }
  void register_params(ParamRegistry& r, const std::string& p) const override {
    r.add(p + ".wq", wq_, true);
    r.add(p + ".wk", wk_, true);
  }
  std::size_t allocated_scalars() const override { return wq_.numel() + wk_.numel(); }
  void share_from(const SynthesizingFunction&) override {}

 private:
  Tensor wq_, wk_;
};

class DenseSynth final : public SynthesizingFunction {
 public:
  DenseSynth(const SynthesizerSpec& s, std::uint64_t seed, const std::string& name)
      : SynthesizingFunction(s),
        w1_(init_matrix(s.model_dim, s.model_dim, seed, name + ".w1")),
        w2_(init_matrix(s.model_dim, s.max_len, seed, name + ".w2")) {}

  Tensor logits(const Tensor& x) const override { return dense_logits(x, w1_, w2_); }
  void register_params(ParamRegistry& r, const std::string& p) const override {
    r.add(p + ".w1", w1_, true);
    r.add(p + ".w2", w2_, true);
  }
  std::size_t allocated_scalars() const override { return w1_.numel() + w2_.numel(); }
  void share_from(const SynthesizingFunction&) override {}

 private:
  Tensor w1_, w2_;
};

class FactorizedDenseSynth final : public SynthesizingFunction {
 public:
  FactorizedDenseSynth(const SynthesizerSpec& s, std::uint64_t seed, const std::string& name)
      : SynthesizingFunction(s), w1_(init_matrix(s.model_dim, s.model_dim, seed, name + ".w1")) {
    const auto [a, b] = s.factors();
    fa_ = init_matrix(s.model_dim, a, seed, name + ".fa");
    fb_ = init_matrix(s.model_dim, b, seed, name + ".fb");
  }

  Tensor logits(const Tensor& x) const override { return factorized_dense_logits(x, w1_, fa_, fb_); }
  void register_params(ParamRegistry& r, const std::string& p) const override {
    r.add(p + ".w1", w1_, true);
    r.add(p + ".fa", fa_, true);
    r.add(p + ".fb", fb_, true);
  }
  std::size_t allocated_scalars() const override { return w1_.numel() + fa_.numel() + fb_.numel(); }
  void share_from(const SynthesizingFunction&) override {}

 private:
  Tensor w1_, fa_, fb_;
};

class RandomSynth final : public SynthesizingFunction {
 public:
  RandomSynth(const SynthesizerSpec& s, std::uint64_t seed, const std::string& name)
      : SynthesizingFunction(s),
        r_(init_gaussian({s.max_len, s.max_len}, 1.0 / std::sqrt(static_cast<double>(s.max_len)), seed,
                         name + ".r", s.trainable)) {}

  Tensor logits(const Tensor& x) const override { return as_batch(random_logits(r_, x.dim(1)), x); }
  void register_params(ParamRegistry& r, const std::string& p) const override {
    r.add(p + ".r", r_, spec_.trainable);
  }
  std::size_t allocated_scalars() const override { return r_.numel(); }
  void share_from(const SynthesizingFunction& other) override {
    r_ = dynamic_cast<const RandomSynth&>(other).r_;
  }
  const Tensor& matrix() const { return r_; }

 private:
  Tensor r_;
};

class FactorizedRandomSynth final : public SynthesizingFunction {
 public:
  FactorizedRandomSynth(const SynthesizerSpec& s, std::uint64_t seed, const std::string& name)
      : SynthesizingFunction(s) {
    // Factor scale chosen so entries of R1 R2^T have variance 1/N, like R.
    const double stddev = std::pow(static_cast<double>(s.max_len * s.k), -0.25);
    r1_ = init_gaussian({s.max_len, s.k}, stddev, seed, name + ".r1", s.trainable);
    r2_ = init_gaussian({s.max_len, s.k}, stddev, seed, name + ".r2", s.trainable);
  }

  Tensor logits(const Tensor& x) const override {
    return as_batch(factorized_random_logits(r1_, r2_, x.dim(1)), x);
  }
  void register_params(ParamRegistry& r, const std::string& p) const override {
    r.add(p + ".r1", r1_, spec_.trainable);
    r.add(p + ".r2", r2_, spec_.trainable);
  }
  std::size_t allocated_scalars() const override { return r1_.numel() + r2_.numel(); }
  void share_from(const SynthesizingFunction& other) override {
    const auto& o = dynamic_cast<const FactorizedRandomSynth&>(other);
    r1_ = o.r1_;
    r2_ = o.r2_;
  }

 private:
  Tensor r1_, r2_;
};

class MixtureSynth final : public SynthesizingFunction {
 public:
  MixtureSynth(const SynthesizerSpec& s, std::uint64_t seed, const std::string& name)
      : SynthesizingFunction(s),
        mixing_(Tensor::zeros({s.members.size()}, s.learnable_weights)) {
    for (std::size_t i = 0; i < s.members.size(); ++i) {
      members_.push_back(make_synthesizer(s.members[i], seed, name + ".m" + std::to_string(i)));
    }
  }

  Tensor logits(const Tensor& x) const override {
    std::vector<Tensor> parts;
    parts.reserve(members_.size());
    for (const auto& m : members_) parts.push_back(m->logits(x));
    return mixture_logits(parts, mixing_);
  }
  void register_params(ParamRegistry& r, const std::string& p) const override {
    for (std::size_t i = 0; i < members_.size(); ++i) members_[i]->register_params(r, p + ".m" + std::to_string(i));
    r.add(p + ".mixing_logits", mixing_, spec_.learnable_weights);
  }
  std::size_t allocated_scalars() const override {
    std::size_t n = mixing_.numel();
    for (const auto& m : members_) n += m->allocated_scalars();
    return n;
  }
  void share_from(const SynthesizingFunction& other) override {
    const auto& o = dynamic_cast<const MixtureSynth&>(other);
    for (std::size_t i = 0; i < members_.size(); ++i) members_[i]->share_from(*o.members_[i]);
  }

 private:
  std::vector<std::unique_ptr<SynthesizingFunction>> members_;
  Tensor mixing_;
};

}  // namespace

std::unique_ptr<SynthesizingFunction> make_synthesizer(const SynthesizerSpec& spec, std::uint64_t seed,
                                                       const std::string& name) {
  spec.validate();
  switch (spec.kind) {
    case SynthKind::DotProduct: return std::make_unique<DotProductSynth>(spec, seed, name);
    case SynthKind::Dense: return std::make_unique<DenseSynth>(spec, seed, name);
    case SynthKind::FactorizedDense: return std::make_unique<FactorizedDenseSynth>(spec, seed, name);
    case SynthKind::Random: return std::make_unique<RandomSynth>(spec, seed, name);
    case SynthKind::FactorizedRandom: return std::make_unique<FactorizedRandomSynth>(spec, seed, name);
    case SynthKind::Mixture: return std::make_unique<MixtureSynth>(spec, seed, name);
  }
  throw ConfigError("unknown synthesizer kind");
}

}  // namespace synth
