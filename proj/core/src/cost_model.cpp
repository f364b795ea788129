#include "synth/cost_model.hpp"

#include <sstream>

#include "synth/errors.hpp"

namespace synth {

std::uint64_t param_count(const SynthesizerSpec& spec) {
  const std::uint64_t d = spec.model_dim, n = spec.max_len;
  switch (spec.kind) {
    case SynthKind::DotProduct: return 2 * d * spec.head_dim;
    case SynthKind::Random: return n * n;
    case SynthKind::FactorizedRandom: return 2 * n * spec.k;
    case SynthKind::Dense: return d * d + d * n;
    case SynthKind::FactorizedDense: {
      const auto [a, b] = spec.factors();
      return d * d + d * (a + b);
    }
    case SynthKind::Mixture: {
      std::uint64_t total = spec.members.size();
      for (const auto& m : spec.members) total += param_count(m);
      return total;
    }
  }
  return 0;
}

namespace {

std::uint64_t logits_flops(const SynthesizerSpec& spec, std::uint64_t l, std::uint64_t d, std::uint64_t dh) {
  switch (spec.kind) {
    case SynthKind::DotProduct: return 4 * l * d * dh + 2 * l * l * dh + (spec.scale_dot ? l * l : 0);
    case SynthKind::Dense: return 2 * l * d * d + l * d + 2 * l * l * d;
    case SynthKind::FactorizedDense: {
      const auto [a, b] = spec.factors();
      return 2 * l * d * d + l * d + 2 * l * d * (a + b) + l * l;
    }
    case SynthKind::Random: return 0;
    case SynthKind::FactorizedRandom: return 2 * l * l * spec.k;
    case SynthKind::Mixture: {
      const std::uint64_t m = spec.members.size();
      std::uint64_t total = m * l * l + (m - 1) * l * l + 3 * m;
      for (const auto& member : spec.members) total += logits_flops(member, l, d, dh);
      return total;
    }
  }
  return 0;
}

}  // namespace

std::uint64_t flop_count(const SynthesizerSpec& spec, std::size_t length, std::size_t model_dim, std::size_t heads) {
  if (heads == 0) throw ConfigError("flop_count: heads must be positive");
  if (spec.max_len != 0 && length > spec.max_len) {
    throw MaxLengthError("flop_count: length " + std::to_string(length) + " exceeds N=" + std::to_string(spec.max_len));
  }
  const std::uint64_t l = length, d = model_dim, h = heads, dh = model_dim / heads;
  const std::uint64_t per_head = 2 * l * d * dh + logits_flops(spec, l, d, dh) + 3 * l * l + 2 * l * l * dh;
  return h * per_head + 2 * l * (h * dh) * d;
}

std::string cost_table_csv(const std::vector<CostRow>& rows) {
  std::ostringstream os;
  os << "variant,d,N,k,params,flops\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.model_dim << ',' << r.max_len << ',' << r.k << ',' << r.params << ',' << r.flops
       << '\n';
  }
  return os.str();
}

std::vector<CostRow> cost_table(const std::vector<SynthesizerSpec>& variants, std::size_t model_dim,
                                std::size_t max_len, std::size_t heads) {
  std::vector<CostRow> rows;
  for (const auto& v : variants) {
    const auto spec = v.with_dims(max_len, model_dim, model_dim / heads);
    spec.validate();
    rows.push_back({spec.name(), model_dim, max_len, spec.kind == SynthKind::FactorizedRandom ? spec.k : 0,
                    param_count(spec),
                    flop_count(spec, max_len, model_dim, heads)});
  }
  return rows;
}

}  // namespace synth
