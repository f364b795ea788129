#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "synth/synthesizer_spec.hpp"

namespace synth {

/// Scalars held by one head's synthesizing function (value/output
/// projections excluded):
///   dot_product        2 d d_h        (2d^2 when d_h == d)
///   random             N^2
///   factorized_random  2 N k
///   dense              d^2 + d N
///   factorized_dense   d^2 + d (a + b)
///   mixture            sum over members + one mixing logit per member
/// `spec` must have its dimensions set.
std::uint64_t param_count(const SynthesizerSpec& spec);

/// FLOPs of one forward logits + attend pass of a multi-head layer at
/// length L (L <= N), with d_h = d / heads.
///
/// Counting convention: a multiply-add is 2 FLOPs; relu, scaling, addition
/// and the tile product cost 1 FLOP per output element; softmax costs 3 per
/// element (shift, exp, normalize). Per head:
///   values          2 L d d_h
///   softmax         3 L^2
///   attend          2 L^2 d_h
///   dot_product     4 L d d_h + 2 L^2 d_h (+ L^2 when scaled)
///   dense           2 L d^2 + L d + 2 L^2 d
///   factorized_dense 2 L d^2 + L d + 2 L d (a + b) + L^2
///   random          0
///   factorized_random 2 L^2 k
///   mixture         members + m L^2 (weighting) + (m - 1) L^2 (sum) + 3 m
/// plus 2 L (h d_h) d for the output projection.
std::uint64_t flop_count(const SynthesizerSpec& spec, std::size_t length, std::size_t model_dim, std::size_t heads);

struct CostRow {
  std::string variant;
  std::size_t model_dim = 0;
  std::size_t max_len = 0;
  std::size_t k = 0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

/// Header "variant,d,N,k,params,flops" then one line per row.
std::string cost_table_csv(const std::vector<CostRow>& rows);

/// One row per variant at length L == N with d_h == d / heads.
std::vector<CostRow> cost_table(const std::vector<SynthesizerSpec>& variants, std::size_t model_dim,
                                std::size_t max_len, std::size_t heads);

}  // namespace synth
