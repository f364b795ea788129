#pragma once

#include <cstdint>
#include <span>

#include "synth/tensor.hpp"

namespace synth {

// Every op below records a backward node on the active tape when any input
// requires grad, and throws NumericError if it produces a non-finite value.

/// Batched product of [..,m,p] and [..,p,n]; batch extents broadcast from 1.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// b may match a's shape, hold a single value, or match a trailing suffix of a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// max(0, x) with subgradient 0 at the kink.
Tensor relu(const Tensor& x);

/// Softmax over the last axis. Disallowed entries get logit -1e30 before
/// normalization, so they come out as exact zeros.
Tensor row_softmax(const Tensor& x, const Mask* mask = nullptr);

/// Last axis [x0,x1] -> [x0,x0,x1,x1] for factor 2.
Tensor tile_block(const Tensor& x, std::size_t factor);
/// Last axis [x0,x1] -> [x0,x1,x0,x1] for factor 2.
Tensor tile_cyclic(const Tensor& x, std::size_t factor);

/// Selecting the full extent returns x itself (shared storage).
Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat_last(std::span<const Tensor> parts);
/// Prepends a batch axis of the given extent.
Tensor expand_batch(const Tensor& x, std::size_t batch);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row lookup: ids laid out as index_shape, result index_shape + [d].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& index_shape);

/// Normalizes over the last axis, then applies gain and bias of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Mean token negative log-likelihood over positions where mask is nonzero.
/// logits [.., V]; targets and mask have one entry per row.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     std::span<const std::uint8_t> mask);

/// Inverted dropout; the keep pattern is a pure function of key.
Tensor dropout(const Tensor& x, double rate, std::uint64_t key);

}  // namespace synth
