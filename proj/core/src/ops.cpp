#include "synth/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "synth/errors.hpp"
#include "synth/rng.hpp"

namespace synth {
namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr double kMaskedLogit = -1e30;

std::vector<double>& grad_buffer(const ImplPtr& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void check_finite(const char* op, const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw Error(std::string(op) + ": undefined tensor");
}

// Builds the output tensor and, when tracking, records a node whose backward
// receives the output gradient.
template <class Backward>
Tensor finish(const char* op, Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
              Backward&& backward_fn) {
  check_finite(op, values);
  Tensor out(std::move(shape), std::move(values));
  if (!needs_grad(inputs)) return out;
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->on_tape = true;
  Tape::Node node;
  node.op = op;
  for (const Tensor* t : inputs) node.inputs.push_back(t->impl());
  node.output = impl;
  detail::TensorImpl* raw = impl.get();
  node.backward = [raw, fn = std::forward<Backward>(backward_fn)]() { fn(std::span<const double>(raw->grad)); };
  active_tape()->record(std::move(node));
  return out;
}

Shape batch_part(const Shape& s, std::size_t trailing) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(trailing));
}

// Maps each index of the broadcast batch shape `out` to a flat batch index of `src`.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& src) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> result(n);
  const std::size_t offset = out.size() - src.size();
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    std::size_t src_flat = 0;
    std::size_t src_stride = 1;
    for (std::size_t ax = out.size(); ax-- > 0;) {
      const std::size_t coord = rem % out[ax];
      rem /= out[ax];
      if (ax >= offset) {
        const std::size_t extent = src[ax - offset];
        src_flat += (extent == 1 ? 0 : coord) * src_stride;
        src_stride *= extent;
      }
    }
    result[flat] = src_flat;
  }
  return result;
}

Shape broadcast_batch(const Shape& a, const Shape& b, const char* op, const Shape& full_a, const Shape& full_b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": batch extents disagree for " + shape_string(full_a) + " and " +
                           shape_string(full_b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

enum class BroadcastKind { Same, Scalar, Suffix };

BroadcastKind classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return BroadcastKind::Same;
  if (b.numel() == 1) return BroadcastKind::Scalar;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    return BroadcastKind::Suffix;
  }
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(sa) + " vs " + shape_string(sb));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(-2), p = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != p) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const Shape ba = batch_part(a.shape(), 2), bb = batch_part(b.shape(), 2);
  Shape out_shape = broadcast_batch(ba, bb, "matmul", a.shape(), b.shape());
  const auto ia = broadcast_index(out_shape, ba);
  const auto ib = broadcast_index(out_shape, bb);
  const std::size_t batches = ia.size();
  std::vector<double> out(batches * m * n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < batches; ++i) {
    MutMap c(out.data() + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    c.noalias() = ConstMap(pa + ia[i] * m * p, m, p) * ConstMap(pb + ib[i] * p * n, p, n);
  }
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto ai = a.impl(), bi = b.impl();
  return finish("matmul", std::move(out_shape), std::move(out), {&a, &b},
                [ai, bi, ia, ib, m, p, n](std::span<const double> g) {
                  for (std::size_t i = 0; i < ia.size(); ++i) {
                    ConstMap gc(g.data() + i * m * n, m, n);
                    if (ai->requires_grad) {
                      MutMap ga(grad_buffer(ai).data() + ia[i] * m * p, m, p);
                      ga.noalias() += gc * ConstMap(bi->data.data() + ib[i] * p * n, p, n).transpose();
                    }
                    if (bi->requires_grad) {
                      MutMap gb(grad_buffer(bi).data() + ib[i] * p * n, p, n);
                      gb.noalias() += ConstMap(ai->data.data() + ia[i] * m * p, m, p).transpose() * gc;
                    }
                  }
                });
}

Tensor transpose_last2(const Tensor& x) {
  require_defined("transpose_last2", x);
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_string(x.shape()));
  const std::size_t m = x.dim(-2), n = x.dim(-1), batches = x.numel() / (m * n);
  std::vector<double> out(x.numel());
  const auto src = x.data();
  for (std::size_t bidx = 0; bidx < batches; ++bidx) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[bidx * m * n + j * m + i] = src[bidx * m * n + i * n + j];
    }
  }
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  auto xi = x.impl();
  return finish("transpose_last2", std::move(shape), std::move(out), {&x}, [xi, m, n, batches](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t bidx = 0; bidx < batches; ++bidx) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gx[bidx * m * n + i * n + j] += g[bidx * m * n + j * m + i];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xi = x.impl();
  return finish("reshape", std::move(shape), std::move(out), {&x}, [xi](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  const auto kind = classify(a, b, "add");
  const std::size_t nb = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto db = b.data();
  if (kind == BroadcastKind::Scalar) {
    for (auto& v : out) v += db[0];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += db[i % nb];
  }
  auto ai = a.impl(), bi = b.impl();
  return finish("add", a.shape(), std::move(out), {&a, &b}, [ai, bi, nb](std::span<const double> g) {
    if (ai->requires_grad) {
      auto& ga = grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  classify(a, b, "mul");
  const std::size_t nb = b.numel();
  const auto da = a.data(), db = b.data();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i % nb];
  auto ai = a.impl(), bi = b.impl();
  return finish("mul", a.shape(), std::move(out), {&a, &b}, [ai, bi, nb](std::span<const double> g) {
    if (ai->requires_grad) {
      auto& ga = grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i % nb];
    }
    if (bi->requires_grad) {
      auto& gb = grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined("scale", x);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  auto xi = x.impl();
  return finish("scale", x.shape(), std::move(out), {&x}, [xi, factor](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  require_defined("relu", x);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  auto xi = x.impl();
  return finish("relu", x.shape(), std::move(out), {&x}, [xi](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xi->data[i] > 0.0) gx[i] += g[i];
    }
  });
}

Tensor row_softmax(const Tensor& x, const Mask* mask) {
  require_defined("row_softmax", x);
  if (x.rank() < 1) throw DimensionError("row_softmax needs rank >= 1");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  std::vector<std::size_t> mask_row;  // per row, flat offset of its mask row
  if (mask) {
    if (x.rank() < 2 || mask->shape.size() < 2 || mask->shape[mask->shape.size() - 1] != n ||
        mask->shape[mask->shape.size() - 2] != x.dim(-2) || mask->shape.size() > x.rank()) {
      throw DimensionError("row_softmax: mask " + shape_string(mask->shape) + " does not fit logits " +
                           shape_string(x.shape()));
    }
    const std::size_t m = x.dim(-2);
    const Shape xb = batch_part(x.shape(), 2), mb = batch_part(mask->shape, 2);
    for (std::size_t i = 0; i < mb.size(); ++i) {
      const std::size_t e = mb[i], xe = xb[i + xb.size() - mb.size()];
      if (e != 1 && e != xe) {
        throw DimensionError("row_softmax: mask " + shape_string(mask->shape) + " does not broadcast to " +
                             shape_string(x.shape()));
      }
    }
    const auto bmap = broadcast_index(xb, mb);
    mask_row.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) mask_row[r] = (bmap[r / m] * m + r % m) * n;
  }
  const auto src = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src.data() + r * n;
    double* y = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      const bool ok = !mask || mask->allow[mask_row[r] + j];
      y[j] = ok ? in[j] : kMaskedLogit;
      any = any || ok;
      mx = std::max(mx, y[j]);
    }
    if (!any) throw DegenerateRowError("row_softmax: row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(y[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  auto xi = x.impl();
  auto saved = std::make_shared<std::vector<double>>(out);
  return finish("row_softmax", x.shape(), std::move(out), {&x}, [xi, saved, n, rows](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    const auto& y = *saved;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

namespace {

Tensor tile_impl(const Tensor& x, std::size_t factor, bool block, const char* op) {
  require_defined(op, x);
  if (factor < 1) throw DimensionError(std::string(op) + ": factor must be >= 1");
  const std::size_t n = x.dim(-1), rows = x.numel() / n, wide = n * factor;
  // Source position of output column j.
  auto source = [=](std::size_t j) { return block ? j / factor : j % n; };
  const auto src = x.data();
  std::vector<double> out(rows * wide);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < wide; ++j) out[r * wide + j] = src[r * n + source(j)];
  }
  Shape shape = x.shape();
  shape.back() = wide;
  auto xi = x.impl();
  return finish(op, std::move(shape), std::move(out), {&x}, [xi, rows, n, wide, source](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < wide; ++j) gx[r * n + source(j)] += g[r * wide + j];
    }
  });
}

}  // namespace

Tensor tile_block(const Tensor& x, std::size_t factor) { return tile_impl(x, factor, true, "tile_block"); }

Tensor tile_cyclic(const Tensor& x, std::size_t factor) { return tile_impl(x, factor, false, "tile_cyclic"); }

Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  require_defined("narrow", x);
  const auto r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw DimensionError("narrow: axis out of range for " + shape_string(x.shape()));
  const std::size_t extent = x.dim(ax);
  if (length == 0 || start + length > extent) {
    throw DimensionError("narrow: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds extent " + std::to_string(extent) + " of " + shape_string(x.shape()));
  }
  if (start == 0 && length == extent) return x;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < r; ++i) inner *= x.dim(i);
  const auto src = x.data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  }
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(ax)] = length;
  auto xi = x.impl();
  return finish("narrow", std::move(shape), std::move(out), {&x},
                [xi, outer, inner, extent, start, length](std::span<const double> g) {
                  auto& gx = grad_buffer(xi);
                  for (std::size_t o = 0; o < outer; ++o) {
                    const double* gs = g.data() + o * length * inner;
                    double* gd = gx.data() + (o * extent + start) * inner;
                    for (std::size_t i = 0; i < length * inner; ++i) gd[i] += gs[i];
                  }
                });
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  const Shape lead = batch_part(parts[0].shape(), 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined("concat_last", p);
    if (batch_part(p.shape(), 1) != lead) {
      throw DimensionError("concat_last: " + shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
    }
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.data() + r * total + col);
    }
    col += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  bool track = false;
  if (active_tape()) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  check_finite("concat_last", out);
  Tensor result(std::move(shape), std::move(out));
  if (!track) return result;
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  auto impl = result.impl();
  impl->requires_grad = true;
  impl->on_tape = true;
  Tape::Node node;
  node.op = "concat_last";
  node.inputs = impls;
  node.output = impl;
  detail::TensorImpl* raw = impl.get();
  node.backward = [raw, impls, widths, rows, total]() {
    std::size_t c = 0;
    for (std::size_t k = 0; k < impls.size(); ++k) {
      if (impls[k]->requires_grad) {
        auto& gk = grad_buffer(impls[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += raw->grad[r * total + c + j];
        }
      }
      c += widths[k];
    }
  };
  active_tape()->record(std::move(node));
  return result;
}

Tensor expand_batch(const Tensor& x, std::size_t batch) {
  require_defined("expand_batch", x);
  if (batch == 0) throw DimensionError("expand_batch: batch must be positive");
  const std::size_t n = x.numel();
  std::vector<double> out(batch * n);
  for (std::size_t b = 0; b < batch; ++b) std::copy_n(x.data().data(), n, out.data() + b * n);
  Shape shape{batch};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  auto xi = x.impl();
  return finish("expand_batch", std::move(shape), std::move(out), {&x}, [xi, n, batch](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[b * n + i];
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined("sum", x);
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto xi = x.impl();
  return finish("sum", Shape{}, {total}, {&x}, [xi](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& index_shape) {
  require_defined("embedding", table);
  if (table.rank() != 2) throw DimensionError("embedding table must be 2-D, got " + shape_string(table.shape()));
  if (shape_numel(index_shape) != ids.size()) throw DimensionError("embedding: ids do not match index shape");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto src = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("token id " + std::to_string(ids[i]) + " out of range [0, " + std::to_string(vocab) + ")");
    }
    std::copy_n(src.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Shape shape = index_shape;
  shape.push_back(d);
  auto ti = table.impl();
  std::vector<int> saved(ids.begin(), ids.end());
  return finish("embedding", std::move(shape), std::move(out), {&table}, [ti, saved, d](std::span<const double> g) {
    auto& gt = grad_buffer(ti);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* row = gt.data() + static_cast<std::size_t>(saved[i]) * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined("layer_norm", x);
  const std::size_t n = x.dim(-1), rows = x.numel() / n;
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
  }
  const auto src = x.data();
  const auto gv = gain.data(), bv = bias.data();
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = src.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return finish("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                [xi, gi, bi, xhat, inv_std, n, rows](std::span<const double> g) {
                  const auto& h = *xhat;
                  if (gi->requires_grad || bi->requires_grad) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < n; ++j) {
                        if (gi->requires_grad) grad_buffer(gi)[j] += g[r * n + j] * h[r * n + j];
                        if (bi->requires_grad) grad_buffer(bi)[j] += g[r * n + j];
                      }
                    }
                  }
                  if (!xi->requires_grad) return;
                  auto& gx = grad_buffer(xi);
                  const double dn = static_cast<double>(n);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[r * n + j] * gi->data[j];
                      s1 += dh;
                      s2 += dh * h[r * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dh = g[r * n + j] * gi->data[j];
                      gx[r * n + j] += (*inv_std)[r] / dn * (dn * dh - s1 - h[r * n + j] * s2);
                    }
                  }
                });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  require_defined("cross_entropy", logits);
  const std::size_t vocab = logits.dim(-1), rows = logits.numel() / vocab;
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows but " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(mask.size()) + " mask entries");
  }
  const auto src = logits.data();
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw DimensionError("target id " + std::to_string(targets[r]) + " out of range");
    }
    const double* z = src.data() + r * vocab;
    const double mx = *std::max_element(z, z + vocab);
    double s = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) s += std::exp(z[j] - mx);
    const double log_norm = mx + std::log(s);
    total += log_norm - z[targets[r]];
    for (std::size_t j = 0; j < vocab; ++j) (*probs)[r * vocab + j] = std::exp(z[j] - log_norm);
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: every target position is padding");
  const double inv = 1.0 / static_cast<double>(count);
  auto li = logits.impl();
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return finish("cross_entropy", Shape{}, {total * inv}, {&logits},
                [li, probs, tgt, msk, vocab, rows, inv](std::span<const double> g) {
                  auto& gl = grad_buffer(li);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (!msk[r]) continue;
                    for (std::size_t j = 0; j < vocab; ++j) {
                      const double onehot = static_cast<int>(j) == tgt[r] ? 1.0 : 0.0;
                      gl[r * vocab + j] += g[0] * inv * ((*probs)[r * vocab + j] - onehot);
                    }
                  }
                });
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t key) {
  require_defined("dropout", x);
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const CounterRng rng(key, stream_id("dropout"));
  const double keep_scale = 1.0 / (1.0 - rate);
  auto factors = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  const auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*factors)[i] = rng.uniform(i) < rate ? 0.0 : keep_scale;
    out[i] = src[i] * (*factors)[i];
  }
  auto xi = x.impl();
  return finish("dropout", x.shape(), std::move(out), {&x}, [xi, factors](std::span<const double> g) {
    auto& gx = grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*factors)[i];
  });
}

}  // namespace synth
