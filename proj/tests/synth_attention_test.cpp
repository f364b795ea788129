#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "support.hpp"
#include "synth/adam.hpp"
#include "synth/cost_model.hpp"
#include "synth/errors.hpp"
#include "synth/multi_head.hpp"
#include "synth/synthesizers.hpp"

using namespace synth;
using synth_test::grad_check;
using synth_test::max_abs_diff;
using synth_test::projected_loss;
using synth_test::randn;
using synth_test::to_vector;

namespace {

std::vector<SynthesizerSpec> all_variants(std::size_t k = 2) {
  return {SynthesizerSpec::dot_product(),
          SynthesizerSpec::dense(),
          SynthesizerSpec::factorized_dense(),
          SynthesizerSpec::random(true),
          SynthesizerSpec::random(false),
          SynthesizerSpec::factorized_random(k),
          SynthesizerSpec::mixture({SynthesizerSpec::random(), SynthesizerSpec::dense()}),
          SynthesizerSpec::mixture({SynthesizerSpec::dense(), SynthesizerSpec::dot_product()})};
}

ParamRegistry registry_of(const SynthesizingFunction& f) {
  ParamRegistry r;
  f.register_params(r, "s");
  return r;
}

Tensor param(const ParamRegistry& r, const std::string& name) {
  const NamedParam* p = r.find(name);
  if (!p) throw std::runtime_error("missing parameter " + name);
  return p->tensor;
}

void fill(Tensor t, const std::vector<double>& values) {
  auto d = t.mutable_data();
  ASSERT_EQ(d.size(), values.size());
  std::copy(values.begin(), values.end(), d.begin());
}

// Straight-line reference: row i = relu(x_i W1) W2, first L columns.
std::vector<double> dense_oracle(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
  std::vector<double> out;
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t i = 0; i < l; ++i) {
      std::vector<double> h(d, 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t r = 0; r < d; ++r) h[c] += x.at({s, i, r}) * w1.at({r, c});
        h[c] = std::max(0.0, h[c]);
      }
      for (std::size_t j = 0; j < l; ++j) {
        double v = 0;
        for (std::size_t c = 0; c < d; ++c) v += h[c] * w2.at({c, j});
        out.push_back(v);
      }
    }
  }
  return out;
}

}  // namespace

TEST(SynthesizerSpec, ValidatesConstraints) {
  EXPECT_THROW(SynthesizerSpec::factorized_dense(3, 3).with_dims(8, 4, 4).validate(), ConfigError);
  EXPECT_NO_THROW(SynthesizerSpec::factorized_dense(2, 4).with_dims(8, 4, 4).validate());
  EXPECT_THROW(SynthesizerSpec::factorized_random(8).with_dims(8, 4, 4).validate(), ConfigError);
  EXPECT_THROW(SynthesizerSpec::factorized_random(0).with_dims(8, 4, 4).validate(), ConfigError);
  EXPECT_NO_THROW(SynthesizerSpec::factorized_random(7).with_dims(8, 4, 4).validate());
  const auto nested = SynthesizerSpec::mixture(
      {SynthesizerSpec::mixture({SynthesizerSpec::random(), SynthesizerSpec::dense()}), SynthesizerSpec::dense()});
  EXPECT_THROW(nested.with_dims(8, 4, 4).validate(), ConfigError);
  EXPECT_THROW(SynthesizerSpec::mixture({}).with_dims(8, 4, 4).validate(), ConfigError);
  EXPECT_THROW(SynthesizerSpec::dense().validate(), ConfigError);  // no dimensions
}

TEST(SynthesizerSpec, BalancedFactorDefaults) {
  EXPECT_EQ(SynthesizerSpec::factorized_dense().with_dims(64, 8, 8).factors(), (std::pair<std::size_t, std::size_t>{8, 8}));
  EXPECT_EQ(SynthesizerSpec::factorized_dense().with_dims(32, 8, 8).factors(), (std::pair<std::size_t, std::size_t>{4, 8}));
  EXPECT_EQ(SynthesizerSpec::factorized_dense().with_dims(12, 8, 8).factors(), (std::pair<std::size_t, std::size_t>{3, 4}));
}

TEST(SynthesizerSpec, NamesRoundTrip) {
  for (const auto& v : all_variants()) {
    const auto spec = v.with_dims(8, 4, 4);
    EXPECT_EQ(parse_variant(spec.name()).with_dims(8, 4, 4).name(), spec.name());
  }
  EXPECT_EQ(parse_variant("mixture:dot_product").members.size(), 1u);
  EXPECT_THROW(parse_variant("linformer"), ConfigError);
}

TEST(DenseLogits, ZeroFirstLayerGivesUniformRows) {
  const Tensor x = randn({2, 3, 4}, 1);
  const Tensor w1 = Tensor::zeros({4, 4});
  const Tensor w2 = randn({4, 5}, 2);
  const Tensor logits = dense_logits(x, w1, w2);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  const Tensor weights = row_softmax(logits);
  for (double v : weights.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(DenseLogits, RowDependsOnlyOnItsToken) {
  const Tensor w1 = randn({4, 4}, 3), w2 = randn({4, 6}, 4);
  Tensor x = randn({1, 5, 4}, 5);
  const Tensor before = dense_logits(x, w1, w2);
  x.mutable_data()[2 * 4 + 1] += 0.75;  // token 2
  const Tensor after = dense_logits(x, w1, w2);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (i != 2) {
        EXPECT_EQ(before.at({0, i, j}), after.at({0, i, j}));
      }
    }
  }
}

TEST(DenseLogits, MatchesScalarOracle) {
  const Tensor x = randn({2, 3, 4}, 6), w1 = randn({4, 4}, 7), w2 = randn({4, 5}, 8);
  const auto expect = dense_oracle(x, w1, w2);
  const auto got = to_vector(dense_logits(x, w1, w2));
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
}

TEST(DenseLogits, RejectsLengthAboveMax) {
  EXPECT_THROW(dense_logits(randn({1, 6, 4}, 1), randn({4, 4}, 2), randn({4, 5}, 3)), MaxLengthError);
}

TEST(RandomLogits, InputIndependent) {
  const auto spec = SynthesizerSpec::random().with_dims(6, 4, 4);
  const MultiHeadAttention layer(spec, {4, 1, 6}, 3, "attn");
  const auto a = layer.forward(randn({2, 5, 4}, 1), nullptr, true);
  const auto b = layer.forward(randn({2, 5, 4}, 2), nullptr, true);
  EXPECT_EQ(to_vector(a.weights), to_vector(b.weights));
}

TEST(RandomLogits, FullLengthSliceIsR) {
  const Tensor r = randn({5, 5}, 4);
  EXPECT_EQ(to_vector(random_logits(r, 5)), to_vector(r));
  const auto part = random_logits(r, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(part.at({i, j}), r.at({i, j}));
  }
  EXPECT_THROW(random_logits(r, 6), MaxLengthError);
}

TEST(RandomLogits, FrozenSurvivesOptimizerSteps) {
  const auto spec = SynthesizerSpec::random(false).with_dims(6, 4, 4);
  const MultiHeadAttention layer(spec, {4, 1, 6}, 3, "attn");
  ParamRegistry reg;
  layer.register_params(reg);
  const auto r = param(reg, "attn.head0.synth.r");
  EXPECT_FALSE(reg.find("attn.head0.synth.r")->trainable);
  const auto before = to_vector(r);
  AdamState state;
  for (int step = 0; step < 100; ++step) {
    Tape tape;
    {
      TapeScope scope(tape);
      backward(projected_loss(layer.forward(randn({2, 6, 4}, step), nullptr).output));
    }
    adam_step(reg, state);
    reg.zero_grad();
  }
  EXPECT_EQ(to_vector(r), before);
  EXPECT_NE(to_vector(param(reg, "attn.wo")), to_vector(MultiHeadAttention(spec, {4, 1, 6}, 3, "attn").output_projection()));
}

TEST(FactorizedRandomLogits, IdentityFactorGivesR1) {
  const Tensor r1 = randn({4, 4}, 1);
  Tensor r2 = Tensor::zeros({4, 4});
  fill(r2, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_EQ(to_vector(factorized_random_logits(r1, r2, 4)), to_vector(r1));
}

TEST(FactorizedRandomLogits, RankBoundedByK) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor r1 = randn({12, 3}, seed), r2 = randn({12, 3}, seed + 100);
    const Tensor logits = factorized_random_logits(r1, r2, 10);
    Eigen::MatrixXd m(10, 10);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 10; ++j) m(i, j) = logits.at({i, j});
    }
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    for (int i = 3; i < 10; ++i) EXPECT_LT(sv(i), 1e-10 * sv(0));
  }
}

TEST(FactorizedRandomLogits, RankOneMinorsVanish) {
  const Tensor logits = factorized_random_logits(randn({6, 1}, 1), randn({6, 1}, 2), 6);
  for (std::size_t i = 0; i + 1 < 6; ++i) {
    for (std::size_t j = 0; j + 1 < 6; ++j) {
      const double minor =
          logits.at({i, j}) * logits.at({i + 1, j + 1}) - logits.at({i, j + 1}) * logits.at({i + 1, j});
      EXPECT_NEAR(minor, 0.0, 1e-10);
    }
  }
}

TEST(FactorizedDenseLogits, TilingExample) {
  EXPECT_EQ(to_vector(tile_compose(Tensor({2}, {1, 2}), Tensor({2}, {10, 100}))),
            (std::vector<double>{10, 100, 20, 200}));
}

TEST(FactorizedDenseLogits, MatchesScalarOracle) {
  // d = 4, a = 2, b = 3, N = 6, L = 5.
  const Tensor x = randn({2, 5, 4}, 11), w1 = randn({4, 4}, 12), fa = randn({4, 2}, 13), fb = randn({4, 3}, 14);
  const auto got = factorized_dense_logits(x, w1, fa, fb);
  ASSERT_EQ(got.shape(), (Shape{2, 5, 5}));
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<double> h(4, 0.0), av(2, 0.0), bv(3, 0.0);
      for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t r = 0; r < 4; ++r) h[c] += x.at({s, i, r}) * w1.at({r, c});
        h[c] = std::max(0.0, h[c]);
      }
      for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t p = 0; p < 2; ++p) av[p] += h[c] * fa.at({c, p});
        for (std::size_t q = 0; q < 3; ++q) bv[q] += h[c] * fb.at({c, q});
      }
      for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(got.at({s, i, j}), av[j / 3] * bv[j % 3], 1e-12);
    }
  }
}

TEST(FactorizedDenseLogits, DegenerateFactorizationIsDenseProjection) {
  // a = N, b = 1 and h F_B == 1: with W1 = I and a positive input whose last
  // coordinate is 1, F_B = e_last makes the B factor constant.
  const std::size_t d = 4, n = 5;
  Tensor x = randn({1, n, d}, 21);
  auto xd = x.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) xd[i * d + c] = std::abs(xd[i * d + c]);
    xd[i * d + d - 1] = 1.0;
  }
  Tensor w1 = Tensor::zeros({d, d});
  for (std::size_t c = 0; c < d; ++c) w1.mutable_data()[c * d + c] = 1.0;
  const Tensor fa = randn({d, n}, 22);
  Tensor fb = Tensor::zeros({d, 1});
  fb.mutable_data()[d - 1] = 1.0;
  EXPECT_LE(max_abs_diff(factorized_dense_logits(x, w1, fa, fb), dense_logits(x, w1, fa)), 1e-15);
}

TEST(DotProductLogits, OneHotIdentityPattern) {
  const std::size_t d = 4;
  Tensor eye = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.mutable_data()[i * d + i] = 1.0;
  const Tensor x = reshape(eye, {1, d, d});
  const Tensor logits = dot_product_logits(x, eye, eye, true);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) EXPECT_DOUBLE_EQ(logits.at({0, i, j}), i == j ? 0.5 : 0.0);
  }
}

TEST(DotProductLogits, PermutationEquivariant) {
  const Tensor x = randn({1, 5, 4}, 31), wq = randn({4, 3}, 32), wk = randn({4, 3}, 33);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor px = Tensor::zeros({1, 5, 4});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 4; ++c) px.mutable_data()[i * 4 + c] = x.at({0, perm[i], c});
  }
  const Tensor a = dot_product_logits(x, wq, wk), b = dot_product_logits(px, wq, wk);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b.at({0, i, j}), a.at({0, perm[i], perm[j]}), 1e-12);
  }
}

TEST(DotProductLogits, MatchesScalarOracle) {
  const Tensor x = randn({2, 4, 5}, 41), wq = randn({5, 3}, 42), wk = randn({5, 3}, 43);
  const Tensor got = dot_product_logits(x, wq, wk, true);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        double v = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          double q = 0, k = 0;
          for (std::size_t r = 0; r < 5; ++r) {
            q += x.at({s, i, r}) * wq.at({r, c});
            k += x.at({s, j, r}) * wk.at({r, c});
          }
          v += q * k;
        }
        EXPECT_NEAR(got.at({s, i, j}), v / std::sqrt(3.0), 1e-12);
      }
    }
  }
}

TEST(MixtureLogits, SaturatedWeightsSelectFirstMember) {
  const Tensor m1 = randn({2, 3, 3}, 1), m2 = randn({2, 3, 3}, 2);
  const Tensor members[] = {m1, m2};
  EXPECT_LE(max_abs_diff(mixture_logits(members, Tensor({2}, {40, -40})), m1), 1e-12);
}

TEST(MixtureLogits, IdenticalMembersAreFixedPoint) {
  const Tensor m = randn({3, 3}, 3);
  const Tensor members[] = {m, m};
  EXPECT_LE(max_abs_diff(mixture_logits(members, Tensor({2}, {0.3, -1.7})), m), 1e-12);
}

TEST(MixtureLogits, EqualWeightsAverage) {
  const Tensor m1 = randn({3, 3}, 4), m2 = randn({3, 3}, 5);
  const Tensor members[] = {m1, m2};
  const Tensor got = mixture_logits(members, Tensor({2}, {0, 0}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(got.data()[i], 0.5 * (m1.data()[i] + m2.data()[i]), 1e-12);
}

TEST(MixtureLogits, ShapeMismatchRejected) {
  const Tensor members[] = {randn({3, 3}, 1), randn({2, 2}, 2)};
  EXPECT_THROW(mixture_logits(members, Tensor({2}, {0, 0})), DimensionError);
}

TEST(MixtureLogits, WeightsFormDistribution) {
  const Tensor mixing = randn({4}, 9, 3.0);
  const auto alpha = to_vector(row_softmax(mixing));
  double total = 0;
  for (double a : alpha) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
    total += a;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Attend, SingleTokenWeightIsOne) {
  const auto spec = SynthesizerSpec::dense().with_dims(4, 3, 3);
  const MultiHeadAttention layer(spec, {3, 1, 4}, 5, "attn");
  const Tensor x = randn({1, 1, 3}, 6);
  const auto out = layer.forward(x, nullptr, true);
  EXPECT_EQ(to_vector(out.weights), std::vector<double>{1.0});
  const Tensor expect = matmul(matmul(x, layer.value_projection(0)), layer.output_projection());
  EXPECT_LE(max_abs_diff(out.output, expect), 1e-15);
}

TEST(Attend, CausalMaskZerosUpperTriangle) {
  for (const auto& v : all_variants()) {
    const MultiHeadAttention layer(v.with_dims(6, 4, 2), {4, 2, 6}, 7, "attn");
    const Mask causal = Mask::causal(5);
    const auto out = layer.forward(randn({2, 5, 4}, 8), &causal, true);
    const auto w = out.weights;
    for (std::size_t s = 0; s < 2; ++s) {
      for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t i = 0; i < 5; ++i) {
          double row = 0;
          for (std::size_t j = 0; j < 5; ++j) {
            if (j > i) {
              EXPECT_EQ(w.at({s, h, i, j}), 0.0) << v.name();
            }
            row += w.at({s, h, i, j});
          }
          EXPECT_NEAR(row, 1.0, 1e-9);
        }
      }
    }
  }
}

TEST(Attend, UniformLogitsGiveQuarterWeights) {
  const auto r = attend(Tensor::zeros({1, 4, 4}), nullptr, randn({1, 4, 3}, 1), randn({3, 2}, 2));
  for (double w : r.weights.data()) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(MultiHead, RejectsIndivisibleWidth) {
  EXPECT_THROW(MultiHeadAttention(SynthesizerSpec::dense(), {6, 4, 8}, 1, "attn"), ConfigError);
}

TEST(MultiHead, OneHeadIsAttendOnFullWidth) {
  const MultiHeadAttention layer(SynthesizerSpec::dense(), {4, 1, 6}, 2, "attn");
  const Tensor x = randn({2, 6, 4}, 3);
  const auto r = attend(layer.synthesizer(0).logits(x), nullptr, x, layer.value_projection(0));
  EXPECT_LE(max_abs_diff(layer.forward(x, nullptr).output, matmul(r.output, layer.output_projection())), 1e-15);
}

TEST(MultiHead, IdenticalHeadParametersGiveIdenticalHeads) {
  const MultiHeadAttention layer(SynthesizerSpec::dense(), {4, 2, 5}, 4, "attn");
  ParamRegistry reg;
  layer.register_params(reg);
  for (const std::string local : {"synth.w1", "synth.w2", "wg"}) {
    Tensor dst = param(reg, "attn.head1." + local);
    const auto src = param(reg, "attn.head0." + local).data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
  const auto out = layer.forward(randn({2, 5, 4}, 5), nullptr, true);
  const auto w = out.weights;
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(w.data()[(s * 2) * 25 + i], w.data()[(s * 2 + 1) * 25 + i]);
  }
}

TEST(MultiHead, TwoHeadsMatchManualComposition) {
  const std::size_t d = 6, h = 2, dh = 3, l = 4;
  const MultiHeadAttention layer(SynthesizerSpec::dot_product(), {d, h, 5}, 6, "attn");
  const Tensor x = randn({1, l, d}, 7);
  std::vector<double> concat(l * h * dh, 0.0);
  for (std::size_t head = 0; head < h; ++head) {
    const Tensor logits = layer.synthesizer(head).logits(x);
    const Tensor& wg = layer.value_projection(head);
    for (std::size_t i = 0; i < l; ++i) {
      double mx = -1e300, z = 0;
      for (std::size_t j = 0; j < l; ++j) mx = std::max(mx, logits.at({0, i, j}));
      std::vector<double> p(l);
      for (std::size_t j = 0; j < l; ++j) z += p[j] = std::exp(logits.at({0, i, j}) - mx);
      for (std::size_t c = 0; c < dh; ++c) {
        double y = 0;
        for (std::size_t j = 0; j < l; ++j) {
          double v = 0;
          for (std::size_t r = 0; r < d; ++r) v += x.at({0, j, r}) * wg.at({r, c});
          y += p[j] / z * v;
        }
        concat[i * h * dh + head * dh + c] = y;
      }
    }
  }
  const Tensor& wo = layer.output_projection();
  const Tensor out = layer.forward(x, nullptr).output;
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double y = 0;
      for (std::size_t k = 0; k < h * dh; ++k) y += concat[i * h * dh + k] * wo.at({k, c});
      EXPECT_NEAR(out.at({0, i, c}), y, 1e-12);
    }
  }
}

TEST(ParamCount, TableValues) {
  EXPECT_EQ(param_count(SynthesizerSpec::dot_product().with_dims(32, 64, 64)), 8192u);
  EXPECT_EQ(param_count(SynthesizerSpec::random().with_dims(32, 64, 64)), 1024u);
  EXPECT_EQ(param_count(SynthesizerSpec::factorized_random(8).with_dims(32, 64, 64)), 512u);
  EXPECT_EQ(param_count(SynthesizerSpec::dense().with_dims(32, 64, 64)), 6144u);
  EXPECT_EQ(param_count(SynthesizerSpec::factorized_dense(4, 8).with_dims(32, 64, 64)), 64u * 64 + 64 * 12);
}

TEST(ParamCount, EqualsAllocatedScalars) {
  for (std::size_t d : {4, 8, 16}) {
    for (std::size_t n : {6, 12, 16}) {
      for (const auto& v : all_variants(3)) {
        const auto spec = v.with_dims(n, d, d);
        const auto f = make_synthesizer(spec, 1, "s");
        EXPECT_EQ(param_count(spec), f->allocated_scalars()) << spec.name() << " d=" << d << " N=" << n;
        EXPECT_EQ(param_count(spec), registry_of(*f).scalar_count()) << spec.name();
      }
    }
  }
}

TEST(ParamRegistry, EachTensorRegisteredOnce) {
  ParamRegistry reg;
  const Tensor t = randn({2}, 1);
  EXPECT_TRUE(reg.add("a", t, true));
  EXPECT_FALSE(reg.add("b", t, true));
  EXPECT_THROW(reg.add("a", randn({2}, 2), true), ConfigError);
  EXPECT_EQ(reg.size(), 1u);
}

TEST(FlopCount, RandomBelowDotProduct) {
  for (std::size_t l : {1, 2, 16, 64, 300}) {
    for (std::size_t d : {1, 4, 64, 512}) {
      const auto r = SynthesizerSpec::random().with_dims(512, d, d);
      const auto dp = SynthesizerSpec::dot_product().with_dims(512, d, d);
      EXPECT_LT(flop_count(r, l, d, 1), flop_count(dp, l, d, 1)) << l << " " << d;
    }
  }
}

TEST(FlopCount, MonotoneInLengthAndWidth) {
  for (const auto& v : all_variants(4)) {
    for (std::size_t l = 1; l < 64; ++l) {
      const auto spec = v.with_dims(64, 16, 16);
      EXPECT_LE(flop_count(spec, l, 16, 1), flop_count(spec, l + 1, 16, 1)) << spec.name();
    }
    for (std::size_t d = 1; d < 64; ++d) {
      EXPECT_LE(flop_count(v.with_dims(64, d, d), 32, d, 1), flop_count(v.with_dims(64, d + 1, d + 1), 32, d + 1, 1))
          << v.name();
    }
  }
}

TEST(FlopCount, DenseHandCount) {
  // L = d = N = 64, one head (d_h = 64). A multiply-add is 2 FLOPs, ReLU 1
  // per element, softmax 3 per element.
  //   hidden  x W1           2 * 64 * 64 * 64 = 524288
  //   relu                   64 * 64          =   4096
  //   logits  h W2           2 * 64 * 64 * 64 = 524288
  //   values  x W_G          2 * 64 * 64 * 64 = 524288
  //   softmax                3 * 64 * 64      =  12288
  //   weights * values       2 * 64 * 64 * 64 = 524288
  //   output  W_O            2 * 64 * 64 * 64 = 524288
  //                                     total  2637824
  EXPECT_EQ(flop_count(SynthesizerSpec::dense().with_dims(64, 64, 64), 64, 64, 1), 2637824u);
}

TEST(CostTable, CsvLayout) {
  const auto rows = cost_table({SynthesizerSpec::random(), SynthesizerSpec::factorized_random(8)}, 64, 32, 1);
  EXPECT_EQ(cost_table_csv(rows), "variant,d,N,k,params,flops\n"
                                  "random,64,32,0,1024," + std::to_string(rows[0].flops) + "\n"
                                  "factorized_random,64,32,8,512," + std::to_string(rows[1].flops) + "\n");
}

TEST(GradientCheck, EveryVariantSmallInstances) {
  for (const auto& v : all_variants(2)) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto spec = v.with_dims(6, 8, 4);
      const MultiHeadAttention layer(spec, {8, 2, 6}, seed, "attn");
      ParamRegistry reg;
      layer.register_params(reg);
      std::vector<Tensor> wrt;
      for (const auto& p : reg.entries()) {
        if (p.trainable) wrt.push_back(p.tensor);
      }
      Tensor x = randn({2, 5, 8}, seed + 50, 1.0, true);
      wrt.push_back(x);
      const Mask causal = Mask::causal(5);
      const auto check =
          grad_check([&] { return projected_loss(layer.forward(x, seed % 2 ? &causal : nullptr).output); }, wrt);
      EXPECT_LT(check.max_rel_error, 1e-4) << spec.name() << " seed " << seed << " " << check.worst;
      EXPECT_LE(check.kinks * 100, check.checked) << "too many coordinates sit on a relu kink";
    }
  }
}
