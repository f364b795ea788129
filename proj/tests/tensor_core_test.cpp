#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "support.hpp"
#include "synth/errors.hpp"
#include "synth/ops.hpp"
#include "synth/rng.hpp"

using namespace synth;
using synth_test::grad_check;
using synth_test::projected_loss;
using synth_test::randn;
using synth_test::to_vector;

namespace {

Tensor leaf(Shape shape, std::vector<double> data) { return Tensor(std::move(shape), std::move(data), true); }

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(-1), 3u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 6);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, RejectsNonFiniteData) {
  EXPECT_THROW(Tensor({1}, {std::nan("")}), NumericError);
  EXPECT_THROW(scale(Tensor({1}, {1e300}), 1e300), NumericError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(to_vector(matmul(eye, m)), (std::vector<double>{5, 6, 7, 8}));
}

TEST(Matmul, RowTimesColumn) {
  EXPECT_EQ(to_vector(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}))), std::vector<double>{11});
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Tensor a = leaf({2, 2}, {1, 1, 1, 1});
  const Tensor b({2, 2}, {2, 0, 0, 2});
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(matmul(a, b)));
  }
  EXPECT_EQ(a.grad(), (std::vector<double>{2, 2, 2, 2}));
  const auto check = grad_check([&] { return sum(matmul(a, b)); }, {a});
  EXPECT_LT(check.max_rel_error, 1e-9);
  EXPECT_LE(check.kinks * 100, check.checked) << "too many coordinates sit on a relu kink";
}

TEST(Matmul, BroadcastsBatchOfOne) {
  const Tensor a = randn({3, 2, 4}, 1);
  const Tensor w = randn({4, 5}, 2);
  const Tensor out = matmul(a, w);
  EXPECT_EQ(out.shape(), (Shape{3, 2, 5}));
  for (std::size_t bi = 0; bi < 3; ++bi) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at({bi, i, k}) * w.at({k, j});
        EXPECT_NEAR(out.at({bi, i, j}), s, 1e-12);
      }
    }
  }
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetricRowIsUniform) {
  EXPECT_EQ(to_vector(row_softmax(Tensor({2}, {0, 0}))), (std::vector<double>{0.5, 0.5}));
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const auto out = to_vector(row_softmax(Tensor({2}, {1000, 0})));
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_LT(out[1], 1e-300);
}

TEST(Softmax, MatchesDirectEvaluation) {
  // exp(i) / (e + e^2 + e^3) evaluated independently.
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const auto out = to_vector(row_softmax(Tensor({3}, {1, 2, 3})));
  EXPECT_NEAR(out[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(out[1], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(out[2], std::exp(3.0) / z, 1e-15);
  EXPECT_NEAR(out[0], 0.09003057, 5e-9);
  EXPECT_NEAR(out[1], 0.24472847, 5e-9);
  EXPECT_NEAR(out[2], 0.66524096, 5e-9);
}

TEST(Softmax, MaskedEntriesAreExactZeros) {
  const Tensor x = randn({4, 4}, 3);
  const Mask causal = Mask::causal(4);
  const Tensor w = row_softmax(x, &causal);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j > i) {
        EXPECT_EQ(w.at({i, j}), 0.0);
      }
      s += w.at({i, j});
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, FullyMaskedRowIsDegenerate) {
  Mask m{{2, 2}, {1, 1, 0, 0}};
  EXPECT_THROW(row_softmax(Tensor::zeros({2, 2}), &m), DegenerateRowError);
}

TEST(Softmax, ShiftInvariant) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor x = randn({3, 6}, seed, 3.0);
    const Tensor shifted = add(x, Tensor::scalar(17.25));
    EXPECT_LE(synth_test::max_abs_diff(row_softmax(x), row_softmax(shifted)), 1e-12);
  }
}

TEST(Relu, ClampsNegatives) {
  EXPECT_EQ(to_vector(relu(Tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(Relu, AllNegativeHasZeroGradient) {
  Tensor x = leaf({3}, {-1, -2, -0.5});
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor y = relu(x);
    EXPECT_EQ(to_vector(y), (std::vector<double>{0, 0, 0}));
    backward(sum(y));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0, 0}));
}

TEST(Relu, GradientAwayFromKink) {
  Tensor x = leaf({2}, {-1, 3});
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(relu(x)));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 1}));
  EXPECT_LT(grad_check([&] { return sum(relu(x)); }, {x}).max_rel_error, 1e-9);
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tensor x = leaf({1}, {0});
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(relu(x)));
  }
  EXPECT_EQ(x.grad(), std::vector<double>{0});
}

TEST(Elementwise, AddMulScale) {
  EXPECT_EQ(to_vector(add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}))), (std::vector<double>{4, 6}));
  EXPECT_EQ(to_vector(scale(Tensor({2}, {2, 4}), 0.5)), (std::vector<double>{1, 2}));
  Tensor x = leaf({3}, {1, -2, 3});
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor y = mul(x, Tensor::scalar(0.0));
    EXPECT_EQ(to_vector(y), (std::vector<double>{0, 0, 0}));
    backward(sum(y));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0, 0}));
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Tiling, BlockAndCyclicDefinitions) {
  EXPECT_EQ(to_vector(tile_block(Tensor({2}, {1, 2}), 2)), (std::vector<double>{1, 1, 2, 2}));
  EXPECT_EQ(to_vector(tile_cyclic(Tensor({2}, {1, 2}), 2)), (std::vector<double>{1, 2, 1, 2}));
  EXPECT_THROW(tile_block(Tensor({2}, {1, 2}), 0), DimensionError);
}

TEST(Tiling, BlockGradientCountsDuplicates) {
  Tensor v = leaf({4}, {0.1, -0.2, 0.3, 0.4});
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(tile_block(v, 3)));
  }
  EXPECT_EQ(v.grad(), (std::vector<double>{3, 3, 3, 3}));
  EXPECT_LT(grad_check([&] { return sum(tile_block(v, 3)); }, {v}).max_rel_error, 1e-9);
}

TEST(Tiling, ComposedTilingEnumeratesAllPairs) {
  // Encode (i, j) as distinct primes so each product identifies its pair.
  const std::vector<double> pa{2, 3, 5}, pb{7, 11, 13, 17};
  const Tensor a({3}, pa), b({4}, pb);
  const auto prod = to_vector(mul(tile_block(a, 4), tile_cyclic(b, 3)));
  ASSERT_EQ(prod.size(), 12u);
  std::multiset<double> seen(prod.begin(), prod.end());
  for (double x : pa) {
    for (double y : pb) EXPECT_EQ(seen.count(x * y), 1u);
  }
}

TEST(Backward, SquareSum) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(mul(x, x)));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, IndependentLossGivesZeroGradient) {
  Tensor x = leaf({2}, {1, 2});
  Tensor y = leaf({2}, {3, 4});
  Tape tape;
  {
    TapeScope scope(tape);
    backward(sum(mul(y, y)));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0}));
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = leaf({2}, {1, 2});
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    TapeScope scope(tape);
    backward(sum(mul(x, x)));
  }
  EXPECT_EQ(x.grad(), (std::vector<double>{4, 8}));
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  EXPECT_THROW(backward(mul(x, x)), DimensionError);
}

TEST(Backward, TapeIsTopologicallyOrdered) {
  Tensor x = leaf({2, 2}, {1, 2, 3, 4});
  Tape tape;
  TapeScope scope(tape);
  const Tensor loss = sum(row_softmax(matmul(x, x)));
  std::set<const void*> produced;
  for (const auto& node : tape.nodes()) {
    for (const auto& in : node.inputs) {
      if (in->on_tape) {
        EXPECT_TRUE(produced.count(in.get())) << node.op;
      }
    }
    produced.insert(node.output.get());
  }
  (void)loss;
}

TEST(Backward, ReplayIsBitIdentical) {
  auto run = [] {
    Tensor w = randn({4, 4}, 7, 1.0, true);
    const Tensor x = randn({2, 4, 4}, 8);
    Tape tape;
    TapeScope scope(tape);
    backward(projected_loss(row_softmax(matmul(x, w))));
    return w.grad();
  };
  EXPECT_EQ(run(), run());
}

// Every differentiable op against central differences on small random inputs.
TEST(GradientCheck, AllOpsAgreeWithFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor a = randn({2, 3, 4}, seed, 1.0, true);
    Tensor b = randn({4, 5}, seed + 10, 1.0, true);
    Tensor c = randn({2, 3, 4}, seed + 20, 1.0, true);
    Tensor g = randn({4}, seed + 30, 1.0, true);
    Tensor bias = randn({4}, seed + 40, 1.0, true);
    Tensor table = randn({6, 4}, seed + 50, 1.0, true);
    const std::vector<int> ids{0, 5, 2, 2, 1, 3};
    const Mask causal = Mask::causal(3);

    const std::vector<std::pair<std::string, std::function<Tensor()>>> cases{
        {"matmul", [&] { return projected_loss(matmul(a, b)); }},
        {"transpose", [&] { return projected_loss(transpose_last2(a)); }},
        {"reshape", [&] { return projected_loss(reshape(a, {6, 4})); }},
        {"add", [&] { return projected_loss(add(a, c)); }},
        {"add_suffix", [&] { return projected_loss(add(a, bias)); }},
        {"mul", [&] { return projected_loss(mul(a, c)); }},
        {"scale", [&] { return projected_loss(scale(a, -1.5)); }},
        {"relu", [&] { return projected_loss(relu(a)); }},
        {"softmax", [&] { return projected_loss(row_softmax(matmul(a, transpose_last2(c)), &causal)); }},
        {"tile_block", [&] { return projected_loss(tile_block(a, 2)); }},
        {"tile_cyclic", [&] { return projected_loss(tile_cyclic(a, 3)); }},
        {"narrow", [&] { return projected_loss(narrow(a, -1, 1, 2)); }},
        {"concat", [&] {
           const Tensor parts[] = {a, c};
           return projected_loss(concat_last(parts));
         }},
        {"expand", [&] { return projected_loss(expand_batch(b, 3)); }},
        {"mean", [&] { return mean(mul(a, a)); }},
        {"layer_norm", [&] { return projected_loss(layer_norm(a, g, bias)); }},
        {"embedding", [&] { return projected_loss(embedding(table, ids, {2, 3})); }},
        {"cross_entropy", [&] {
           const std::vector<int> t{0, 3, 1, 2, 2, 0};
           const std::vector<std::uint8_t> m{1, 1, 0, 1, 1, 1};
           return cross_entropy(a, t, m);
         }},
    };
    for (const auto& [name, fn] : cases) {
      const auto check = grad_check(fn, {a, b, c, g, bias, table});
      EXPECT_LT(check.max_rel_error, 1e-6) << name << " seed " << seed << " worst " << check.worst;
      EXPECT_LE(check.kinks * 100, check.checked) << "too many coordinates sit on a relu kink";
    }
  }
}

TEST(SeededInit, SameSeedIsBitIdentical) {
  const auto a = seeded_init(GaussianInit{0, 0.02}, {5, 7}, 42, 3);
  const auto b = seeded_init(GaussianInit{0, 0.02}, {5, 7}, 42, 3);
  EXPECT_EQ(to_vector(a), to_vector(b));
}

TEST(SeededInit, DifferentSeedsDiffer) {
  const auto a = seeded_init(UniformInit{-1, 1}, {5, 7}, 1, 3);
  const auto b = seeded_init(UniformInit{-1, 1}, {5, 7}, 2, 3);
  EXPECT_NE(to_vector(a), to_vector(b));
}

TEST(SeededInit, GaussianSampleMean) {
  const auto t = seeded_init(GaussianInit{0, 0.02}, {1000000}, 11, 0);
  const auto d = t.data();
  const double m = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  EXPECT_LT(std::abs(m), 1e-3);
  double var = 0;
  for (double x : d) var += (x - m) * (x - m);
  EXPECT_NEAR(std::sqrt(var / static_cast<double>(d.size())), 0.02, 1e-4);
}

TEST(SeededInit, UniformStaysInRange) {
  const auto t = seeded_init(UniformInit{-0.5, 2}, {10000}, 5, 0);
  for (double x : t.data()) {
    EXPECT_GE(x, -0.5);
    EXPECT_LT(x, 2);
  }
}

TEST(SeededInit, RejectsBadParameters) {
  EXPECT_THROW(seeded_init(GaussianInit{0, 0}, {2}, 1), ConfigError);
  EXPECT_THROW(seeded_init(GaussianInit{0, -1}, {2}, 1), ConfigError);
  EXPECT_THROW(seeded_init(UniformInit{1, 1}, {2}, 1), ConfigError);
}

TEST(SeededInit, StreamsAreIndependentOfDrawOrder) {
  const auto first = seeded_init(GaussianInit{0, 1}, {4}, 9, stream_id("a"));
  seeded_init(GaussianInit{0, 1}, {100}, 9, stream_id("b"));
  const auto again = seeded_init(GaussianInit{0, 1}, {4}, 9, stream_id("a"));
  EXPECT_EQ(to_vector(first), to_vector(again));
}
