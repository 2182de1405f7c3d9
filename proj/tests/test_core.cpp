#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fatsim/errors.hpp"
#include "fatsim/optimizer.hpp"
#include "fatsim/params.hpp"
#include "fatsim/rng.hpp"
#include "fatsim/tensor.hpp"

using namespace fatsim;

TEST(Tensor, ShapeAndElementCount) {
  const Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(shape_str(t.shape()), "[2x3x4]");
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.item(), DimensionError);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(t.reshaped({5, 5}), DimensionError);
  EXPECT_EQ(t.reshaped({24}).shape(), Shape{24});
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, DerivedStreamsDifferByKey) {
  EXPECT_EQ(Rng::derive(1, {2, 3}).next_u64(), Rng::derive(1, {2, 3}).next_u64());
  EXPECT_NE(Rng::derive(1, {2, 3}).next_u64(), Rng::derive(1, {3, 2}).next_u64());
  EXPECT_NE(Rng::derive(1, {2}).next_u64(), Rng::derive(2, {2}).next_u64());
}

TEST(Rng, BelowIsUniformEnough) {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, NormalMoments) {
  Rng rng(6);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, TruncatedNormalStaysInTwoSigma) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) EXPECT_LE(std::abs(rng.truncated_normal(0.02)), 0.04);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng rng(8);
  const auto s = rng.sample_without_replacement(10, 6);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 6u);
  for (auto v : s) EXPECT_LT(v, 10u);
  EXPECT_THROW(rng.sample_without_replacement(3, 4), InvalidArgument);
}

namespace {

ParameterSet two_tensor_set(double a, double b) {
  ParameterSet p;
  p.add("w", Tensor({2}, {a, b}));
  p.add("bias", Tensor({1}, {a - b}));
  p.set_last_layer({"w", "bias"});
  return p;
}

}  // namespace

TEST(ParameterSet, OrderLookupAndLastLayer) {
  ParameterSet p = two_tensor_set(1, 2);
  EXPECT_EQ(p.names(), (std::vector<std::string>{"w", "bias"}));
  EXPECT_EQ(p.at("bias")[0], -1.0);
  EXPECT_THROW(p.add("w", Tensor({1})), InvalidArgument);
  EXPECT_THROW(p.at("nope"), InvalidArgument);
  EXPECT_THROW(p.set_last_layer({"nope"}), InvalidArgument);
  EXPECT_THROW(p.set_last_layer({}), InvalidArgument);
  EXPECT_EQ(p.last_layer_vector(), (std::vector<double>{1, 2, -1}));
  EXPECT_EQ(p.last_layer_vector(false), (std::vector<double>{1, 2}));
  EXPECT_EQ(p.num_values(), 3u);
}

TEST(ParameterSet, ArithmeticHelpers) {
  ParameterSet a = two_tensor_set(1, 2), b = two_tensor_set(4, 6);
  const ParameterSet d = difference(b, a);
  EXPECT_EQ(d.at("w")[0], 3.0);
  EXPECT_EQ(d.at("bias")[0], -1.0);
  EXPECT_DOUBLE_EQ(squared_distance(a, b), 9 + 16 + 1);
  axpy(2.0, a, b);
  EXPECT_EQ(b.at("w")[1], 10.0);
  ParameterSet other;
  other.add("w", Tensor({3}));
  EXPECT_THROW(axpy(1.0, other, b), DimensionError);
}

TEST(Sgd, PlainStep) {
  ParameterSet p, g;
  p.add("t", Tensor({1}, {1.0}));
  g.add("t", Tensor({1}, {2.0}));
  OptimizerState s(p, 0.1, 0.0);
  sgd_step(p, g, s);
  EXPECT_DOUBLE_EQ(p.at("t")[0], 0.8);
}

TEST(Sgd, ZeroGradientAndZeroRateAreIdentity) {
  ParameterSet p, g;
  p.add("t", Tensor({3}, {1.0, -2.0, 3.0}));
  g.add("t", Tensor({3}));
  const ParameterSet before = p;
  OptimizerState s(p, 0.5, 0.9);
  sgd_step(p, g, s);
  EXPECT_EQ(p, before);
  g.at("t")[1] = 5.0;
  OptimizerState frozen(p, 0.0, 0.9);
  sgd_step(p, g, frozen);
  EXPECT_EQ(p, before);
}

TEST(Sgd, MomentumMatchesUnrolledRecurrence) {
  const double lr = 0.05, m = 0.9, theta0 = 0.7, g1 = 0.3, g2 = -1.1;
  ParameterSet p, g;
  p.add("t", Tensor({1}, {theta0}));
  g.add("t", Tensor({1}, {g1}));
  OptimizerState s(p, lr, m);
  sgd_step(p, g, s);
  g.at("t")[0] = g2;
  sgd_step(p, g, s);
  const double v1 = g1, v2 = m * v1 + g2;
  EXPECT_NEAR(p.at("t")[0], theta0 - lr * v1 - lr * v2, 1e-12);
}

TEST(DecayLr, Schedules) {
  EXPECT_NEAR(decay_lr(0.1, 0.05), 0.095, 1e-15);
  EXPECT_NEAR(decay_lr(0.03, 0.035), 0.02895, 1e-15);
  EXPECT_EQ(decay_lr(0.7, 0.0), 0.7);
  EXPECT_THROW(decay_lr(0.1, 1.0), InvalidArgument);
  EXPECT_THROW(decay_lr(0.1, -0.1), InvalidArgument);
  EXPECT_THROW(decay_lr(0.0, 0.1), InvalidArgument);
}
