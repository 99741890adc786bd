#include <gtest/gtest.h>

#include <cmath>

#include "flowprior/autodiff.hpp"
#include "flowprior/errors.hpp"
#include "flowprior/rng.hpp"

using namespace flowprior;
using namespace flowprior::ops;

namespace {

Tensor image(std::initializer_list<double> v, int n, int c, int h, int w) {
  return Tensor({n, c, h, w}, std::vector<double>(v));
}

}  // namespace

TEST(Tensor, RejectsZeroExtents) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Conv2d, OneByOneIdentity) {
  Rng rng(1);
  Tape t;
  const Tensor x = rng.normal_tensor({2, 1, 3, 5});
  Var y = conv2d(t.constant(x), t.constant(Tensor({1, 1, 1, 1}, 1.0)), t.constant(Tensor({1}, 0.0)), 1);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, ZeroWeightGivesBias) {
  Rng rng(2);
  Tape t;
  Var y = conv2d(t.constant(rng.normal_tensor({1, 2, 4, 4})), t.constant(Tensor({3, 2, 3, 3}, 0.0)),
                 t.constant(Tensor({3}, 0.7)), 3);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.7);
}

TEST(Conv2d, DeltaKernel) {
  Tape t;
  Tensor w({1, 1, 3, 3}, 0.0);
  w[4] = 1.0;
  const Tensor x = image({1, 2, 3, 4}, 1, 1, 2, 2);
  Var y = conv2d(t.constant(x), t.constant(w), t.constant(Tensor({1}, 0.0)), 3);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Tape t;
  try {
    conv2d(t.constant(Tensor({1, 2, 4, 4})), t.constant(Tensor({1, 3, 3, 3})), Var{}, 3);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1, 2, 4, 4)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(1, 3, 3, 3)"), std::string::npos) << msg;
  }
}

TEST(Conv2d, Linear) {
  Rng rng(3);
  const Tensor w = rng.normal_tensor({4, 3, 3, 3});
  const Tensor x = rng.normal_tensor({2, 3, 5, 6});
  const Tensor y = rng.normal_tensor({2, 3, 5, 6});
  Tensor mix = x;
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 1.5 * x[i] - 0.25 * y[i];
  Tape t;
  Var W = t.constant(w);
  const Tensor cx = conv2d(t.constant(x), W, Var{}, 3).value();
  const Tensor cy = conv2d(t.constant(y), W, Var{}, 3).value();
  const Tensor cm = conv2d(t.constant(mix), W, Var{}, 3).value();
  for (std::size_t i = 0; i < cm.size(); ++i) EXPECT_NEAR(cm[i], 1.5 * cx[i] - 0.25 * cy[i], 1e-12);
}

TEST(Elementwise, Basics) {
  Tape t;
  EXPECT_EQ(exp(t.constant(Tensor({3}, 0.0))).value(), Tensor({3}, 1.0));
  EXPECT_EQ(relu(t.constant(Tensor::from({-1, 2}))).value(), Tensor::from({0, 2}));
  EXPECT_EQ(mul(t.constant(Tensor::from({2, 3})), t.constant(Tensor::from({4, 5}))).value(), Tensor::from({8, 15}));
  EXPECT_THROW(log(t.constant(Tensor::from({1, 0}))), DomainError);
  EXPECT_THROW(add(t.constant(Tensor::from({1, 2})), t.constant(Tensor::from({1, 2, 3}))), ShapeError);
}

TEST(Reduce, Basics) {
  Tape t;
  EXPECT_EQ(sum(t.constant(Tensor::from({1, 2, 3}))).value().item(), 6.0);
  EXPECT_EQ(l2_norm(t.constant(Tensor::from({3, 4}))).value().item(), 5.0);
  EXPECT_EQ(mean(t.constant(Tensor::from({2, 4}))).value().item(), 3.0);
}

TEST(Backprop, SumGivesOnes) {
  Tape t;
  Var x = t.leaf(Tensor({2, 3}, 0.3));
  GradientMap g = t.backprop(sum(x));
  EXPECT_EQ(g.at(x), Tensor({2, 3}, 1.0));
}

TEST(Backprop, Exp) {
  Tape t;
  Var x = t.leaf(Tensor::from({0, 1}));
  GradientMap g = t.backprop(sum(exp(x)));
  EXPECT_DOUBLE_EQ(g.at(x)[0], 1.0);
  EXPECT_DOUBLE_EQ(g.at(x)[1], std::exp(1.0));
}

TEST(Backprop, NonScalarLossIsContractError) {
  Tape t;
  Var x = t.leaf(Tensor::from({0, 1}));
  EXPECT_THROW(t.backprop(exp(x)), ContractError);
}

TEST(Backprop, UnreachedLeafGetsZeroEntry) {
  Tape t;
  Var x = t.leaf(Tensor::from({1, 2}));
  Var y = t.leaf(Tensor::from({3}));
  GradientMap g = t.backprop(sum(x));
  ASSERT_TRUE(g.contains(y));
  EXPECT_EQ(g.at(y), Tensor::from({0}));
}

TEST(Backprop, DeterministicTwice) {
  Rng rng(4);
  Tape t;
  Var x = t.leaf(rng.normal_tensor({1, 2, 4, 4}));
  Var w = t.leaf(rng.normal_tensor({2, 2, 3, 3}));
  Var loss = l2_norm(relu(conv2d(x, w, Var{}, 3)));
  GradientMap a = t.backprop(loss);
  GradientMap b = t.backprop(loss);
  EXPECT_EQ(a.at(x), b.at(x));
  EXPECT_EQ(a.at(w), b.at(w));
}

TEST(GradCheck, TrivialCases) {
  Rng rng(5);
  // Integer point and a power-of-two step keep the differences exact.
  EXPECT_EQ(grad_check([](Tape&, Var x) { return sum(x); }, Tensor::from({1, -2, 3}), 0x1p-17), 0.0);
  EXPECT_LT(grad_check([](Tape&, Var x) { return scale(sum(square(x)), 0.5); }, Tensor::from({1, 2}), 1e-5), 1e-8);
}

TEST(GradCheck, L2NormOfDifference) {
  Rng rng(6);
  const Tensor c = rng.normal_tensor({2, 3});
  const double err = grad_check([&](Tape& t, Var x) { return l2_norm(sub(x, t.constant(c))); },
                                rng.normal_tensor({2, 3}), 1e-5);
  EXPECT_LT(err, 1e-6);
}

// Every differentiable op on 10 random inputs.
TEST(GradCheck, EveryOp) {
  Rng rng(7);
  const Tensor w3 = rng.normal_tensor({3, 2, 3, 3});
  const Tensor w1 = rng.normal_tensor({2, 2, 1, 1});
  const Tensor b = rng.normal_tensor({3});
  const Tensor other = rng.normal_tensor({1, 2, 4, 4});
  const Tensor chan = rng.normal_tensor({2});
  using Fn = std::function<Var(Tape&, Var)>;
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add", [&](Tape& t, Var x) { return sum(mul(add(x, t.constant(other)), x)); }},
      {"sub", [&](Tape& t, Var x) { return sum(square(sub(t.constant(other), x))); }},
      {"mul", [&](Tape& t, Var x) { return sum(mul(x, t.constant(other))); }},
      {"scalar-broadcast", [&](Tape& t, Var x) { return sum(mul(x, sum(x))); }},
      {"exp", [](Tape&, Var x) { return sum(exp(scale(x, 0.3))); }},
      {"log", [](Tape&, Var x) { return sum(log(add_scalar(square(x), 0.5))); }},
      {"relu", [](Tape&, Var x) { return sum(square(relu(x))); }},
      {"mean", [](Tape&, Var x) { return mean(square(x)); }},
      {"l2", [](Tape&, Var x) { return l2_norm(x); }},
      {"per-sample", [](Tape&, Var x) { return sum(l2_norm_per_sample(x)); }},
      {"conv3", [&](Tape& t, Var x) { return sum(square(conv2d(x, t.constant(w3), t.constant(b), 3))); }},
      {"conv3-weight", [&](Tape& t, Var x) {
         Var w = reshape(slice_channels(reshape(x, {1, 32, 1, 1}), 0, 18), {1, 2, 3, 3});
         return sum(square(conv2d(t.constant(other), w, Var{}, 3)));
       }},
      {"conv1", [&](Tape& t, Var x) { return sum(square(conv2d(x, t.constant(w1), Var{}, 1))); }},
      {"channel", [&](Tape& t, Var x) { return sum(square(add_channel(mul_channel(x, t.constant(chan)), t.constant(chan)))); }},
      {"slice-concat", [](Tape&, Var x) { return sum(square(concat_channels(slice_channels(x, 1, 2), x))); }},
      {"squeeze", [&](Tape& t, Var x) { return sum(mul(unsqueeze2(scale(squeeze2(x), 2.0)), t.constant(other))); }},
      {"tile", [](Tape&, Var x) { return sum(square(tile_batch(slice_channels(x, 0, 1), 3))); }},
      {"matrix", [](Tape&, Var x) {
         Var m = add(reshape(slice_channels(reshape(x, {1, 32, 1, 1}), 0, 4), {2, 2}),
                     x.tape().constant(Tensor({2, 2}, std::vector<double>{3, 0, 0, 3})));
         return add(log_abs_det(m), sum(square(mat_inverse(m))));
       }},
  };
  for (const auto& [name, fn] : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      worst = std::max(worst, grad_check(fn, rng.normal_tensor({1, 2, 4, 4}), 1e-5));
    }
    EXPECT_LT(worst, 1e-5) << name;
  }
}

TEST(Squeeze, DeclaredOrdering) {
  const Tensor x = image({1, 2, 3, 4}, 1, 1, 2, 2);
  const Tensor s = squeeze2(x);
  EXPECT_EQ(s.shape(), (Shape{1, 4, 1, 1}));
  EXPECT_EQ(s.values(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_THROW(squeeze2(Tensor({1, 1, 3, 2})), ShapeError);
}

TEST(Squeeze, PermutationRoundTrip) {
  Rng rng(8);
  const Tensor x = rng.normal_tensor({2, 3, 6, 4});
  EXPECT_EQ(unsqueeze2(squeeze2(x)), x);
  std::vector<double> a = x.values(), b = squeeze2(x).values();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}
