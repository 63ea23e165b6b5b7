#include <gtest/gtest.h>

#include "chargrid/autodiff.hpp"
#include "support/test_util.hpp"

using namespace chargrid;
using chargrid::testutil::rand_tensor;

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(3);
  Tensor<double> x = rand_tensor({1, 4, 5, 3}, rng);
  Tensor<double> k({1, 1, 3, 3});
  for (int c = 0; c < 3; ++c) k.at(0, 0, c, c) = 1.0;
  const auto y = conv2d(Var<double>::constant(x), Var<double>::constant(k), 1, 1);
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, AllOnesHandConvolution) {
  Tensor<double> x({1, 5, 5, 1}, 1.0);
  Tensor<double> k({3, 3, 1, 1}, 1.0);
  const auto y = conv2d(Var<double>::constant(x), Var<double>::constant(k), 1, 1);
  EXPECT_EQ(y.value().shape, (std::vector<int>{1, 5, 5, 1}));
  EXPECT_DOUBLE_EQ(y.value().at(0, 2, 2, 0), 9.0);  // center sees all taps
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), 4.0);  // corner sees 2x2 in-bounds taps
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 2, 0), 6.0);  // edge sees 2x3
}

TEST(Conv2d, DilationTwoCornerTapCount) {
  Tensor<double> x({1, 5, 5, 1}, 1.0);
  Tensor<double> k({3, 3, 1, 1}, 1.0);
  const auto y = conv2d(Var<double>::constant(x), Var<double>::constant(k), 1, 2);
  // effective extent (3-1)*2+1 = 5; at the corner only taps at offsets
  // {0,2} x {0,2} from the padded origin land in bounds -> 4
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.value().at(0, 2, 2, 0), 9.0);
}

TEST(Conv2d, StrideTwoOutputShapeCeil) {
  Rng rng(5);
  Tensor<double> x = rand_tensor({2, 7, 6, 2}, rng);
  Tensor<double> k = rand_tensor({3, 3, 2, 4}, rng);
  const auto y = conv2d(Var<double>::constant(x), Var<double>::constant(k), 2, 1);
  EXPECT_EQ(y.value().shape, (std::vector<int>{2, 4, 3, 4}));
}

TEST(Conv2d, ShapeMismatchThrows) {
  Tensor<double> x({1, 4, 4, 3});
  Tensor<double> k({3, 3, 2, 4});
  EXPECT_THROW(conv2d(Var<double>::constant(x), Var<double>::constant(k)), std::runtime_error);
}

TEST(Conv2dTranspose, AdjointDotProductIdentity) {
  // <conv(x), y> == <x, conv_transpose(y)> with a shared kernel.
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Rng rng(seed);
    Tensor<double> x = rand_tensor({1, 8, 6, 3}, rng);
    Tensor<double> k = rand_tensor({3, 3, 3, 5}, rng);
    Tensor<double> y = rand_tensor({1, 4, 3, 5}, rng);
    const auto cx = conv2d(Var<double>::constant(x), Var<double>::constant(k), 2, 1);
    ASSERT_EQ(cx.value().shape, y.shape);
    const auto ty = conv2d_transpose(Var<double>::constant(y), Var<double>::constant(k));
    ASSERT_EQ(ty.value().shape, x.shape);
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < y.numel(); ++i) lhs += cx.value()[i] * y[i];
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty.value()[i];
    EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::fabs(lhs)));
  }
  // float32 version at the 1e-4 tolerance
  Rng rng(9);
  Tensor<float> xf = chargrid::testutil::rand_tensor_f({1, 8, 8, 4}, rng);
  Tensor<float> kf = chargrid::testutil::rand_tensor_f({3, 3, 4, 6}, rng);
  Tensor<float> yf = chargrid::testutil::rand_tensor_f({1, 4, 4, 6}, rng);
  const auto cxf = conv2d(Var<float>::constant(xf), Var<float>::constant(kf), 2, 1);
  const auto tyf = conv2d_transpose(Var<float>::constant(yf), Var<float>::constant(kf));
  double lhs = 0, rhs = 0;
  for (std::int64_t i = 0; i < yf.numel(); ++i) lhs += static_cast<double>(cxf.value()[i]) * yf[i];
  for (std::int64_t i = 0; i < xf.numel(); ++i) rhs += static_cast<double>(xf[i]) * tyf.value()[i];
  EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::fabs(lhs)));
}

TEST(Conv2dTranspose, SinglePixelExpansion) {
  Tensor<double> x({1, 1, 1, 1});
  x[0] = 3.0;
  Tensor<double> k({1, 1, 1, 1});
  k[0] = 0.5;
  const auto y = conv2d_transpose(Var<double>::constant(x), Var<double>::constant(k));
  EXPECT_EQ(y.value().shape, (std::vector<int>{1, 2, 2, 1}));
  // the virtual stride-2 conv reads only position (0,0), so the adjoint
  // scatters w*x to the top-left
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), 1.5);
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 1, 0), 0.0);
  EXPECT_DOUBLE_EQ(y.value().at(0, 1, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(y.value().at(0, 1, 1, 0), 0.0);
}

TEST(Conv2dTranspose, ZeroInputZeroOutput) {
  Tensor<double> x({1, 3, 3, 2});
  Rng rng(4);
  Tensor<double> k = rand_tensor({3, 3, 4, 2}, rng);
  const auto y = conv2d_transpose(Var<double>::constant(x), Var<double>::constant(k));
  for (const double v : y.value().data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(BatchNorm, TrainModeNormalizes) {
  Rng rng(8);
  Tensor<double> x = rand_tensor({2, 6, 5, 3}, rng, -2.0, 3.0);
  Tensor<double> gamma({3}, 1.0);
  Tensor<double> beta({3}, 0.0);
  BatchNormStats<double> stats(3);
  const auto y = batch_norm(Var<double>::constant(x), Var<double>::constant(gamma),
                            Var<double>::constant(beta), stats, true);
  const std::int64_t m = x.numel() / 3;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::int64_t r = 0; r < m; ++r) mean += y.value()[r * 3 + c];
    mean /= static_cast<double>(m);
    for (std::int64_t r = 0; r < m; ++r) {
      const double d = y.value()[r * 3 + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
  EXPECT_EQ(stats.updates, 1);
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  // crafted per-channel mean 0 / var 1 input stays (nearly) itself
  Tensor<double> x({1, 1, 2, 1});
  x[0] = 1.0;
  x[1] = -1.0;
  Tensor<double> gamma({1}, 1.0);
  Tensor<double> beta({1}, 0.0);
  BatchNormStats<double> stats(1);
  const auto y = batch_norm(Var<double>::constant(x), Var<double>::constant(gamma),
                            Var<double>::constant(beta), stats, true);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-4);
  EXPECT_NEAR(y.value()[1], -1.0, 1e-4);
}

TEST(BatchNorm, ConstantChannelGoesToZero) {
  Tensor<double> x({1, 4, 4, 2}, 5.0);
  Tensor<double> gamma({2}, 1.0);
  Tensor<double> beta({2}, 0.0);
  BatchNormStats<double> stats(2);
  const auto y = batch_norm(Var<double>::constant(x), Var<double>::constant(gamma),
                            Var<double>::constant(beta), stats, true);
  for (const double v : y.value().data) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 0.0, 1e-9);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  Tensor<double> x({1, 1, 2, 1});
  x[0] = 4.0;
  x[1] = 8.0;
  Tensor<double> gamma({1}, 1.0);
  Tensor<double> beta({1}, 0.0);
  BatchNormStats<double> stats(1);
  stats.running_mean[0] = 6.0;
  stats.running_var[0] = 4.0;
  stats.updates = 1;
  const auto y = batch_norm(Var<double>::constant(x), Var<double>::constant(gamma),
                            Var<double>::constant(beta), stats, false);
  EXPECT_NEAR(y.value()[0], (4.0 - 6.0) / std::sqrt(4.0 + 1e-5), 1e-9);
  EXPECT_NEAR(y.value()[1], (8.0 - 6.0) / std::sqrt(4.0 + 1e-5), 1e-9);
}

TEST(Activations, ReluSoftmaxSigmoid) {
  Tensor<double> x({4});
  x[0] = -1.0;
  x[1] = 2.0;
  x[2] = 0.0;
  x[3] = -0.5;
  const auto r = relu(Var<double>::constant(x));
  EXPECT_DOUBLE_EQ(r.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.value()[1], 2.0);
  EXPECT_DOUBLE_EQ(r.value()[2], 0.0);

  Tensor<double> logits({1, 1, 1, 9}, 0.7);
  const auto s = softmax_channels(Var<double>::constant(logits));
  for (const double v : s.value().data) EXPECT_NEAR(v, 1.0 / 9.0, 1e-12);

  const auto sg = sigmoid(Var<double>::constant(Tensor<double>({1}, 0.0)));
  EXPECT_DOUBLE_EQ(sg.value()[0], 0.5);
}

TEST(Activations, SoftmaxShiftInvarianceAndNormalization) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> z = rand_tensor({2, 3, 2, 7}, rng, -5.0, 5.0);
    Tensor<double> z_shift = z;
    const double c = 3.21;
    const int ch = 7;
    for (std::int64_t r = 0; r < z.numel() / ch; ++r) {
      for (int k = 0; k < ch; ++k) z_shift[r * ch + k] += c;
    }
    const auto a = softmax_channels(Var<double>::constant(z));
    const auto b = softmax_channels(Var<double>::constant(z_shift));
    for (std::int64_t i = 0; i < z.numel(); ++i) {
      EXPECT_NEAR(a.value()[i], b.value()[i], 1e-6);
    }
    for (std::int64_t r = 0; r < z.numel() / ch; ++r) {
      double s = 0;
      for (int k = 0; k < ch; ++k) s += a.value()[r * ch + k];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(SpatialDropout, IdentityCases) {
  Rng rng(6);
  Tensor<double> x = rand_tensor({2, 3, 3, 4}, rng);
  Rng oprng(1);
  const auto y0 = spatial_dropout(Var<double>::constant(x), 0.0, true, oprng);
  EXPECT_EQ(y0.value(), x);
  const auto y1 = spatial_dropout(Var<double>::constant(x), 0.5, false, oprng);
  EXPECT_EQ(y1.value(), x);
}

TEST(SpatialDropout, ChannelZeroRateMonteCarlo) {
  const double p = 0.1;
  const int trials = 10000;
  Rng oprng(123);
  Tensor<double> x({1, 2, 2, 4}, 1.0);
  std::int64_t zeros = 0, total = 0;
  for (int t = 0; t < trials; ++t) {
    const auto y = spatial_dropout(Var<double>::constant(x), p, true, oprng);
    for (int c = 0; c < 4; ++c) {
      total++;
      if (y.value().at(0, 0, 0, c) == 0.0) {
        // a dropped channel is zero everywhere in the sample
        EXPECT_EQ(y.value().at(0, 1, 1, c), 0.0);
        zeros++;
      } else {
        EXPECT_NEAR(y.value().at(0, 0, 0, c), 1.0 / (1.0 - p), 1e-12);
      }
    }
  }
  const double rate = static_cast<double>(zeros) / static_cast<double>(total);
  EXPECT_GE(rate, 0.085);
  EXPECT_LE(rate, 0.115);
}

TEST(Concat, ShapesAndRecovery) {
  Rng rng(14);
  Tensor<double> a = rand_tensor({1, 4, 4, 8}, rng);
  Tensor<double> b = rand_tensor({1, 4, 4, 16}, rng);
  const auto y = concat_channels(Var<double>::constant(a), Var<double>::constant(b));
  EXPECT_EQ(y.value().shape, (std::vector<int>{1, 4, 4, 24}));
  // concat(x, zeros) keeps x in the first channels
  Tensor<double> z({1, 4, 4, 3});
  const auto y2 = concat_channels(Var<double>::constant(a), Var<double>::constant(z));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(y2.value().at(0, i, j, c), a.at(0, i, j, c));
    }
  }
  Tensor<double> bad({1, 3, 4, 2});
  EXPECT_THROW(concat_channels(Var<double>::constant(a), Var<double>::constant(bad)),
               std::runtime_error);
}

TEST(Concat, GradientSplitsExactly) {
  Rng rng(15);
  auto a = Var<double>::parameter(rand_tensor({1, 2, 2, 3}, rng));
  auto b = Var<double>::parameter(rand_tensor({1, 2, 2, 2}, rng));
  auto loss = sum_all(concat_channels(a, b));
  backward(loss);
  for (const double v : a.grad().data) EXPECT_DOUBLE_EQ(v, 1.0);
  for (const double v : b.grad().data) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Backward, SquareDerivative) {
  Tensor<double> t({1});
  t[0] = 3.0;
  auto x = Var<double>::parameter(t);
  auto loss = sum_all(mul(x, x));
  backward(loss);
  EXPECT_DOUBLE_EQ(loss.value()[0], 9.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossThrows) {
  auto x = Var<double>::parameter(Tensor<double>({3}, 1.0));
  auto y = mul(x, x);
  EXPECT_THROW(backward(y), std::runtime_error);
}

TEST(Backward, DetachedInputHasNoGradient) {
  Rng rng(16);
  auto x = Var<double>::constant(rand_tensor({2, 2}, rng));
  auto w = Var<double>::parameter(rand_tensor({2, 2}, rng));
  auto loss = sum_all(mul(x, w));
  backward(loss);
  EXPECT_FALSE(x.has_grad());
  EXPECT_TRUE(w.has_grad());
}

TEST(Backward, GradientAccumulatesAcrossConsumers) {
  auto x = Var<double>::parameter(Tensor<double>({2}, 2.0));
  auto loss = sum_all(add(mul(x, x), mul(x, x)));  // d/dx 2x^2 = 4x
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(Determinism, SameInputsBitIdenticalSingleThread) {
  set_thread_count(1);
  Rng rng(77);
  Tensor<float> x = chargrid::testutil::rand_tensor_f({1, 8, 8, 3}, rng);
  Tensor<float> k = chargrid::testutil::rand_tensor_f({3, 3, 3, 4}, rng);
  const auto y1 = conv2d(Var<float>::constant(x), Var<float>::constant(k), 2, 1);
  const auto y2 = conv2d(Var<float>::constant(x), Var<float>::constant(k), 2, 1);
  EXPECT_EQ(y1.value(), y2.value());
  Rng r1(5), r2(5);
  const auto d1 = spatial_dropout(Var<float>::constant(x), 0.3, true, r1);
  const auto d2 = spatial_dropout(Var<float>::constant(x), 0.3, true, r2);
  EXPECT_EQ(d1.value(), d2.value());
}
