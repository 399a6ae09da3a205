#include <gtest/gtest.h>

#include "support/test_util.hpp"

using namespace dynapyr;
using dynapyr::testing::max_abs_diff;
using dynapyr::testing::random_tensor;

TEST(Conv2d, IdentityKernelReproducesInput) {
  Rng rng(1);
  const auto x = random_tensor({4, 6, 5}, rng);
  const auto spec = ConvSpec::same(4, 4, 1);
  Tensor w(spec.weight_shape());
  for (std::size_t c = 0; c < 4; ++c) w[c * 4 + c] = 1.0;
  EXPECT_TRUE(bit_equal(conv2d(x, spec, w, Tensor(spec.bias_shape())), x));
}

TEST(Conv2d, AllOnesThreeByThreeCountsInBoundsTaps) {
  const auto spec = ConvSpec::same(1, 1, 3);
  const auto y = conv2d(Tensor({1, 3, 3}, 1.0), spec, Tensor(spec.weight_shape(), 1.0), Tensor({1}));
  const double expected[] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], expected[i]) << "at " << i;
}

TEST(Conv2d, IsCrossCorrelationNotConvolution) {
  // A kernel with a single tap to the right of centre reads the right neighbour.
  const auto spec = ConvSpec::same(1, 1, 3);
  Tensor w(spec.weight_shape());
  w[1 * 3 + 2] = 1.0;
  const auto y = conv2d(Tensor({1, 1, 3}, {1.0, 2.0, 3.0}), spec, w, Tensor({1}));
  EXPECT_EQ(y[0], 2.0);
  EXPECT_EQ(y[1], 3.0);
  EXPECT_EQ(y[2], 0.0);
}

TEST(Conv2d, SamePaddingPreservesSpatialSize) {
  Rng rng(2);
  for (std::size_t k : {1u, 3u, 5u})
    for (std::size_t d : {1u, 2u, 3u}) {
      const auto spec = ConvSpec::same(2, 3, k, d);
      const auto x = random_tensor({2, 7, 9}, rng);
      const auto y = conv2d(x, spec, random_tensor(spec.weight_shape(), rng), random_tensor(spec.bias_shape(), rng));
      EXPECT_EQ(y.height(), 7u) << "k=" << k << " d=" << d;
      EXPECT_EQ(y.width(), 9u) << "k=" << k << " d=" << d;
    }
}

TEST(Conv2d, DistributesOverInputAddition) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = ConvSpec::same(3, 4, 1 + 2 * rng.below(3), 1 + rng.below(3));
    const auto x = random_tensor({3, 8, 8}, rng), y = random_tensor({3, 8, 8}, rng);
    const auto w = random_tensor(spec.weight_shape(), rng);
    const Tensor b(spec.bias_shape());
    Tensor xy = x;
    for (std::size_t i = 0; i < xy.size(); ++i) xy[i] += y[i];
    const auto lhs = conv2d(xy, spec, w, b);
    const auto rx = conv2d(x, spec, w, b), ry = conv2d(y, spec, w, b);
    for (std::size_t i = 0; i < lhs.size(); ++i) ASSERT_NEAR(lhs[i], rx[i] + ry[i], 1e-12);
  }
}

TEST(Conv2d, MatchesTapByTapReference) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    ConvSpec spec = ConvSpec::same(1 + rng.below(6), 1 + rng.below(9), 1 + 2 * rng.below(3), 1 + rng.below(3));
    if (trial % 4 == 0) spec.stride = 2;
    const std::size_t H = 4 + rng.below(13), W = 4 + rng.below(13);
    const auto x = random_tensor({spec.in_channels, H, W}, rng);
    const auto w = random_tensor(spec.weight_shape(), rng), b = random_tensor(spec.bias_shape(), rng);
    const auto fast = conv2d(x, spec, w, b), ref = conv2d_direct(x, spec, w, b);
    ASSERT_EQ(fast.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(fast, ref), 1e-12);

    const auto g = random_tensor(fast.shape(), rng);
    Tensor gx1(x.shape()), gw1(w.shape()), gb1(b.shape()), gx2(x.shape()), gw2(w.shape()), gb2(b.shape());
    conv2d_backward(x, spec, w, g, &gx1, &gw1, &gb1);
    conv2d_backward_direct(x, spec, w, g, &gx2, &gw2, &gb2);
    EXPECT_LT(max_abs_diff(gx1, gx2), 1e-11);
    EXPECT_LT(max_abs_diff(gw1, gw2), 1e-11);
    EXPECT_LT(max_abs_diff(gb1, gb2), 1e-11);
  }
}

TEST(Conv2d, StridedStageHalvesTheExtent) {
  const ConvSpec spec{3, 4, 3, 1, 1, 2};
  Rng rng(5);
  const auto y = conv2d(random_tensor({3, 32, 32}, rng), spec, random_tensor(spec.weight_shape(), rng), Tensor({4}));
  EXPECT_EQ(y.shape(), (Shape{4, 16, 16}));
}

TEST(Conv2d, RejectsMismatchedOperandsNamingTheDimension) {
  const auto spec = ConvSpec::same(3, 2, 3);
  const Tensor w(spec.weight_shape()), b(spec.bias_shape());
  try {
    conv2d(Tensor({4, 5, 5}), spec, w, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv2d(Tensor({3, 5, 5}), spec, Tensor({2, 3, 1, 1}), b), ShapeError);
  EXPECT_THROW(conv2d(Tensor({3, 5, 5}), spec, w, Tensor({3})), ShapeError);
  ConvSpec even = spec;
  even.kernel = 2;
  EXPECT_THROW(even.validate(), ShapeError);
}
