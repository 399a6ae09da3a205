#include <gtest/gtest.h>

#include "support/test_util.hpp"

using namespace dynapyr;
using dynapyr::testing::random_tensor;

TEST(Tensor, ExtentsMatchStoredValues) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0, 4}), ShapeError);
}

TEST(Tensor, ShapeErrorNamesTheShapes) {
  try {
    Tensor({3, 2}, std::vector<double>(7));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[3x2]"), std::string::npos) << e.what();
  }
}

TEST(Tensor, GradientSlotHasValueShape) {
  Var v = parameter(Tensor({2, 5, 5}));
  backward(sum(v));
  EXPECT_EQ(v.grad().shape(), v.shape());
}

TEST(Tensor, BitEqualDistinguishesSignedZero) {
  Tensor a = Tensor::vector({0.0, 1.0});
  Tensor b = Tensor::vector({-0.0, 1.0});
  EXPECT_FALSE(bit_equal(a, b));
  EXPECT_TRUE(bit_equal(a, a));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, ForkedStreamsAreDeterministicAndDistinct) {
  const Rng root(5);
  Rng a = root.fork(1), b = root.fork(1), c = root.fork(2);
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(root.fork(1).next_u64(), c.next_u64());
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
    const auto k = r.between(-2, 2);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 2);
  }
}

TEST(Elementwise, ReluAndItsSubgradientAtZero) {
  Var x = parameter(Tensor::vector({-1.0, 0.0, 2.0}));
  Var y = relu(x);
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_EQ(y.value()[1], 0.0);
  EXPECT_EQ(y.value()[2], 2.0);
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, AddAndScale) {
  Var a = constant(Tensor::vector({1.0, 2.0}));
  Var b = constant(Tensor::vector({0.5, -4.0}));
  EXPECT_EQ(add(a, b).value()[1], -2.0);
  EXPECT_EQ(scale(a, 3.0).value()[1], 6.0);
  EXPECT_THROW(add(a, constant(Tensor::vector({1.0, 2.0, 3.0}))), ShapeError);
}

TEST(Affine, MatrixVectorPlusBias) {
  Var x = constant(Tensor::vector({1.0, 2.0, 3.0}));
  Var W = constant(Tensor({2, 3}, {1, 0, -1, 2, 1, 0}));
  Var b = constant(Tensor::vector({0.5, -1.0}));
  const auto y = affine(x, W, b).value();
  EXPECT_EQ(y[0], 1.0 - 3.0 + 0.5);
  EXPECT_EQ(y[1], 2.0 + 2.0 - 1.0);
  EXPECT_THROW(affine(constant(Tensor::vector({1.0, 2.0})), W, b), ShapeError);
}

TEST(GlobalAvgPool, ConstantMapGivesTheConstant) {
  Tensor t({3, 5, 7}, 2.25);
  const auto p = global_avg_pool(constant(t)).value();
  ASSERT_EQ(p.shape(), Shape{3});
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p[c], 2.25);
}

TEST(GlobalAvgPool, MeanOfOneChannel) {
  const auto p = global_avg_pool(constant(Tensor({1, 2, 2}, {1, 2, 3, 4}))).value();
  EXPECT_EQ(p[0], 2.5);
}

TEST(Upsample, ReplicatesEachCellIntoTwoByTwo) {
  const auto one = upsample_nearest2x(Tensor({1, 1, 1}, {5.0}));
  ASSERT_EQ(one.shape(), (Shape{1, 2, 2}));
  for (double v : one.values()) EXPECT_EQ(v, 5.0);

  Rng rng(1);
  const auto x = random_tensor({3, 4, 5}, rng);
  const auto y = upsample_nearest2x(x);
  ASSERT_EQ(y.shape(), (Shape{3, 8, 10}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(y.at(c, i, j), x.at(c, i / 2, j / 2));
}

TEST(Upsample, BackwardSumsTheFourReplicas) {
  Var x = parameter(Tensor({2, 3, 3}));
  backward(sum(upsample_nearest2x(x)));
  for (double g : x.grad().values()) EXPECT_EQ(g, 4.0);
}
