#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support/test_util.hpp"

using namespace dynapyr;

TEST(Gumbel, UniformAtInverseEIsZero) { EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15); }

TEST(Gumbel, GuardKeepsEndpointsFinite) {
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  Rng rng(2024);
  double acc = 0.0;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) acc += gumbel_sample(rng);
  EXPECT_NEAR(acc / n, std::numbers::egamma, 0.01);
}

TEST(Gumbel, EqualSeedsGiveEqualStreams) {
  Rng a(9), b(9);
  EXPECT_EQ(gumbel_noise(a, 100), gumbel_noise(b, 100));
}

TEST(GumbelSoftmax, SymmetricLogitsSplitEvenly) {
  const double z[] = {0.0, 0.0};
  const auto s = gumbel_softmax(z, z, 1.0, false);
  EXPECT_EQ(s[0], 0.5);
  EXPECT_EQ(s[1], 0.5);
}

TEST(GumbelSoftmax, TwoVersusZero) {
  const double logits[] = {2.0, 0.0}, noise[] = {0.0, 0.0};
  const auto s = gumbel_softmax(logits, noise, 1.0, false);
  const double e2 = std::exp(2.0);
  EXPECT_NEAR(s[0], e2 / (e2 + 1.0), 1e-15);
  EXPECT_NEAR(s[1], 1.0 / (e2 + 1.0), 1e-15);
  EXPECT_NEAR(s[0], 0.8808, 5e-5);
  EXPECT_NEAR(s[1], 0.1192, 5e-5);
}

TEST(GumbelSoftmax, HardIsOneHotAtPerturbedArgmax) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + rng.below(4);
    std::vector<double> logits(n), noise = gumbel_noise(rng, n);
    for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
    const auto h = gumbel_softmax(logits, noise, rng.uniform(0.1, 3.0), true);
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (logits[j] + noise[j] > logits[best] + noise[best]) best = j;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_TRUE(h[j] == 0.0 || h[j] == 1.0);
      total += h[j];
    }
    EXPECT_EQ(total, 1.0);
    EXPECT_EQ(h[best], 1.0);
  }
}

TEST(GumbelSoftmax, SoftOutputIsOnTheOpenSimplex) {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> logits(2 + rng.below(5));
    for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
    const auto noise = gumbel_noise(rng, logits.size());
    const auto s = gumbel_softmax(logits, noise, rng.uniform(1.0, 5.0), false);
    double total = 0.0;
    for (double v : s) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(GumbelSoftmax, LowTemperatureConcentratesOnTheWinner) {
  Rng rng(6);
  int checked = 0;
  while (checked < 1000) {
    const double logits[] = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const auto noise = gumbel_noise(rng, 2);
    if (std::abs((logits[0] + noise[0]) - (logits[1] + noise[1])) < 0.1) continue;
    const double tau = rng.uniform(1e-4, 0.01);
    const auto s = gumbel_softmax(logits, noise, tau, false);
    EXPECT_GT(std::max(s[0], s[1]), 0.999);
    ++checked;
  }
}

TEST(GumbelSoftmax, RejectsNonPositiveTemperature) {
  const double z[] = {0.0, 1.0};
  EXPECT_THROW(gumbel_softmax(z, z, 0.0, false), std::invalid_argument);
  EXPECT_THROW(gumbel_softmax(z, z, -1.0, true), std::invalid_argument);
}

TEST(GumbelSoftmax, StraightThroughUsesSoftGradient) {
  const double noise[] = {0.3, -0.2};
  Var hard_logits = parameter(Tensor::vector({0.4, 0.1}));
  Var soft_logits = parameter(Tensor::vector({0.4, 0.1}));
  auto hard = gumbel_softmax(hard_logits, noise, 1.0, true);
  EXPECT_EQ(hard.value()[0], 1.0);
  backward(select(hard, 0));
  backward(select(gumbel_softmax(soft_logits, noise, 1.0, false), 0));
  EXPECT_EQ(hard_logits.grad()[0], soft_logits.grad()[0]);
  EXPECT_EQ(hard_logits.grad()[1], soft_logits.grad()[1]);
  EXPECT_NE(hard_logits.grad()[0], 0.0);
}
