#include <gtest/gtest.h>

#include "support/test_util.hpp"

using namespace dynapyr;

// Full default configuration: detection loss must drop over training for
// every seed.
TEST(TrainingProgress, DetectionLossDecreasesOnDefaultConfig) {
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig cfg;
    cfg.seed = seed;
    const auto result = train(cfg);
    ASSERT_EQ(result.history.size(), cfg.epochs);
    EXPECT_LT(result.history.back().loss_det, result.history.front().loss_det) << "seed " << seed;
  }
}
