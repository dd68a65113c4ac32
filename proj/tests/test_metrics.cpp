#include <gtest/gtest.h>

#include <cmath>

#include "mmfusion/error.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/rng.hpp"

using namespace mmfusion;

using Labels = std::vector<std::vector<std::uint32_t>>;

TEST(Gap, PerfectSinglePositive) {
  EXPECT_DOUBLE_EQ(gap_at_k(Matrix{{0.9, 0.1}}, {{0}}), 1.0);
}

TEST(Gap, PositiveRankedSecond) {
  EXPECT_DOUBLE_EQ(gap_at_k(Matrix{{0.9, 0.8}}, {{1}}), 0.5);
}

TEST(Gap, RecallCountsPositivesOutsideTopK) {
  // Two positives, k = 1: only the top one can be retrieved.
  EXPECT_DOUBLE_EQ(gap_at_k(Matrix{{0.9, 0.8, 0.1}}, {{0, 1}}, 1), 0.5);
}

TEST(Gap, TiesBrokenByVideoThenClass) {
  // Same confidence everywhere: order is (v0,c0), (v0,c1), (v1,c0), (v1,c1).
  const Matrix p{{0.5, 0.5}, {0.5, 0.5}};
  EXPECT_DOUBLE_EQ(gap_at_k(p, {{1}, {0}}), (1.0 / 2.0 + 2.0 / 3.0) / 2.0);
}

TEST(Gap, ErrorsOnNoPositivesOrBadShapes) {
  EXPECT_THROW(gap_at_k(Matrix{{0.3}}, {{}}), NumericError);
  EXPECT_THROW(gap_at_k(Matrix{{0.3}}, {{0}, {0}}), ShapeError);
  EXPECT_THROW(gap_at_k(Matrix{{0.3}}, {{0}}, 0), ConfigError);
}

TEST(Gap, StrictlyIncreasingTransformInvariance) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix p(4, 5);
    Labels labels(4);
    for (double& v : p.values()) v = rng.uniform();
    for (std::uint32_t c = 0; c < 5; ++c)
      for (auto& l : labels)
        if (rng.uniform() < 0.4) l.push_back(c);
    labels[0] = {2};
    Matrix q = p;
    for (double& v : q.values()) v = std::exp(3.0 * v) / 25.0 + 0.001;
    EXPECT_DOUBLE_EQ(gap_at_k(p, labels, 3), gap_at_k(q, labels, 3));
  }
}

TEST(Gap, SwapTowardsCorrectNeverHurts) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix p(1, 6);
    for (double& v : p.values()) v = rng.uniform();
    const Labels labels{{1, 4}};
    // Give the correct class 1 the higher of its score and an incorrect one.
    const std::size_t wrong = rng.uniform() < 0.5 ? 0 : 3;
    const double before = gap_at_k(p, labels);
    if (p(0, wrong) > p(0, 1)) std::swap(p(0, wrong), p(0, 1));
    EXPECT_GE(gap_at_k(p, labels), before);
  }
}

TEST(Gap, WithinUnitInterval) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix p(3, 4);
    for (double& v : p.values()) v = rng.uniform();
    Labels labels{{0}, {1, 3}, {}};
    const double g = gap_at_k(p, labels, 1 + rng.below(4));
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(Gap, LeakedLabelsScorePerfectly) {
  Rng rng(4);
  Matrix p(30, 8);
  Labels labels(30);
  for (std::size_t v = 0; v < 30; ++v)
    for (std::uint32_t c = 0; c < 8; ++c)
      if (rng.uniform() < 0.3) {
        labels[v].push_back(c);
        p(v, c) = 1.0;
      }
  labels[0] = {5};
  for (std::uint32_t c = 0; c < 8; ++c) p(0, c) = c == 5 ? 1.0 : 0.0;
  EXPECT_DOUBLE_EQ(gap_at_k(p, labels), 1.0);
}

TEST(Gap, RandomScoresApproachPrevalence) {
  Rng rng(5);
  Matrix p(400, 10);
  Labels labels(400);
  std::size_t positives = 0;
  for (std::size_t v = 0; v < 400; ++v)
    for (std::uint32_t c = 0; c < 10; ++c) {
      p(v, c) = rng.uniform();
      if (rng.uniform() < 0.3) {
        labels[v].push_back(c);
        ++positives;
      }
    }
  const double prevalence = static_cast<double>(positives) / 4000.0;
  EXPECT_NEAR(gap_at_k(p, labels), prevalence, 0.03);
}
