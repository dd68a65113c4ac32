#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmfusion/aggregation.hpp"
#include "mmfusion/error.hpp"
#include "mmfusion/gradcheck.hpp"

using namespace mmfusion;

namespace {

Matrix permute_rows(const Matrix& m, Rng& rng) {
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    std::copy(m.row(order[r]).begin(), m.row(order[r]).end(), out.row(r).begin());
  return out;
}

DbofParams neutral_dbof(Matrix W) {
  const std::size_t P = W.cols();
  DbofParams p;
  p.W_proj = std::move(W);
  p.b_proj = Matrix(1, P);
  p.bn_gamma = Matrix(1, P, 1.0);
  p.bn_beta = Matrix(1, P);
  p.bn_running_mean = Matrix(1, P);
  p.bn_running_var = Matrix(1, P, 1.0);
  p.bn_eps = 0.0;
  return p;
}

// Classical VLAD: each descriptor contributes its residual to its nearest
// assigned cluster only.
Matrix brute_force_vlad(const Matrix& frames, const std::vector<std::size_t>& owner,
                        const Matrix& centers) {
  Matrix out(1, centers.rows() * centers.cols());
  for (std::size_t i = 0; i < frames.rows(); ++i)
    for (std::size_t d = 0; d < frames.cols(); ++d)
      out(0, owner[i] * frames.cols() + d) += frames(i, d) - centers(owner[i], d);
  return out;
}

}  // namespace

TEST(Avgpool, HandMeanAndSingleFrame) {
  EXPECT_EQ(avgpool(Matrix{{1, 3}, {3, 5}}), (Matrix{{2, 4}}));
  const Matrix one{{0.5, -1.5, 2.0}};
  EXPECT_EQ(avgpool(one), one);
  EXPECT_THROW(avgpool(Matrix(0, 3)), ShapeError);
}

TEST(Avgpool, ConstantFramesExact) {
  const Matrix frames(7, 3, 0.1);
  EXPECT_EQ(avgpool(frames), Matrix(1, 3, avgpool(frames)(0, 0)));
  EXPECT_NEAR(avgpool(frames)(0, 0), 0.1, 1e-16);
  const Matrix ints(5, 2, 3.0);
  EXPECT_EQ(avgpool(ints), Matrix(1, 2, 3.0));
}

TEST(Avgpool, BackwardAndGradcheck) {
  EXPECT_EQ(avgpool_backward(Matrix{{2, 4}}, 2), (Matrix{{1, 2}, {1, 2}}));
  GradcheckOptions o;
  o.tolerance = 1e-6;
  EXPECT_TRUE(run_gradcheck("avgpool", o).passed);
}

TEST(Dbof, PureMaxPoolingWhenNeutral) {
  const auto p = neutral_dbof(Matrix::identity(2));
  EXPECT_EQ(dbof_forward(Matrix{{1, 5}, {4, 2}}, p, false), (Matrix{{4, 5}}));
}

TEST(Dbof, SingleFrameNeutralStats) {
  Rng rng(1);
  auto p = neutral_dbof(normal_matrix(3, 5, 1.0, rng));
  const Matrix frame = normal_matrix(1, 3, 1.0, rng);
  EXPECT_LT(max_abs_diff(dbof_forward(frame, p, false), relu(matmul(frame, p.W_proj))), 1e-15);
}

TEST(Dbof, RejectsEmptyAndMismatched) {
  Rng rng(2);
  auto p = DbofParams::init(3, 5, rng);
  EXPECT_THROW(dbof_forward(Matrix(0, 3), p, false), ShapeError);
  EXPECT_THROW(dbof_forward(Matrix(2, 4), p, false), ShapeError);
}

TEST(Dbof, NegativeRunningVarianceIsClamped) {
  Rng rng(3);
  auto p = DbofParams::init(2, 4, rng);
  p.bn_running_var = Matrix(1, 4, -0.5);
  EXPECT_TRUE(all_finite(dbof_forward(normal_matrix(3, 2, 1.0, rng), p, false)));
}

TEST(Dbof, TiesRouteGradientToFirstFrame) {
  const auto p = neutral_dbof(Matrix{{1, 0, 0}});  // 1 -> 3
  DbofCache cache;
  dbof_forward(Matrix{{2}, {2}}, p, false, &cache);
  const auto g = dbof_backward(Matrix{{1, 1, 1}}, cache, p);
  EXPECT_EQ(cache.argmax[0], 0u);
  EXPECT_DOUBLE_EQ(g.frames(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.frames(1, 0), 0.0);
}

TEST(Dbof, TrainModeUsesBatchStatsAndUpdatesRunning) {
  Rng rng(4);
  auto p = DbofParams::init(3, 6, rng);
  DbofCache cache;
  const Matrix out = dbof_forward(normal_matrix(5, 3, 1.0, rng), p, true, &cache);
  EXPECT_TRUE(all_finite(out));
  ASSERT_FALSE(cache.batch_mean.empty());
  const Matrix before = p.bn_running_mean;
  dbof_update_running(p, cache.batch_mean, cache.batch_var);
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_NEAR(p.bn_running_mean(0, j), 0.99 * before(0, j) + 0.01 * cache.batch_mean(0, j), 1e-15);
    EXPECT_GE(p.bn_running_var(0, j), 0.0);
  }
}

TEST(Dbof, Gradchecks) {
  GradcheckOptions o;
  o.seed = 303;
  EXPECT_TRUE(run_gradcheck("dbof", o).passed);
  EXPECT_TRUE(run_gradcheck("dbof_train_bn", o).passed);
}

TEST(NetVlad, AssignmentEdgeCases) {
  Rng rng(5);
  const Matrix frames = normal_matrix(6, 4, 1.0, rng);
  const auto one = NetVladParams::init(4, 1, rng);
  const Matrix single = netvlad_assign(frames, one);
  for (double v : single.values()) EXPECT_EQ(v, 1.0);

  auto flat = NetVladParams::init(4, 4, rng);
  flat.W_assign.fill(0.0);
  const Matrix uniform = netvlad_assign(frames, flat);
  for (double v : uniform.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(NetVlad, AssignmentMatchesDirectSoftmax) {
  Rng rng(6);
  auto p = NetVladParams::init(3, 3, rng);
  p.b_assign = normal_matrix(1, 3, 1.0, rng);
  const Matrix frames = normal_matrix(4, 3, 1.0, rng);
  const Matrix alpha = netvlad_assign(frames, p);
  for (std::size_t i = 0; i < 4; ++i) {
    double z = 0.0;
    std::vector<double> e(3);
    for (std::size_t k = 0; k < 3; ++k) {
      double logit = p.b_assign(0, k);
      for (std::size_t d = 0; d < 3; ++d) logit += frames(i, d) * p.W_assign(d, k);
      e[k] = std::exp(logit);
      z += e[k];
    }
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(alpha(i, k), e[k] / z, 1e-12);
      total += alpha(i, k);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(NetVlad, SingleClusterClosedForm) {
  Rng rng(7);
  const auto p = NetVladParams::init(5, 1, rng);
  const Matrix frames = normal_matrix(4, 5, 1.0, rng);
  const Matrix expected = scale(subtract(avgpool(frames), row_slice(p.centers, 0, 1)), 4.0);
  EXPECT_LT(max_abs_diff(netvlad_forward(frames, p), expected), 1e-12);
}

TEST(NetVlad, ZeroResidualBlock) {
  NetVladParams p;
  p.centers = Matrix{{1, 2}, {-3, 0.5}};
  p.W_assign = Matrix{{0, 0}, {0, 0}};
  p.b_assign = Matrix{{50, 0}};  // one-hot-dominant on cluster 0
  const Matrix frames{{1, 2}, {1, 2}, {1, 2}};
  const Matrix out = netvlad_forward(frames, p);
  EXPECT_NEAR(out(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(out(0, 1), 0.0, 1e-12);
}

TEST(NetVlad, HardAssignmentMatchesClassicalVlad) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t N = 1 + rng.below(8), D = 1 + rng.below(6), K = 1 + rng.below(4);
    const Matrix frames = normal_matrix(N, D, 1.0, rng);
    const Matrix centers = normal_matrix(K, D, 1.0, rng);
    std::vector<std::size_t> owner(N);
    Matrix one_hot(N, K);
    for (std::size_t i = 0; i < N; ++i) {
      owner[i] = rng.below(static_cast<std::uint32_t>(K));
      one_hot(i, owner[i]) = 1.0;
    }
    const Matrix got = vlad_from_assignments(frames, one_hot, centers);
    EXPECT_LT(max_abs_diff(got, brute_force_vlad(frames, owner, centers)), 1e-12);
  }
}

TEST(NetVlad, Gradcheck) {
  GradcheckOptions o;
  o.seed = 404;
  EXPECT_TRUE(run_gradcheck("netvlad", o).passed);
}

TEST(Aggregators, FramePermutationInvariance) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix frames = normal_matrix(6, 4, 1.0, rng);
    const Matrix shuffled = permute_rows(frames, rng);
    EXPECT_LT(max_abs_diff(avgpool(frames), avgpool(shuffled)), 1e-10);

    auto vlad = NetVladParams::init(4, 3, rng);
    EXPECT_LT(max_abs_diff(netvlad_forward(frames, vlad), netvlad_forward(shuffled, vlad)), 1e-10);

    auto dbof = DbofParams::init(4, 9, rng);
    dbof.bn_running_mean = normal_matrix(1, 9, 0.3, rng);
    EXPECT_LT(max_abs_diff(dbof_forward(frames, dbof, false), dbof_forward(shuffled, dbof, false)),
              1e-10);
  }
}

TEST(SampleFrames, IdentityWhenExact) {
  Rng rng(10);
  const Matrix frames = normal_matrix(5, 3, 1.0, rng);
  EXPECT_EQ(sample_frames(frames, 5, rng), frames);
}

TEST(SampleFrames, RepeatsSingleFrame) {
  Rng rng(11);
  const Matrix frame{{1, 2, 3}};
  EXPECT_EQ(sample_frames(frame, 3, rng), (Matrix{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}));
}

TEST(SampleFrames, SubsetOrderedAndMembership) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(12), target = 1 + rng.below(12);
    const auto idx = sample_frame_indices(n, target, rng);
    ASSERT_EQ(idx.size(), target);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    for (auto i : idx) EXPECT_LT(i, n);
    if (n >= target) EXPECT_TRUE(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  }
  // Rows of a sample are rows of the source.
  Matrix frames(6, 1);
  for (std::size_t i = 0; i < 6; ++i) frames(i, 0) = static_cast<double>(i * i);
  const Matrix s = sample_frames(frames, 9, rng);
  for (double v : s.values()) {
    const auto r = static_cast<std::size_t>(std::lround(std::sqrt(v)));
    EXPECT_EQ(static_cast<double>(r * r), v);
  }
}

TEST(SampleFrames, DeterministicPerSeed) {
  Rng a(13), b(13);
  EXPECT_EQ(sample_frame_indices(300, 40, a), sample_frame_indices(300, 40, b));
  EXPECT_THROW(sample_frame_indices(0, 3, a), ShapeError);
}
