#include <gtest/gtest.h>

#include "test_util.hpp"

namespace consac {
namespace {

const double kSigma5 = 1.0 / (1.0 + std::exp(-5.0));

TEST(Scoring, SoftInlierAnchors) {
  const ScoringParams p(1e-3);
  EXPECT_EQ(p.beta(), 5.0 / 1e-3);
  EXPECT_EQ(soft_inlier(1e-3, p), 0.5);
  EXPECT_NEAR(soft_inlier(0.0, p), kSigma5, 1e-12);
  EXPECT_NEAR(soft_inlier(0.0, p), 0.993307, 1e-6);
  EXPECT_NEAR(soft_inlier(2e-3, p), 1.0 - kSigma5, 1e-12);
  EXPECT_NEAR(soft_inlier(2e-3, p), 0.006693, 1e-6);
  EXPECT_THROW(ScoringParams(0.0), std::invalid_argument);
}

TEST(Scoring, SoftInlierStrictlyDecreasing) {
  const ScoringParams p(0.02);
  double prev = soft_inlier(0.0, p);
  for (int i = 1; i <= 1000; ++i) {
    const double v = soft_inlier(i * 1e-4, p);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Scoring, MultiInstanceScoreTermwise) {
  const ScoringParams p(1e-3);
  const auto h = ModelInstance::line({0, 1, 0});
  const std::vector<Observation> y{{0.5, 0.0}, {0.5, 1e-3}, {0.5, 10.0}};
  EXPECT_EQ(multi_instance_score({}, y, p), 0.0);
  const std::vector<ModelInstance> one{h}, two{h, h};
  const double expected = kSigma5 + 0.5 + soft_inlier(10.0, p);
  EXPECT_NEAR(multi_instance_score(one, y, p), expected, 1e-12);
  EXPECT_NEAR(multi_instance_score(one, y, p), 1.493307, 1e-6);
  EXPECT_EQ(multi_instance_score(two, y, p), multi_instance_score(one, y, p));
}

TEST(Scoring, SingleInstanceScoreIsUnion) {
  Rng rng(21);
  const ScoringParams p(0.05);
  for (int t = 0; t < 200; ++t) {
    std::vector<Observation> y;
    for (int i = 0; i < 20; ++i) y.emplace_back(rng.uniform(), rng.uniform());
    std::vector<ModelInstance> sel;
    const int n = static_cast<int>(rng.below(4));
    for (int k = 0; k < n; ++k) sel.push_back(testing::random_line(rng));
    const auto h = testing::random_line(rng);
    // brute force union
    double oracle = 0.0;
    for (const auto& o : y) {
      double best = soft_inlier(line_residual(o, h), p);
      for (const auto& s : sel) best = std::max(best, soft_inlier(line_residual(o, s), p));
      oracle += best;
    }
    EXPECT_NEAR(single_instance_score(h, y, std::span<const ModelInstance>(sel), p), oracle, 1e-12);
    EXPECT_NEAR(single_instance_score(h, y, compute_state(sel, y, p), p), oracle, 1e-12);
    if (sel.empty()) {
      const std::vector<ModelInstance> just{h};
      EXPECT_NEAR(single_instance_score(h, y, std::span<const ModelInstance>(sel), p), multi_instance_score(just, y, p),
                  1e-12);
    } else {
      EXPECT_NEAR(single_instance_score(sel[0], y, std::span<const ModelInstance>(sel), p),
                  multi_instance_score(sel, y, p), 1e-12);
    }
    // adding a model never lowers the joint count
    std::vector<ModelInstance> more = sel;
    more.push_back(h);
    EXPECT_GE(multi_instance_score(more, y, p), multi_instance_score(sel, y, p));
  }
}

TEST(Scoring, StateMatchesMinimumResidual) {
  Rng rng(22);
  const ScoringParams p(0.05);
  std::vector<Observation> y;
  for (int i = 0; i < 50; ++i) y.emplace_back(rng.uniform(), rng.uniform());
  EXPECT_EQ(compute_state({}, y, p), StateVector(y.size(), 0.0));
  for (int n = 1; n <= 4; ++n) {
    std::vector<ModelInstance> sel;
    for (int k = 0; k < n; ++k) sel.push_back(testing::random_line(rng));
    const auto s = compute_state(sel, y, p);
    StateVector inc(y.size(), 0.0);
    for (const auto& h : sel) update_state(inc, h, y, p);
    for (std::size_t i = 0; i < y.size(); ++i) {
      double rmin = std::numeric_limits<double>::infinity();
      for (const auto& h : sel) rmin = std::min(rmin, line_residual(y[i], h));
      EXPECT_NEAR(s[i], soft_inlier(rmin, p), 1e-15);
      EXPECT_EQ(s[i], inc[i]);
      EXPECT_GE(s[i], 0.0);
      EXPECT_LE(s[i], 1.0);
    }
  }
}

TEST(Scoring, CumulativeInlierRatio) {
  const ScoringParams p(1e-3);
  std::vector<Observation> on, off;
  for (int i = 0; i < 10; ++i) {
    on.emplace_back(0.1 * i, 0.0);
    off.emplace_back(0.1 * i, 5.0);
  }
  const std::vector<ModelInstance> h{ModelInstance::line({0, 1, 0})};
  EXPECT_NEAR(cumulative_inlier_ratio(h, on, p), kSigma5, 1e-12);
  EXPECT_NEAR(cumulative_inlier_ratio(h, off, p), 0.0, 1e-12);
  EXPECT_THROW(cumulative_inlier_ratio({}, on, p), EmptyPrefix);
}

TEST(Scoring, CumulativeInlierRatioMonotoneInPrefix) {
  Rng rng(23);
  const ScoringParams p(0.05);
  for (int t = 0; t < 10000; ++t) {
    std::vector<Observation> y;
    for (int i = 0; i < 8; ++i) y.emplace_back(rng.uniform(), rng.uniform());
    std::vector<ModelInstance> prefix{testing::random_line(rng)};
    double prev = cumulative_inlier_ratio(prefix, y, p);
    for (int m = 0; m < 3; ++m) {
      prefix.push_back(testing::random_line(rng));
      const double v = cumulative_inlier_ratio(prefix, y, p);
      ASSERT_GE(v, prev);
      prev = v;
    }
  }
}

}  // namespace
}  // namespace consac
