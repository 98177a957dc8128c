#include <gtest/gtest.h>

#include "test_util.hpp"

namespace consac {
namespace {

TEST(Eval, HungarianAnchors) {
  Eigen::MatrixXd c(2, 2);
  c << 1, 2, 2, 1;
  const auto a = hungarian_assign(c);
  EXPECT_EQ(a.pairs, (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(a.cost, 2.0);
  EXPECT_EQ(hungarian_assign(Eigen::MatrixXd::Constant(1, 1, 7.0)).cost, 7.0);
  EXPECT_THROW(hungarian_assign(Eigen::MatrixXd(0, 3)), EmptyMatrix);
}

TEST(Eval, HungarianMatchesEnumerationRectangular) {
  Rng rng(41);
  for (int t = 0; t < 300; ++t) {
    const int r = 1 + static_cast<int>(rng.below(5)), c = 1 + static_cast<int>(rng.below(5));
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(0, 10);
    const auto a = hungarian_assign(m);
    EXPECT_EQ(a.pairs.size(), static_cast<std::size_t>(std::min(r, c)));
    EXPECT_NEAR(a.cost, testing::brute_force_assignment(m), 1e-9);
  }
}

TEST(Eval, VpAngleError) {
  const Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  const Eigen::Vector3d v(1, 0, 1), w(0, 1, 1);
  EXPECT_NEAR(vp_angle_error(v, v, k), 0.0, 1e-6);
  EXPECT_NEAR(vp_angle_error(v, w, k), 60.0, 1e-9);
  EXPECT_NEAR(vp_angle_error(v, -v, k), 0.0, 1e-6);
  EXPECT_THROW(vp_angle_error(v, w, Eigen::Matrix3d::Zero()), SingularIntrinsics);

  Rng rng(42);
  Eigen::Matrix3d kk;
  kk << 500, 0, 320, 0, 500, 240, 0, 0, 1;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Vector3d a = Eigen::Vector3d::Random(), b = Eigen::Vector3d::Random();
    const double e = vp_angle_error(a, b, kk);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 90.0);
    EXPECT_NEAR(e, vp_angle_error(b, a, kk), 1e-9);
    EXPECT_NEAR(e, vp_angle_error(-2.5 * a, 0.1 * b, kk), 1e-9);
    (void)rng;
  }
}

TEST(Eval, AucRecall) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_NEAR(auc_recall(std::vector<double>{0, 0, 0}), 1.0, 1e-15);
  EXPECT_NEAR(auc_recall(std::vector<double>{11, 20, inf}), 0.0, 1e-15);
  EXPECT_NEAR(auc_recall(std::vector<double>{0, 0, inf, inf}), 0.5, 1e-15);
  // single error at 5 degrees: ramp 0 -> 1 over [0, 5] then flat
  EXPECT_NEAR(auc_recall(std::vector<double>{5.0}), (2.5 + 5.0) / 10.0, 1e-15);
}

TEST(Eval, AucMonotoneUnderErrorReduction) {
  Rng rng(43);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> e(10);
    for (double& x : e) x = rng.uniform(0, 15);
    const double base = auc_recall(e);
    for (double& x : e) x *= rng.uniform();
    EXPECT_GE(auc_recall(e) + 1e-12, base);
    EXPECT_LE(auc_recall(e), 1.0);
  }
}

TEST(Eval, MisclassificationError) {
  const std::vector<int> truth{0, 0, 1, 1, -1, 2, 2};
  EXPECT_EQ(misclassification_error(truth, truth), 0.0);
  // relabeled predictions
  const std::vector<int> relabeled{5, 5, 3, 3, -1, 0, 0};
  EXPECT_EQ(misclassification_error(relabeled, truth), 0.0);
  const std::vector<int> gt_all_in{0, 0, 1, 1}, pred_none{-1, -1, -1, -1};
  EXPECT_EQ(misclassification_error(pred_none, gt_all_in), 100.0);
  const std::vector<int> one_wrong{0, 1, 1, 1, -1, 2, 2};
  EXPECT_NEAR(misclassification_error(one_wrong, truth), 100.0 / 7.0, 1e-12);
}

TEST(Eval, MisclassificationInvariantToRelabeling) {
  Rng rng(44);
  for (int t = 0; t < 300; ++t) {
    std::vector<int> p(30), g(30);
    for (auto& v : p) v = static_cast<int>(rng.below(5)) - 1;
    for (auto& v : g) v = static_cast<int>(rng.below(4)) - 1;
    const double base = misclassification_error(p, g);
    std::vector<int> perm{0, 1, 2, 3};
    for (std::size_t i = 3; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    auto relabel = [&](std::vector<int> v) {
      for (auto& x : v)
        if (x >= 0) x = perm[static_cast<std::size_t>(x)] + 10;
      return v;
    };
    EXPECT_NEAR(misclassification_error(relabel(p), g), base, 1e-12);
    EXPECT_NEAR(misclassification_error(p, relabel(g)), base, 1e-12);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 100.0);
  }
}

TEST(Eval, AssignmentAndModelBasedMe) {
  const std::vector<ModelInstance> models{ModelInstance::line({0, 1, -0.2}), ModelInstance::line({0, 1, -0.8})};
  const std::vector<Observation> y{{0.1, 0.2}, {0.5, 0.8}, {0.3, 0.5}, {0.4, 0.21}};
  EXPECT_EQ(assign_observations(models, y, 0.05), (std::vector<int>{0, 1, -1, 0}));
  const std::vector<int> truth{0, 1, -1, 0};
  EXPECT_EQ(misclassification_error(models, y, truth, 0.05), 0.0);
}

TEST(Eval, F1Instances) {
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Constant(2, 2, 1.0);
  perfect(0, 0) = perfect(1, 1) = 0.0;
  EXPECT_EQ(f1_instances(perfect, 0.5), 1.0);
  EXPECT_EQ(f1_instances(Eigen::MatrixXd(0, 2), 0.5), 0.0);
  Eigen::MatrixXd one(1, 2);
  one << 0.0, 1.0;
  EXPECT_NEAR(f1_instances(one, 0.5), 2.0 / 3.0, 1e-15);

  const std::vector<ModelInstance> gt{ModelInstance::line({0, 1, -0.3}), ModelInstance::line({1, 0, -0.6})};
  EXPECT_EQ(f1_lines(gt, gt), 1.0);
  EXPECT_EQ(f1_lines({}, gt), 0.0);
  EXPECT_NEAR(f1_lines(std::span<const ModelInstance>(gt).first(1), gt), 2.0 / 3.0, 1e-15);
}

TEST(Eval, LineDistanceProperties) {
  Rng rng(45);
  for (int t = 0; t < 200; ++t) {
    const auto a = testing::random_line(rng), b = testing::random_line(rng);
    EXPECT_NEAR(line_distance(a, b), line_distance(b, a), 1e-15);
    EXPECT_NEAR(line_distance(a, a), 0.0, 1e-12);
    EXPECT_NEAR(line_distance(a, ModelInstance::line(-2.0 * a.vec())), 0.0, 1e-12);
  }
}

TEST(Eval, LineSegmentsFromLabelledSupport) {
  // horizontal line y = 0.5 with support on x in [0.2, 0.6]
  const std::vector<ModelInstance> gt{ModelInstance::line({0, 1, -0.5})};
  const std::vector<Observation> y{{0.2, 0.5}, {0.6, 0.5}, {0.4, 0.5}, {0.9, 0.1}};
  const std::vector<int> labels{0, 0, 0, -1};
  const auto seg = gt_line_segments(gt, y, labels);
  ASSERT_EQ(seg.size(), 1u);
  const double lo = std::min(seg[0][0].x(), seg[0][1].x()), hi = std::max(seg[0][0].x(), seg[0][1].x());
  EXPECT_NEAR(lo, 0.2, 1e-12);
  EXPECT_NEAR(hi, 0.6, 1e-12);
  EXPECT_NEAR(seg[0][0].y(), 0.5, 1e-12);

  // a line tilted about the segment midpoint by slope 0.01 is off by 0.002 at the ends
  const double a = std::atan(0.01);
  const ModelInstance tilted = ModelInstance::line({-std::sin(a), std::cos(a), 0.4 * std::sin(a) - 0.5 * std::cos(a)});
  EXPECT_NEAR(segment_distance(tilted, seg[0]), 0.2 * std::sin(a), 1e-12);
  EXPECT_GT(line_distance(tilted, gt[0]), segment_distance(tilted, seg[0]));

  // no support: the chord is used
  const auto chord = gt_line_segments(gt, y, std::vector<int>{-1, -1, -1, -1});
  EXPECT_NEAR(segment_distance(tilted, chord[0]), 0.6 * std::sin(a), 1e-12);
  EXPECT_THROW(gt_line_segments(gt, y, std::vector<int>{0}), ShapeMismatch);
}

TEST(Eval, SegmentF1) {
  Rng rng(5);
  const std::vector<ModelInstance> lines{testing::random_line(rng), testing::random_line(rng)};
  const Scene s = testing::lines_scene(lines, 30, rng);
  const auto seg = gt_line_segments(*s.gt_models, s.observations, *s.gt_labels);
  EXPECT_DOUBLE_EQ(f1_segments(lines, seg), 1.0);
  EXPECT_DOUBLE_EQ(f1_segments(std::span<const ModelInstance>(lines).first(1), seg), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(f1_segments({}, seg), 0.0);
}

TEST(Eval, Summary) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = summarize(v);
  EXPECT_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.stddev, std::sqrt(1.25), 1e-15);
  EXPECT_EQ(s.count, 4u);
}

}  // namespace
}  // namespace consac
