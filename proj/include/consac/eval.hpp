#pragma once

// Matching and metrics: Hungarian assignment, VP angular error, AUC recall,
// misclassification error and instance-level F1.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "consac/geometry.hpp"
#include "consac/types.hpp"

namespace consac {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), sorted by row
  double cost = 0.0;
};

/// Minimum-cost assignment of min(rows, cols) pairs (shortest augmenting
/// path with potentials, O(n^2 m)). The cost is summed in row order.
inline Assignment hungarian_assign(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) throw EmptyMatrix("cost matrix is empty");
  const bool transposed = cost.rows() > cost.cols();
  const Eigen::MatrixXd a = transposed ? Eigen::MatrixXd(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();

  // 1-based arrays; column 0 is a virtual start column
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  for (int j = 1; j <= m; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i == 0) continue;
    if (transposed)
      out.pairs.emplace_back(j - 1, i - 1);
    else
      out.pairs.emplace_back(i - 1, j - 1);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.cost += cost(r, c);
  return out;
}

// ---------------------------------------------------------------------------
// Vanishing points

/// Angle in degrees between the 3D directions K^-1 v and K^-1 v_hat, in [0, 90].
inline double vp_angle_error(const Eigen::Vector3d& v, const Eigen::Vector3d& v_hat, const Eigen::Matrix3d& intrinsics) {
  if (std::abs(intrinsics.determinant()) < 1e-12) throw SingularIntrinsics("camera intrinsics are singular");
  const Eigen::Matrix3d k_inv = intrinsics.inverse();
  const Eigen::Vector3d d1 = k_inv * v;
  const Eigen::Vector3d d2 = k_inv * v_hat;
  const double n = d1.norm() * d2.norm();
  if (!(n > 0.0)) throw DegenerateMinimalSet("vanishing point is zero");
  return std::atan2(d1.cross(d2).norm(), std::abs(d1.dot(d2))) * 180.0 / M_PI;
}

/// Normalized area under the recall curve on [0, cutoff]. Unmatched entries
/// should be passed as +infinity; they count towards the total only.
inline double auc_recall(std::span<const double> errors, double cutoff = 10.0) {
  if (errors.empty()) return 0.0;
  std::vector<double> e(errors.begin(), errors.end());
  std::sort(e.begin(), e.end());
  const double n = static_cast<double>(e.size());
  double area = 0.0;
  double px = 0.0, py = 0.0;
  for (std::size_t k = 0; k < e.size() && e[k] <= cutoff; ++k) {
    const double x = e[k];
    const double y = static_cast<double>(k + 1) / n;
    area += 0.5 * (x - px) * (py + y);
    px = x;
    py = y;
  }
  area += (cutoff - px) * py;
  return area / cutoff;
}

// ---------------------------------------------------------------------------
// Clustering

/// Nearest model with residual below theta, else -1.
inline std::vector<int> assign_observations(std::span<const ModelInstance> models, std::span<const Observation> y,
                                            double theta) {
  std::vector<int> labels(y.size(), -1);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double best = theta;
    for (std::size_t m = 0; m < models.size(); ++m) {
      const double r = residual(y[i], models[m]);
      if (r < best) {
        best = r;
        labels[i] = static_cast<int>(m);
      }
    }
  }
  return labels;
}

/// Percentage of observations in the wrong cluster. Label -1 is the outlier
/// class and only matches itself; the other clusters are matched by maximum
/// overlap.
inline double misclassification_error(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeMismatch("label vectors differ in length");
  if (truth.empty()) return 0.0;
  std::vector<int> pred_ids, gt_ids;
  for (int l : predicted)
    if (l >= 0 && std::find(pred_ids.begin(), pred_ids.end(), l) == pred_ids.end()) pred_ids.push_back(l);
  for (int l : truth)
    if (l >= 0 && std::find(gt_ids.begin(), gt_ids.end(), l) == gt_ids.end()) gt_ids.push_back(l);
  std::sort(pred_ids.begin(), pred_ids.end());
  std::sort(gt_ids.begin(), gt_ids.end());

  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (predicted[i] < 0 && truth[i] < 0) ++correct;
  if (!pred_ids.empty() && !gt_ids.empty()) {
    Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pred_ids.size()),
                                                    static_cast<Eigen::Index>(gt_ids.size()));
    auto index_of = [](const std::vector<int>& ids, int l) {
      return static_cast<Eigen::Index>(std::lower_bound(ids.begin(), ids.end(), l) - ids.begin());
    };
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (predicted[i] >= 0 && truth[i] >= 0) overlap(index_of(pred_ids, predicted[i]), index_of(gt_ids, truth[i])) += 1;
    const Assignment a = hungarian_assign(Eigen::MatrixXd(overlap.maxCoeff() - overlap.array()));
    for (const auto& [r, c] : a.pairs) correct += static_cast<std::size_t>(overlap(r, c));
  }
  return 100.0 * static_cast<double>(truth.size() - correct) / static_cast<double>(truth.size());
}

inline double misclassification_error(std::span<const ModelInstance> models, std::span<const Observation> y,
                                      std::span<const int> truth, double theta) {
  const auto labels = assign_observations(models, y, theta);
  return misclassification_error(std::span<const int>(labels), truth);
}

// ---------------------------------------------------------------------------
// Instance F1

/// F1 of Hungarian-matched estimates; pairs count as matches when their
/// error is below the threshold. errors is |estimates| x |ground truth|.
inline double f1_instances(const Eigen::MatrixXd& errors, double threshold) {
  if (errors.rows() == 0 || errors.cols() == 0) return 0.0;
  const Assignment a = hungarian_assign(errors);
  int matched = 0;
  for (const auto& [r, c] : a.pairs)
    if (errors(r, c) < threshold) ++matched;
  if (matched == 0) return 0.0;
  const double precision = static_cast<double>(matched) / static_cast<double>(errors.rows());
  const double recall = static_cast<double>(matched) / static_cast<double>(errors.cols());
  return 2.0 * precision * recall / (precision + recall);
}

/// Endpoints of the chord of an infinite line through the unit square, or
/// the point of the line closest to the square's centre if it misses.
inline std::vector<Eigen::Vector2d> clip_to_unit_square(const ModelInstance& line) {
  const Eigen::Vector3d l = line.vec();
  std::vector<Eigen::Vector2d> pts;
  auto push = [&pts](const Eigen::Vector2d& p) {
    if (p.x() < -1e-12 || p.x() > 1 + 1e-12 || p.y() < -1e-12 || p.y() > 1 + 1e-12) return;
    pts.push_back(p);
  };
  if (std::abs(l[1]) > 1e-15) {
    push({0.0, -l[2] / l[1]});
    push({1.0, -(l[0] + l[2]) / l[1]});
  }
  if (std::abs(l[0]) > 1e-15) {
    push({-l[2] / l[0], 0.0});
    push({-(l[1] + l[2]) / l[0], 1.0});
  }
  if (pts.size() >= 2) {
    std::size_t bi = 0, bj = 1;
    double best = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j)
        if ((pts[i] - pts[j]).norm() > best) {
          best = (pts[i] - pts[j]).norm();
          bi = i;
          bj = j;
        }
    return {pts[bi], pts[bj]};
  }
  const Eigen::Vector2d c(0.5, 0.5);
  const double d = l[0] * c.x() + l[1] * c.y() + l[2];
  return {c - d * l.head<2>()};
}

/// Symmetric distance between two lines restricted to the unit square: the
/// largest distance from a clipped endpoint of one line to the other line.
inline double line_distance(const ModelInstance& a, const ModelInstance& b) {
  double d = 0.0;
  auto one_way = [&d](const ModelInstance& from, const ModelInstance& to) {
    for (const auto& p : clip_to_unit_square(from)) d = std::max(d, line_residual(Observation(p.x(), p.y()), to));
  };
  one_way(a, b);
  one_way(b, a);
  return d;
}

/// Angle between two line normals in degrees, in [0, 90].
inline double line_angle(const ModelInstance& a, const ModelInstance& b) {
  const Eigen::Vector2d u = a.vec().head<2>(), v = b.vec().head<2>();
  return std::atan2(std::abs(u.x() * v.y() - u.y() * v.x()), std::abs(u.dot(v))) * 180.0 / M_PI;
}

inline Eigen::MatrixXd line_error_matrix(std::span<const ModelInstance> est, std::span<const ModelInstance> gt) {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(est.size()), static_cast<Eigen::Index>(gt.size()));
  for (std::size_t i = 0; i < est.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j)
      e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = line_distance(est[i], gt[j]);
  return e;
}

inline Eigen::MatrixXd vp_error_matrix(std::span<const ModelInstance> est, std::span<const ModelInstance> gt,
                                       const Eigen::Matrix3d& intrinsics) {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(est.size()), static_cast<Eigen::Index>(gt.size()));
  for (std::size_t i = 0; i < est.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j)
      e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          vp_angle_error(gt[j].vec(), est[i].vec(), intrinsics);
  return e;
}

constexpr double kLineMatchThreshold = 1e-2;
constexpr double kVpMatchThresholdDeg = 1.0;

inline double f1_lines(std::span<const ModelInstance> est, std::span<const ModelInstance> gt,
                       double threshold = kLineMatchThreshold) {
  if (est.empty() || gt.empty()) return 0.0;
  return f1_instances(line_error_matrix(est, gt), threshold);
}

/// Supported part of a ground-truth line: its two extreme points.
using LineSegment = std::array<Eigen::Vector2d, 2>;

/// Extent of every ground-truth line's labelled inliers, projected onto the
/// line. Lines without labelled support fall back to their unit-square chord.
inline std::vector<LineSegment> gt_line_segments(std::span<const ModelInstance> gt, std::span<const Observation> y,
                                                 std::span<const int> labels) {
  if (!labels.empty() && labels.size() != y.size()) throw ShapeMismatch("one label per observation expected");
  std::vector<LineSegment> out;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const Eigen::Vector3d l = gt[j].vec();
    const Eigen::Vector2d dir(-l[1], l[0]);
    const Eigen::Vector2d foot = -l[2] * l.head<2>();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != static_cast<int>(j)) continue;
      const double t = dir.dot(Eigen::Vector2d(y[i][0], y[i][1]));
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    if (lo <= hi) {
      out.push_back({foot + lo * dir, foot + hi * dir});
    } else {
      const auto chord = clip_to_unit_square(gt[j]);
      out.push_back({chord.front(), chord.back()});
    }
  }
  return out;
}

/// Largest distance of the estimated line from the segment (attained at an
/// endpoint).
inline double segment_distance(const ModelInstance& est, const LineSegment& s) {
  return std::max(line_residual(Observation(s[0].x(), s[0].y()), est),
                  line_residual(Observation(s[1].x(), s[1].y()), est));
}

/// F1 with estimates compared against the supported ground-truth segments.
inline double f1_segments(std::span<const ModelInstance> est, std::span<const LineSegment> gt,
                          double threshold = kLineMatchThreshold) {
  if (est.empty() || gt.empty()) return 0.0;
  Eigen::MatrixXd e(static_cast<Eigen::Index>(est.size()), static_cast<Eigen::Index>(gt.size()));
  for (std::size_t i = 0; i < est.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j)
      e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = segment_distance(est[i], gt[j]);
  return f1_instances(e, threshold);
}

/// Per-gt matched VP errors (infinity when unmatched), using at most
/// `max_estimates` of the estimates in their given order.
inline std::vector<double> matched_vp_errors(std::span<const ModelInstance> est, std::span<const ModelInstance> gt,
                                             const Eigen::Matrix3d& intrinsics, std::size_t max_estimates) {
  std::vector<double> out(gt.size(), std::numeric_limits<double>::infinity());
  const std::size_t n = std::min(est.size(), max_estimates);
  if (n == 0 || gt.empty()) return out;
  const Eigen::MatrixXd e = vp_error_matrix(est.first(n), gt, intrinsics);
  for (const auto& [r, c] : hungarian_assign(e).pairs) out[static_cast<std::size_t>(c)] = e(r, c);
  return out;
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

/// Mean and population standard deviation.
inline Summary summarize(std::span<const double> v) {
  Summary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

}  // namespace consac
