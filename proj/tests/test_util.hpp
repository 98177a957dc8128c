#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "consac/consac.hpp"

namespace consac::testing {

inline Eigen::Vector2d random_point(Rng& rng, double lo = -1.0, double hi = 1.0) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

/// Random normalized line through the square [-1, 1]^2.
inline ModelInstance random_line(Rng& rng) {
  const double a = rng.uniform(0.0, M_PI);
  const Eigen::Vector2d n(std::cos(a), std::sin(a));
  return ModelInstance::line({n.x(), n.y(), rng.uniform(-0.5, 0.5)});
}

/// Random homography close to a similarity, well conditioned.
inline Eigen::Matrix3d random_homography(Rng& rng) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) h(r, c) += rng.uniform(-0.3, 0.3);
  h(2, 0) *= 0.3;
  h(2, 1) *= 0.3;
  return h;
}

inline Observation apply(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * p.homogeneous();
  return {p.x(), p.y(), q.x() / q.z(), q.y() / q.z()};
}

/// Smallest brute-force cost over all injective row-to-column maps.
inline double brute_force_assignment(const Eigen::MatrixXd& c) {
  const bool transpose = c.rows() > c.cols();
  const Eigen::MatrixXd m = transpose ? Eigen::MatrixXd(c.transpose()) : c;
  std::vector<int> cols(static_cast<std::size_t>(m.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) s += m(r, cols[static_cast<std::size_t>(r)]);
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

/// Noiseless points on the given lines (clipped to the unit square) plus
/// labels.
inline Scene lines_scene(std::span<const ModelInstance> lines, int per_line, Rng& rng) {
  Scene s;
  s.kind = ModelKind::line;
  std::vector<int> labels;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto ends = clip_to_unit_square(lines[k]);
    for (int i = 0; i < per_line; ++i) {
      const double t = rng.uniform();
      const Eigen::Vector2d p = ends[0] + t * (ends[1] - ends[0]);
      s.observations.emplace_back(p.x(), p.y());
      labels.push_back(static_cast<int>(k));
    }
  }
  s.gt_labels = labels;
  s.gt_models = std::vector<ModelInstance>(lines.begin(), lines.end());
  return s;
}

}  // namespace consac::testing
