#pragma once

// Minimal solvers, residual functions and weighted refits for the three
// supported model classes: 2D lines, vanishing points and plane homographies.

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "consac/types.hpp"

namespace consac {

namespace detail {

constexpr double kDegenerateEps = 1e-12;

inline Eigen::Vector3d segment_line(const Observation& s) { return s.first().cross(s.second()); }

inline Eigen::Vector3d dehomogenize(const Eigen::Vector3d& p) { return p / p[2]; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Lines

inline ModelInstance fit_line_minimal(const Observation& p1, const Observation& p2) {
  const Eigen::Vector3d a = p1.first();
  const Eigen::Vector3d b = p2.first();
  if ((a - b).norm() < detail::kDegenerateEps) throw DegenerateMinimalSet("coincident points");
  return ModelInstance::line(a.cross(b));
}

/// Absolute point-to-line distance |y^T h| for a normalized line h.
inline double line_residual(const Observation& y, const ModelInstance& h) {
  const Eigen::Vector3d& l = h.vec();
  return std::abs(l[0] * y[0] + l[1] * y[1] + l[2]);
}

// ---------------------------------------------------------------------------
// Vanishing points

inline ModelInstance fit_vp_minimal(const Observation& s1, const Observation& s2) {
  Eigen::Vector3d l1 = detail::segment_line(s1);
  Eigen::Vector3d l2 = detail::segment_line(s2);
  const double n1 = l1.norm(), n2 = l2.norm();
  if (n1 < detail::kDegenerateEps || n2 < detail::kDegenerateEps)
    throw DegenerateMinimalSet("segment with coincident endpoints");
  l1 /= n1;
  l2 /= n2;
  const Eigen::Vector3d v = l1.cross(l2);
  if (v.norm() < detail::kDegenerateEps) throw DegenerateMinimalSet("identical segment lines");
  return ModelInstance::vp(v);
}

/// 1 - |cos a| between the segment's line and the line joining the vanishing
/// point with the segment midpoint. Returns 1 when that joining line is
/// undefined (vanishing point at the midpoint).
inline double vp_residual(const Observation& y, const ModelInstance& h) {
  const Eigen::Vector3d ly = detail::segment_line(y);
  const Eigen::Vector3d pc(0.5 * (y[0] + y[2]), 0.5 * (y[1] + y[3]), 1.0);
  const Eigen::Vector3d lc = h.vec().cross(pc);
  const double ny = ly.head<2>().norm();
  const double nc = lc.head<2>().norm();
  if (nc < detail::kDegenerateEps || ny < detail::kDegenerateEps) return 1.0;
  const double c = std::abs(ly.head<2>().dot(lc.head<2>())) / (ny * nc);
  return std::clamp(1.0 - c, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Homographies

namespace detail {

/// Similarity transform moving the weighted centroid to the origin and the
/// mean distance to sqrt(2).
inline Eigen::Matrix3d normalizing_transform(std::span<const Eigen::Vector2d> pts, std::span<const double> w) {
  double wsum = 0.0;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c += w[i] * pts[i];
    wsum += w[i];
  }
  c /= wsum;
  double mean = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) mean += w[i] * (pts[i] - c).norm();
  mean /= wsum;
  const double s = mean > kDegenerateEps ? std::sqrt(2.0) / mean : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

inline bool has_collinear_triple(std::span<const Eigen::Vector2d> p) {
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        const Eigen::Vector2d a = p[j] - p[i], b = p[k] - p[i];
        if (std::abs(a.x() * b.y() - a.y() * b.x()) < kDegenerateEps) return true;
      }
  return false;
}

/// Weighted, normalized direct linear transform. Rows with zero weight are
/// skipped. Throws DegenerateMinimalSet when the design matrix is rank
/// deficient (ratio of 8th to 1st singular value below 1e-10).
inline Eigen::Matrix3d weighted_dlt(std::span<const Observation> obs, std::span<const double> weights,
                                    bool check_collinear) {
  std::vector<Eigen::Vector2d> a, b;
  std::vector<double> w;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    a.emplace_back(obs[i][0], obs[i][1]);
    b.emplace_back(obs[i][2], obs[i][3]);
    w.push_back(weights[i]);
  }
  if (a.size() < 4) throw InsufficientSupport("homography needs 4 weighted correspondences");
  const Eigen::Matrix3d t1 = normalizing_transform(a, w);
  const Eigen::Matrix3d t2 = normalizing_transform(b, w);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = (t1 * a[i].homogeneous()).hnormalized();
    b[i] = (t2 * b[i].homogeneous()).hnormalized();
  }
  if (check_collinear && (has_collinear_triple(a) || has_collinear_triple(b)))
    throw DegenerateMinimalSet("collinear correspondences");

  Eigen::MatrixXd design(2 * a.size(), 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double sw = std::sqrt(w[i]);
    const double x1 = a[i].x(), y1 = a[i].y(), x2 = b[i].x(), y2 = b[i].y();
    design.row(static_cast<Eigen::Index>(2 * i)) << 0, 0, 0, -x1, -y1, -1, y2 * x1, y2 * y1, y2;
    design.row(static_cast<Eigen::Index>(2 * i + 1)) << x1, y1, 1, 0, 0, 0, -x2 * x1, -x2 * y1, -x2;
    design.middleRows(static_cast<Eigen::Index>(2 * i), 2) *= sw;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[7] / sv[0] < 1e-10) throw DegenerateMinimalSet("rank-deficient DLT system");
  const Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  return t2.inverse() * hn * t1;
}

}  // namespace detail

inline ModelInstance fit_homography_minimal(std::span<const Observation> c) {
  if (c.size() != 4) throw DegenerateMinimalSet("homography minimal set needs 4 correspondences");
  const double ones[4] = {1, 1, 1, 1};
  const Eigen::Matrix3d h = detail::weighted_dlt(c, ones, true);
  ModelInstance m = ModelInstance::homography(h);
  if (std::abs(m.det()) < detail::kDegenerateEps) throw DegenerateMinimalSet("singular homography");
  return m;
}

/// Symmetric squared transfer error ||p1 - H^-1 p2||^2 + ||p2 - H p1||^2.
inline double homography_residual(const Observation& y, const ModelInstance& h) {
  if (std::abs(h.det()) < 1e-12) throw SingularModel("homography is singular");
  const Eigen::Vector3d p1 = y.first(), p2 = y.second();
  const Eigen::Vector3d f = h.mat() * p1;
  const Eigen::Vector3d b = h.inverse() * p2;
  if (f[2] == 0.0 || b[2] == 0.0) return std::numeric_limits<double>::infinity();
  const double fx = f[0] / f[2] - p2[0], fy = f[1] / f[2] - p2[1];
  const double bx = b[0] / b[2] - p1[0], by = b[1] / b[2] - p1[1];
  return fx * fx + fy * fy + bx * bx + by * by;
}

// ---------------------------------------------------------------------------
// Dispatch

inline double residual(const Observation& y, const ModelInstance& h) {
  switch (h.kind()) {
    case ModelKind::line: return line_residual(y, h);
    case ModelKind::vp: return vp_residual(y, h);
    case ModelKind::homography: return homography_residual(y, h);
  }
  return 0.0;
}

inline ModelInstance fit_minimal(ModelKind kind, std::span<const Observation> set) {
  switch (kind) {
    case ModelKind::line:
      if (set.size() != 2) throw DegenerateMinimalSet("line minimal set needs 2 points");
      return fit_line_minimal(set[0], set[1]);
    case ModelKind::vp:
      if (set.size() != 2) throw DegenerateMinimalSet("vp minimal set needs 2 segments");
      return fit_vp_minimal(set[0], set[1]);
    case ModelKind::homography: return fit_homography_minimal(set);
  }
  throw DegenerateMinimalSet("unknown model kind");
}

inline double weighted_squared_residual(std::span<const Observation> y, std::span<const double> w,
                                        const ModelInstance& h) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (w[i] <= 0.0) continue;
    const double r = residual(y[i], h);
    s += w[i] * r * r;
  }
  return s;
}

/// Weighted refit used as the M-step of EM refinement.
///
/// Lines get the exact weighted total-least-squares solution. Vanishing points
/// and homographies get a weighted algebraic fit; when `previous` is given and
/// the algebraic fit increases sum(w r^2) by more than 1e-9, `previous` is
/// returned unchanged.
inline ModelInstance weighted_refit(ModelKind kind, std::span<const Observation> y, std::span<const double> w,
                                    const std::optional<ModelInstance>& previous = std::nullopt) {
  if (y.size() != w.size()) throw ShapeMismatch("observation and weight counts differ");
  const int c = minimal_set_size(kind);
  int positive = 0;
  for (double wi : w) {
    if (wi < 0.0 || !std::isfinite(wi)) throw InsufficientSupport("weights must be nonnegative");
    positive += wi > 0.0;
  }
  if (positive < c) throw InsufficientSupport("fewer positive weights than the minimal set size");

  ModelInstance fit;
  switch (kind) {
    case ModelKind::line: {
      double wsum = 0.0;
      Eigen::Vector2d mean = Eigen::Vector2d::Zero();
      for (std::size_t i = 0; i < y.size(); ++i) {
        mean += w[i] * Eigen::Vector2d(y[i][0], y[i][1]);
        wsum += w[i];
      }
      mean /= wsum;
      Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const Eigen::Vector2d d = Eigen::Vector2d(y[i][0], y[i][1]) - mean;
        scatter += w[i] * d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
      const Eigen::Vector2d n = eig.eigenvectors().col(0);
      return ModelInstance::line(Eigen::Vector3d(n.x(), n.y(), -n.dot(mean)));
    }
    case ModelKind::vp: {
      Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (w[i] <= 0.0) continue;
        Eigen::Vector3d l = detail::segment_line(y[i]);
        const double n = l.head<2>().norm();
        if (n < detail::kDegenerateEps) continue;
        l /= n;
        a += w[i] * l * l.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(a);
      fit = ModelInstance::vp(eig.eigenvectors().col(0));
      break;
    }
    case ModelKind::homography: {
      try {
        fit = ModelInstance::homography(detail::weighted_dlt(y, w, false));
        if (std::abs(fit.det()) < 1e-12) throw SingularModel("singular refit");
      } catch (const Error&) {
        if (previous) return *previous;
        throw;
      }
      break;
    }
  }
  if (previous) {
    const double before = weighted_squared_residual(y, w, *previous);
    const double after = weighted_squared_residual(y, w, fit);
    if (!(after <= before + 1e-9)) return *previous;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Model class descriptor

struct ModelClassSpec {
  ModelKind kind;
  int minimal_set_size;
  double (*residual)(const Observation&, const ModelInstance&);
  ModelInstance (*fit_minimal)(ModelKind, std::span<const Observation>);
  ModelInstance (*refit)(ModelKind, std::span<const Observation>, std::span<const double>,
                         const std::optional<ModelInstance>&);
};

inline const ModelClassSpec& model_class(ModelKind kind) {
  static const ModelClassSpec line_spec{ModelKind::line, 2, &line_residual, &fit_minimal, &weighted_refit};
  static const ModelClassSpec vp_spec{ModelKind::vp, 2, &vp_residual, &fit_minimal, &weighted_refit};
  static const ModelClassSpec h_spec{ModelKind::homography, 4, &homography_residual, &fit_minimal, &weighted_refit};
  switch (kind) {
    case ModelKind::line: return line_spec;
    case ModelKind::vp: return vp_spec;
    case ModelKind::homography: return h_spec;
  }
  return line_spec;
}

}  // namespace consac
