#pragma once

// Test-time post-processing: EM refinement of the selected instances,
// greedy ranking and Theta-cutoff selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "consac/geometry.hpp"
#include "consac/scoring.hpp"

namespace consac {

struct RefineConfig {
  double sigma = 1e-8;
  int em_iterations = 10;
  double theta = 3e-3;        // hard inlier threshold for selection
  double min_increment = 6;   // Theta
  // Density of an optional uniform outlier component added to every
  // observation's mixture. Zero gives the plain model-only mixture.
  double outlier_density = 0.0;

  static RefineConfig vp_defaults() { return {1e-8, 10, 1e-3, 6, 0.0}; }
  // sigma matches squared transfer errors of correspondences with ~0.002 noise;
  // without the outlier component every outlier drags its nearest plane.
  static RefineConfig homography_defaults() { return {3e-5, 10, 3e-3, 6, 1.0 / 16.0}; }
  static RefineConfig line_defaults() { return {0.0075, 10, 0.02, 6, 1.0}; }
  static RefineConfig defaults(ModelKind k) {
    switch (k) {
      case ModelKind::line: return line_defaults();
      case ModelKind::vp: return vp_defaults();
      case ModelKind::homography: return homography_defaults();
    }
    return vp_defaults();
  }

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    if (em_iterations < 0) throw std::invalid_argument("em_iterations must be nonnegative");
    if (outlier_density < 0.0) throw std::invalid_argument("outlier_density must be nonnegative");
  }
};

namespace detail {

inline double log_gaussian(double r, double sigma) {
  constexpr double half_log_2pi = 0.91893853320467274178;
  const double z = r / sigma;
  return -std::log(sigma) - half_log_2pi - 0.5 * z * z;
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Per-observation log-likelihood terms; last column is the outlier term.
inline std::vector<double> log_terms(const Observation& y, std::span<const ModelInstance> models,
                                     const RefineConfig& config) {
  std::vector<double> t;
  t.reserve(models.size() + 1);
  for (const auto& h : models) t.push_back(log_gaussian(residual(y, h), config.sigma));
  if (config.outlier_density > 0.0) t.push_back(std::log(config.outlier_density));
  return t;
}

}  // namespace detail

/// log p(Y) = sum_y log (sum_h p(y|h) + outlier_density), with p(h) = 1.
inline double log_likelihood(std::span<const ModelInstance> models, std::span<const Observation> y,
                             const RefineConfig& config) {
  double ll = 0.0;
  for (const auto& obs : y) ll += detail::log_sum_exp(detail::log_terms(obs, models, config));
  return ll;
}

/// Responsibilities p(h|y), |Y| x |models| (the outlier share is implicit).
inline Eigen::MatrixXd responsibilities(std::span<const ModelInstance> models, std::span<const Observation> y,
                                        const RefineConfig& config) {
  Eigen::MatrixXd r(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(models.size()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto t = detail::log_terms(y[i], models, config);
    const double lse = detail::log_sum_exp(t);
    for (std::size_t m = 0; m < models.size(); ++m)
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = std::exp(t[m] - lse);
  }
  return r;
}

/// EM with fixed sigma. Models whose responsibility mass is below the
/// minimal set size are left untouched. When `trace` is given it receives
/// the log-likelihood before the first and after every iteration.
inline std::vector<ModelInstance> em_refine(std::span<const ModelInstance> models, std::span<const Observation> y,
                                            const RefineConfig& config, const ModelClassSpec& spec,
                                            std::vector<double>* trace = nullptr) {
  config.validate();
  std::vector<ModelInstance> current(models.begin(), models.end());
  if (trace) trace->assign(1, log_likelihood(current, y, config));
  for (int it = 0; it < config.em_iterations; ++it) {
    const Eigen::MatrixXd resp = responsibilities(current, y, config);
    for (std::size_t m = 0; m < current.size(); ++m) {
      const Eigen::VectorXd col = resp.col(static_cast<Eigen::Index>(m));
      if (col.sum() < spec.minimal_set_size) continue;
      std::vector<double> w(col.data(), col.data() + col.size());
      try {
        current[m] = spec.refit(spec.kind, y, w, current[m]);
      } catch (const InsufficientSupport&) {
      } catch (const DegenerateMinimalSet&) {
      } catch (const SingularModel&) {
      }
    }
    if (trace) trace->push_back(log_likelihood(current, y, config));
  }
  return current;
}

/// Greedy ordering by joint soft inlier count; ties go to the lower index.
inline std::vector<std::size_t> rank_instances(std::span<const ModelInstance> models, std::span<const Observation> y,
                                               const ScoringParams& params) {
  std::vector<std::size_t> order;
  std::vector<char> taken(models.size(), 0);
  StateVector state(y.size(), 0.0);
  std::vector<std::vector<double>> soft(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) soft[m] = soft_inlier_scores(y, models[m], params);
  for (std::size_t step = 0; step < models.size(); ++step) {
    std::size_t best = models.size();
    double best_score = -1.0;
    for (std::size_t m = 0; m < models.size(); ++m) {
      if (taken[m]) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += std::max(state[i], soft[m][i]);
      if (s > best_score) {
        best_score = s;
        best = m;
      }
    }
    taken[best] = 1;
    order.push_back(best);
    for (std::size_t i = 0; i < y.size(); ++i) state[i] = std::max(state[i], soft[best][i]);
  }
  return order;
}

struct Selection {
  std::size_t count = 0;             // length of the kept prefix
  std::vector<std::size_t> increments;  // hard-inlier gain of every ranked model
};

/// Keeps the longest prefix whose every member adds at least Theta new hard
/// inliers (r < theta). The first model is always kept.
inline Selection select_instances(std::span<const ModelInstance> ranked, std::span<const Observation> y,
                                  const RefineConfig& config) {
  Selection sel;
  std::vector<char> covered(y.size(), 0);
  bool open = true;
  for (std::size_t m = 0; m < ranked.size(); ++m) {
    std::size_t gain = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (covered[i]) continue;
      if (residual(y[i], ranked[m]) < config.theta) {
        covered[i] = 1;
        ++gain;
      }
    }
    sel.increments.push_back(gain);
    if (open && (m == 0 || static_cast<double>(gain) >= config.min_increment))
      sel.count = m + 1;
    else
      open = false;
  }
  return sel;
}

template <typename T>
std::vector<T> permute(std::span<const T> v, std::span<const std::size_t> order) {
  std::vector<T> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(v[i]);
  return out;
}

}  // namespace consac
