#pragma once

// Soft inlier scoring and the conditioning state.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "consac/geometry.hpp"

namespace consac {

struct ScoringParams {
  double tau = 1e-3;

  explicit ScoringParams(double inlier_threshold = 1e-3) : tau(inlier_threshold) {
    if (!(tau > 0.0)) throw std::invalid_argument("inlier threshold must be positive");
  }
  double beta() const { return 5.0 / tau; }
};

/// Per-observation inlier scores in [0,1]; all zero before any instance is chosen.
using StateVector = std::vector<double>;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// g_i(r) = 1 - sigmoid(beta (r - tau)).
inline double soft_inlier(double r, const ScoringParams& params) {
  // 1 - sigmoid(x) == sigmoid(-x); the latter keeps r == tau exactly at 0.5.
  return sigmoid(-params.beta() * (r - params.tau));
}

/// Soft inlier scores of every observation w.r.t. one model.
inline std::vector<double> soft_inlier_scores(std::span<const Observation> y, const ModelInstance& h,
                                              const ScoringParams& params) {
  std::vector<double> s(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) s[i] = soft_inlier(residual(y[i], h), params);
  return s;
}

/// Joint soft inlier count: sum over y of the max soft score over the set.
inline double multi_instance_score(std::span<const ModelInstance> models, std::span<const Observation> y,
                                   const ScoringParams& params) {
  if (models.empty()) return 0.0;
  double total = 0.0;
  for (const auto& obs : y) {
    double best = 0.0;
    for (const auto& h : models) best = std::max(best, soft_inlier(residual(obs, h), params));
    total += best;
  }
  return total;
}

/// Score of h given already selected models: multi_instance_score of the union.
inline double single_instance_score(const ModelInstance& h, std::span<const Observation> y,
                                    std::span<const ModelInstance> selected, const ScoringParams& params) {
  std::vector<ModelInstance> all(selected.begin(), selected.end());
  all.push_back(h);
  return multi_instance_score(all, y, params);
}

/// Same value as single_instance_score, computed against a precomputed state
/// (the elementwise max soft score of the selected models).
inline double single_instance_score(const ModelInstance& h, std::span<const Observation> y, const StateVector& state,
                                    const ScoringParams& params) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += std::max(state[i], soft_inlier(residual(y[i], h), params));
  return total;
}

/// State entry i is the max soft score of observation i over `selected`.
inline StateVector compute_state(std::span<const ModelInstance> selected, std::span<const Observation> y,
                                 const ScoringParams& params) {
  StateVector s(y.size(), 0.0);
  for (const auto& h : selected)
    for (std::size_t i = 0; i < y.size(); ++i) s[i] = std::max(s[i], soft_inlier(residual(y[i], h), params));
  return s;
}

/// Folds one more model into an existing state.
inline void update_state(StateVector& s, const ModelInstance& h, std::span<const Observation> y,
                         const ScoringParams& params) {
  for (std::size_t i = 0; i < y.size(); ++i) s[i] = std::max(s[i], soft_inlier(residual(y[i], h), params));
}

/// Mean over observations of the max soft score over the prefix.
inline double cumulative_inlier_ratio(std::span<const ModelInstance> prefix, std::span<const Observation> y,
                                      const ScoringParams& params) {
  if (prefix.empty()) throw EmptyPrefix("cumulative inlier ratio needs at least one model");
  if (y.empty()) return 0.0;
  return multi_instance_score(prefix, y, params) / static_cast<double>(y.size());
}

}  // namespace consac
