#pragma once

// Conditional sample consensus: the three nested sampling loops, plus the
// Sequential RANSAC and unconditional baselines.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "consac/geometry.hpp"
#include "consac/scoring.hpp"
#include "consac/types.hpp"

namespace consac {

/// Weights are floored at this value before normalization.
constexpr double kWeightFloor = 1e-9;
/// Extra attempts for a hypothesis slot whose minimal set is degenerate.
constexpr int kDegenerateRetries = 4;

enum class WeightSource { network, uniform, uniform_with_removal };

struct SamplerConfig {
  int instances = 6;        // M
  int single_samples = 32;  // S
  int multi_samples = 32;   // P
  double tau = 1e-3;
  WeightSource weight_source = WeightSource::network;
  std::uint64_t seed = 0;

  static SamplerConfig vp_defaults() { return {6, 32, 32, 1e-3, WeightSource::network, 0}; }
  static SamplerConfig homography_defaults() { return {6, 100, 100, 1e-4, WeightSource::network, 0}; }
  static SamplerConfig line_defaults() { return {4, 32, 32, 0.02, WeightSource::network, 0}; }
  static SamplerConfig defaults(ModelKind k) {
    switch (k) {
      case ModelKind::line: return line_defaults();
      case ModelKind::vp: return vp_defaults();
      case ModelKind::homography: return homography_defaults();
    }
    return vp_defaults();
  }

  void validate() const {
    if (instances < 1 || single_samples < 1 || multi_samples < 1)
      throw std::invalid_argument("M, S and P must be at least 1");
    if (!(tau > 0.0)) throw std::invalid_argument("inlier threshold must be positive");
  }
};

struct Hypothesis {
  ModelInstance model;
  std::vector<std::size_t> indices;
};

struct HypothesisPool {
  std::vector<Hypothesis> hypotheses;
  /// Every drawn index, including draws of discarded degenerate sets.
  std::vector<std::size_t> drawn;
  double log_prob = 0.0;
};

struct MultiHypothesis {
  std::vector<ModelInstance> models;
  /// Indices of the minimal set of every hypothesis in every pool.
  std::vector<std::vector<std::size_t>> sampled_indices;
  /// All indices drawn at each instance step (for score-function gradients).
  std::vector<std::vector<std::size_t>> drawn_per_step;
  /// State fed to the weight function at each instance step.
  std::vector<StateVector> states;
  /// Sampling weights returned by the weight function at each instance step.
  std::vector<std::vector<double>> weights;
  double log_prob = 0.0;
  double score = 0.0;
};

using WeightFn = std::function<std::vector<double>(std::span<const Observation>, const StateVector&)>;

// ---------------------------------------------------------------------------

/// Floors at kWeightFloor and normalizes to a probability vector.
inline std::vector<double> floored_distribution(std::span<const double> weights) {
  std::vector<double> p(weights.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
      throw std::invalid_argument("sampling weights must be finite and nonnegative");
    p[i] = std::max(weights[i], kWeightFloor);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

/// Draws `c` distinct indices; each draw is categorical over the remaining
/// floored weights. Adds the log of every draw probability to `log_prob`.
inline std::vector<std::size_t> sample_minimal_set(std::span<const double> weights, int c, Rng& rng,
                                                   double* log_prob = nullptr) {
  if (c < 0 || static_cast<std::size_t>(c) > weights.size())
    throw TooFewObservations("minimal set larger than the observation count");
  std::vector<double> w = floored_distribution(weights);
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    double total = 0.0;
    for (double v : w) total += v;
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = w.size();
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      last_positive = i;
      acc += w[i];
      if (u < acc) {
        pick = i;
        break;
      }
    }
    if (pick == w.size()) pick = last_positive;
    if (log_prob) *log_prob += std::log(w[pick] / total);
    out.push_back(pick);
    w[pick] = 0.0;
  }
  return out;
}

inline HypothesisPool generate_hypothesis_pool(std::span<const Observation> y, std::span<const double> weights,
                                               int samples, const ModelClassSpec& spec, Rng& rng) {
  HypothesisPool pool;
  std::vector<Observation> set(static_cast<std::size_t>(spec.minimal_set_size));
  for (int s = 0; s < samples; ++s) {
    for (int attempt = 0; attempt <= kDegenerateRetries; ++attempt) {
      auto idx = sample_minimal_set(weights, spec.minimal_set_size, rng, &pool.log_prob);
      pool.drawn.insert(pool.drawn.end(), idx.begin(), idx.end());
      for (std::size_t k = 0; k < idx.size(); ++k) set[k] = y[idx[k]];
      try {
        ModelInstance h = spec.fit_minimal(spec.kind, set);
        pool.hypotheses.push_back({std::move(h), std::move(idx)});
        break;
      } catch (const DegenerateMinimalSet&) {
      } catch (const SingularModel&) {
      }
    }
  }
  if (pool.hypotheses.empty()) throw EmptyPool("every minimal set in the pool was degenerate");
  return pool;
}

/// Index of the hypothesis maximizing the joint soft inlier count given
/// `state`; ties go to the lowest index.
inline std::size_t select_best(const HypothesisPool& pool, std::span<const Observation> y, const StateVector& state,
                               const ScoringParams& params) {
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < pool.hypotheses.size(); ++i) {
    const double sc = single_instance_score(pool.hypotheses[i].model, y, state, params);
    if (sc > best_score) {
      best_score = sc;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Weight sources

inline std::vector<double> uniform_weights(std::span<const Observation> y, const StateVector&) {
  return std::vector<double>(y.size(), 1.0 / static_cast<double>(std::max<std::size_t>(1, y.size())));
}

/// Uniform over observations not yet explained (state below 0.5, i.e. residual
/// above tau for every selected model).
inline std::vector<double> uniform_with_removal_weights(std::span<const Observation> y, const StateVector& s) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) w[i] = s[i] < 0.5 ? 1.0 : 0.0;
  return w;
}

// ---------------------------------------------------------------------------
// CONSAC

/// The two inner loops: M instance steps of S-hypothesis pools with the state
/// updated after each selection.
inline MultiHypothesis sample_multi_hypothesis(std::span<const Observation> y, const ModelClassSpec& spec,
                                               const SamplerConfig& config, const WeightFn& weight_fn, Rng& rng) {
  const ScoringParams params(config.tau);
  MultiHypothesis mh;
  StateVector state(y.size(), 0.0);
  for (int m = 0; m < config.instances; ++m) {
    std::vector<double> w = weight_fn(y, state);
    if (w.size() != y.size()) throw ShapeMismatch("weight function returned the wrong length");
    HypothesisPool pool = generate_hypothesis_pool(y, w, config.single_samples, spec, rng);
    const std::size_t best = select_best(pool, y, state, params);
    mh.log_prob += pool.log_prob;
    for (auto& h : pool.hypotheses) mh.sampled_indices.push_back(h.indices);
    mh.drawn_per_step.push_back(std::move(pool.drawn));
    mh.states.push_back(state);
    mh.weights.push_back(std::move(w));
    mh.models.push_back(pool.hypotheses[best].model);
    update_state(state, mh.models.back(), y, params);
  }
  mh.score = multi_instance_score(mh.models, y, params);
  return mh;
}

/// All P multi-hypotheses; candidate p uses the sub-seed derive_seed(seed, p)
/// so results do not depend on evaluation order.
inline std::vector<MultiHypothesis> sample_multi_hypotheses(std::span<const Observation> y, const ModelClassSpec& spec,
                                                            const SamplerConfig& config, const WeightFn& weight_fn) {
  config.validate();
  std::vector<MultiHypothesis> out;
  out.reserve(static_cast<std::size_t>(config.multi_samples));
  for (int p = 0; p < config.multi_samples; ++p) {
    Rng rng = Rng::derived(config.seed, static_cast<std::uint64_t>(p));
    out.push_back(sample_multi_hypothesis(y, spec, config, weight_fn, rng));
  }
  return out;
}

/// Index of the candidate with maximal joint score, lowest index on ties.
inline std::size_t select_best_multi(std::span<const MultiHypothesis> candidates) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].score > candidates[best].score) best = i;
  return best;
}

inline MultiHypothesis run_consac(std::span<const Observation> y, const ModelClassSpec& spec,
                                  const SamplerConfig& config, const WeightFn& weight_fn) {
  auto candidates = sample_multi_hypotheses(y, spec, config, weight_fn);
  return std::move(candidates[select_best_multi(candidates)]);
}

/// Unconditional sampling: weights are computed once from a zero state and
/// reused at every instance step.
inline MultiHypothesis run_unconditional(std::span<const Observation> y, const ModelClassSpec& spec,
                                         const SamplerConfig& config, const WeightFn& weight_fn) {
  const std::vector<double> w = weight_fn(y, StateVector(y.size(), 0.0));
  return run_consac(y, spec, config, [&w](std::span<const Observation>, const StateVector&) { return w; });
}

/// Plain single-instance RANSAC with uniform sampling and soft scoring.
inline ModelInstance ransac_single(std::span<const Observation> y, const ModelClassSpec& spec, int samples, double tau,
                                   Rng& rng) {
  const ScoringParams params(tau);
  const std::vector<double> w = floored_distribution(uniform_weights(y, {}));
  HypothesisPool pool = generate_hypothesis_pool(y, w, samples, spec, rng);
  return pool.hypotheses[select_best(pool, y, StateVector(y.size(), 0.0), params)].model;
}

// ---------------------------------------------------------------------------
// Sequential RANSAC

/// Fits up to M instances one after another, each by uniform RANSAC on the
/// observations that are not hard inliers (r < tau) of an earlier instance.
/// Stops early when fewer than C observations remain or every minimal set
/// is degenerate.
inline MultiHypothesis sequential_ransac(std::span<const Observation> y, const ModelClassSpec& spec, int instances,
                                         int samples, double tau, Rng& rng) {
  const ScoringParams params(tau);
  MultiHypothesis mh;
  std::vector<std::size_t> remaining(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) remaining[i] = i;
  std::vector<Observation> sub;
  for (int m = 0; m < instances; ++m) {
    if (remaining.size() < static_cast<std::size_t>(spec.minimal_set_size)) break;
    sub.clear();
    for (std::size_t i : remaining) sub.push_back(y[i]);
    const std::vector<double> w(sub.size(), 1.0 / static_cast<double>(sub.size()));
    HypothesisPool pool;
    try {
      pool = generate_hypothesis_pool(sub, w, samples, spec, rng);
    } catch (const EmptyPool&) {
      break;
    }
    const std::size_t best = select_best(pool, sub, StateVector(sub.size(), 0.0), params);
    mh.log_prob += pool.log_prob;
    for (auto& h : pool.hypotheses) {
      for (auto& i : h.indices) i = remaining[i];
      mh.sampled_indices.push_back(h.indices);
    }
    for (auto& i : pool.drawn) i = remaining[i];
    mh.drawn_per_step.push_back(std::move(pool.drawn));
    const ModelInstance& h = pool.hypotheses[best].model;
    mh.models.push_back(h);
    std::vector<std::size_t> keep;
    for (std::size_t i : remaining)
      if (!(spec.residual(y[i], h) < tau)) keep.push_back(i);
    remaining = std::move(keep);
  }
  mh.score = multi_instance_score(mh.models, y, params);
  return mh;
}

/// P independent Sequential RANSAC runs (sub-seeds as in run_consac); the run
/// with the highest joint soft inlier count wins.
inline MultiHypothesis sequential_ransac_best_of(std::span<const Observation> y, const ModelClassSpec& spec,
                                                 const SamplerConfig& config) {
  config.validate();
  MultiHypothesis best;
  bool have = false;
  for (int p = 0; p < config.multi_samples; ++p) {
    Rng rng = Rng::derived(config.seed, static_cast<std::uint64_t>(p));
    MultiHypothesis mh = sequential_ransac(y, spec, config.instances, config.single_samples, config.tau, rng);
    if (!have || mh.score > best.score) {
      best = std::move(mh);
      have = true;
    }
  }
  return best;
}

}  // namespace consac
