#pragma once

// Policy-gradient training of the sampling network.
//
// For every scene of a batch, K selected multi-hypotheses are drawn, each
// the best (by joint soft inlier count) of P sampled ones. All B*K*P
// trajectories advance in lockstep so that every instance step is a single
// batched forward pass (the pseudo batch). The gradient is the score-function
// estimate with the mean loss over K as baseline; in self-supervised mode
// the inlier masking penalty is added and differentiated through the
// network output directly.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "consac/data.hpp"
#include "consac/eval.hpp"
#include "consac/network.hpp"
#include "consac/sampler.hpp"
#include "consac/scoring.hpp"

namespace consac {

enum class LossKind { supervised, self_supervised };

struct TrainConfig {
  ModelKind kind = ModelKind::vp;
  LossKind loss = LossKind::supervised;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int epochs = 400;
  int samples_k = 4;
  int single_samples = 2;
  int multi_samples = 2;
  int instances = 3;
  double tau = 1e-3;
  double kappa = 1e-2;
  double loss_clamp = 0.3;
  int observations = 256;
  bool batch_norm = true;
  bool state_blind = false;
  bool augment = false;
  std::uint64_t seed = 0;

  static TrainConfig vp_defaults() { return {}; }
  static TrainConfig homography_defaults() {
    TrainConfig c;
    c.kind = ModelKind::homography;
    c.loss = LossKind::self_supervised;
    c.learning_rate = 2e-6;
    c.batch_size = 1;
    c.epochs = 100;
    c.samples_k = 8;
    c.instances = 6;
    c.tau = 1e-4;
    c.batch_norm = false;
    c.augment = true;
    return c;
  }
  static TrainConfig line_defaults() {
    TrainConfig c;
    c.kind = ModelKind::line;
    c.learning_rate = 1e-3;
    c.batch_size = 4;
    c.epochs = 20;
    c.instances = 4;
    c.tau = 0.02;
    return c;
  }
  static TrainConfig defaults(ModelKind k) {
    switch (k) {
      case ModelKind::line: return line_defaults();
      case ModelKind::vp: return vp_defaults();
      case ModelKind::homography: return homography_defaults();
    }
    return vp_defaults();
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1 || samples_k < 1 || single_samples < 1 || multi_samples < 1 || instances < 1)
      throw std::invalid_argument("batch size, K, S, P and M must be at least 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (kappa < 0.0 || !(loss_clamp > 0.0)) throw std::invalid_argument("kappa and loss clamp must be nonnegative");
    if (observations < 1) throw std::invalid_argument("observations per scene must be positive");
  }
};

// ---------------------------------------------------------------------------
// Losses

/// Error between one estimate and one ground-truth model.
inline double pair_loss(const ModelInstance& est, const ModelInstance& gt) {
  switch (gt.kind()) {
    case ModelKind::line: return line_distance(est, gt);
    case ModelKind::vp: {
      const double c = std::clamp(std::abs(est.vec().dot(gt.vec())), 0.0, 1.0);
      return std::acos(c);
    }
    case ModelKind::homography: {
      const Eigen::Matrix3d a = est.mat(), b = gt.mat();
      return std::min((a - b).norm(), (a + b).norm());
    }
  }
  return 0.0;
}

using PairLossFn = std::function<double(const ModelInstance&, const ModelInstance&)>;

/// Hungarian matching cost between the first min(M, G) estimates and the
/// ground truth, divided by the number of matched pairs.
inline double supervised_loss(std::span<const ModelInstance> est, std::span<const ModelInstance> gt,
                              const PairLossFn& loss = pair_loss) {
  if (gt.empty()) throw std::invalid_argument("supervised loss needs ground truth");
  const std::size_t n = std::min(est.size(), gt.size());
  if (n == 0) return std::numeric_limits<double>::infinity();
  Eigen::MatrixXd c(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(gt.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < gt.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = loss(est[i], gt[j]);
  return hungarian_assign(c).cost / static_cast<double>(n);
}

/// Negative mean over m of the cumulative inlier ratio of the first m models.
inline double self_supervised_loss(std::span<const ModelInstance> models, std::span<const Observation> y,
                                   const ScoringParams& params) {
  if (models.empty() || y.empty()) return 0.0;
  StateVector s(y.size(), 0.0);
  double total = 0.0;
  for (const auto& h : models) {
    update_state(s, h, y, params);
    total += std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(y.size());
  }
  return -total / static_cast<double>(models.size());
}

/// Mean hinge max(0, p/max(p) + s - 1) over observations and instance steps.
inline double imr_penalty(std::span<const std::vector<double>> weights, std::span<const StateVector> states) {
  if (weights.size() != states.size()) throw ShapeMismatch("one state per weight vector expected");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t m = 0; m < weights.size(); ++m) {
    if (weights[m].size() != states[m].size()) throw ShapeMismatch("weights and state differ in length");
    const double mx = *std::max_element(weights[m].begin(), weights[m].end());
    for (std::size_t i = 0; i < weights[m].size(); ++i) total += std::max(0.0, weights[m][i] / mx + states[m][i] - 1.0);
    count += weights[m].size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

inline double clamp_loss(double l, double limit) { return std::clamp(l, -limit, limit); }

/// Baseline-subtracted losses, clamped to the given absolute value.
inline std::vector<double> advantages(std::span<const double> losses, double limit) {
  if (losses.empty()) return {};
  const double mean = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  std::vector<double> a(losses.size());
  for (std::size_t k = 0; k < losses.size(); ++k) a[k] = clamp_loss(losses[k] - mean, limit);
  return a;
}

// ---------------------------------------------------------------------------
// Surrogate objective
//
// One record per instance step of a pseudo batch. The surrogate
//   J = sum_t score_coeff_t * sum_{i in drawn_t} log p_t(i)
//     + sum_t imr_coeff_t * sum_i max(0, p_t(i)/max p_t + imr_state_t(i) - 1)
// has the training gradient as its gradient.

struct StepRecord {
  std::vector<NetworkInput> inputs;
  std::vector<std::vector<std::size_t>> drawn;
  std::vector<double> score_coeff;
  std::vector<double> imr_coeff;
  std::vector<StateVector> imr_state;
};

inline double surrogate_objective(NetworkWeights& w, std::span<const StepRecord> steps, NetworkMode mode) {
  double j = 0.0;
  for (const auto& st : steps) {
    const auto p = forward(w, st.inputs, mode, nullptr, false);
    for (std::size_t t = 0; t < p.size(); ++t) {
      for (std::size_t i : st.drawn[t]) j += st.score_coeff[t] * std::log(p[t][static_cast<Eigen::Index>(i)]);
      if (st.imr_coeff[t] != 0.0) {
        const double mx = p[t].maxCoeff();
        for (Eigen::Index i = 0; i < p[t].size(); ++i)
          j += st.imr_coeff[t] * std::max(0.0, p[t][i] / mx + st.imr_state[t][static_cast<std::size_t>(i)] - 1.0);
      }
    }
  }
  return j;
}

inline NetworkGradient surrogate_gradient(NetworkWeights& w, std::span<const StepRecord> steps, NetworkMode mode) {
  NetworkGradient total(w);
  for (const auto& st : steps) {
    ForwardCache cache;
    const auto p = forward(w, st.inputs, mode, &cache, false);
    std::vector<Eigen::VectorXd> gp(p.size());
    for (std::size_t t = 0; t < p.size(); ++t) {
      gp[t] = Eigen::VectorXd::Zero(p[t].size());
      for (std::size_t i : st.drawn[t])
        gp[t][static_cast<Eigen::Index>(i)] += st.score_coeff[t] / p[t][static_cast<Eigen::Index>(i)];
      if (st.imr_coeff[t] != 0.0) {
        Eigen::Index arg = 0;
        const double mx = p[t].maxCoeff(&arg);
        double cross = 0.0;
        for (Eigen::Index i = 0; i < p[t].size(); ++i) {
          if (p[t][i] / mx + st.imr_state[t][static_cast<std::size_t>(i)] - 1.0 <= 0.0) continue;
          gp[t][i] += st.imr_coeff[t] / mx;
          cross += st.imr_coeff[t] * p[t][i];
        }
        gp[t][arg] -= cross / (mx * mx);
      }
    }
    total += backward(w, cache, gp);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void adam_update(NetworkWeights& w, AdamState& s, const NetworkGradient& g, double lr) {
  auto& tensors = w.tensors();
  if (s.m.empty()) {
    for (const auto& t : tensors) {
      s.m.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
      s.v.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
    }
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].trainable) continue;
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g.tensors[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g.tensors[i].cwiseAbs2();
    tensors[i].value.array() -= lr * (s.m[i].array() / c1) / ((s.v[i].array() / c2).sqrt() + s.eps);
  }
}

/// Cosine annealing from `base` at step 0 to 1e-3 * base at the last step.
inline double cosine_lr(double base, long step, long total_steps) {
  const double floor = 1e-3 * base;
  if (total_steps <= 1) return base;
  const double x = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return floor + (base - floor) * 0.5 * (1.0 + std::cos(M_PI * x));
}

// ---------------------------------------------------------------------------
// Policy-gradient step

/// Loss of a selected multi-hypothesis on its (subsampled) scene.
using TaskLossFn = std::function<double(std::span<const ModelInstance>, const Scene&)>;

inline TaskLossFn make_task_loss(const TrainConfig& config) {
  if (config.loss == LossKind::supervised)
    return [](std::span<const ModelInstance> models, const Scene& scene) {
      if (!scene.gt_models || scene.gt_models->empty())
        throw FormatError("supervised training needs scenes with ground-truth models");
      return supervised_loss(models, *scene.gt_models);
    };
  const ScoringParams params(config.tau);
  return [params](std::span<const ModelInstance> models, const Scene& scene) {
    return self_supervised_loss(models, scene.observations, params);
  };
}

struct BatchStats {
  double mean_loss = 0.0;   // raw task loss of the selected multi-hypotheses
  double mean_imr = 0.0;
  double mean_score = 0.0;  // joint soft inlier count of the selected ones
  double lr = 0.0;
};

/// Fixed-size random subset (with replacement when the scene is smaller).
inline Scene subsample_scene(const Scene& scene, std::size_t n, Rng& rng) {
  if (scene.observations.empty()) throw TooFewObservations("scene has no observations");
  std::vector<std::size_t> idx;
  if (scene.size() >= n) {
    std::vector<std::size_t> all(scene.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    idx.resize(scene.size());
    std::iota(idx.begin(), idx.end(), 0);
    while (idx.size() < n) idx.push_back(rng.below(scene.size()));
  }
  Scene out;
  out.kind = scene.kind;
  out.gt_models = scene.gt_models;
  out.intrinsics = scene.intrinsics;
  out.image_size = scene.image_size;
  std::vector<int> labels;
  for (std::size_t i : idx) {
    out.observations.push_back(scene.observations[i]);
    if (scene.gt_labels) labels.push_back((*scene.gt_labels)[i]);
  }
  if (scene.gt_labels) out.gt_labels = std::move(labels);
  return out;
}

/// One Adam update from a batch of (already subsampled) scenes.
inline BatchStats reinforce_step(NetworkWeights& w, AdamState& adam, std::span<const Scene> batch,
                                 const TrainConfig& config, const ModelClassSpec& spec, const TaskLossFn& task_loss,
                                 double lr, Rng& rng, std::span<const std::size_t> scene_ids = {}) {
  const std::size_t nb = batch.size();
  const std::size_t nk = static_cast<std::size_t>(config.samples_k);
  const std::size_t np = static_cast<std::size_t>(config.multi_samples);
  const std::size_t nt = nb * nk * np;
  const int nm = config.instances;
  const int dim = w.shape().input_dim;
  const ScoringParams params(config.tau);
  const NetworkMode mode = w.shape().batch_norm ? NetworkMode::train : NetworkMode::eval;
  const bool self_sup = config.loss == LossKind::self_supervised;

  auto scene_of = [&](std::size_t t) -> const Scene& { return batch[t / (nk * np)]; };
  std::vector<Rng> rngs;
  rngs.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) rngs.emplace_back(rng.next());
  std::vector<StateVector> states(nt);
  for (std::size_t t = 0; t < nt; ++t) states[t].assign(scene_of(t).size(), 0.0);
  std::vector<std::vector<ModelInstance>> models(nt);
  std::vector<std::vector<std::vector<double>>> weights(nt);  // per step, for the penalty

  std::vector<StepRecord> steps(static_cast<std::size_t>(nm));
  for (int m = 0; m < nm; ++m) {
    StepRecord& st = steps[static_cast<std::size_t>(m)];
    st.inputs.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t)
      st.inputs.push_back(make_network_input(scene_of(t).observations, config.state_blind ? StateVector{} : states[t], dim));
    const auto p = forward(w, st.inputs, mode, nullptr, true);
    st.drawn.resize(nt);
    st.imr_state = states;
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<double> pt(p[t].data(), p[t].data() + p[t].size());
      const auto& y = scene_of(t).observations;
      try {
        HypothesisPool pool = generate_hypothesis_pool(y, pt, config.single_samples, spec, rngs[t]);
        st.drawn[t] = std::move(pool.drawn);
        const std::size_t best = select_best(pool, y, states[t], params);
        models[t].push_back(pool.hypotheses[best].model);
        update_state(states[t], models[t].back(), y, params);
      } catch (const EmptyPool&) {
        // every draw was degenerate; the trajectory keeps its models so far
      }
      weights[t].push_back(std::move(pt));
    }
  }

  // best of P per (b, k), then losses and advantages per scene
  BatchStats stats;
  stats.lr = lr;
  std::vector<double> score_coeff(nt, 0.0), imr_coeff(nt, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    std::vector<double> losses(nk);
    std::vector<std::size_t> chosen(nk);
    for (std::size_t k = 0; k < nk; ++k) {
      const std::size_t base = (b * nk + k) * np;
      std::size_t best = base;
      double best_score = -1.0;
      for (std::size_t p = 0; p < np; ++p) {
        const double s = multi_instance_score(models[base + p], batch[b].observations, params);
        if (s > best_score) {
          best_score = s;
          best = base + p;
        }
      }
      chosen[k] = best;
      double l = task_loss(models[best], batch[b]);
      if (!std::isfinite(l)) l = config.loss_clamp;
      losses[k] = l;
      stats.mean_loss += l;
      stats.mean_score += best_score;
      if (self_sup) {
        std::vector<StateVector> st_m;
        for (int m = 0; m < nm; ++m) st_m.push_back(steps[static_cast<std::size_t>(m)].imr_state[best]);
        stats.mean_imr += imr_penalty(weights[best], st_m);
      }
    }
    const auto adv = advantages(losses, config.loss_clamp);
    const double norm = static_cast<double>(nb * nk);
    for (std::size_t k = 0; k < nk; ++k) {
      const std::size_t base = (b * nk + k) * np;
      for (std::size_t p = 0; p < np; ++p) score_coeff[base + p] = adv[k] / norm;
      if (self_sup && config.kappa > 0.0)
        imr_coeff[chosen[k]] =
            config.kappa / (norm * static_cast<double>(nm) * static_cast<double>(batch[b].size()));
    }
  }
  const double denom = static_cast<double>(nb * nk);
  stats.mean_loss /= denom;
  stats.mean_imr /= denom;
  stats.mean_score /= denom;

  for (auto& st : steps) {
    st.score_coeff = score_coeff;
    st.imr_coeff = imr_coeff;
  }
  const NetworkGradient g = surrogate_gradient(w, steps, mode);
  if (!g.all_finite()) {
    std::string ids;
    for (std::size_t i = 0; i < scene_ids.size(); ++i) ids += (i ? "," : "") + std::to_string(scene_ids[i]);
    throw NonFiniteGradient("non-finite gradient in batch with scenes [" + ids + "]");
  }
  adam_update(w, adam, g, lr);
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainLogEntry {
  int epoch = 0;
  long step = 0;
  double mean_loss = 0.0;
  double mean_imr = 0.0;
  double lr = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainLogEntry&)> on_step;
  std::function<void(int epoch, double mean_loss, const NetworkWeights&)> on_epoch;
};

struct TrainResult {
  NetworkWeights weights;
  std::vector<TrainLogEntry> log;
  std::vector<double> epoch_loss;
};

/// Trains for config.epochs passes over the dataset. With `groups`, each
/// epoch draws dataset.size() scenes through the rebalanced sampler instead
/// of a shuffled pass.
inline TrainResult train(std::span<const Scene> dataset, const TrainConfig& config, NetworkWeights initial,
                         const TrainHooks& hooks = {}, std::vector<std::vector<std::size_t>> groups = {}) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("training needs a nonempty dataset");
  TrainResult result;
  result.weights = std::move(initial);
  if (config.epochs == 0) return result;

  const ModelClassSpec& spec = model_class(config.kind);
  const TaskLossFn loss = make_task_loss(config);
  const std::size_t bsz = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((dataset.size() + bsz - 1) / bsz);
  const long total_steps = steps_per_epoch * config.epochs;
  AdamState adam;
  std::optional<RebalancedSampler> sampler;
  if (!groups.empty()) sampler.emplace(std::move(groups), derive_seed(config.seed, 0x9e0));

  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(dataset.size());
    if (sampler) {
      for (auto& o : order) o = sampler->next().item;
    } else {
      std::iota(order.begin(), order.end(), 0);
      Rng erng = Rng::derived(config.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
      shuffle(order, erng);
    }
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bsz, ++step) {
      Rng srng = Rng::derived(config.seed, static_cast<std::uint64_t>(step));
      const std::size_t end = std::min(order.size(), start + bsz);
      std::vector<Scene> batch;
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::size_t id : ids) {
        Scene s = subsample_scene(dataset[id], static_cast<std::size_t>(config.observations), srng);
        if (config.augment && s.kind == ModelKind::homography) s = augment_correspondences(s, srng);
        batch.push_back(std::move(s));
      }
      const double lr = cosine_lr(config.learning_rate, step, total_steps);
      const BatchStats bs = reinforce_step(result.weights, adam, batch, config, spec, loss, lr, srng, ids);
      TrainLogEntry e{epoch, step, bs.mean_loss, bs.mean_imr, lr};
      result.log.push_back(e);
      if (hooks.on_step) hooks.on_step(e);
      epoch_sum += bs.mean_loss;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps_per_epoch));
    if (hooks.on_epoch) hooks.on_epoch(epoch, result.epoch_loss.back(), result.weights);
  }
  return result;
}

}  // namespace consac
