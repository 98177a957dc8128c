#pragma once

// End-to-end fitting of one scene: sampling, EM refinement, ranking,
// selection and observation assignment; plus the result document.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "consac/data.hpp"
#include "consac/eval.hpp"
#include "consac/network.hpp"
#include "consac/refine.hpp"
#include "consac/sampler.hpp"

namespace consac {

enum class Method { consac, unconditional, uniform, uniform_removal, sequential };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::consac: return "consac";
    case Method::unconditional: return "unconditional";
    case Method::uniform: return "uniform";
    case Method::uniform_removal: return "uniform-removal";
    case Method::sequential: return "sequential";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (Method m : {Method::consac, Method::unconditional, Method::uniform, Method::uniform_removal, Method::sequential})
    if (s == to_string(m)) return m;
  throw FormatError("unknown method '" + std::string(s) + "'");
}

inline bool needs_network(Method m) { return m == Method::consac || m == Method::unconditional; }

struct FitOptions {
  Method method = Method::consac;
  SamplerConfig sampler;
  RefineConfig refine;
  bool em = true;
};

struct FitResult {
  std::string scene_id;
  ModelKind kind = ModelKind::line;
  Method method = Method::consac;
  std::uint64_t seed = 0;
  std::vector<ModelInstance> models;  // in selection order, after EM
  std::vector<std::size_t> ranking;   // permutation of models
  Selection selection;
  std::vector<int> assignments;       // index into the ranked selected models, -1 = outlier
  double score = 0.0;
  std::vector<std::vector<double>> weights;  // sampling weights per instance step
  std::vector<StateVector> states;

  /// The kept prefix of the ranked models.
  std::vector<ModelInstance> selected() const {
    std::vector<ModelInstance> out;
    for (std::size_t i = 0; i < selection.count; ++i) out.push_back(models[ranking[i]]);
    return out;
  }
};

inline MultiHypothesis sample_scene(const Scene& scene, const FitOptions& opt, const NetworkWeights* net) {
  const ModelClassSpec& spec = model_class(scene.kind);
  const auto& y = scene.observations;
  if (needs_network(opt.method) && !net) throw std::invalid_argument("method needs network weights");
  if (net && needs_network(opt.method) && net->shape().input_dim != observation_dim(scene.kind))
    throw ShapeMismatch("network input dimension does not match the scene");
  switch (opt.method) {
    case Method::consac: return run_consac(y, spec, opt.sampler, network_weight_fn(*net));
    case Method::unconditional: return run_unconditional(y, spec, opt.sampler, network_weight_fn(*net, true));
    case Method::uniform: return run_consac(y, spec, opt.sampler, uniform_weights);
    case Method::uniform_removal: return run_consac(y, spec, opt.sampler, uniform_with_removal_weights);
    case Method::sequential: return sequential_ransac_best_of(y, spec, opt.sampler);
  }
  throw std::invalid_argument("unknown method");
}

inline FitResult fit_scene(const Scene& scene, const FitOptions& opt, const NetworkWeights* net) {
  const ModelClassSpec& spec = model_class(scene.kind);
  const auto& y = scene.observations;
  if (y.size() < static_cast<std::size_t>(spec.minimal_set_size))
    throw TooFewObservations("scene has fewer observations than a minimal set");
  MultiHypothesis mh = sample_scene(scene, opt, net);
  FitResult r;
  r.kind = scene.kind;
  r.method = opt.method;
  r.seed = opt.sampler.seed;
  r.score = mh.score;
  r.weights = std::move(mh.weights);
  r.states = std::move(mh.states);
  r.models = mh.models;
  if (opt.em && opt.refine.em_iterations > 0 && !r.models.empty()) r.models = em_refine(r.models, y, opt.refine, spec);
  r.ranking = rank_instances(r.models, y, ScoringParams(opt.sampler.tau));
  const auto ranked = permute<ModelInstance>(r.models, r.ranking);
  r.selection = select_instances(ranked, y, opt.refine);
  r.assignments = assign_observations(std::span<const ModelInstance>(ranked).first(r.selection.count), y,
                                      opt.refine.theta);
  return r;
}

// ---------------------------------------------------------------------------
// Result document

constexpr int kResultFormatVersion = 1;

inline nlohmann::json options_to_json(const FitOptions& o) {
  return {{"method", std::string(to_string(o.method))},
          {"instances", o.sampler.instances},
          {"single_samples", o.sampler.single_samples},
          {"multi_samples", o.sampler.multi_samples},
          {"tau", o.sampler.tau},
          {"em", o.em},
          {"sigma", o.refine.sigma},
          {"em_iterations", o.refine.em_iterations},
          {"theta", o.refine.theta},
          {"min_increment", o.refine.min_increment},
          {"outlier_density", o.refine.outlier_density}};
}

inline nlohmann::json result_to_json(const FitResult& r, const FitOptions& o, bool with_weights = false) {
  nlohmann::json doc;
  doc["format"] = "consac-result";
  doc["version"] = kResultFormatVersion;
  doc["scene"] = r.scene_id;
  doc["kind"] = std::string(to_string(r.kind));
  doc["seed"] = r.seed;
  doc["config"] = options_to_json(o);
  nlohmann::json models = nlohmann::json::array();
  for (const auto& h : r.models) models.push_back(h.params());
  doc["models"] = std::move(models);
  doc["ranking"] = r.ranking;
  doc["selected"] = r.selection.count;
  doc["increments"] = r.selection.increments;
  doc["assignments"] = r.assignments;
  doc["score"] = r.score;
  if (with_weights) {
    doc["weights"] = r.weights;
    doc["states"] = r.states;
  }
  return doc;
}

inline FitResult result_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "consac-result") throw FormatError("not a result document");
    if (doc.at("version").get<int>() != kResultFormatVersion)
      throw VersionError("unsupported result version " + std::to_string(doc.at("version").get<int>()));
    FitResult r;
    r.scene_id = doc.at("scene").get<std::string>();
    r.kind = parse_kind(doc.at("kind").get<std::string>());
    r.method = parse_method(doc.at("config").at("method").get<std::string>());
    r.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& p : doc.at("models")) r.models.push_back(ModelInstance::from_params(r.kind, p.get<std::vector<double>>()));
    r.ranking = doc.at("ranking").get<std::vector<std::size_t>>();
    r.selection.count = doc.at("selected").get<std::size_t>();
    r.selection.increments = doc.at("increments").get<std::vector<std::size_t>>();
    r.assignments = doc.at("assignments").get<std::vector<int>>();
    r.score = doc.at("score").get<double>();
    if (r.ranking.size() != r.models.size() || r.selection.count > r.models.size())
      throw FormatError("result ranking does not match its models");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed result document: ") + e.what());
  }
}

}  // namespace consac
