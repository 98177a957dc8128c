#pragma once

// Command-line front end: synth, train, fit, eval and sweep.
//
// Exit codes: 0 success, 1 usage error, 2 data or format error.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "consac/data.hpp"
#include "consac/eval.hpp"
#include "consac/network.hpp"
#include "consac/pipeline.hpp"
#include "consac/svg.hpp"
#include "consac/training.hpp"

namespace consac::cli {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Helpers

/// Sorted *.json files of a directory.
inline std::vector<fs::path> json_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("not a directory: '" + dir.string() + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Runs fn(0..n-1) on up to `threads` workers. Results must be written by
/// index; the first failing index (lowest) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, n))));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

template <typename T>
void override_if(CLI::Option* opt, T& target, const T& value) {
  if (opt && opt->count() > 0) target = value;
}

// ---------------------------------------------------------------------------
// Shared sampler and refinement flags

struct FitFlags {
  std::string method = "consac";
  int instances = 0, single = 0, multi = 0, em_iterations = 0;
  double tau = 0, sigma = 0, theta = 0, min_increment = 0, outlier_density = 0;
  bool no_em = false;
  CLI::Option *o_m = nullptr, *o_s = nullptr, *o_p = nullptr, *o_tau = nullptr, *o_sigma = nullptr,
              *o_iters = nullptr, *o_theta = nullptr, *o_inc = nullptr, *o_outlier = nullptr;

  void add(CLI::App* app) {
    app->add_option("--method", method, "consac | unconditional | uniform | uniform-removal | sequential")
        ->capture_default_str();
    o_m = app->add_option("-M,--instances", instances, "instances per multi-hypothesis (default per model class)");
    o_s = app->add_option("-S,--single-samples", single, "single-instance samples per instance step");
    o_p = app->add_option("-P,--multi-samples", multi, "multi-instance samples");
    o_tau = app->add_option("--tau", tau, "soft inlier threshold");
    o_sigma = app->add_option("--sigma", sigma, "EM residual standard deviation");
    o_iters = app->add_option("--em-iterations", em_iterations, "EM iterations");
    o_theta = app->add_option("--theta", theta, "hard inlier threshold for selection and assignment");
    o_inc = app->add_option("--min-increment", min_increment, "minimum hard-inlier gain to keep an instance");
    o_outlier = app->add_option("--outlier-density", outlier_density, "uniform outlier density in the EM mixture");
    app->add_flag("--no-em", no_em, "skip EM refinement");
  }

  FitOptions resolve(ModelKind kind, std::uint64_t seed) const {
    FitOptions o;
    o.method = parse_method(method);
    o.sampler = SamplerConfig::defaults(kind);
    o.refine = RefineConfig::defaults(kind);
    override_if(o_m, o.sampler.instances, instances);
    override_if(o_s, o.sampler.single_samples, single);
    override_if(o_p, o.sampler.multi_samples, multi);
    override_if(o_tau, o.sampler.tau, tau);
    override_if(o_sigma, o.refine.sigma, sigma);
    override_if(o_iters, o.refine.em_iterations, em_iterations);
    override_if(o_theta, o.refine.theta, theta);
    override_if(o_inc, o.refine.min_increment, min_increment);
    override_if(o_outlier, o.refine.outlier_density, outlier_density);
    o.em = !no_em;
    o.sampler.seed = seed;
    o.sampler.validate();
    o.refine.validate();
    return o;
  }
};

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string kind, out;
  int count = 1, lines = 4, planes = 2, points_per_plane = 200;
  double noise = 0.002, outlier_fraction = 0.3;
};

inline int cmd_synth(const SynthArgs& a, std::uint64_t seed, std::ostream& out) {
  const ModelKind kind = parse_kind(a.kind);
  if (kind == ModelKind::vp) throw UsageError("synth supports lines and homography");
  if (a.count < 0) throw UsageError("--count must be nonnegative");
  fs::create_directories(a.out);
  SynthLineConfig lc;
  lc.num_lines = a.lines;
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    const Scene scene = kind == ModelKind::line
                            ? generate_line_scene(lc, s)
                            : generate_homography_scene(a.planes, a.points_per_plane, a.noise, a.outlier_fraction, s);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05d.json", i);
    save_scene(scene, (fs::path(a.out) / name).string());
  }
  out << "wrote " << a.count << " scenes to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string kind = "vp", data, out, log, checkpoint_dir, init, loss;
  TrainConfig cfg;
  int width = 128, blocks = 6;
  bool batch_norm = true, no_batch_norm = false;
  std::map<std::string, CLI::Option*> opts;
};

inline int cmd_train(TrainArgs& a, std::uint64_t seed, std::ostream& out) {
  const ModelKind kind = parse_kind(a.kind);
  TrainConfig c = TrainConfig::defaults(kind);
  const TrainConfig& g = a.cfg;
  override_if(a.opts["epochs"], c.epochs, g.epochs);
  override_if(a.opts["lr"], c.learning_rate, g.learning_rate);
  override_if(a.opts["batch"], c.batch_size, g.batch_size);
  override_if(a.opts["k"], c.samples_k, g.samples_k);
  override_if(a.opts["s"], c.single_samples, g.single_samples);
  override_if(a.opts["p"], c.multi_samples, g.multi_samples);
  override_if(a.opts["m"], c.instances, g.instances);
  override_if(a.opts["tau"], c.tau, g.tau);
  override_if(a.opts["kappa"], c.kappa, g.kappa);
  override_if(a.opts["clamp"], c.loss_clamp, g.loss_clamp);
  override_if(a.opts["observations"], c.observations, g.observations);
  if (a.opts["state-blind"]->count() > 0) c.state_blind = true;
  if (a.opts["augment"]->count() > 0) c.augment = true;
  if (a.opts["no-augment"]->count() > 0) c.augment = false;
  if (a.opts["no-batch-norm"]->count() > 0) c.batch_norm = false;
  if (a.opts["batch-norm"]->count() > 0) c.batch_norm = true;
  if (!a.loss.empty()) {
    if (a.loss == "supervised")
      c.loss = LossKind::supervised;
    else if (a.loss == "self")
      c.loss = LossKind::self_supervised;
    else
      throw UsageError("--loss must be 'supervised' or 'self'");
  }
  c.kind = kind;
  c.seed = seed;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::vector<Scene> dataset;
  for (const auto& p : json_files(a.data)) dataset.push_back(load_scene(p.string()));
  if (dataset.empty()) throw FormatError("no scene files in '" + a.data + "'");
  for (const auto& s : dataset)
    if (s.kind != kind) throw FormatError("dataset contains a scene of kind " + std::string(to_string(s.kind)));

  NetworkWeights w;
  if (!a.init.empty()) {
    w = load_weights(a.init);
  } else {
    Rng rng(derive_seed(seed, 0x1417));
    w = NetworkWeights({observation_dim(kind), a.width, a.blocks, c.batch_norm}, rng);
  }

  std::ofstream log;
  if (!a.log.empty()) {
    if (fs::path(a.log).has_parent_path()) fs::create_directories(fs::path(a.log).parent_path());
    log.open(a.log, std::ios::binary);
    if (!log) throw FormatError("cannot write log '" + a.log + "'");
  }
  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogEntry& e) {
    if (log)
      log << nlohmann::json{{"epoch", e.epoch}, {"step", e.step}, {"mean_loss", e.mean_loss}, {"mean_imr", e.mean_imr}, {"lr", e.lr}}
                 .dump()
          << '\n';
  };
  hooks.on_epoch = [&](int epoch, double mean, const NetworkWeights& weights) {
    if (log) log << nlohmann::json{{"epoch", epoch}, {"epoch_mean_loss", mean}}.dump() << '\n';
    out << "epoch " << epoch << " mean loss " << mean << '\n';
    if (!a.checkpoint_dir.empty()) {
      fs::create_directories(a.checkpoint_dir);
      char name[40];
      std::snprintf(name, sizeof name, "weights_epoch_%04d.json", epoch);
      save_weights(weights, (fs::path(a.checkpoint_dir) / name).string());
    }
  };
  TrainResult r = train(dataset, c, std::move(w), hooks);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_weights(r.weights, a.out);
  out << "wrote weights to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs {
  std::string scene, scenes, weights, out, svg;
  FitFlags flags;
  unsigned threads = 1;
  bool with_weights = false;
};

inline int cmd_fit(const FitArgs& a, std::uint64_t seed, std::ostream& out) {
  if (a.scene.empty() == a.scenes.empty()) throw UsageError("give exactly one of --scene or --scenes");
  const Method method = parse_method(a.flags.method);
  std::optional<NetworkWeights> net;
  if (needs_network(method)) {
    if (a.weights.empty()) throw UsageError("--weights is required for method " + a.flags.method);
    net = load_weights(a.weights);
  }
  std::vector<fs::path> inputs;
  if (!a.scene.empty())
    inputs.push_back(a.scene);
  else
    inputs = json_files(a.scenes);

  struct Item {
    std::string result, svg;
  };
  std::vector<Item> items(inputs.size());
  parallel_for(inputs.size(), a.threads, [&](std::size_t i) {
    const Scene scene = load_scene(inputs[i].string());
    const FitOptions opt = a.flags.resolve(scene.kind, derive_seed(seed, i));
    FitResult r = fit_scene(scene, opt, net ? &*net : nullptr);
    r.scene_id = inputs[i].stem().string();
    nlohmann::json doc = result_to_json(r, opt, a.with_weights);
    doc["run"] = seed;
    items[i].result = doc.dump(1) + "\n";
    if (!a.svg.empty()) items[i].svg = render_svg(scene, r);
  });

  if (!a.scene.empty()) {
    write_text(a.out, items[0].result);
    if (!a.svg.empty()) write_text(a.svg, items[0].svg);
  } else {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const std::string id = inputs[i].stem().string();
      write_text(fs::path(a.out) / ("result_" + id + ".json"), items[i].result);
      if (!a.svg.empty()) write_text(fs::path(a.svg) / (id + ".svg"), items[i].svg);
    }
  }
  out << "fitted " << inputs.size() << " scene(s)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> pred;
  std::string gt, metric = "f1", report;
  double threshold = -1.0;
  unsigned threads = 1;
};

inline double scene_metric(const std::string& metric, const FitResult& r, const Scene& gt, double threshold) {
  const auto sel = r.selected();
  if (metric == "f1") {
    if (!gt.gt_models) throw FormatError("scene '" + r.scene_id + "' has no ground-truth models");
    if (gt.kind == ModelKind::line) {
      const auto segments = gt_line_segments(*gt.gt_models, gt.observations,
                                             gt.gt_labels ? std::span<const int>(*gt.gt_labels) : std::span<const int>());
      return f1_segments(sel, segments, threshold > 0 ? threshold : kLineMatchThreshold);
    }
    if (gt.kind == ModelKind::vp) {
      if (sel.empty()) return 0.0;
      const Eigen::Matrix3d k = gt.intrinsics.value_or(Eigen::Matrix3d::Identity());
      return f1_instances(vp_error_matrix(sel, *gt.gt_models, k), threshold > 0 ? threshold : kVpMatchThresholdDeg);
    }
    throw UsageError("f1 is defined for lines and vanishing points");
  }
  if (metric == "me") {
    if (!gt.gt_labels) throw FormatError("scene '" + r.scene_id + "' has no ground-truth labels");
    return misclassification_error(std::span<const int>(r.assignments), *gt.gt_labels);
  }
  throw UsageError("unknown metric '" + metric + "'");
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.metric != "f1" && a.metric != "me" && a.metric != "auc") throw UsageError("--metric must be f1, me or auc");
  struct Row {
    std::string method;
    std::uint64_t run;
    std::string scene;
    double value;                 // f1 / me per scene
    std::vector<double> errors;   // auc: matched VP errors
  };
  std::vector<fs::path> files;
  for (const auto& d : a.pred)
    for (auto& f : json_files(d)) files.push_back(f);
  std::vector<Row> rows(files.size());
  parallel_for(files.size(), a.threads, [&](std::size_t i) {
    const nlohmann::json doc = read_json(files[i]);
    const FitResult r = result_from_json(doc);
    const Scene gt = load_scene((fs::path(a.gt) / (r.scene_id + ".json")).string());
    if (gt.observations.size() != r.assignments.size() && a.metric == "me")
      throw FormatError("result '" + files[i].string() + "' does not match its scene");
    Row row{std::string(to_string(r.method)), doc.value("run", std::uint64_t{0}), r.scene_id, 0.0, {}};
    if (a.metric == "auc") {
      if (!gt.gt_models) throw FormatError("scene '" + r.scene_id + "' has no ground-truth models");
      const Eigen::Matrix3d k = gt.intrinsics.value_or(Eigen::Matrix3d::Identity());
      row.errors = matched_vp_errors(r.selected(), *gt.gt_models, k, gt.gt_models->size());
    } else {
      row.value = scene_metric(a.metric, r, gt, a.threshold);
    }
    rows[i] = std::move(row);
  });

  std::ofstream report;
  if (!a.report.empty()) {
    if (fs::path(a.report).has_parent_path()) fs::create_directories(fs::path(a.report).parent_path());
    report.open(a.report, std::ios::binary);
    if (!report) throw FormatError("cannot write report '" + a.report + "'");
    for (const auto& r : rows) {
      nlohmann::json j{{"method", r.method}, {"run", r.run}, {"scene", r.scene}, {"metric", a.metric}};
      if (a.metric == "auc")
        for (double e : r.errors) j["errors"].push_back(std::isfinite(e) ? nlohmann::json(e) : nlohmann::json(nullptr));
      else
        j["value"] = r.value;
      report << j.dump() << '\n';
    }
  }

  // per method: one value per run, then mean and std over runs
  std::map<std::string, std::map<std::uint64_t, std::vector<const Row*>>> groups;
  for (const auto& r : rows) groups[r.method][r.run].push_back(&r);
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %-16s %5s %7s %10s %10s\n", "metric", "method", "runs", "scenes", "mean", "std");
  out << line;
  for (const auto& [method, runs] : groups) {
    std::vector<double> per_run;
    std::size_t scenes = 0;
    for (const auto& [run, rs] : runs) {
      scenes += rs.size();
      if (a.metric == "auc") {
        std::vector<double> errs;
        for (const Row* r : rs) errs.insert(errs.end(), r->errors.begin(), r->errors.end());
        per_run.push_back(auc_recall(errs));
      } else {
        std::vector<double> v;
        for (const Row* r : rs) v.push_back(r->value);
        per_run.push_back(summarize(v).mean);
      }
    }
    const Summary s = summarize(per_run);
    std::snprintf(line, sizeof line, "%-8s %-16s %5zu %7zu %10.4f %10.4f\n", a.metric.c_str(), method.c_str(),
                  per_run.size(), scenes, s.mean, s.stddev);
    out << line;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string weights, scenes, out, methods = "consac,sequential", s_values = "1,2,4,8,16,32",
                                     p_values = "1,2,4,8,16,32";
  FitFlags flags;
  unsigned threads = 1;
  double threshold = -1.0;
};

inline int cmd_sweep(const SweepArgs& a, std::uint64_t seed, std::ostream& out) {
  const auto s_values = parse_int_list(a.s_values);
  const auto p_values = parse_int_list(a.p_values);
  std::vector<Method> methods;
  {
    std::stringstream ss(a.methods);
    std::string m;
    while (std::getline(ss, m, ',')) methods.push_back(parse_method(m));
  }
  std::optional<NetworkWeights> net;
  for (Method m : methods)
    if (needs_network(m) && !net) {
      if (a.weights.empty()) throw UsageError("--weights is required for network methods");
      net = load_weights(a.weights);
    }
  const auto files = json_files(a.scenes);
  std::vector<Scene> scenes;
  for (const auto& f : files) scenes.push_back(load_scene(f.string()));

  nlohmann::json grid = nlohmann::json::array();
  std::string csv = "method,S,P,mean_f1,std_f1\n";
  for (Method method : methods) {
    out << to_string(method) << " mean F1 (rows S, columns P)\n      ";
    for (int p : p_values) {
      char c[16];
      std::snprintf(c, sizeof c, "%8d", p);
      out << c;
    }
    out << '\n';
    for (int s : s_values) {
      char c[16];
      std::snprintf(c, sizeof c, "%6d", s);
      out << c;
      for (int p : p_values) {
        std::vector<double> f1(scenes.size());
        parallel_for(scenes.size(), a.threads, [&](std::size_t i) {
          FitFlags flags = a.flags;
          flags.method = std::string(to_string(method));
          FitOptions opt = flags.resolve(scenes[i].kind, derive_seed(seed, i));
          opt.sampler.single_samples = s;
          opt.sampler.multi_samples = p;
          FitResult r = fit_scene(scenes[i], opt, net ? &*net : nullptr);
          r.scene_id = files[i].stem().string();
          f1[i] = scene_metric("f1", r, scenes[i], a.threshold);
        });
        const Summary sm = summarize(f1);
        std::snprintf(c, sizeof c, "%8.3f", sm.mean);
        out << c;
        grid.push_back({{"method", std::string(to_string(method))}, {"S", s}, {"P", p}, {"mean_f1", sm.mean}, {"std_f1", sm.stddev}});
        char row[96];
        std::snprintf(row, sizeof row, "%s,%d,%d,%.6f,%.6f\n", std::string(to_string(method)).c_str(), s, p, sm.mean,
                      sm.stddev);
        csv += row;
      }
      out << '\n';
    }
  }
  if (!a.out.empty()) {
    if (fs::path(a.out).extension() == ".csv")
      write_text(a.out, csv);
    else
      write_text(a.out, grid.dump(1) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Conditional sample consensus: multi-model fitting with learned conditional sampling", "consac"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; keys of a [command] section set that command's flags");
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "seed for all randomness")->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate synthetic scenes");
  c_synth->add_option("--kind", synth.kind, "lines | homography")->required();
  c_synth->add_option("--count", synth.count, "number of scenes")->capture_default_str();
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--lines", synth.lines, "lines per scene")->capture_default_str();
  c_synth->add_option("--planes", synth.planes, "planes per homography scene")->capture_default_str();
  c_synth->add_option("--points-per-plane", synth.points_per_plane, "correspondence slots per plane")
      ->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "correspondence noise std")->capture_default_str();
  c_synth->add_option("--outlier-fraction", synth.outlier_fraction, "fraction of outlier correspondences")
      ->capture_default_str();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train the sampling network");
  c_train->add_option("--kind", tr.kind, "lines | vp | homography")->capture_default_str();
  c_train->add_option("--data", tr.data, "directory of scene files")->required();
  c_train->add_option("--out", tr.out, "output weights file")->required();
  c_train->add_option("--log", tr.log, "training log (line-delimited JSON)");
  c_train->add_option("--checkpoint-dir", tr.checkpoint_dir, "write weights after every epoch");
  c_train->add_option("--init", tr.init, "initial weights file");
  c_train->add_option("--loss", tr.loss, "supervised | self (default per model class)");
  tr.opts["epochs"] = c_train->add_option("--epochs", tr.cfg.epochs, "epochs");
  tr.opts["lr"] = c_train->add_option("--lr", tr.cfg.learning_rate, "learning rate");
  tr.opts["batch"] = c_train->add_option("--batch", tr.cfg.batch_size, "scenes per batch (B)");
  tr.opts["k"] = c_train->add_option("-K,--samples-k", tr.cfg.samples_k, "selected multi-hypotheses per scene (K)");
  tr.opts["s"] = c_train->add_option("-S,--single-samples", tr.cfg.single_samples, "single-instance samples (S)");
  tr.opts["p"] = c_train->add_option("-P,--multi-samples", tr.cfg.multi_samples, "multi-instance samples (P)");
  tr.opts["m"] = c_train->add_option("-M,--instances", tr.cfg.instances, "instances per multi-hypothesis (M)");
  tr.opts["tau"] = c_train->add_option("--tau", tr.cfg.tau, "soft inlier threshold");
  tr.opts["kappa"] = c_train->add_option("--kappa", tr.cfg.kappa, "inlier masking weight");
  tr.opts["clamp"] = c_train->add_option("--clamp", tr.cfg.loss_clamp, "loss clamp");
  tr.opts["observations"] = c_train->add_option("--observations", tr.cfg.observations, "observations per scene");
  c_train->add_option("--width", tr.width, "network channels")->capture_default_str();
  c_train->add_option("--blocks", tr.blocks, "residual blocks")->capture_default_str();
  bool flag_sink = false;
  tr.opts["batch-norm"] = c_train->add_flag("--batch-norm", flag_sink, "enable batch normalization");
  tr.opts["no-batch-norm"] = c_train->add_flag("--no-batch-norm", flag_sink, "disable batch normalization");
  tr.opts["state-blind"] = c_train->add_flag("--state-blind", flag_sink, "feed a zero state (unconditional)");
  tr.opts["augment"] = c_train->add_flag("--augment", flag_sink, "augment correspondences");
  tr.opts["no-augment"] = c_train->add_flag("--no-augment", flag_sink, "disable augmentation");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "fit models to scenes");
  c_fit->add_option("--scene", fit.scene, "scene file");
  c_fit->add_option("--scenes", fit.scenes, "directory of scene files");
  c_fit->add_option("--weights", fit.weights, "network weights file");
  c_fit->add_option("--out", fit.out, "result file (or directory with --scenes)")->required();
  c_fit->add_option("--svg", fit.svg, "SVG file (or directory with --scenes)");
  c_fit->add_option("--threads", fit.threads, "scene-level worker threads")->capture_default_str();
  c_fit->add_flag("--with-weights", fit.with_weights, "store sampling weights and states in the result");
  fit.flags.add(c_fit);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "score results against ground truth");
  c_eval->add_option("--pred", ev.pred, "result directory (repeat for several runs)")->required();
  c_eval->add_option("--gt", ev.gt, "scene directory")->required();
  c_eval->add_option("--metric", ev.metric, "f1 | me | auc")->capture_default_str();
  c_eval->add_option("--threshold", ev.threshold, "F1 match threshold (default per model class)");
  c_eval->add_option("--report", ev.report, "per-scene report (line-delimited JSON)");
  c_eval->add_option("--threads", ev.threads, "worker threads")->capture_default_str();

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "mean F1 over a grid of S and P budgets");
  c_sweep->add_option("--scenes", sw.scenes, "directory of scene files")->required();
  c_sweep->add_option("--weights", sw.weights, "network weights file");
  c_sweep->add_option("--methods", sw.methods, "comma-separated methods")->capture_default_str();
  c_sweep->add_option("--s-values", sw.s_values, "comma-separated S values")->capture_default_str();
  c_sweep->add_option("--p-values", sw.p_values, "comma-separated P values")->capture_default_str();
  c_sweep->add_option("--out", sw.out, "grid output (.csv or .json)");
  c_sweep->add_option("--threads", sw.threads, "scene-level worker threads")->capture_default_str();
  c_sweep->add_option("--threshold", sw.threshold, "F1 match threshold");
  sw.flags.add(c_sweep);
  c_sweep->remove_option(c_sweep->get_option("--method"));
  c_sweep->remove_option(c_sweep->get_option("-S"));
  c_sweep->remove_option(c_sweep->get_option("-P"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_synth) return cmd_synth(synth, seed, out);
    if (*c_train) return cmd_train(tr, seed, out);
    if (*c_fit) return cmd_fit(fit, seed, out);
    if (*c_eval) return cmd_eval(ev, out);
    if (*c_sweep) return cmd_sweep(sw, seed, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace consac::cli
