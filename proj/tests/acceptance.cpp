// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "consac/cli.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace consac {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  testing::ProbeStats s = testing::check_log_prob_gradients(20, 2024);
  const double t = seconds_since(t0);
  const bool classes = s.classes.size() == 8;
  return {s.failures == 0 && s.probes >= 1000 && t < 60.0 && classes,
          fmt("%zu probes over %zu tensor classes, %zu above 1e-4 (worst %.2e at %s; %zu at rounding level, %zu redrawn "
              "at ReLU kinks), %.1f s",
              s.probes, s.classes.size(), s.failures, s.worst, s.worst_name.c_str(), s.noise_limited, s.kinks, t)};
}

Outcome hungarian() {
  const auto t0 = Clock::now();
  Rng rng(7);
  int mismatches = 0;
  for (int n = 2; n <= 6; ++n)
    for (int t = 0; t < 1000; ++t) {
      Eigen::MatrixXd m(n, n);
      // small integers make exact equality meaningful
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = static_cast<double>(rng.below(100));
      if (hungarian_assign(m).cost != testing::brute_force_assignment(m)) ++mismatches;
    }
  const double t = seconds_since(t0);
  return {mismatches == 0 && t < 10.0, fmt("5000 matrices, %d mismatches, %.2f s", mismatches, t)};
}

Outcome solvers() {
  Rng rng(11);
  double worst_line = 0.0, worst_vp = 0.0, worst_h = 0.0;
  int fitted_line = 0, fitted_vp = 0, fitted_h = 0;
  while (fitted_line < 10000) {
    const Observation a(rng.uniform(), rng.uniform()), b(rng.uniform(), rng.uniform());
    if ((a.first() - b.first()).norm() < 1e-3) continue;
    const ModelInstance h = fit_line_minimal(a, b);
    worst_line = std::max({worst_line, line_residual(a, h), line_residual(b, h)});
    ++fitted_line;
  }
  while (fitted_vp < 10000) {
    const Observation s1(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
    const Observation s2(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
    if ((s1.first() - s1.second()).norm() < 1e-2 || (s2.first() - s2.second()).norm() < 1e-2) continue;
    const Eigen::Vector3d l1 = detail::segment_line(s1).normalized(), l2 = detail::segment_line(s2).normalized();
    if (l1.cross(l2).norm() < 1e-3) continue;
    const ModelInstance v = fit_vp_minimal(s1, s2);
    worst_vp = std::max({worst_vp, vp_residual(s1, v), vp_residual(s2, v)});
    ++fitted_vp;
  }
  while (fitted_h < 10000) {
    const Eigen::Matrix3d hm = testing::random_homography(rng);
    std::vector<Observation> c;
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 4; ++i) {
      pts.push_back(testing::random_point(rng));
      c.push_back(testing::apply(hm, pts.back()));
    }
    if (detail::has_collinear_triple(pts)) continue;
    ModelInstance h;
    try {
      h = fit_homography_minimal(c);
    } catch (const DegenerateMinimalSet&) {
      continue;
    }
    // the residual is a sum of squared transfer errors; compare its root
    for (const auto& o : c) worst_h = std::max(worst_h, std::sqrt(homography_residual(o, h)));
    ++fitted_h;
  }
  return {worst_line <= 1e-9 && worst_vp <= 1e-9 && worst_h <= 1e-7,
          fmt("worst residual: lines %.1e, vanishing points %.1e, homographies %.1e (transfer distance)", worst_line, worst_vp, worst_h)};
}

Outcome scoring() {
  const double tau = 1e-3;
  const ScoringParams p(tau);
  const bool at_tau = soft_inlier(tau, p) == 0.5;
  const double at_zero = std::abs(soft_inlier(0.0, p) - 1.0 / (1.0 + std::exp(-5.0)));
  Rng rng(13);
  int violations = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<Observation> y;
    for (int i = 0; i < 40; ++i) y.emplace_back(rng.uniform(), rng.uniform());
    std::vector<ModelInstance> models;
    const int m = 1 + static_cast<int>(rng.below(8));
    for (int k = 0; k < m; ++k) models.push_back(testing::random_line(rng));
    const ScoringParams q(rng.uniform(1e-3, 0.2));
    double prev = 0.0;
    for (int k = 1; k <= m; ++k) {
      const double g = cumulative_inlier_ratio(std::span<const ModelInstance>(models).first(k), y, q);
      if (g < prev) ++violations;
      prev = g;
    }
  }
  return {at_tau && at_zero <= 1e-12 && violations == 0,
          fmt("soft_inlier(tau) %s 0.5, |soft_inlier(0) - sigmoid(5)| = %.1e, %d monotonicity violations over 10000 "
              "prefix sequences",
              at_tau ? "==" : "!=", at_zero, violations)};
}

Outcome em_monotone() {
  const ModelClassSpec& spec = model_class(ModelKind::line);
  RefineConfig one = RefineConfig::line_defaults();
  one.em_iterations = 1;
  double worst_drop = 0.0;  // largest single-iteration decrease
  int violations = 0;
  for (int s = 0; s < 100; ++s) {
    const Scene scene = generate_line_scene(SynthLineConfig{}, derive_seed(500, static_cast<std::uint64_t>(s)));
    SamplerConfig sc = SamplerConfig::line_defaults();
    sc.single_samples = 8;
    sc.multi_samples = 1;
    sc.seed = static_cast<std::uint64_t>(s);
    std::vector<ModelInstance> models = sequential_ransac_best_of(scene.observations, spec, sc).models;
    double prev = log_likelihood(models, scene.observations, one);
    for (int it = 0; it < 10; ++it) {
      models = em_refine(models, scene.observations, one, spec);
      const double ll = log_likelihood(models, scene.observations, one);
      if (ll < prev - 1e-9) ++violations;
      worst_drop = std::max(worst_drop, prev - ll);
      prev = ll;
    }
  }
  return {violations == 0, fmt("100 scenes x 10 iterations, %d decreases beyond 1e-9 (largest decrease %.1e)",
                               violations, worst_drop)};
}

Outcome sequential_recovery() {
  const ModelClassSpec& spec = model_class(ModelKind::line);
  int recovered = 0;
  for (int run = 0; run < 100; ++run) {
    Rng rng(derive_seed(900, static_cast<std::uint64_t>(run)));
    std::vector<ModelInstance> lines{random_square_chord(rng).first};
    while (lines.size() < 2) {
      const ModelInstance l = random_square_chord(rng).first;
      if (line_angle(l, lines[0]) >= 10.0) lines.push_back(l);
    }
    const Scene scene = testing::lines_scene(lines, 50, rng);
    const MultiHypothesis mh = sequential_ransac(scene.observations, spec, 2, 64, 1e-3, rng);
    if (mh.models.size() != 2) continue;
    const bool direct = line_angle(mh.models[0], lines[0]) < 0.5 && line_angle(mh.models[1], lines[1]) < 0.5;
    const bool swapped = line_angle(mh.models[0], lines[1]) < 0.5 && line_angle(mh.models[1], lines[0]) < 0.5;
    if (direct || swapped) ++recovered;
  }
  return {recovered >= 95, fmt("%d of 100 runs recover both lines within 0.5 degrees", recovered)};
}

// ---------------------------------------------------------------------------
// Learned sampling on synthetic lines

constexpr int kLineTrainScenes = 2000;
constexpr int kLineTestScenes = 100;
constexpr int kLineEpochs = 3;
constexpr int kLineWidth = 32;
constexpr int kLineBlocks = 4;

struct LineStudy {
  std::vector<Scene> train, test;
  NetworkWeights conditional, blind;
  double conditional_seconds = 0.0;
  double conditional_eval_seconds = 0.0;
};

double mean_line_f1(const std::vector<Scene>& scenes, Method method, int s, int p, const NetworkWeights* net) {
  std::vector<double> f1;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    FitOptions opt;
    opt.method = method;
    opt.sampler = SamplerConfig::line_defaults();
    opt.sampler.single_samples = s;
    opt.sampler.multi_samples = p;
    opt.sampler.seed = derive_seed(77, i);
    opt.refine = RefineConfig::line_defaults();
    const FitResult r = fit_scene(scenes[i], opt, net);
    const auto seg = gt_line_segments(*scenes[i].gt_models, scenes[i].observations, *scenes[i].gt_labels);
    f1.push_back(f1_segments(r.selected(), seg));
  }
  return summarize(f1).mean;
}

NetworkWeights train_lines(const std::vector<Scene>& data, bool state_blind) {
  TrainConfig c = TrainConfig::line_defaults();
  c.epochs = kLineEpochs;
  c.state_blind = state_blind;
  c.seed = state_blind ? 31 : 30;
  Rng rng(derive_seed(c.seed, 0x1417));
  NetworkWeights w({2, kLineWidth, kLineBlocks, c.batch_norm}, rng);
  TrainHooks hooks;
  hooks.on_epoch = [&](int epoch, double mean, const NetworkWeights&) {
    std::printf("    %s epoch %d mean loss %.4f\n", state_blind ? "state-blind" : "conditional", epoch, mean);
    std::fflush(stdout);
  };
  return train(data, c, std::move(w), hooks).weights;
}

LineStudy& line_study() {
  static LineStudy study = [] {
    LineStudy st;
    const auto t0 = Clock::now();
    for (int i = 0; i < kLineTrainScenes; ++i)
      st.train.push_back(generate_line_scene(SynthLineConfig{}, derive_seed(1, static_cast<std::uint64_t>(i))));
    for (int i = 0; i < kLineTestScenes; ++i)
      st.test.push_back(generate_line_scene(SynthLineConfig{}, derive_seed(2, static_cast<std::uint64_t>(i))));
    st.conditional = train_lines(st.train, false);
    st.conditional_seconds = seconds_since(t0);
    return st;
  }();
  return study;
}

Outcome conditional_advantage() {
  LineStudy& st = line_study();
  const auto t0 = Clock::now();
  const double c2 = mean_line_f1(st.test, Method::consac, 2, 2, &st.conditional);
  const double s2 = mean_line_f1(st.test, Method::sequential, 2, 2, nullptr);
  const double c32 = mean_line_f1(st.test, Method::consac, 32, 32, &st.conditional);
  const double s32 = mean_line_f1(st.test, Method::sequential, 32, 32, nullptr);
  st.conditional_eval_seconds = seconds_since(t0);
  const double total = st.conditional_seconds + st.conditional_eval_seconds;
  return {c2 - s2 >= 0.05 && c32 >= 0.90 && s32 >= 0.90 && total < 1800.0,
          fmt("F1 at S=P=2: consac %.3f, sequential %.3f (gap %.3f); at S=P=32: consac %.3f, sequential %.3f; "
              "%.0f s train + eval",
              c2, s2, c2 - s2, c32, s32, total)};
}

Outcome ablation_order() {
  LineStudy& st = line_study();
  st.blind = train_lines(st.train, true);
  const double c = mean_line_f1(st.test, Method::consac, 2, 2, &st.conditional);
  const double u = mean_line_f1(st.test, Method::unconditional, 2, 2, &st.blind);
  const double s = mean_line_f1(st.test, Method::sequential, 2, 2, nullptr);
  return {c - u >= 0.02 && u - s >= 0.02,
          fmt("F1 at S=P=2: conditional %.3f, unconditional %.3f, sequential %.3f", c, u, s)};
}

// ---------------------------------------------------------------------------
// Self-supervised homography training

constexpr int kHomTrainScenes = 500;
constexpr int kHomTestScenes = 100;
constexpr int kHomEpochs = 4;
constexpr int kHomWidth = 32;
constexpr int kHomBlocks = 4;
constexpr int kHomBudget = 4;  // S = P at evaluation
constexpr double kHomLearningRate = 1e-3;

Scene homography_scene(std::uint64_t seed) { return generate_homography_scene(2, 200, 0.002, 0.3, seed); }

double mean_self_loss(const std::vector<Scene>& scenes, const TrainConfig& c, const NetworkWeights& w) {
  const ModelClassSpec& spec = model_class(ModelKind::homography);
  SamplerConfig sc{c.instances, c.single_samples, c.multi_samples, c.tau, WeightSource::network, 0};
  double total = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    sc.seed = derive_seed(55, i);
    const MultiHypothesis mh = run_consac(scenes[i].observations, spec, sc, network_weight_fn(w));
    total += self_supervised_loss(mh.models, scenes[i].observations, ScoringParams(c.tau));
  }
  return total / static_cast<double>(scenes.size());
}

double mean_me(const std::vector<Scene>& scenes, Method method, const NetworkWeights* net) {
  std::vector<double> me;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    FitOptions opt;
    opt.method = method;
    opt.sampler = SamplerConfig::homography_defaults();
    opt.sampler.single_samples = kHomBudget;
    opt.sampler.multi_samples = kHomBudget;
    opt.sampler.seed = derive_seed(88, i);
    opt.refine = RefineConfig::homography_defaults();
    const FitResult r = fit_scene(scenes[i], opt, net);
    me.push_back(misclassification_error(std::span<const int>(r.assignments), *scenes[i].gt_labels));
  }
  return summarize(me).mean;
}

Outcome self_supervised() {
  std::vector<Scene> train_set, test_set;
  for (int i = 0; i < kHomTrainScenes; ++i) train_set.push_back(homography_scene(derive_seed(3, static_cast<std::uint64_t>(i))));
  for (int i = 0; i < kHomTestScenes; ++i) test_set.push_back(homography_scene(derive_seed(4, static_cast<std::uint64_t>(i))));
  TrainConfig c = TrainConfig::homography_defaults();
  c.epochs = kHomEpochs;
  c.kappa = 1e-2;
  c.learning_rate = kHomLearningRate;
  c.seed = 40;
  Rng rng(derive_seed(c.seed, 0x1417));
  const NetworkWeights init({4, kHomWidth, kHomBlocks, c.batch_norm}, rng);
  TrainHooks hooks;
  hooks.on_epoch = [](int epoch, double mean, const NetworkWeights&) {
    std::printf("    homography epoch %d mean loss %.4f\n", epoch, mean);
    std::fflush(stdout);
  };
  const NetworkWeights trained = train(train_set, c, init, hooks).weights;
  const double l0 = mean_self_loss(test_set, c, init);
  const double l1 = mean_self_loss(test_set, c, trained);
  const double drop = (l0 - l1) / std::abs(l0);
  const double me_net = mean_me(test_set, Method::consac, &trained);
  const double me_seq = mean_me(test_set, Method::sequential, nullptr);
  // ME is in percent
  return {drop >= 0.2 && me_seq - me_net >= 2.0,
          fmt("mean self loss %.4f -> %.4f (%.1f%% lower); ME at S=P=%d: consac %.2f%%, sequential %.2f%%", l0, l1,
              100 * drop, kHomBudget, me_net, me_seq)};
}

// ---------------------------------------------------------------------------
// CLI determinism

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "consac");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return cli::run_command(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::string tree_digest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    all += std::filesystem::relative(f, dir).string() + '\n';
    all.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return all;
}

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "consac_acceptance_determinism";
  fs::remove_all(root);
  auto run_all = [&](const std::string& tag, const std::string& threads) {
    const fs::path d = root / tag;
    int rc = 0;
    rc |= cli({"--seed", "9", "synth", "--kind", "lines", "--count", "8", "--out", (d / "lines").string()});
    rc |= cli({"--seed", "9", "synth", "--kind", "homography", "--count", "3", "--out", (d / "hom").string()});
    rc |= cli({"--seed", "9", "train", "--kind", "lines", "--data", (d / "lines").string(), "--epochs", "1",
               "--batch", "2", "--width", "8", "--blocks", "1", "--out", (d / "w.json").string(), "--log",
               (d / "log.jsonl").string()});
    rc |= cli({"--seed", "9", "fit", "--scenes", (d / "lines").string(), "--weights", (d / "w.json").string(),
               "--method", "consac", "-S", "4", "-P", "4", "--with-weights", "--threads", threads, "--out",
               (d / "fit").string(), "--svg", (d / "svg").string()});
    rc |= cli({"--seed", "9", "fit", "--scenes", (d / "hom").string(), "--method", "sequential", "-S", "8", "-P", "2",
               "--threads", threads, "--out", (d / "fit_hom").string()});
    rc |= cli({"eval", "--pred", (d / "fit").string(), "--gt", (d / "lines").string(), "--threads", threads,
               "--report", (d / "report.jsonl").string()});
    rc |= cli({"--seed", "9", "sweep", "--scenes", (d / "lines").string(), "--methods", "sequential", "--s-values",
               "2,4", "--p-values", "1,2", "--threads", threads, "--out", (d / "grid.csv").string()});
    return std::make_pair(rc, tree_digest(d));
  };
  const auto a = run_all("a", "1");
  const auto b = run_all("b", "1");
  const auto c = run_all("c", "4");
  fs::remove_all(root);
  const bool ok = a.first == 0 && b.first == 0 && c.first == 0 && a.second == b.second && a.second == c.second;
  return {ok, fmt("synth, train, fit, eval and sweep twice with 1 thread and once with 4: %s (%zu bytes)",
                  ok ? "byte-identical" : "outputs differ or a command failed", a.second.size())};
}

}  // namespace
}  // namespace consac

// Optional arguments select criteria by number, e.g. `acceptance 1 2 10`.
int main(int argc, char** argv) {
  using namespace consac;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient finite differences", gradients},
      {"hungarian equals enumeration", hungarian},
      {"minimal solver residuals", solvers},
      {"scoring anchors and monotone cumulative ratio", scoring},
      {"EM log-likelihood nondecreasing", em_monotone},
      {"sequential RANSAC two-line recovery", sequential_recovery},
      {"conditional sampling advantage (lines)", conditional_advantage},
      {"ablation order conditional > unconditional > sequential", ablation_order},
      {"self-supervised homography training", self_supervised},
      {"CLI determinism", determinism},
  };
  std::vector<bool> selected(criteria.size(), argc <= 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[a]);
      return 2;
    }
    selected[static_cast<std::size_t>(k - 1)] = true;
  }
  int failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("[%zu] %s %s: %s [%.0f s]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d criteria, %d failed\n", ran, failed);
  return failed == 0 ? 0 : 1;
}
