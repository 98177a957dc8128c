#pragma once

// Synthetic scenes, scene documents, augmentation and rebalanced sampling.

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "consac/geometry.hpp"
#include "consac/types.hpp"

namespace consac {

constexpr int kSceneFormatVersion = 1;

struct Scene {
  ModelKind kind = ModelKind::line;
  std::vector<Observation> observations;
  std::optional<std::vector<int>> gt_labels;  // -1 = outlier
  std::optional<std::vector<ModelInstance>> gt_models;
  std::optional<Eigen::Matrix3d> intrinsics;
  std::optional<std::array<int, 2>> image_size;

  std::size_t size() const { return observations.size(); }
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

// ---------------------------------------------------------------------------
// Lines

struct SynthLineConfig {
  int num_lines = 4;
  int min_points = 40;
  int max_points = 100;
  double min_noise = 0.007;
  double max_noise = 0.008;
  double min_outlier_fraction = 0.4;
  double max_outlier_fraction = 0.6;
  double min_segment_fraction = 0.3;
  double max_segment_fraction = 1.0;
};

/// Random line through the unit square: a uniform point and direction.
/// Returns the line and the chord endpoints.
inline std::pair<ModelInstance, std::array<Eigen::Vector2d, 2>> random_square_chord(Rng& rng) {
  for (;;) {
    const Eigen::Vector2d p(rng.uniform(), rng.uniform());
    const double a = rng.uniform(0.0, M_PI);
    const Eigen::Vector2d d(std::cos(a), std::sin(a));
    // parameter interval of p + t d inside [0,1]^2
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 2; ++k) {
      if (std::abs(d[k]) < 1e-12) continue;
      double t0 = (0.0 - p[k]) / d[k], t1 = (1.0 - p[k]) / d[k];
      if (t0 > t1) std::swap(t0, t1);
      lo = std::max(lo, t0);
      hi = std::min(hi, t1);
    }
    if (!(hi - lo > 1e-3)) continue;
    const Eigen::Vector2d e0 = p + lo * d, e1 = p + hi * d;
    const ModelInstance line = ModelInstance::line(Eigen::Vector3d(e0.x(), e0.y(), 1).cross(Eigen::Vector3d(e1.x(), e1.y(), 1)));
    return {line, {e0, e1}};
  }
}

/// Scene of random line segments with Gaussian noise and uniform outliers
/// in the unit square.
inline Scene generate_line_scene(const SynthLineConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Scene scene;
  scene.kind = ModelKind::line;
  std::vector<std::pair<Observation, int>> pts;
  std::vector<ModelInstance> models;
  for (int l = 0; l < cfg.num_lines; ++l) {
    const auto [line, chord] = random_square_chord(rng);
    const double frac = rng.uniform(cfg.min_segment_fraction, cfg.max_segment_fraction);
    const double start = rng.uniform(0.0, 1.0 - frac);
    const Eigen::Vector2d a = chord[0] + start * (chord[1] - chord[0]);
    const Eigen::Vector2d b = a + frac * (chord[1] - chord[0]);
    const int n = rng.between(cfg.min_points, cfg.max_points);
    const double sigma = rng.uniform(cfg.min_noise, cfg.max_noise);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d q = a + rng.uniform() * (b - a);
      const double nx = sigma * rng.normal();
      const double ny = sigma * rng.normal();
      pts.push_back({Observation(q.x() + nx, q.y() + ny), l});
    }
    models.push_back(line);
  }
  const double inliers = static_cast<double>(pts.size());
  const double f = rng.uniform(cfg.min_outlier_fraction, cfg.max_outlier_fraction);
  long outliers = std::lround(f * inliers / (1.0 - f));
  auto fraction = [&] { return static_cast<double>(outliers) / (inliers + static_cast<double>(outliers)); };
  while (outliers > 0 && fraction() > cfg.max_outlier_fraction) --outliers;
  while (fraction() < cfg.min_outlier_fraction) ++outliers;
  for (long i = 0; i < outliers; ++i) pts.push_back({Observation(rng.uniform(), rng.uniform()), -1});
  shuffle(pts, rng);
  std::vector<int> labels;
  for (const auto& [o, l] : pts) {
    scene.observations.push_back(o);
    labels.push_back(l);
  }
  scene.gt_labels = std::move(labels);
  scene.gt_models = std::move(models);
  return scene;
}

// ---------------------------------------------------------------------------
// Homographies

namespace detail {

inline Eigen::Matrix3d random_plane_homography(Rng& rng) {
  for (;;) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) h(r, c) += rng.uniform(-0.2, 0.2);
    h(0, 2) = rng.uniform(-0.3, 0.3);
    h(1, 2) = rng.uniform(-0.3, 0.3);
    h(2, 0) = rng.uniform(-0.1, 0.1);
    h(2, 1) = rng.uniform(-0.1, 0.1);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h);
    const auto sv = svd.singularValues();
    if (sv[2] > 0.0 && sv[0] / sv[2] <= 1e3) return h;
  }
}

}  // namespace detail

/// Two-view correspondences of `num_planes` planes related by random
/// near-identity homographies, in [-1,1]^2 coordinates. The last
/// floor(outlier_fraction * total) correspondences are uniform outliers.
inline Scene generate_homography_scene(int num_planes, int points_per_plane, double noise, double outlier_fraction,
                                       std::uint64_t seed) {
  if (num_planes < 1) throw std::invalid_argument("num_planes must be at least 1");
  if (outlier_fraction < 0.0 || outlier_fraction >= 1.0) throw std::invalid_argument("outlier fraction must be in [0,1)");
  Rng rng(seed);
  const int total = num_planes * points_per_plane;
  const int outliers = static_cast<int>(std::floor(outlier_fraction * total + 1e-9));
  const int inliers = total - outliers;
  if (inliers < 4 * num_planes) throw std::invalid_argument("too few inliers per plane");

  Scene scene;
  scene.kind = ModelKind::homography;
  std::vector<ModelInstance> models;
  std::vector<int> labels;
  for (int k = 0; k < num_planes; ++k) {
    const Eigen::Matrix3d h = detail::random_plane_homography(rng);
    models.push_back(ModelInstance::homography(h));
    const double w = rng.uniform(0.6, 1.2), ht = rng.uniform(0.6, 1.2);
    const double x0 = rng.uniform(-1.0, 1.0 - w), y0 = rng.uniform(-1.0, 1.0 - ht);
    const int n = inliers / num_planes + (k < inliers % num_planes ? 1 : 0);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d p(x0 + w * rng.uniform(), y0 + ht * rng.uniform(), 1.0);
      const Eigen::Vector3d q = h * p;
      const double e0 = noise * rng.normal(), e1 = noise * rng.normal();
      const double e2 = noise * rng.normal(), e3 = noise * rng.normal();
      scene.observations.emplace_back(p.x() + e0, p.y() + e1, q.x() / q.z() + e2, q.y() / q.z() + e3);
      labels.push_back(k);
    }
  }
  for (int i = 0; i < outliers; ++i) {
    scene.observations.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                    rng.uniform(-1.0, 1.0));
    labels.push_back(-1);
  }
  scene.gt_labels = std::move(labels);
  scene.gt_models = std::move(models);
  return scene;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Per-axis affine map x -> sign * scale * x + shift, applied to both views.
struct AugmentParams {
  bool flip_x = false;
  bool flip_y = false;
  double scale_x = 1.0;
  double scale_y = 1.0;
  double shift_x = 0.0;
  double shift_y = 0.0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d a = Eigen::Matrix3d::Identity();
    a(0, 0) = (flip_x ? -1.0 : 1.0) * scale_x;
    a(1, 1) = (flip_y ? -1.0 : 1.0) * scale_y;
    a(0, 2) = shift_x;
    a(1, 2) = shift_y;
    return a;
  }

  /// Random draw: flips, scales in [0.9, 1.1] and shifts up to 10% of the
  /// coordinate range (width 2).
  static AugmentParams random(Rng& rng) {
    AugmentParams p;
    p.flip_x = rng.coin();
    p.flip_y = rng.coin();
    p.scale_x = rng.uniform(0.9, 1.1);
    p.scale_y = rng.uniform(0.9, 1.1);
    p.shift_x = rng.uniform(-0.2, 0.2);
    p.shift_y = rng.uniform(-0.2, 0.2);
    return p;
  }
};

inline Scene augment_correspondences(const Scene& scene, const AugmentParams& params) {
  if (scene.kind != ModelKind::homography) throw std::invalid_argument("augmentation needs a homography scene");
  const Eigen::Matrix3d a = params.matrix();
  Scene out = scene;
  for (auto& o : out.observations) {
    const Eigen::Vector3d p = a * o.first();
    const Eigen::Vector3d q = a * o.second();
    o = Observation(p.x(), p.y(), q.x(), q.y());
  }
  if (out.gt_models) {
    const Eigen::Matrix3d a_inv = a.inverse();
    for (auto& h : *out.gt_models) h = ModelInstance::homography(a * h.mat() * a_inv);
  }
  return out;
}

inline Scene augment_correspondences(const Scene& scene, Rng& rng) {
  return augment_correspondences(scene, AugmentParams::random(rng));
}

// ---------------------------------------------------------------------------
// Rebalanced sampling

/// Draws a group uniformly, then a member of that group uniformly.
class RebalancedSampler {
 public:
  RebalancedSampler(std::vector<std::vector<std::size_t>> groups, std::uint64_t seed)
      : groups_(std::move(groups)), rng_(seed) {
    if (groups_.empty()) throw EmptyGroup("no groups to sample from");
    for (std::size_t g = 0; g < groups_.size(); ++g)
      if (groups_[g].empty()) throw EmptyGroup("group " + std::to_string(g) + " is empty");
  }

  struct Draw {
    std::size_t group;
    std::size_t item;
  };

  Draw next() {
    const std::size_t g = rng_.below(groups_.size());
    return {g, groups_[g][rng_.below(groups_[g].size())]};
  }

 private:
  std::vector<std::vector<std::size_t>> groups_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Scene documents

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json doc;
  doc["format"] = "consac-scene";
  doc["version"] = kSceneFormatVersion;
  doc["kind"] = std::string(to_string(s.kind));
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : s.observations) {
    std::vector<double> c;
    for (int d = 0; d < o.dim(); ++d) c.push_back(o[d]);
    obs.push_back(c);
  }
  doc["observations"] = std::move(obs);
  if (s.gt_labels) doc["gt_labels"] = *s.gt_labels;
  if (s.gt_models) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& h : *s.gt_models) models.push_back(h.params());
    doc["gt_models"] = std::move(models);
  }
  if (s.intrinsics) {
    std::vector<double> k;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) k.push_back((*s.intrinsics)(r, c));
    doc["intrinsics"] = k;
  }
  if (s.image_size) doc["image_size"] = {(*s.image_size)[0], (*s.image_size)[1]};
  return doc;
}

inline Scene scene_from_json(const nlohmann::json& doc) {
  auto fail = [](const std::string& path, const std::string& what) -> FormatError {
    return FormatError("scene field '" + path + "' " + what);
  };
  if (!doc.is_object()) throw FormatError("scene document is not an object");
  if (!doc.contains("version")) throw fail("version", "is missing");
  if (!doc["version"].is_number_integer()) throw fail("version", "is not an integer");
  const int version = doc["version"].get<int>();
  if (version != kSceneFormatVersion)
    throw VersionError("unsupported scene version: expected " + std::to_string(kSceneFormatVersion) + ", found " +
                       std::to_string(version));
  Scene s;
  if (!doc.contains("kind") || !doc["kind"].is_string()) throw fail("kind", "is missing or not a string");
  s.kind = parse_kind(doc["kind"].get<std::string>());
  const int dim = observation_dim(s.kind);
  if (!doc.contains("observations") || !doc["observations"].is_array()) throw fail("observations", "is missing");
  const auto& obs = doc["observations"];
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::string path = "observations[" + std::to_string(i) + "]";
    if (!obs[i].is_array() || static_cast<int>(obs[i].size()) != dim)
      throw fail(path, "must hold " + std::to_string(dim) + " numbers");
    std::array<double, 4> c{};
    for (int d = 0; d < dim; ++d) {
      if (!obs[i][static_cast<std::size_t>(d)].is_number()) throw fail(path, "must hold numbers");
      c[static_cast<std::size_t>(d)] = obs[i][static_cast<std::size_t>(d)].get<double>();
    }
    s.observations.push_back(dim == 2 ? Observation(c[0], c[1]) : Observation(c[0], c[1], c[2], c[3]));
  }
  if (doc.contains("gt_models")) {
    std::vector<ModelInstance> models;
    const auto& gm = doc["gt_models"];
    if (!gm.is_array()) throw fail("gt_models", "is not an array");
    for (std::size_t i = 0; i < gm.size(); ++i) {
      try {
        models.push_back(ModelInstance::from_params(s.kind, gm[i].get<std::vector<double>>()));
      } catch (const std::exception& e) {
        throw fail("gt_models[" + std::to_string(i) + "]", std::string("is invalid: ") + e.what());
      }
    }
    s.gt_models = std::move(models);
  }
  if (doc.contains("gt_labels")) {
    std::vector<int> labels;
    try {
      labels = doc["gt_labels"].get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
      throw fail("gt_labels", "is not an integer array");
    }
    if (labels.size() != s.observations.size()) throw fail("gt_labels", "length differs from observations");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool bad = labels[i] < -1 || (s.gt_models && labels[i] >= static_cast<int>(s.gt_models->size()));
      if (bad) throw fail("gt_labels[" + std::to_string(i) + "]", "is out of range");
    }
    s.gt_labels = std::move(labels);
  }
  if (doc.contains("intrinsics")) {
    std::vector<double> k;
    try {
      k = doc["intrinsics"].get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw fail("intrinsics", "is not a number array");
    }
    if (k.size() != 9) throw fail("intrinsics", "must hold 9 numbers");
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = k[static_cast<std::size_t>(r * 3 + c)];
    s.intrinsics = m;
  }
  if (doc.contains("image_size")) {
    std::vector<int> sz;
    try {
      sz = doc["image_size"].get<std::vector<int>>();
    } catch (const nlohmann::json::exception&) {
      throw fail("image_size", "is not an integer array");
    }
    if (sz.size() != 2) throw fail("image_size", "must hold 2 integers");
    s.image_size = std::array<int, 2>{sz[0], sz[1]};
  }
  return s;
}

inline void save_scene(const Scene& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write scene file '" + path + "'");
  out << scene_to_json(s).dump() << '\n';
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scene file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("scene file '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    return scene_from_json(doc);
  } catch (const VersionError& e) {
    throw VersionError(path + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

/// Correspondences from whitespace-delimited text, one "x1 y1 x2 y2 [ratio]"
/// per line. Matches whose ratio exceeds `max_ratio` are dropped; lines
/// starting with '#' are comments.
inline Scene import_correspondences(std::istream& in, double max_ratio = 0.9) {
  Scene s;
  s.kind = ModelKind::homography;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof() || (v.size() != 4 && v.size() != 5))
      throw FormatError("line " + std::to_string(number) + ": expected 4 or 5 numbers");
    if (v.size() == 5 && v[4] > max_ratio) continue;
    s.observations.emplace_back(v[0], v[1], v[2], v[3]);
  }
  return s;
}

}  // namespace consac
