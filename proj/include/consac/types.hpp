#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace consac {

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define CONSAC_DEFINE_ERROR(Name)          \
  struct Name : Error {                    \
    using Error::Error;                    \
  }

CONSAC_DEFINE_ERROR(DegenerateMinimalSet);
CONSAC_DEFINE_ERROR(SingularModel);
CONSAC_DEFINE_ERROR(InsufficientSupport);
CONSAC_DEFINE_ERROR(TooFewObservations);
CONSAC_DEFINE_ERROR(EmptyPool);
CONSAC_DEFINE_ERROR(EmptyPrefix);
CONSAC_DEFINE_ERROR(ShapeMismatch);
CONSAC_DEFINE_ERROR(FormatError);
CONSAC_DEFINE_ERROR(EmptyMatrix);
CONSAC_DEFINE_ERROR(SingularIntrinsics);
CONSAC_DEFINE_ERROR(EmptyGroup);
CONSAC_DEFINE_ERROR(NonFiniteGradient);

#undef CONSAC_DEFINE_ERROR

// An unsupported document version is also a format error.
struct VersionError : FormatError {
  using FormatError::FormatError;
};

// ---------------------------------------------------------------------------
// Model classes

enum class ModelKind { line, vp, homography };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::line: return "lines";
    case ModelKind::vp: return "vp";
    case ModelKind::homography: return "homography";
  }
  return "?";
}

inline ModelKind parse_kind(std::string_view s) {
  if (s == "lines" || s == "line") return ModelKind::line;
  if (s == "vp" || s == "vps") return ModelKind::vp;
  if (s == "homography" || s == "homographies") return ModelKind::homography;
  throw FormatError("unknown model kind '" + std::string(s) + "'");
}

/// Observation dimension per model class: a point (2) for lines, a segment
/// (x1 y1 x2 y2) for vanishing points, a correspondence for homographies.
inline int observation_dim(ModelKind k) { return k == ModelKind::line ? 2 : 4; }

/// Number of observations that determine one model instance.
inline int minimal_set_size(ModelKind k) { return k == ModelKind::homography ? 4 : 2; }

/// One observation with up to four coordinates in normalized image units.
class Observation {
 public:
  Observation() = default;
  Observation(double x, double y) : c_{x, y, 0.0, 0.0}, dim_(2) {}
  Observation(double x1, double y1, double x2, double y2) : c_{x1, y1, x2, y2}, dim_(4) {}

  int dim() const { return dim_; }
  double operator[](int i) const { return c_[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return c_[static_cast<std::size_t>(i)]; }

  Eigen::Vector3d first() const { return {c_[0], c_[1], 1.0}; }
  Eigen::Vector3d second() const { return {c_[2], c_[3], 1.0}; }

  bool finite() const {
    for (int i = 0; i < dim_; ++i)
      if (!std::isfinite(c_[static_cast<std::size_t>(i)])) return false;
    return true;
  }

  friend bool operator==(const Observation& a, const Observation& b) {
    if (a.dim_ != b.dim_) return false;
    for (int i = 0; i < a.dim_; ++i)
      if (a[i] != b[i]) return false;
    return true;
  }

 private:
  std::array<double, 4> c_{};
  int dim_ = 2;
};

/// A fitted model instance in homogeneous form.
///
/// Lines are stored with a unit-norm normal part, vanishing points as unit
/// 3-vectors and homographies with unit Frobenius norm. The homography
/// inverse is cached at construction.
class ModelInstance {
 public:
  ModelInstance() = default;

  static ModelInstance line(const Eigen::Vector3d& l) {
    const double n = l.head<2>().norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateMinimalSet("line normal has zero norm");
    ModelInstance m;
    m.kind_ = ModelKind::line;
    m.vec_ = l / n;
    return m;
  }

  static ModelInstance vp(const Eigen::Vector3d& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateMinimalSet("vanishing point is zero");
    ModelInstance m;
    m.kind_ = ModelKind::vp;
    m.vec_ = v / n;
    return m;
  }

  static ModelInstance homography(const Eigen::Matrix3d& h) {
    const double n = h.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw SingularModel("homography is zero");
    ModelInstance m;
    m.kind_ = ModelKind::homography;
    m.mat_ = h / n;
    m.det_ = m.mat_.determinant();
    if (std::abs(m.det_) >= 1e-12) m.inv_ = m.mat_.inverse();
    return m;
  }

  ModelKind kind() const { return kind_; }
  const Eigen::Vector3d& vec() const { return vec_; }
  const Eigen::Matrix3d& mat() const { return mat_; }
  const Eigen::Matrix3d& inverse() const { return inv_; }
  double det() const { return det_; }

  /// Flat parameter list: 3 entries for line/vp, 9 row-major for homographies.
  std::vector<double> params() const {
    if (kind_ == ModelKind::homography) {
      std::vector<double> p;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) p.push_back(mat_(r, c));
      return p;
    }
    return {vec_[0], vec_[1], vec_[2]};
  }

  static ModelInstance from_params(ModelKind kind, const std::vector<double>& p) {
    if (kind == ModelKind::homography) {
      if (p.size() != 9) throw FormatError("homography needs 9 parameters");
      Eigen::Matrix3d h;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) h(r, c) = p[static_cast<std::size_t>(r * 3 + c)];
      return homography(h);
    }
    if (p.size() != 3) throw FormatError("model needs 3 parameters");
    Eigen::Vector3d v(p[0], p[1], p[2]);
    return kind == ModelKind::line ? line(v) : vp(v);
  }

 private:
  ModelKind kind_ = ModelKind::line;
  Eigen::Vector3d vec_ = Eigen::Vector3d::UnitY();
  Eigen::Matrix3d mat_ = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d inv_ = Eigen::Matrix3d::Zero();
  double det_ = 0.0;
};

// ---------------------------------------------------------------------------
// Random numbers
//
// All variates are derived from raw mt19937_64 output so that streams are
// reproducible bit for bit regardless of the standard library in use.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the `stream`-th independent sub-generator of `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
  static Rng derived(std::uint64_t seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % n);
  }

  /// Integer uniform in [lo, hi].
  int between(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo + 1))); }

  /// Standard normal via Box-Muller (one variate per call, spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  bool coin() { return (engine_() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace consac
