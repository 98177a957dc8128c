#pragma once

// Permutation-equivariant sampling-weight network.
//
//   entry:  linear (D+1 -> W) + ReLU
//   blocks: B x { 2 x [linear W->W, instance norm, (batch norm), ReLU] + skip }
//   exit:   linear (W -> 1), sigmoid, normalized to sum to one per input
//
// Every layer acts on observations independently except the normalization
// layers, so permuting observations permutes the output. Inputs of one call
// are processed as a single batch: instance norm statistics are per input,
// batch norm statistics (train mode) are shared across the batch.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "consac/sampler.hpp"
#include "consac/types.hpp"

namespace consac {

constexpr double kNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;
constexpr int kWeightsFormatVersion = 1;

struct NetworkShape {
  int input_dim = 2;  // D
  int width = 128;
  int blocks = 6;
  bool batch_norm = true;

  int stages() const { return 2 * blocks; }
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

enum class NetworkMode { train, eval };

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  bool trainable = true;
};

/// All parameters and batch-norm running statistics, in a fixed order.
class NetworkWeights {
 public:
  NetworkWeights() = default;

  /// Fan-in scaled uniform initialization; exit bias zero, batch norm at
  /// identity with running mean 0 and variance 1.
  NetworkWeights(const NetworkShape& shape, Rng& rng) : shape_(shape) {
    if (shape.input_dim < 1 || shape.width < 1 || shape.blocks < 0) throw ShapeMismatch("invalid network shape");
    const int w = shape.width;
    auto uniform = [&rng](int rows, int cols, int fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Eigen::MatrixXd m(rows, cols);
      for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
      return m;
    };
    add("entry.weight", uniform(w, shape.input_dim + 1, shape.input_dim + 1));
    add("entry.bias", uniform(w, 1, shape.input_dim + 1));
    for (int s = 0; s < shape.stages(); ++s) {
      const std::string p = stage_prefix(s);
      add(p + "linear.weight", uniform(w, w, w));
      add(p + "linear.bias", uniform(w, 1, w));
      if (shape.batch_norm) {
        add(p + "bn.weight", Eigen::MatrixXd::Ones(w, 1));
        add(p + "bn.bias", Eigen::MatrixXd::Zero(w, 1));
        add(p + "bn.running_mean", Eigen::MatrixXd::Zero(w, 1), false);
        add(p + "bn.running_var", Eigen::MatrixXd::Ones(w, 1), false);
      }
    }
    add("exit.weight", uniform(1, w, w));
    add("exit.bias", Eigen::MatrixXd::Zero(1, 1));
  }

  const NetworkShape& shape() const { return shape_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  std::size_t per_stage() const { return shape_.batch_norm ? 6 : 2; }
  std::size_t stage_base(int s) const { return 2 + static_cast<std::size_t>(s) * per_stage(); }
  std::size_t exit_base() const { return stage_base(shape_.stages()); }

  const Eigen::MatrixXd& at(std::size_t i) const { return tensors_[i].value; }
  Eigen::MatrixXd& at(std::size_t i) { return tensors_[i].value; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& t : tensors_)
      if (!t.value.allFinite()) return false;
    return true;
  }

  friend bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
    if (!(a.shape_ == b.shape_) || a.tensors_.size() != b.tensors_.size()) return false;
    for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
      const auto& x = a.tensors_[i];
      const auto& y = b.tensors_[i];
      if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
      if (std::memcmp(x.value.data(), y.value.data(), sizeof(double) * static_cast<std::size_t>(x.value.size())) != 0)
        return false;
    }
    return true;
  }

  static std::string stage_prefix(int s) {
    return "block" + std::to_string(s / 2) + ".stage" + std::to_string(s % 2) + ".";
  }

 private:
  void add(std::string name, Eigen::MatrixXd v, bool trainable = true) {
    tensors_.push_back({std::move(name), std::move(v), trainable});
  }

  NetworkShape shape_;
  std::vector<Tensor> tensors_;
};

/// Gradient with the same layout as NetworkWeights (zeros for running stats).
struct NetworkGradient {
  std::vector<Eigen::MatrixXd> tensors;

  NetworkGradient() = default;
  explicit NetworkGradient(const NetworkWeights& w) {
    for (const auto& t : w.tensors()) tensors.push_back(Eigen::MatrixXd::Zero(t.value.rows(), t.value.cols()));
  }
  NetworkGradient& operator+=(const NetworkGradient& o) {
    for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += o.tensors[i];
    return *this;
  }
  NetworkGradient& operator*=(double s) {
    for (auto& t : tensors) t *= s;
    return *this;
  }
  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.allFinite()) return false;
    return true;
  }
};

/// (D+1) x N matrix: observation coordinates stacked with the state row.
using NetworkInput = Eigen::MatrixXd;

inline NetworkInput make_network_input(std::span<const Observation> y, const StateVector& state, int input_dim) {
  NetworkInput x(input_dim + 1, static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i].dim() != input_dim) throw ShapeMismatch("observation dimension does not match the network");
    for (int d = 0; d < input_dim; ++d) x(d, static_cast<Eigen::Index>(i)) = y[i][d];
    x(input_dim, static_cast<Eigen::Index>(i)) = state.empty() ? 0.0 : state[i];
  }
  return x;
}

struct ForwardCache {
  struct Stage {
    Eigen::MatrixXd input;      // stage input
    Eigen::MatrixXd in_hat;     // instance-normalized pre-activation
    Eigen::MatrixXd in_inv;     // width x segments: 1/sqrt(var+eps)
    Eigen::MatrixXd bn_hat;     // batch-normalized (train mode)
    Eigen::VectorXd bn_inv;     // width: 1/sqrt(var+eps)
    Eigen::MatrixXd pre_relu;
  };
  std::vector<Eigen::Index> offsets;  // segment starts, size = inputs + 1
  NetworkMode mode = NetworkMode::eval;
  Eigen::MatrixXd entry_input;
  Eigen::MatrixXd entry_pre;
  std::vector<Stage> stages;
  Eigen::MatrixXd exit_input;
  Eigen::RowVectorXd q;  // sigmoid outputs
  std::vector<Eigen::VectorXd> p;
};

namespace detail {

inline void relu_inplace(Eigen::MatrixXd& m) { m = m.cwiseMax(0.0); }

}  // namespace detail

/// Batched forward pass. Returns one probability vector per input. In train
/// mode with batch norm, batch statistics are taken over all columns of all
/// inputs and running statistics are updated when `update_running_stats`.
inline std::vector<Eigen::VectorXd> forward(NetworkWeights& w, std::span<const NetworkInput> inputs, NetworkMode mode,
                                            ForwardCache* cache = nullptr, bool update_running_stats = true) {
  const NetworkShape& shape = w.shape();
  const Eigen::Index rows = shape.input_dim + 1;
  std::vector<Eigen::Index> offsets{0};
  for (const auto& in : inputs) {
    if (in.rows() != rows)
      throw ShapeMismatch("network expects " + std::to_string(rows) + " input features, got " +
                          std::to_string(in.rows()));
    if (in.cols() < 1) throw ShapeMismatch("network input has no observations");
    offsets.push_back(offsets.back() + in.cols());
  }
  const Eigen::Index total = offsets.back();
  const std::size_t segments = inputs.size();

  Eigen::MatrixXd x(rows, total);
  for (std::size_t k = 0; k < segments; ++k) x.middleCols(offsets[k], inputs[k].cols()) = inputs[k];

  if (cache) {
    cache->offsets = offsets;
    cache->mode = mode;
    cache->stages.clear();
    cache->stages.reserve(static_cast<std::size_t>(shape.stages()));
    cache->entry_input = x;
  }

  Eigen::MatrixXd h = w.at(0) * x;
  h.colwise() += w.at(1).col(0);
  if (cache) cache->entry_pre = h;
  detail::relu_inplace(h);

  auto stage = [&](int s, const Eigen::MatrixXd& in) {
    const std::size_t base = w.stage_base(s);
    ForwardCache::Stage st;
    Eigen::MatrixXd a = w.at(base) * in;
    a.colwise() += w.at(base + 1).col(0);
    // instance norm, per input and channel
    Eigen::MatrixXd inv(shape.width, static_cast<Eigen::Index>(segments));
    for (std::size_t k = 0; k < segments; ++k) {
      auto seg = a.middleCols(offsets[k], offsets[k + 1] - offsets[k]);
      const Eigen::VectorXd mu = seg.rowwise().mean();
      seg.colwise() -= mu;
      const Eigen::VectorXd var = seg.array().square().rowwise().mean();
      const Eigen::VectorXd iv = (var.array() + kNormEps).rsqrt();
      seg.array().colwise() *= iv.array();
      inv.col(static_cast<Eigen::Index>(k)) = iv;
    }
    if (cache) {
      st.input = in;
      st.in_hat = a;
      st.in_inv = inv;
    }
    if (shape.batch_norm) {
      const Eigen::VectorXd gamma = w.at(base + 2).col(0);
      const Eigen::VectorXd beta = w.at(base + 3).col(0);
      if (mode == NetworkMode::train) {
        const Eigen::VectorXd mu = a.rowwise().mean();
        a.colwise() -= mu;
        const Eigen::VectorXd var = a.array().square().rowwise().mean();
        const Eigen::VectorXd iv = (var.array() + kNormEps).rsqrt();
        a.array().colwise() *= iv.array();
        if (cache) {
          st.bn_hat = a;
          st.bn_inv = iv;
        }
        if (update_running_stats) {
          const double n = static_cast<double>(total);
          const Eigen::VectorXd unbiased = n > 1 ? Eigen::VectorXd(var * (n / (n - 1.0))) : var;
          w.at(base + 4).col(0) = (1.0 - kBatchNormMomentum) * w.at(base + 4).col(0) + kBatchNormMomentum * mu;
          w.at(base + 5).col(0) = (1.0 - kBatchNormMomentum) * w.at(base + 5).col(0) + kBatchNormMomentum * unbiased;
        }
      } else {
        const Eigen::VectorXd iv = (w.at(base + 5).col(0).array() + kNormEps).rsqrt();
        a.colwise() -= w.at(base + 4).col(0);
        a.array().colwise() *= iv.array();
        if (cache) st.bn_inv = iv;
      }
      a.array().colwise() *= gamma.array();
      a.colwise() += beta;
    }
    if (cache) st.pre_relu = a;
    detail::relu_inplace(a);
    if (cache) cache->stages.push_back(std::move(st));
    return a;
  };

  for (int b = 0; b < shape.blocks; ++b) {
    Eigen::MatrixXd r1 = stage(2 * b, h);
    Eigen::MatrixXd r2 = stage(2 * b + 1, r1);
    h += r2;
  }

  const std::size_t eb = w.exit_base();
  Eigen::RowVectorXd z = w.at(eb).row(0) * h;
  z.array() += w.at(eb + 1)(0, 0);
  Eigen::RowVectorXd q(total);
  for (Eigen::Index i = 0; i < total; ++i) q[i] = sigmoid(z[i]);

  std::vector<Eigen::VectorXd> out(segments);
  for (std::size_t k = 0; k < segments; ++k) {
    const auto seg = q.segment(offsets[k], offsets[k + 1] - offsets[k]);
    out[k] = seg.transpose() / seg.sum();
  }
  if (cache) {
    cache->exit_input = std::move(h);
    cache->q = std::move(q);
    cache->p = out;
  }
  return out;
}

/// Backpropagates dL/dp (one vector per input of the cached forward pass).
inline NetworkGradient backward(const NetworkWeights& w, const ForwardCache& cache,
                                std::span<const Eigen::VectorXd> grad_p) {
  const NetworkShape& shape = w.shape();
  const auto& off = cache.offsets;
  const std::size_t segments = off.size() - 1;
  if (grad_p.size() != segments) throw ShapeMismatch("gradient count does not match the cached batch");
  const Eigen::Index total = off.back();
  NetworkGradient g(w);

  // normalization and sigmoid
  Eigen::RowVectorXd dz(total);
  for (std::size_t k = 0; k < segments; ++k) {
    const Eigen::Index n = off[k + 1] - off[k];
    if (grad_p[k].size() != n) throw ShapeMismatch("gradient length does not match the input");
    const auto q = cache.q.segment(off[k], n);
    const double qsum = q.sum();
    const double dot = grad_p[k].dot(cache.p[k]);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dq = (grad_p[k][i] - dot) / qsum;
      dz[off[k] + i] = dq * q[i] * (1.0 - q[i]);
    }
  }
  const std::size_t eb = w.exit_base();
  g.tensors[eb].noalias() += dz * cache.exit_input.transpose();
  g.tensors[eb + 1](0, 0) += dz.sum();
  Eigen::MatrixXd dh = w.at(eb).row(0).transpose() * dz;

  auto stage_back = [&](int s, const Eigen::MatrixXd& dr) {
    const std::size_t base = w.stage_base(s);
    const auto& st = cache.stages[static_cast<std::size_t>(s)];
    Eigen::MatrixXd d = (st.pre_relu.array() > 0.0).select(dr, 0.0);
    if (shape.batch_norm) {
      const Eigen::VectorXd gamma = w.at(base + 2).col(0);
      g.tensors[base + 3].col(0) += d.rowwise().sum();
      if (cache.mode == NetworkMode::train) {
        g.tensors[base + 2].col(0) += (d.array() * st.bn_hat.array()).rowwise().sum().matrix();
        d.array().colwise() *= gamma.array();
        const Eigen::VectorXd mean_d = d.rowwise().mean();
        const Eigen::VectorXd mean_dx = (d.array() * st.bn_hat.array()).rowwise().mean();
        d.colwise() -= mean_d;
        d.array() -= st.bn_hat.array().colwise() * mean_dx.array();
        d.array().colwise() *= st.bn_inv.array();
      } else {
        const Eigen::MatrixXd bn_hat =
            (st.in_hat.colwise() - w.at(base + 4).col(0)).array().colwise() * st.bn_inv.array();
        g.tensors[base + 2].col(0) += (d.array() * bn_hat.array()).rowwise().sum().matrix();
        d.array().colwise() *= (gamma.array() * st.bn_inv.array());
      }
    }
    for (std::size_t k = 0; k < segments; ++k) {
      auto seg = d.middleCols(off[k], off[k + 1] - off[k]);
      const auto hat = st.in_hat.middleCols(off[k], off[k + 1] - off[k]);
      const Eigen::VectorXd mean_d = seg.rowwise().mean();
      const Eigen::VectorXd mean_dx = (seg.array() * hat.array()).rowwise().mean();
      seg.colwise() -= mean_d;
      seg.array() -= hat.array().colwise() * mean_dx.array();
      seg.array().colwise() *= st.in_inv.col(static_cast<Eigen::Index>(k)).array();
    }
    g.tensors[base].noalias() += d * st.input.transpose();
    g.tensors[base + 1].col(0) += d.rowwise().sum();
    Eigen::MatrixXd dx = w.at(base).transpose() * d;
    return dx;
  };

  for (int b = shape.blocks - 1; b >= 0; --b) {
    Eigen::MatrixXd dr1 = stage_back(2 * b + 1, dh);
    dh += stage_back(2 * b, dr1);
  }

  Eigen::MatrixXd d0 = (cache.entry_pre.array() > 0.0).select(dh, 0.0);
  g.tensors[0].noalias() += d0 * cache.entry_input.transpose();
  g.tensors[1].col(0) += d0.rowwise().sum();
  return g;
}

/// Gradient of sum_k coefficient_k * sum_{i in drawn_k} log p_k(i), with the
/// inputs processed as one batch in the given mode. Running statistics are
/// left untouched.
inline NetworkGradient log_prob_gradient(NetworkWeights& w, std::span<const NetworkInput> inputs,
                                         std::span<const std::vector<std::size_t>> drawn,
                                         std::span<const double> coefficients, NetworkMode mode) {
  if (drawn.size() != inputs.size() || coefficients.size() != inputs.size())
    throw ShapeMismatch("inputs, drawn sets and coefficients must have equal length");
  ForwardCache cache;
  const auto p = forward(w, inputs, mode, &cache, false);
  std::vector<Eigen::VectorXd> gp(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    gp[k] = Eigen::VectorXd::Zero(p[k].size());
    for (std::size_t i : drawn[k]) {
      if (i >= static_cast<std::size_t>(p[k].size())) throw ShapeMismatch("drawn index out of range");
      gp[k][static_cast<Eigen::Index>(i)] += coefficients[k] / p[k][static_cast<Eigen::Index>(i)];
    }
  }
  return backward(w, cache, gp);
}

/// Eval-mode forward pass; reads the running statistics only, so it may be
/// called concurrently on shared weights.
inline std::vector<Eigen::VectorXd> forward_eval(const NetworkWeights& w, std::span<const NetworkInput> inputs,
                                                 ForwardCache* cache = nullptr) {
  return forward(const_cast<NetworkWeights&>(w), inputs, NetworkMode::eval, cache, false);
}

/// Eval-mode weight function for the sampler. With `state_blind` the state
/// row is always zero (unconditional sampling).
inline WeightFn network_weight_fn(const NetworkWeights& w, bool state_blind = false) {
  return [&w, state_blind](std::span<const Observation> y, const StateVector& s) {
    const NetworkInput x = make_network_input(y, state_blind ? StateVector{} : s, w.shape().input_dim);
    const auto p = forward_eval(w, std::span<const NetworkInput>(&x, 1));
    return std::vector<double>(p[0].data(), p[0].data() + p[0].size());
  };
}

// ---------------------------------------------------------------------------
// Weights document

inline std::string architecture_hash(const NetworkShape& s) {
  const std::string desc = "consac-net;d=" + std::to_string(s.input_dim) + ";w=" + std::to_string(s.width) +
                           ";b=" + std::to_string(s.blocks) + ";bn=" + (s.batch_norm ? "1" : "0");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : desc) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

inline nlohmann::json serialize(const NetworkWeights& w) {
  nlohmann::json doc;
  doc["format"] = "consac-weights";
  doc["version"] = kWeightsFormatVersion;
  const auto& s = w.shape();
  doc["architecture"] = {
      {"input_dim", s.input_dim}, {"width", s.width}, {"blocks", s.blocks}, {"batch_norm", s.batch_norm}};
  doc["architecture_hash"] = architecture_hash(s);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& t : w.tensors()) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(t.value.size()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) values.push_back(t.value(r, c));
    params.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}, {"values", values}});
  }
  doc["parameters"] = std::move(params);
  return doc;
}

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw FormatError("missing field '" + path + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("field '" + path + key + "' has the wrong type");
  }
}

}  // namespace detail

inline NetworkWeights deserialize(const nlohmann::json& doc) {
  using detail::field;
  if (field<std::string>(doc, "format", "") != "consac-weights") throw FormatError("field 'format' is not consac-weights");
  const int version = field<int>(doc, "version", "");
  if (version != kWeightsFormatVersion)
    throw VersionError("unsupported weights version: expected " + std::to_string(kWeightsFormatVersion) + ", found " +
                      std::to_string(version));
  if (!doc.contains("architecture")) throw FormatError("missing field 'architecture'");
  const auto& a = doc["architecture"];
  NetworkShape shape;
  shape.input_dim = field<int>(a, "input_dim", "architecture.");
  shape.width = field<int>(a, "width", "architecture.");
  shape.blocks = field<int>(a, "blocks", "architecture.");
  shape.batch_norm = field<bool>(a, "batch_norm", "architecture.");
  if (field<std::string>(doc, "architecture_hash", "") != architecture_hash(shape))
    throw FormatError("field 'architecture_hash' does not match the architecture");

  Rng rng(0);
  NetworkWeights w(shape, rng);
  if (!doc.contains("parameters") || !doc["parameters"].is_array()) throw FormatError("missing field 'parameters'");
  const auto& params = doc["parameters"];
  if (params.size() != w.tensors().size())
    throw FormatError("field 'parameters' has " + std::to_string(params.size()) + " entries, expected " +
                      std::to_string(w.tensors().size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string path = "parameters[" + std::to_string(i) + "].";
    auto& t = w.tensors()[i];
    if (field<std::string>(params[i], "name", path) != t.name)
      throw FormatError("field '" + path + "name' should be '" + t.name + "'");
    const auto dims = field<std::vector<long>>(params[i], "shape", path);
    if (dims.size() != 2 || dims[0] != t.value.rows() || dims[1] != t.value.cols())
      throw FormatError("field '" + path + "shape' does not match the architecture");
    const auto values = field<std::vector<double>>(params[i], "values", path);
    if (static_cast<Eigen::Index>(values.size()) != t.value.size())
      throw FormatError("field '" + path + "values' has the wrong length");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = values[k++];
  }
  return w;
}

inline void save_weights(const NetworkWeights& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write weights file '" + path + "'");
  out << serialize(w).dump() << '\n';
}

inline NetworkWeights load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open weights file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("weights file '" + path + "' is not valid JSON: " + e.what());
  }
  return deserialize(doc);
}

}  // namespace consac
