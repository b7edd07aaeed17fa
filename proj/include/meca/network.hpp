#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "meca/error.hpp"
#include "meca/matrix.hpp"

namespace meca {

inline constexpr double kProbClamp = 1e-12;

enum class Activation : std::uint32_t { relu = 0, tanh = 1 };

/// Fully connected classifier. weights[l] maps layer l (width layer_sizes[l])
/// to layer l+1; the last affine layer feeds the softmax.
template <typename T>
struct Mlp {
  std::vector<std::size_t> layer_sizes;
  std::vector<Matrix<T>> weights;
  std::vector<std::vector<T>> biases;
  Activation hidden_activation = Activation::relu;

  std::size_t num_affine() const noexcept { return weights.size(); }
  std::size_t num_classes() const noexcept { return layer_sizes.back(); }
  std::size_t input_width() const noexcept { return layer_sizes.front(); }

  /// Penultimate layer: the widest-context feature layer right before the classifier.
  std::optional<std::size_t> default_alignment_layer() const noexcept {
    if (layer_sizes.size() < 3) return std::nullopt;
    return layer_sizes.size() - 2;
  }

  std::size_t num_parameters() const noexcept {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  template <typename U>
  Mlp<U> cast() const {
    Mlp<U> out;
    out.layer_sizes = layer_sizes;
    out.hidden_activation = hidden_activation;
    for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
    for (const auto& b : biases) out.biases.emplace_back(b.begin(), b.end());
    return out;
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

using MlpModel = Mlp<double>;

/// Glorot-uniform weights, zero biases. Deterministic per seed.
inline MlpModel init_model(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed,
                           Activation hidden = Activation::relu) {
  require(layer_sizes.size() >= 2, ErrorKind::BadShape, "need at least input and output layers");
  for (auto w : layer_sizes) require(w > 0, ErrorKind::BadShape, "layer width must be positive");
  MlpModel m;
  m.layer_sizes = layer_sizes;
  m.hidden_activation = hidden;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l], fan_out = layer_sizes[l + 1];
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-r, r);
    DenseMatrix w(fan_out, fan_in);
    for (auto& v : w.values()) v = u(rng);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(fan_out, 0.0);
  }
  return m;
}

template <typename T>
struct ForwardTrace {
  /// pre_activations[l] = W_l a_l + b_l, one column per sample.
  std::vector<Matrix<T>> pre_activations;
  /// activations[0] is the input; activations[l] for hidden l is the nonlinearity output.
  std::vector<Matrix<T>> activations;
  /// n × K, row-stochastic.
  Matrix<T> probs;
  /// d × n copy of activations[alignment_layer]; empty when no layer was requested.
  Matrix<T> feature_acts;
  std::optional<std::size_t> alignment_layer;

  std::size_t batch_size() const noexcept { return probs.rows(); }
};

namespace detail {
template <typename T>
T activate(Activation a, T x) {
  return a == Activation::relu ? (x > T(0) ? x : T(0)) : std::tanh(x);
}

// Derivative expressed through the pre-activation and activation values.
template <typename T>
T activate_grad(Activation a, T pre, T post) {
  return a == Activation::relu ? (pre > T(0) ? T(1) : T(0)) : T(1) - post * post;
}
}  // namespace detail

template <typename T>
ForwardTrace<T> forward(const Mlp<T>& model, const Matrix<T>& inputs,
                        std::optional<std::size_t> alignment_layer) {
  require(inputs.rows() == model.input_width(), ErrorKind::BadShape,
          "input width does not match layer 0");
  require(inputs.cols() > 0, ErrorKind::BadShape, "empty batch");
  if (alignment_layer) {
    require(*alignment_layer >= 1 && *alignment_layer + 1 < model.layer_sizes.size(),
            ErrorKind::BadShape, "alignment layer must name a hidden layer");
  }
  const std::size_t n = inputs.cols();
  const std::size_t num_affine = model.num_affine();

  ForwardTrace<T> tr;
  tr.alignment_layer = alignment_layer;
  tr.activations.push_back(inputs);
  for (std::size_t l = 0; l < num_affine; ++l) {
    Matrix<T> z = matmul(model.weights[l], tr.activations.back());
    for (std::size_t r = 0; r < z.rows(); ++r) {
      const T b = model.biases[l][r];
      for (auto& v : z.row(r)) v += b;
    }
    if (l + 1 < num_affine) {
      Matrix<T> a = z;
      for (auto& v : a.values()) v = detail::activate(model.hidden_activation, v);
      tr.pre_activations.push_back(std::move(z));
      tr.activations.push_back(std::move(a));
    } else {
      tr.pre_activations.push_back(std::move(z));
    }
  }

  const Matrix<T>& logits = tr.pre_activations.back();
  const std::size_t k = logits.rows();
  tr.probs = Matrix<T>(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    T mx = logits(0, i);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, logits(c, i));
    T sum = T(0);
    for (std::size_t c = 0; c < k; ++c) {
      const T e = std::exp(logits(c, i) - mx);
      tr.probs(i, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < k; ++c) tr.probs(i, c) /= sum;
  }
  if (alignment_layer) tr.feature_acts = tr.activations[*alignment_layer];
  return tr;
}

template <typename T>
ForwardTrace<T> forward(const Mlp<T>& model, const Matrix<T>& inputs) {
  return forward(model, inputs, model.default_alignment_layer());
}

namespace detail {
template <typename T>
T clamp_prob(T p) {
  return std::clamp(p, T(kProbClamp), T(1) - T(kProbClamp));
}
}  // namespace detail

/// −Σᵢ ⟨zᵢ, log f(xᵢ)⟩, summed over the batch.
template <typename T>
T cross_entropy(const Matrix<T>& probs, const Matrix<T>& labels) {
  require(probs.rows() == labels.rows() && probs.cols() == labels.cols(), ErrorKind::BadShape,
          "probs and labels differ in shape");
  T h = T(0);
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t c = 0; c < probs.cols(); ++c)
      if (labels(i, c) != T(0)) h -= labels(i, c) * std::log(detail::clamp_prob(probs(i, c)));
  return h;
}

template <typename T>
Matrix<T> grad_cross_entropy_wrt_probs(const Matrix<T>& probs, const Matrix<T>& labels) {
  require(probs.rows() == labels.rows() && probs.cols() == labels.cols(), ErrorKind::BadShape,
          "probs and labels differ in shape");
  Matrix<T> g(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t c = 0; c < probs.cols(); ++c)
      if (labels(i, c) != T(0)) g(i, c) = -labels(i, c) / detail::clamp_prob(probs(i, c));
  return g;
}

/// −Σₜ ⟨f(xₜ), log f(xₜ)⟩ with 0·log 0 = 0. A one-hot row contributes exactly 0.
template <typename T>
T entropy(const Matrix<T>& probs) {
  require(probs.cols() > 0, ErrorKind::BadShape, "probs have no classes");
  T e = T(0);
  for (T p : probs.values())
    if (p > T(0)) e -= p * std::log(std::max(p, T(kProbClamp)));
  return e;
}

template <typename T>
Matrix<T> grad_entropy_wrt_probs(const Matrix<T>& probs) {
  require(probs.cols() > 0, ErrorKind::BadShape, "probs have no classes");
  Matrix<T> g(probs.rows(), probs.cols());
  auto pv = probs.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < pv.size(); ++i) gv[i] = -(T(1) + std::log(detail::clamp_prob(pv[i])));
  return g;
}

template <typename T>
struct ParamGrads {
  std::vector<Matrix<T>> weights;
  std::vector<std::vector<T>> biases;

  static ParamGrads zeros_like(const Mlp<T>& m) {
    ParamGrads g;
    for (const auto& w : m.weights) g.weights.emplace_back(w.rows(), w.cols());
    for (const auto& b : m.biases) g.biases.emplace_back(b.size(), T(0));
    return g;
  }

  ParamGrads& operator+=(const ParamGrads& o) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += o.weights[l];
      for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += o.biases[l][i];
    }
    return *this;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!meca::all_finite(w)) return false;
    for (const auto& b : biases)
      for (T v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Reverse pass. `grad_probs` (n × K) is ∂L/∂probs and `grad_features`
/// (d × n) is ∂L/∂feature_acts; either may be empty for a zero gradient.
/// Both sources accumulate through the shared lower layers.
template <typename T>
ParamGrads<T> backward(const Mlp<T>& model, const ForwardTrace<T>& trace,
                       const Matrix<T>& grad_probs, const Matrix<T>& grad_features) {
  const std::size_t n = trace.batch_size();
  const std::size_t k = model.num_classes();
  const std::size_t num_affine = model.num_affine();
  if (!grad_probs.empty())
    require(grad_probs.rows() == n && grad_probs.cols() == k, ErrorKind::BadShape,
            "grad_probs shape does not match trace");
  if (!grad_features.empty()) {
    require(trace.alignment_layer.has_value(), ErrorKind::BadShape,
            "feature gradient supplied but the trace has no alignment layer");
    require(grad_features.rows() == trace.feature_acts.rows() && grad_features.cols() == n,
            ErrorKind::BadShape, "grad_features shape does not match trace");
  }

  // Softmax Jacobian: dz_c = p_c (g_c − Σ_j g_j p_j).
  Matrix<T> dz(k, n);
  if (!grad_probs.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      T dot = T(0);
      for (std::size_t c = 0; c < k; ++c) dot += grad_probs(i, c) * trace.probs(i, c);
      for (std::size_t c = 0; c < k; ++c)
        dz(c, i) = trace.probs(i, c) * (grad_probs(i, c) - dot);
    }
  }

  ParamGrads<T> g = ParamGrads<T>::zeros_like(model);
  for (std::size_t l = num_affine; l-- > 0;) {
    g.weights[l] = matmul_nt(dz, trace.activations[l]);
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      T s = T(0);
      for (T v : dz.row(r)) s += v;
      g.biases[l][r] = s;
    }
    if (l == 0) break;
    Matrix<T> da = matmul_tn(model.weights[l], dz);
    if (!grad_features.empty() && trace.alignment_layer && *trace.alignment_layer == l)
      da += grad_features;
    const Matrix<T>& pre = trace.pre_activations[l - 1];
    const Matrix<T>& post = trace.activations[l];
    auto dv = da.values();
    auto pv = pre.values();
    auto av = post.values();
    for (std::size_t i = 0; i < dv.size(); ++i)
      dv[i] *= detail::activate_grad(model.hidden_activation, pv[i], av[i]);
    dz = std::move(da);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Binary model record: "MECA", u32 version, u32 layer count, u32 sizes...,
// u32 hidden activation, then per layer W (row-major) and b as LE f64.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  std::uint64_t take(int width) {
    require(pos_ + static_cast<std::size_t>(width) <= bytes_.size(), ErrorKind::TruncatedFile,
            "model record ends early");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f64() { return std::bit_cast<double>(take(8)); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const MlpModel& m) {
  std::vector<std::uint8_t> out = {'M', 'E', 'C', 'A'};
  detail::put_u32(out, kModelFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.layer_sizes.size()));
  for (auto s : m.layer_sizes) detail::put_u32(out, static_cast<std::uint32_t>(s));
  detail::put_u32(out, static_cast<std::uint32_t>(m.hidden_activation));
  for (std::size_t l = 0; l < m.num_affine(); ++l) {
    for (double v : m.weights[l].values()) detail::put_f64(out, v);
    for (double v : m.biases[l]) detail::put_f64(out, v);
  }
  return out;
}

inline MlpModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), "MECA", 4) == 0, ErrorKind::BadMagic,
          "model record does not start with MECA");
  detail::ByteReader rd(bytes);
  rd.take(4);
  const auto version = rd.u32();
  require(version == kModelFormatVersion, ErrorKind::ParseError,
          "unsupported model version " + std::to_string(version));
  const auto count = rd.u32();
  require(count >= 2 && count < 4096, ErrorKind::ParseError, "implausible layer count");
  MlpModel m;
  for (std::uint32_t i = 0; i < count; ++i) {
    m.layer_sizes.push_back(rd.u32());
    require(m.layer_sizes.back() > 0, ErrorKind::ParseError, "zero-width layer");
  }
  const auto act = rd.u32();
  require(act <= 1, ErrorKind::ParseError, "unknown activation code");
  m.hidden_activation = static_cast<Activation>(act);
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    DenseMatrix w(m.layer_sizes[l + 1], m.layer_sizes[l]);
    for (auto& v : w.values()) v = rd.f64();
    std::vector<double> b(m.layer_sizes[l + 1]);
    for (auto& v : b) v = rd.f64();
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  require(rd.at_end(), ErrorKind::ParseError, "trailing bytes after model record");
  return m;
}

inline void save_model(const MlpModel& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  const auto bytes = serialize_model(m);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::IoError, "write failed: " + path);
}

inline MlpModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace meca
