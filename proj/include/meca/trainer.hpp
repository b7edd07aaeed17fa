#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "meca/alignment.hpp"
#include "meca/data.hpp"
#include "meca/error.hpp"
#include "meca/matrix.hpp"
#include "meca/network.hpp"

namespace meca {

enum class Method { source_only, entropy_reg, coral_euclidean, meca_geodesic };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::source_only: return "source_only";
    case Method::entropy_reg: return "entropy_reg";
    case Method::coral_euclidean: return "coral_euclidean";
    case Method::meca_geodesic: return "meca_geodesic";
  }
  return "unknown";
}

/// The penalty a method optimizes; methods without one are monitored under log-Euclidean.
inline PenaltyKind monitored_penalty(Method m) {
  return m == Method::coral_euclidean ? PenaltyKind::euclidean : PenaltyKind::log_euclidean;
}

struct TrainConfig {
  Method method = Method::meca_geodesic;
  /// λ for the alignment methods, γ for entropy_reg, ignored for source_only.
  double lambda_or_gamma = 0.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  /// Defaults to the model's penultimate layer.
  std::optional<std::size_t> alignment_layer_index;
  double jitter_rel = kDefaultJitter;
  bool normalize_cov = false;
  /// Divide the per-step cross-entropy and entropy by the batch size. The
  /// reported metrics stay batch-free sums over the full sets either way.
  bool batch_mean_losses = true;

  void validate() const {
    require(epochs >= 1, ErrorKind::ConfigInvalid, "epochs must be >= 1");
    require(batch_size >= 2, ErrorKind::ConfigInvalid, "batch_size must be >= 2");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::ConfigInvalid,
            "learning_rate must be positive");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::ConfigInvalid,
            "momentum must lie in [0, 1)");
    require(std::isfinite(lambda_or_gamma) && lambda_or_gamma >= 0.0, ErrorKind::ConfigInvalid,
            "lambda/gamma must be finite and non-negative");
    require(jitter_rel >= 0.0, ErrorKind::ConfigInvalid, "jitter_rel must be non-negative");
  }

  AlignmentPenalty penalty() const {
    AlignmentPenalty p;
    p.jitter_rel = jitter_rel;
    p.normalize_cov = normalize_cov;
    switch (method) {
      case Method::coral_euclidean:
        p.kind = PenaltyKind::euclidean;
        p.lambda = lambda_or_gamma;
        break;
      case Method::meca_geodesic:
        p.kind = PenaltyKind::log_euclidean;
        p.lambda = lambda_or_gamma;
        break;
      default:
        p.kind = PenaltyKind::none;
        p.lambda = 0.0;
    }
    return p;
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double h_source = 0.0;
  double e_target = 0.0;
  double pen_value = 0.0;
  /// Absent when the target carries no labels.
  std::optional<double> target_accuracy;
  double kl_st = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainResult {
  MlpModel model;
  std::vector<EpochMetrics> metrics;
  bool diverged = false;
  std::string message;
};

struct Evaluation {
  double accuracy = 0.0;
  double entropy = 0.0;
  double cross_entropy = 0.0;
};

/// Accuracy (argmax, ties toward the lowest class), entropy and cross-entropy of predictions.
inline Evaluation evaluate_predictions(const DenseMatrix& probs, const DenseMatrix& labels) {
  require(probs.rows() > 0, ErrorKind::BadShape, "empty dataset");
  require(probs.rows() == labels.rows() && probs.cols() == labels.cols(), ErrorKind::BadShape,
          "probs and labels differ in shape");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    std::size_t best = 0, truth = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
      if (labels(i, c) > labels(i, truth)) truth = c;
    }
    if (best == truth) ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(probs.rows()), entropy(probs),
          cross_entropy(probs, labels)};
}

inline Evaluation evaluate(const MlpModel& model, const Dataset& data) {
  require(data.size() > 0, ErrorKind::BadShape, "empty dataset");
  require(data.has_labels(), ErrorKind::BadShape, "evaluation needs labels");
  const auto tr = forward(model, data.inputs, std::nullopt);
  return evaluate_predictions(tr.probs, *data.labels);
}

inline constexpr double kKlVarianceFloor = 1e-8;

/// KL(N_s ‖ N_t) between per-feature diagonal Gaussians fitted to two
/// activation sets (d × n each). Diagnostic only.
inline double kl_diagnostic(const DenseMatrix& acts_s, const DenseMatrix& acts_t) {
  require(acts_s.cols() >= 2 && acts_t.cols() >= 2, ErrorKind::TooFewSamples,
          "KL diagnostic needs at least two samples per domain");
  require(acts_s.rows() == acts_t.rows(), ErrorKind::DimMismatch, "feature widths differ");
  auto moments = [](std::span<const double> row) {
    const double n = static_cast<double>(row.size());
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    return std::pair{mean, std::max(var / n, kKlVarianceFloor)};
  };
  double kl = 0.0;
  for (std::size_t r = 0; r < acts_s.rows(); ++r) {
    const auto [ms, vs] = moments(acts_s.row(r));
    const auto [mt, vt] = moments(acts_t.row(r));
    kl += 0.5 * (std::log(vt / vs) + (vs + (ms - mt) * (ms - mt)) / vt - 1.0);
  }
  return std::max(kl, 0.0);
}

namespace detail {
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Fisher–Yates on raw engine draws: the order depends only on the engine.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline void sgd_momentum_step(MlpModel& model, ParamGrads<double>& velocity,
                              const ParamGrads<double>& grad, double lr, double momentum) {
  for (std::size_t l = 0; l < model.num_affine(); ++l) {
    auto w = model.weights[l].values();
    auto vw = velocity.weights[l].values();
    auto gw = grad.weights[l].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vw[i] = momentum * vw[i] + gw[i];
      w[i] -= lr * vw[i];
    }
    auto& b = model.biases[l];
    auto& vb = velocity.biases[l];
    const auto& gb = grad.biases[l];
    for (std::size_t i = 0; i < b.size(); ++i) {
      vb[i] = momentum * vb[i] + gb[i];
      b[i] -= lr * vb[i];
    }
  }
}
}  // namespace detail

/// Metrics of a model on the full source and target sets.
inline EpochMetrics measure_epoch(const MlpModel& model, const Dataset& source,
                                  const Dataset& target, const TrainConfig& config,
                                  std::size_t epoch) {
  const auto layer = config.alignment_layer_index ? config.alignment_layer_index
                                                  : model.default_alignment_layer();
  const auto ts = forward(model, source.inputs, layer);
  const auto tt = forward(model, target.inputs, layer);
  EpochMetrics m;
  m.epoch = epoch;
  m.h_source = cross_entropy(ts.probs, *source.labels);
  m.e_target = entropy(tt.probs);
  if (layer) {
    AlignmentPenalty p = config.penalty();
    p.kind = monitored_penalty(config.method);
    p.lambda = 1.0;
    m.pen_value = evaluate_penalty(ts.feature_acts, tt.feature_acts, p, false).value;
    m.kl_st = kl_diagnostic(ts.feature_acts, tt.feature_acts);
  }
  // Target labels are read here and nowhere else in training.
  if (target.has_labels())
    m.target_accuracy = evaluate_predictions(tt.probs, *target.labels).accuracy;
  return m;
}

/// Trains one (method, λ) configuration with SGD + momentum.
///
/// Each epoch shuffles both domains, pairs equal-size source/target batches
/// (target batches wrap around when the target is smaller) and takes one step
/// per pair. A non-finite loss or gradient stops the run with `diverged` set
/// and the metrics gathered so far.
inline TrainResult train_run(MlpModel model, const Dataset& source, const Dataset& target,
                             const TrainConfig& config) {
  config.validate();
  require(source.has_labels(), ErrorKind::ConfigInvalid, "source must be labeled");
  require(source.labels->cols() == model.num_classes(), ErrorKind::ConfigInvalid,
          "source classes do not match model output width");
  require(source.dim() == model.input_width() && target.dim() == model.input_width(),
          ErrorKind::ConfigInvalid, "input widths do not match the model");
  require(source.size() >= 2 && target.size() >= 2, ErrorKind::ConfigInvalid,
          "each domain needs at least two samples");
  const auto layer = config.alignment_layer_index ? config.alignment_layer_index
                                                  : model.default_alignment_layer();
  const AlignmentPenalty penalty = config.penalty();
  require(penalty.kind == PenaltyKind::none || layer.has_value(), ErrorKind::ConfigInvalid,
          "alignment needs a hidden layer");

  const std::size_t batch = std::min({config.batch_size, source.size(), target.size()});
  const std::size_t steps = source.size() / batch;
  const double gamma = config.method == Method::entropy_reg ? config.lambda_or_gamma : 0.0;

  TrainResult result;
  std::mt19937_64 rng(config.seed);
  ParamGrads<double> velocity = ParamGrads<double>::zeros_like(model);
  const Dataset target_inputs = target.without_labels();
  auto diverge = [&](std::string msg) {
    result.diverged = true;
    result.message = std::move(msg);
    result.model = std::move(model);
    return std::move(result);
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm_s = detail::shuffled_indices(source.size(), rng);
    const auto perm_t = detail::shuffled_indices(target.size(), rng);
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> idx_s(batch), idx_t(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        idx_s[i] = perm_s[step * batch + i];
        idx_t[i] = perm_t[(step * batch + i) % target.size()];
      }
      const Dataset bs = source.subset(idx_s);
      const Dataset bt = target_inputs.subset(idx_t);
      const auto ts = forward(model, bs.inputs, layer);
      const auto tt = forward(model, bt.inputs, layer);
      const std::string where =
          " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
      if (!all_finite(ts.probs) || !all_finite(tt.probs) ||
          (layer && (!all_finite(ts.feature_acts) || !all_finite(tt.feature_acts))))
        return diverge("non-finite activations" + where);

      const double reduce = config.batch_mean_losses ? 1.0 / static_cast<double>(batch) : 1.0;
      double loss = reduce * cross_entropy(ts.probs, *bs.labels);
      DenseMatrix g_probs_s = grad_cross_entropy_wrt_probs(ts.probs, *bs.labels) * reduce;
      DenseMatrix g_probs_t, g_feat_s, g_feat_t;
      if (gamma > 0.0) {
        loss += gamma * reduce * entropy(tt.probs);
        g_probs_t = grad_entropy_wrt_probs(tt.probs) * (gamma * reduce);
      }
      if (penalty.kind != PenaltyKind::none && penalty.lambda > 0.0) {
        PenaltyEvaluation<double> ev;
        try {
          ev = evaluate_penalty(ts.feature_acts, tt.feature_acts, penalty, true);
        } catch (const Error& e) {
          return diverge(std::string("penalty failed") + where + ": " + e.what());
        }
        loss += penalty.lambda * ev.value;
        g_feat_s = std::move(ev.grad_source);
        g_feat_t = std::move(ev.grad_target);
      }

      ParamGrads<double> grad = backward(model, ts, g_probs_s, g_feat_s);
      if (!g_probs_t.empty() || !g_feat_t.empty()) grad += backward(model, tt, g_probs_t, g_feat_t);

      if (!std::isfinite(loss) || !grad.all_finite()) return diverge("non-finite loss" + where);
      detail::sgd_momentum_step(model, velocity, grad, config.learning_rate, config.momentum);
    }
    EpochMetrics m;
    try {
      m = measure_epoch(model, source, target, config, epoch);
    } catch (const Error& e) {
      return diverge("metrics failed at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const bool finite = std::isfinite(m.h_source) && std::isfinite(m.e_target) &&
                        std::isfinite(m.pen_value) && std::isfinite(m.kl_st);
    result.metrics.push_back(m);
    if (!finite) {
      result.diverged = true;
      result.message = "non-finite metrics at epoch " + std::to_string(epoch);
      break;
    }
  }
  result.model = std::move(model);
  return result;
}

inline constexpr std::string_view kMetricsHeader = "epoch,h_source,e_target,pen_value,target_acc,kl_st";

inline std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& m : metrics) {
    out += std::to_string(m.epoch) + ',' + format_double(m.h_source) + ',' +
           format_double(m.e_target) + ',' + format_double(m.pen_value) + ',' +
           (m.target_accuracy ? format_double(*m.target_accuracy) : std::string("nan")) + ',' +
           format_double(m.kl_st) + '\n';
  }
  return out;
}

inline void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  f << metrics_csv(metrics);
  require(static_cast<bool>(f), ErrorKind::IoError, "write failed: " + path);
}

}  // namespace meca
