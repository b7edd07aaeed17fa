#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "meca/error.hpp"
#include "meca/matrix.hpp"
#include "meca/network.hpp"
#include "meca/spd.hpp"

namespace meca {

enum class PenaltyKind { none, euclidean, log_euclidean };

struct AlignmentPenalty {
  PenaltyKind kind = PenaltyKind::log_euclidean;
  double lambda = 0.0;
  double jitter_rel = kDefaultJitter;
  /// Divide the scatter by (n − 1). Off by default: C = A J Aᵀ as written.
  bool normalize_cov = false;

  void validate() const {
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::ConfigInvalid,
            "lambda must be finite and non-negative");
    require(std::isfinite(jitter_rel) && jitter_rel >= 0.0, ErrorKind::ConfigInvalid,
            "jitter_rel must be finite and non-negative");
  }
};

/// A J Aᵀ with J = I − (1/n)11ᵀ, i.e. the scatter of mean-centred columns.
template <typename T>
Matrix<T> centered_scatter(const Matrix<T>& acts, bool normalize = false) {
  const std::size_t n = acts.cols();
  require(n >= 2, ErrorKind::TooFewSamples, "covariance needs at least two samples");
  Matrix<T> centered = acts;
  for (std::size_t r = 0; r < acts.rows(); ++r) {
    auto row = centered.row(r);
    T mean = T(0);
    for (T v : row) mean += v;
    mean /= static_cast<T>(n);
    for (auto& v : row) v -= mean;
  }
  Matrix<T> c = symmetrized(matmul_nt(centered, centered));
  if (normalize) c *= T(1) / static_cast<T>(n - 1);
  return c;
}

template <typename T>
Spd<T> covariance(const Matrix<T>& acts, double jitter_rel = kDefaultJitter,
                  bool normalize = false) {
  return make_spd(centered_scatter(acts, normalize), jitter_rel);
}

template <typename T>
T penalty_distance(const Spd<T>& cs, const Spd<T>& ct, PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::none: return T(0);
    case PenaltyKind::euclidean: return dist_euclidean(cs, ct);
    case PenaltyKind::log_euclidean: return dist_log_euclidean(cs, ct);
  }
  return T(0);
}

template <typename T>
struct PenaltyEvaluation {
  /// Unweighted distance ℓ(C_S, C_T).
  T value = T(0);
  /// λ·∂ℓ/∂A_S and λ·∂ℓ/∂A_T.
  Matrix<T> grad_source;
  Matrix<T> grad_target;
};

namespace detail {
// Pulls ∂ℓ/∂C back to ∂ℓ/∂A through C = s·A J Aᵀ + ε(A)·I.
template <typename T>
Matrix<T> scatter_pullback(const Matrix<T>& acts, Matrix<T> grad_c, const AlignmentPenalty& penalty) {
  const std::size_t d = acts.rows();
  const std::size_t n = acts.cols();
  // ε = jitter_rel·tr(C₀)/d + floor, so ∂ε/∂C₀ = (jitter_rel/d)·I.
  const T tr_g = trace(grad_c);
  for (std::size_t i = 0; i < d; ++i)
    grad_c(i, i) += static_cast<T>(penalty.jitter_rel) * tr_g / static_cast<T>(d);
  Matrix<T> centered = acts;
  for (std::size_t r = 0; r < d; ++r) {
    auto row = centered.row(r);
    T mean = T(0);
    for (T v : row) mean += v;
    mean /= static_cast<T>(n);
    for (auto& v : row) v -= mean;
  }
  T scale = static_cast<T>(penalty.lambda);
  if (penalty.normalize_cov) scale /= static_cast<T>(n - 1);
  Matrix<T> sym = grad_c + grad_c.transposed();
  return matmul(sym, centered) * scale;
}
}  // namespace detail

/// Penalty value and, optionally, its λ-weighted gradient w.r.t. both activation batches.
template <typename T>
PenaltyEvaluation<T> evaluate_penalty(const Matrix<T>& acts_s, const Matrix<T>& acts_t,
                                      const AlignmentPenalty& penalty, bool with_grad = true) {
  penalty.validate();
  require(acts_s.cols() >= 2 && acts_t.cols() >= 2, ErrorKind::TooFewSamples,
          "each batch needs at least two samples");
  require(acts_s.rows() == acts_t.rows(), ErrorKind::DimMismatch,
          "source and target feature widths differ");
  PenaltyEvaluation<T> out;
  if (penalty.kind == PenaltyKind::none) {
    if (with_grad) {
      out.grad_source = Matrix<T>(acts_s.rows(), acts_s.cols());
      out.grad_target = Matrix<T>(acts_t.rows(), acts_t.cols());
    }
    return out;
  }
  const Matrix<T> raw_s = centered_scatter(acts_s, penalty.normalize_cov);
  const Matrix<T> raw_t = centered_scatter(acts_t, penalty.normalize_cov);
  const Spd<T> cs = make_spd(raw_s, penalty.jitter_rel);
  const Spd<T> ct = make_spd(raw_t, penalty.jitter_rel);
  out.value = penalty_distance(cs, ct, penalty.kind);
  if (!with_grad) return out;
  SpdGradient<T> g = penalty.kind == PenaltyKind::euclidean ? grad_dist_euclidean(cs, ct)
                                                            : grad_dist_log_euclidean(cs, ct);
  out.grad_source = detail::scatter_pullback(acts_s, std::move(g.source), penalty);
  out.grad_target = detail::scatter_pullback(acts_t, std::move(g.target), penalty);
  return out;
}

template <typename T>
std::pair<Matrix<T>, Matrix<T>> grad_covariance_penalty(const Matrix<T>& acts_s,
                                                        const Matrix<T>& acts_t,
                                                        const AlignmentPenalty& penalty) {
  auto ev = evaluate_penalty(acts_s, acts_t, penalty, true);
  return {std::move(ev.grad_source), std::move(ev.grad_target)};
}

template <typename T>
struct CompositeLoss {
  T total = T(0);
  T h_source = T(0);
  T pen_value = T(0);
};

/// H(X_S, Z_S) + λ·ℓ(C_S, C_T) for two traces of the same model.
template <typename T>
CompositeLoss<T> composite_loss(const ForwardTrace<T>& trace_s, const Matrix<T>& labels_s,
                                const ForwardTrace<T>& trace_t,
                                const AlignmentPenalty& penalty) {
  penalty.validate();
  CompositeLoss<T> out;
  out.h_source = cross_entropy(trace_s.probs, labels_s);
  if (penalty.kind != PenaltyKind::none) {
    require(trace_s.alignment_layer && trace_s.alignment_layer == trace_t.alignment_layer,
            ErrorKind::BadShape, "traces must share an alignment layer");
    out.pen_value =
        evaluate_penalty(trace_s.feature_acts, trace_t.feature_acts, penalty, false).value;
  }
  out.total = out.h_source + static_cast<T>(penalty.lambda) * out.pen_value;
  return out;
}

}  // namespace meca
