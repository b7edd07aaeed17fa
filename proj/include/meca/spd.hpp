#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "meca/error.hpp"
#include "meca/matrix.hpp"

namespace meca {

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kJacobiTol = 1e-12;
inline constexpr int kJacobiMaxSweeps = 100;
inline constexpr double kDefaultJitter = 1e-5;
inline constexpr double kJitterFloor = 1e-12;
inline constexpr double kLoewnerTieTol = 1e-12;

/// Eigenvalues in descending order; eigenvectors stored as columns.
template <typename T>
struct EigenSystem {
  std::vector<T> values;
  Matrix<T> vectors;
};

template <typename T>
void check_symmetric(const Matrix<T>& m) {
  require(m.is_square(), ErrorKind::BadShape, "expected a square matrix");
  const T tol = T(kSymmetryTol) * max_abs(m);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      require(std::abs(m(i, j) - m(j, i)) <= tol, ErrorKind::NonSymmetric,
              "asymmetry exceeds tolerance");
}

/// Cyclic Jacobi eigensolver for real symmetric matrices.
///
/// Sweeps over every (p, q) pair until the off-diagonal Frobenius norm falls
/// below kJacobiTol times the diagonal norm. Results are sorted descending
/// (stable in the original index) and each eigenvector is signed so that its
/// largest-magnitude component is positive.
template <typename T>
EigenSystem<T> sym_eig(const Matrix<T>& m, int max_sweeps = kJacobiMaxSweeps) {
  check_symmetric(m);
  require(all_finite(m), ErrorKind::NoConvergence, "non-finite entries cannot converge");
  const std::size_t n = m.rows();
  Matrix<T> a = symmetrized(m);
  Matrix<T> v = Matrix<T>::identity(n);

  auto off_norm = [&] {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };
  auto diag_norm = [&] {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) s += a(i, i) * a(i, i);
    return std::sqrt(s);
  };

  bool converged = false;
  for (int sweep = 0; sweep <= max_sweeps; ++sweep) {
    const T off = off_norm();
    if (off == T(0) || off < T(kJacobiTol) * diag_norm()) {
      converged = true;
      break;
    }
    if (sweep == max_sweeps) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const T apq = a(p, q);
        if (apq == T(0)) continue;
        const T theta = (a(q, q) - a(p, p)) / (T(2) * apq);
        T t;
        if (std::abs(theta) > T(1e150)) {
          t = T(1) / (T(2) * theta);
        } else {
          t = T(1) / (std::abs(theta) + std::sqrt(theta * theta + T(1)));
          if (theta < T(0)) t = -t;
        }
        const T c = T(1) / std::sqrt(t * t + T(1));
        const T s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const T akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const T apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = T(0);
        for (std::size_t k = 0; k < n; ++k) {
          const T vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  require(converged, ErrorKind::NoConvergence, "Jacobi sweep cap reached");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenSystem<T> out{std::vector<T>(n), Matrix<T>(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    out.values[c] = a(src, src);
    std::size_t pivot = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, src)) > std::abs(v(pivot, src))) pivot = k;
    const T sign = v(pivot, src) < T(0) ? T(-1) : T(1);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, c) = sign * v(k, src);
  }
  return out;
}

/// U diag(f(values)) Uᵀ
template <typename T, typename F>
Matrix<T> compose_eigen(const EigenSystem<T>& es, F&& f) {
  const std::size_t n = es.values.size();
  std::vector<T> fv(n);
  for (std::size_t i = 0; i < n; ++i) fv[i] = f(es.values[i]);
  Matrix<T> scaled = es.vectors;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) scaled(r, c) *= fv[c];
  return symmetrized(matmul_nt(scaled, es.vectors));
}

/// Symmetric positive-definite matrix with its eigensystem cached.
template <typename T>
class Spd {
 public:
  /// Validates positivity; throws Degenerate if any eigenvalue is ≤ 0.
  static Spd from_symmetric(Matrix<T> m) {
    auto es = sym_eig(m);
    for (T lambda : es.values)
      require(lambda > T(0) && std::isfinite(lambda), ErrorKind::Degenerate,
              "matrix is not positive definite");
    return Spd(std::move(m), std::move(es));
  }

  std::size_t dim() const noexcept { return mat_.rows(); }
  const Matrix<T>& matrix() const noexcept { return mat_; }
  const std::vector<T>& eigenvalues() const noexcept { return eig_.values; }
  const Matrix<T>& eigenvectors() const noexcept { return eig_.vectors; }
  const EigenSystem<T>& eigensystem() const noexcept { return eig_; }

 private:
  Spd(Matrix<T> m, EigenSystem<T> es) : mat_(std::move(m)), eig_(std::move(es)) {}

  Matrix<T> mat_;
  EigenSystem<T> eig_;
};

using SpdMatrix = Spd<double>;

template <typename T>
T jitter_amount(const Matrix<T>& m, double jitter_rel) {
  const T d = static_cast<T>(m.rows());
  return static_cast<T>(jitter_rel) * trace(m) / d + T(kJitterFloor);
}

/// m + εI with ε = jitter_rel·trace(m)/dim + 1e-12.
template <typename T>
Spd<T> make_spd(const Matrix<T>& m, double jitter_rel = kDefaultJitter) {
  check_symmetric(m);
  require(m.rows() > 0, ErrorKind::BadShape, "empty matrix");
  Matrix<T> shifted = m;
  const T eps = jitter_amount(m, jitter_rel);
  for (std::size_t i = 0; i < m.rows(); ++i) shifted(i, i) += eps;
  return Spd<T>::from_symmetric(std::move(shifted));
}

template <typename T>
Matrix<T> mat_log(const Spd<T>& c) {
  return compose_eigen(c.eigensystem(), [](T x) { return std::log(x); });
}

template <typename T>
Matrix<T> mat_exp_sym(const Matrix<T>& sym) {
  return compose_eigen(sym_eig(sym), [](T x) { return std::exp(x); });
}

namespace detail {
template <typename T>
void check_dims(const Spd<T>& a, const Spd<T>& b) {
  require(a.dim() == b.dim(), ErrorKind::DimMismatch, "SPD arguments differ in dimension");
}

template <typename T>
T norm_factor(std::size_t d) {
  const T dd = static_cast<T>(d);
  return T(1) / (T(4) * dd * dd);
}

/// Divided differences of log at the eigenvalues (Fréchet derivative kernel).
template <typename T>
Matrix<T> loewner_log(const std::vector<T>& sigma) {
  const std::size_t n = sigma.size();
  Matrix<T> l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T si = sigma[i], sj = sigma[j];
      const T diff = si - sj;
      if (i == j || std::abs(diff) < T(kLoewnerTieTol) * std::max(si, sj)) {
        l(i, j) = T(1) / si;
      } else {
        l(i, j) = std::log1p(diff / sj) / diff;
      }
    }
  }
  return l;
}

/// Adjoint of the Fréchet derivative of log at c, applied to a symmetric direction.
template <typename T>
Matrix<T> log_frechet_adjoint(const Spd<T>& c, const Matrix<T>& direction) {
  const auto& u = c.eigenvectors();
  Matrix<T> inner = matmul(matmul_tn(u, direction), u);
  inner = hadamard(loewner_log(c.eigenvalues()), inner);
  return symmetrized(matmul_nt(matmul(u, inner), u));
}
}  // namespace detail

/// (1/(4d²))·‖cs − ct‖²_F
template <typename T>
T dist_euclidean(const Spd<T>& cs, const Spd<T>& ct) {
  detail::check_dims(cs, ct);
  return detail::norm_factor<T>(cs.dim()) * squared_norm(cs.matrix() - ct.matrix());
}

/// (1/(4d²))·‖log cs − log ct‖²_F
template <typename T>
T dist_log_euclidean(const Spd<T>& cs, const Spd<T>& ct) {
  detail::check_dims(cs, ct);
  return detail::norm_factor<T>(cs.dim()) * squared_norm(mat_log(cs) - mat_log(ct));
}

/// ‖log(ct^{-1/2} cs ct^{-1/2})‖_F, unnormalized. Comparison use only.
template <typename T>
T dist_affine(const Spd<T>& cs, const Spd<T>& ct) {
  detail::check_dims(cs, ct);
  const Matrix<T> inv_sqrt =
      compose_eigen(ct.eigensystem(), [](T x) { return T(1) / std::sqrt(x); });
  const Matrix<T> congruent = symmetrized(matmul(matmul(inv_sqrt, cs.matrix()), inv_sqrt));
  T s = T(0);
  for (T lambda : sym_eig(congruent).values) {
    const T l = std::log(lambda);
    s += l * l;
  }
  return std::sqrt(s);
}

template <typename T>
struct SpdGradient {
  Matrix<T> source;
  Matrix<T> target;
};

template <typename T>
SpdGradient<T> grad_dist_euclidean(const Spd<T>& cs, const Spd<T>& ct) {
  detail::check_dims(cs, ct);
  const T d = static_cast<T>(cs.dim());
  Matrix<T> gs = (cs.matrix() - ct.matrix()) * (T(1) / (T(2) * d * d));
  Matrix<T> gt = gs * T(-1);
  return {std::move(gs), std::move(gt)};
}

/// Closed-form gradient of dist_log_euclidean through the Loewner matrix of log.
template <typename T>
SpdGradient<T> grad_dist_log_euclidean(const Spd<T>& cs, const Spd<T>& ct) {
  detail::check_dims(cs, ct);
  const T d = static_cast<T>(cs.dim());
  const T scale = T(1) / (T(2) * d * d);
  const Matrix<T> delta = mat_log(cs) - mat_log(ct);
  Matrix<T> gs = detail::log_frechet_adjoint(cs, delta) * scale;
  Matrix<T> gt = detail::log_frechet_adjoint(ct, delta) * (-scale);
  return {std::move(gs), std::move(gt)};
}

}  // namespace meca
