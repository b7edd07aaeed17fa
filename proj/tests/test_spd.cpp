#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "meca/spd.hpp"
#include "support/oracles.hpp"

namespace meca {
namespace {

using testing::rel_error;
using testing::rel_frobenius;

constexpr double kE = std::numbers::e;

void expect_matrix_near(const DenseMatrix& a, const DenseMatrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      EXPECT_NEAR(a(i, j), b(i, j), tol) << "at (" << i << "," << j << ")";
}

SpdMatrix spd(const DenseMatrix& m) { return SpdMatrix::from_symmetric(m); }

TEST(SymEig, IdentityHasUnitEigenvalues) {
  const auto es = sym_eig(DenseMatrix::identity(3));
  for (double v : es.values) EXPECT_DOUBLE_EQ(v, 1.0);
  expect_matrix_near(matmul_tn(es.vectors, es.vectors), DenseMatrix::identity(3), 1e-15);
}

TEST(SymEig, DiagonalIsAlreadyDecomposed) {
  const auto es = sym_eig(DenseMatrix::diagonal({4.0, 1.0}));
  EXPECT_DOUBLE_EQ(es.values[0], 4.0);
  EXPECT_DOUBLE_EQ(es.values[1], 1.0);
  expect_matrix_near(es.vectors, DenseMatrix::identity(2), 0.0);
}

TEST(SymEig, TwoByTwoHandSolution) {
  // Characteristic polynomial (2 − x)² − 1 = 0 → x ∈ {3, 1}.
  const auto es = sym_eig(DenseMatrix{{2, 1}, {1, 2}});
  EXPECT_NEAR(es.values[0], 3.0, 1e-14);
  EXPECT_NEAR(es.values[1], 1.0, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  // Sign convention: largest-magnitude component positive, first index on ties.
  expect_matrix_near(es.vectors, DenseMatrix{{r, r}, {r, -r}}, 1e-14);
}

TEST(SymEig, SortedDescendingAndReconstructs) {
  std::mt19937_64 rng(11);
  for (std::size_t n : {2u, 5u, 16u, 64u}) {
    const DenseMatrix m = symmetrized(testing::random_gaussian(n, n, rng));
    const auto es = sym_eig(m);
    for (std::size_t i = 1; i < n; ++i) EXPECT_GE(es.values[i - 1], es.values[i]);
    const DenseMatrix back = compose_eigen(es, [](double x) { return x; });
    EXPECT_LT(rel_frobenius(back, m), 1e-8) << "n=" << n;
    EXPECT_LT(frobenius_norm(matmul_tn(es.vectors, es.vectors) - DenseMatrix::identity(n)), 1e-8);
  }
}

TEST(SymEig, DeterministicForIdenticalInput) {
  std::mt19937_64 rng(3);
  const DenseMatrix m = testing::random_spd_matrix(12, rng);
  const auto a = sym_eig(m);
  const auto b = sym_eig(m);
  EXPECT_EQ(a.values, b.values);
  EXPECT_TRUE(a.vectors == b.vectors);
}

TEST(SymEig, RejectsAsymmetricInput) {
  try {
    sym_eig(DenseMatrix{{1, 2}, {0, 1}});
    FAIL() << "expected NonSymmetric";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonSymmetric);
  }
}

TEST(SymEig, ReportsNoConvergenceWhenSweepCapIsHit) {
  std::mt19937_64 rng(13);
  const DenseMatrix m = testing::random_spd_matrix(6, rng);
  EXPECT_NO_THROW(sym_eig(m));
  try {
    sym_eig(m, 1);
    FAIL() << "expected NoConvergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoConvergence);
  }
}

TEST(SymEig, RejectsNonFiniteInput) {
  DenseMatrix m{{1, 0.5}, {0.5, 1}};
  m(0, 0) = std::nan("");
  try {
    sym_eig(m);
    FAIL() << "expected NoConvergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoConvergence);
  }
}

TEST(MakeSpd, IdentityPlusJitter) {
  const auto c = make_spd(DenseMatrix::identity(2), 1e-5);
  for (double v : c.eigenvalues()) EXPECT_NEAR(v, 1.0 + 1e-5 + 1e-12, 1e-15);
}

TEST(MakeSpd, RankDeficientGetsRelativeJitter) {
  // ε = 1e-5 · trace/dim + floor = 1e-5 · 2/2 + 1e-12.
  const auto c = make_spd(DenseMatrix::diagonal({2.0, 0.0}), 1e-5);
  EXPECT_NEAR(c.eigenvalues()[0], 2.0 + 1e-5, 2e-12);
  EXPECT_NEAR(c.eigenvalues()[1], 1e-5 + 1e-12, 1e-20);
}

TEST(MakeSpd, ZeroMatrixUsesFloor) {
  const auto c = make_spd(DenseMatrix(2, 2), 1e-5);
  for (double v : c.eigenvalues()) EXPECT_DOUBLE_EQ(v, 1e-12);
}

TEST(MakeSpd, NegativeDefiniteIsDegenerate) {
  try {
    make_spd(DenseMatrix::diagonal({-1.0, -2.0}), 1e-5);
    FAIL() << "expected Degenerate";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  }
}

TEST(MatLog, IdentityMapsToZero) {
  expect_matrix_near(mat_log(spd(DenseMatrix::identity(4))), DenseMatrix(4, 4), 0.0);
}

TEST(MatLog, DiagonalClosedForm) {
  expect_matrix_near(mat_log(spd(DenseMatrix::diagonal({kE, kE * kE}))),
                     DenseMatrix::diagonal({1.0, 2.0}), 1e-15);
}

TEST(MatLog, TwoByTwoEigenbasis) {
  // U diag(log 3, 0) Uᵀ with U columns (1,1)/√2, (1,−1)/√2.
  const double h = std::log(3.0) / 2.0;
  expect_matrix_near(mat_log(spd(DenseMatrix{{2, 1}, {1, 2}})), DenseMatrix{{h, h}, {h, h}},
                     1e-15);
}

TEST(MatLog, ExpRecoversMatrix) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    const auto c = testing::random_spd(2 + rep % 7, rng);
    EXPECT_LT(rel_frobenius(mat_exp_sym(mat_log(c)), c.matrix()), 1e-8);
  }
}

TEST(Distances, EuclideanHandValues) {
  const auto i2 = spd(DenseMatrix::identity(2));
  EXPECT_DOUBLE_EQ(dist_euclidean(i2, i2), 0.0);
  EXPECT_DOUBLE_EQ(dist_euclidean(i2, spd(DenseMatrix::diagonal({2.0, 2.0}))), 0.125);
  EXPECT_DOUBLE_EQ(dist_euclidean(spd(DenseMatrix::diagonal({3.0, 1.0})), i2), 0.25);
}

TEST(Distances, LogEuclideanHandValues) {
  const auto i2 = spd(DenseMatrix::identity(2));
  EXPECT_DOUBLE_EQ(dist_log_euclidean(i2, i2), 0.0);
  EXPECT_NEAR(dist_log_euclidean(spd(DenseMatrix::diagonal({1.0, kE * kE})), i2), 0.25, 1e-15);
}

TEST(Distances, AffineHandValues) {
  const auto i2 = spd(DenseMatrix::identity(2));
  EXPECT_DOUBLE_EQ(dist_affine(i2, i2), 0.0);
  EXPECT_NEAR(dist_affine(spd(DenseMatrix::diagonal({kE, kE})), i2), std::sqrt(2.0), 1e-14);
}

TEST(Distances, DimensionMismatch) {
  const auto a = spd(DenseMatrix::identity(2));
  const auto b = spd(DenseMatrix::identity(3));
  EXPECT_THROW(dist_euclidean(a, b), Error);
  EXPECT_THROW(dist_log_euclidean(a, b), Error);
  EXPECT_THROW(dist_affine(a, b), Error);
  EXPECT_THROW(grad_dist_log_euclidean(a, b), Error);
  try {
    grad_dist_euclidean(a, b);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimMismatch);
  }
}

TEST(Distances, AffineInvarianceUnderCongruence) {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t d = 2 + rep % 5;
    const DenseMatrix c1 = testing::random_spd_matrix(d, rng);
    const DenseMatrix c2 = testing::random_spd_matrix(d, rng);
    DenseMatrix g = testing::random_gaussian(d, d, rng);
    for (std::size_t i = 0; i < d; ++i) g(i, i) += 3.0;  // keep G well conditioned
    auto congruent = [&](const DenseMatrix& c) {
      return spd(symmetrized(matmul_nt(matmul(g, c), g)));
    };
    const double base = dist_affine(spd(c1), spd(c2));
    EXPECT_LT(rel_error(dist_affine(congruent(c1), congruent(c2)), base), 1e-7);
  }
}

// --- metric axioms and invariances ------------------------------------------

class LogEuclideanProperties : public ::testing::TestWithParam<std::size_t> {};

TEST_P(LogEuclideanProperties, MetricAxiomsAndInvariances) {
  const std::size_t d = GetParam();
  std::mt19937_64 rng(1000 + d);
  for (int rep = 0; rep < 100; ++rep) {
    const DenseMatrix m1 = testing::random_spd_matrix(d, rng);
    const DenseMatrix m2 = testing::random_spd_matrix(d, rng);
    const auto c1 = spd(m1), c2 = spd(m2);
    const double base = dist_log_euclidean(c1, c2);
    EXPECT_GT(base, 0.0);
    EXPECT_EQ(dist_log_euclidean(c1, c1), 0.0);
    EXPECT_LT(rel_error(dist_log_euclidean(c2, c1), base), 1e-12);
    EXPECT_GE(dist_affine(c1, c2), 0.0);
    EXPECT_LT(rel_error(dist_affine(c2, c1), dist_affine(c1, c2)), 1e-8);

    for (double s : {0.1, 1.0, 10.0}) {
      const double scaled = dist_log_euclidean(spd(m1 * s), spd(m2 * s));
      EXPECT_LT(rel_error(scaled, base), 1e-9) << "s=" << s;
    }

    const DenseMatrix q = testing::random_orthogonal(d, rng);
    auto rotate = [&](const DenseMatrix& c) { return spd(symmetrized(matmul_nt(matmul(q, c), q))); };
    EXPECT_LT(rel_error(dist_log_euclidean(rotate(m1), rotate(m2)), base), 1e-8);

    const double inv = dist_log_euclidean(spd(testing::symmetric_inverse(m1)),
                                          spd(testing::symmetric_inverse(m2)));
    EXPECT_LT(rel_error(inv, base), 1e-8);
  }
}

INSTANTIATE_TEST_SUITE_P(Dims, LogEuclideanProperties, ::testing::Values(2u, 4u, 8u));

// --- gradients ----------------------------------------------------------------

TEST(Gradients, VanishAtIdenticalArguments) {
  std::mt19937_64 rng(23);
  const auto c = testing::random_spd(4, rng);
  const auto gl = grad_dist_log_euclidean(c, c);
  const auto ge = grad_dist_euclidean(c, c);
  EXPECT_EQ(max_abs(gl.source), 0.0);
  EXPECT_EQ(max_abs(gl.target), 0.0);
  EXPECT_EQ(max_abs(ge.source), 0.0);
  EXPECT_EQ(max_abs(ge.target), 0.0);
}

TEST(Gradients, LogEuclideanDiagonalClosedForm) {
  const double a = 3.0, b = 0.5;
  const auto g = grad_dist_log_euclidean(spd(DenseMatrix::diagonal({a, b})),
                                         spd(DenseMatrix::identity(2)));
  expect_matrix_near(g.source, DenseMatrix::diagonal({std::log(a) / a / 8.0, std::log(b) / b / 8.0}),
                     1e-15);
}

TEST(Gradients, EuclideanHandValue) {
  const auto g = grad_dist_euclidean(spd(DenseMatrix::identity(2)),
                                     spd(DenseMatrix::diagonal({2.0, 2.0})));
  expect_matrix_near(g.source, DenseMatrix::identity(2) * (-1.0 / 8.0), 0.0);
  expect_matrix_near(g.target, DenseMatrix::identity(2) * (1.0 / 8.0), 0.0);
}

TEST(Gradients, LoewnerTieUsesLimitValue) {
  // Repeated eigenvalue σ: the divided difference degenerates to 1/σ.
  const double s = 2.0;
  const auto g = grad_dist_log_euclidean(spd(DenseMatrix::diagonal({s, s, 1.0})),
                                         spd(DenseMatrix::identity(3)));
  const double expect = std::log(s) / s / (2.0 * 9.0);
  EXPECT_NEAR(g.source(0, 0), expect, 1e-15);
  EXPECT_NEAR(g.source(1, 1), expect, 1e-15);
  EXPECT_TRUE(all_finite(g.source));
}

enum class Which { log_euclidean, euclidean };

// Checks ∂f/∂cs and ∂f/∂ct against a long-double finite-difference oracle.
// Returns the worst relative error over coordinates with |g| > 1e-8.
double worst_gradient_error(const DenseMatrix& ms, const DenseMatrix& mt, Which which) {
  using LD = long double;
  auto f = [&](const Matrix<LD>& a, const Matrix<LD>& b) {
    const auto sa = Spd<LD>::from_symmetric(a), sb = Spd<LD>::from_symmetric(b);
    return which == Which::log_euclidean ? dist_log_euclidean(sa, sb) : dist_euclidean(sa, sb);
  };
  const auto cs = spd(ms), ct = spd(mt);
  const auto g = which == Which::log_euclidean ? grad_dist_log_euclidean(cs, ct)
                                               : grad_dist_euclidean(cs, ct);
  const Matrix<LD> ls = ms.cast<LD>(), lt = mt.cast<LD>();
  const std::size_t d = ms.rows();
  double worst = 0.0;
  for (int side = 0; side < 2; ++side) {
    const DenseMatrix& grad = side == 0 ? g.source : g.target;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        const Matrix<LD> e = testing::sym_direction<LD>(d, i, j);
        auto along = [&](LD delta) {
          return side == 0 ? f(ls + e * delta, lt) : f(ls, lt + e * delta);
        };
        const double numeric = static_cast<double>(testing::central_difference(along));
        const double analytic = i == j ? grad(i, i) : grad(i, j) + grad(j, i);
        if (std::abs(analytic) > 1e-8) worst = std::max(worst, rel_error(analytic, numeric));
      }
    }
  }
  return worst;
}

TEST(Gradients, LogEuclideanMatchesFiniteDifferencesD4) {
  std::mt19937_64 rng(29);
  const DenseMatrix ms = testing::random_spd_matrix(4, rng);
  const DenseMatrix mt = testing::random_spd_matrix(4, rng);
  EXPECT_LT(worst_gradient_error(ms, mt, Which::log_euclidean), 1e-5);
}

TEST(Gradients, EuclideanMatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  const DenseMatrix ms = testing::random_spd_matrix(4, rng);
  const DenseMatrix mt = testing::random_spd_matrix(4, rng);
  EXPECT_LT(worst_gradient_error(ms, mt, Which::euclidean), 1e-7);
}

TEST(Gradients, AnalyticMatchesFiniteDifferencesOverRandomPairs) {
  std::mt19937_64 rng(37);
  for (std::size_t d : {2u, 4u, 8u}) {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      const DenseMatrix ms = testing::random_spd_matrix(d, rng);
      const DenseMatrix mt = testing::random_spd_matrix(d, rng);
      worst = std::max(worst, worst_gradient_error(ms, mt, Which::log_euclidean));
      worst = std::max(worst, worst_gradient_error(ms, mt, Which::euclidean));
    }
    EXPECT_LT(worst, 1e-4) << "d=" << d;
  }
}

TEST(Gradients, OutputsAreSymmetric) {
  std::mt19937_64 rng(41);
  const auto g = grad_dist_log_euclidean(testing::random_spd(6, rng), testing::random_spd(6, rng));
  EXPECT_EQ(max_abs(g.source - g.source.transposed()), 0.0);
  EXPECT_EQ(max_abs(g.target - g.target.transposed()), 0.0);
}

}  // namespace
}  // namespace meca
