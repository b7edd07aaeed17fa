#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "meca/alignment.hpp"
#include "meca/data.hpp"
#include "support/gradcheck.hpp"

namespace meca {
namespace {

using LD = long double;

DenseMatrix random_acts(std::size_t d, std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  return testing::random_gaussian(d, n, rng, scale);
}

TEST(Covariance, HandComputedScatter) {
  const DenseMatrix a{{1, -1}, {0, 0}};
  EXPECT_TRUE(centered_scatter(a) == (DenseMatrix{{2, 0}, {0, 0}}));
  EXPECT_TRUE(centered_scatter(DenseMatrix{{3, 3, 3}, {-1, -1, -1}}) == DenseMatrix(2, 2));
  EXPECT_TRUE(centered_scatter(DenseMatrix::identity(2)) ==
              (DenseMatrix{{0.5, -0.5}, {-0.5, 0.5}}));
}

TEST(Covariance, NormalizationDividesByNMinusOne) {
  const DenseMatrix a = random_acts(3, 7, 1);
  const DenseMatrix raw = centered_scatter(a), norm = centered_scatter(a, true);
  EXPECT_LT(max_abs(raw * (1.0 / 6.0) - norm), 1e-15);
}

TEST(Covariance, JitteredResultIsSpd) {
  // Rank-deficient: n = 3 samples in d = 5.
  const auto c = covariance(random_acts(5, 3, 2));
  for (double v : c.eigenvalues()) EXPECT_GT(v, 0.0);
}

TEST(Covariance, TooFewSamples) {
  try {
    covariance(DenseMatrix{{1.0}, {2.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooFewSamples);
  }
}

TEST(Covariance, InvariantToSamplePermutation) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const DenseMatrix a = random_acts(4, 9, 100 + rep);
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    DenseMatrix b(4, 9);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < 9; ++j) b(r, j) = a(r, perm[j]);
    EXPECT_LT(max_abs(centered_scatter(a) - centered_scatter(b)), 1e-12);
  }
}

TEST(Covariance, InvariantToCommonTranslation) {
  for (int rep = 0; rep < 20; ++rep) {
    const DenseMatrix a = random_acts(4, 9, 200 + rep);
    const DenseMatrix shift = random_acts(4, 1, 300 + rep, 10.0);
    DenseMatrix b = a;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < 9; ++j) b(r, j) += shift(r, 0);
    EXPECT_LT(testing::rel_frobenius(centered_scatter(b), centered_scatter(a)), 1e-12);
  }
}

TEST(PenaltyGradient, NoneGivesZeros) {
  AlignmentPenalty p;
  p.kind = PenaltyKind::none;
  p.lambda = 3.0;
  const auto [gs, gt] = grad_covariance_penalty(random_acts(3, 5, 1), random_acts(3, 4, 2), p);
  EXPECT_EQ(gs.rows(), 3u);
  EXPECT_EQ(gt.cols(), 4u);
  EXPECT_EQ(max_abs(gs), 0.0);
  EXPECT_EQ(max_abs(gt), 0.0);
}

TEST(PenaltyGradient, VanishesForIdenticalBatches) {
  const DenseMatrix a = random_acts(4, 8, 5);
  for (PenaltyKind kind : {PenaltyKind::euclidean, PenaltyKind::log_euclidean}) {
    AlignmentPenalty p;
    p.kind = kind;
    p.lambda = 1.0;
    const auto [gs, gt] = grad_covariance_penalty(a, a, p);
    EXPECT_LT(max_abs(gs), 1e-8);
    EXPECT_LT(max_abs(gt), 1e-8);
  }
}

TEST(PenaltyGradient, RejectsBadBatches) {
  AlignmentPenalty p;
  p.lambda = 1.0;
  EXPECT_THROW(evaluate_penalty(random_acts(3, 1, 1), random_acts(3, 4, 2), p), Error);
  try {
    evaluate_penalty(random_acts(3, 4, 1), random_acts(2, 4, 2), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DimMismatch);
  }
  p.lambda = -1.0;
  EXPECT_THROW(evaluate_penalty(random_acts(3, 4, 1), random_acts(3, 4, 2), p), Error);
}

struct GradCase {
  PenaltyKind kind;
  bool normalize;
  std::size_t n_s, n_t;
};

class PenaltyFiniteDifference : public ::testing::TestWithParam<GradCase> {};

TEST_P(PenaltyFiniteDifference, MatchesEveryActivationEntry) {
  const GradCase gc = GetParam();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    AlignmentPenalty p;
    p.kind = gc.kind;
    p.lambda = 2.5;
    p.normalize_cov = gc.normalize;
    const DenseMatrix as = random_acts(3, gc.n_s, seed);
    const DenseMatrix at = random_acts(3, gc.n_t, seed + 50, 1.7);
    const auto [gs, gt] = grad_covariance_penalty(as, at, p);
    const Matrix<LD> las = as.cast<LD>(), lat = at.cast<LD>();
    const auto ns = testing::numeric_matrix_gradient(as, [&](const Matrix<LD>& x) {
      return LD(p.lambda) * evaluate_penalty(x, lat, p, false).value;
    });
    const auto nt = testing::numeric_matrix_gradient(at, [&](const Matrix<LD>& x) {
      return LD(p.lambda) * evaluate_penalty(las, x, p, false).value;
    });
    for (std::size_t i = 0; i < gs.size(); ++i)
      if (std::abs(gs.values()[i]) > 1e-8) {
        EXPECT_LT(testing::rel_error(gs.values()[i], double(ns.values()[i])), 1e-4);
      }
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (std::abs(gt.values()[i]) > 1e-8) {
        EXPECT_LT(testing::rel_error(gt.values()[i], double(nt.values()[i])), 1e-4);
      }
  }
}

INSTANTIATE_TEST_SUITE_P(
    Kinds, PenaltyFiniteDifference,
    ::testing::Values(GradCase{PenaltyKind::log_euclidean, false, 5, 5},
                      GradCase{PenaltyKind::log_euclidean, true, 5, 7},
                      GradCase{PenaltyKind::log_euclidean, false, 2, 3},
                      GradCase{PenaltyKind::euclidean, false, 5, 5},
                      GradCase{PenaltyKind::euclidean, true, 6, 4}));

TEST(PenaltyGradient, ScalesLinearlyWithLambda) {
  const DenseMatrix as = random_acts(3, 5, 8), at = random_acts(3, 5, 9, 2.0);
  AlignmentPenalty p;
  p.lambda = 1.0;
  const auto one = evaluate_penalty(as, at, p);
  p.lambda = 4.0;
  const auto four = evaluate_penalty(as, at, p);
  EXPECT_EQ(one.value, four.value);
  EXPECT_LT(max_abs(one.grad_source * 4.0 - four.grad_source), 1e-14 * max_abs(four.grad_source) + 1e-300);
}

ForwardTrace<double> fake_trace(DenseMatrix probs, DenseMatrix feats) {
  ForwardTrace<double> t;
  t.probs = std::move(probs);
  t.feature_acts = std::move(feats);
  t.alignment_layer = 1;
  return t;
}

TEST(CompositeLoss, LambdaZeroIsSourceCrossEntropy) {
  const auto ts = fake_trace(DenseMatrix{{0.7, 0.3}, {0.4, 0.6}}, random_acts(3, 2, 1));
  const auto tt = fake_trace(DenseMatrix{{0.5, 0.5}, {0.9, 0.1}}, random_acts(3, 2, 2));
  AlignmentPenalty p;
  p.lambda = 0.0;
  const auto out = composite_loss(ts, one_hot({0, 1}, 2), tt, p);
  EXPECT_EQ(out.total, out.h_source);
  EXPECT_NEAR(out.h_source, -std::log(0.7) - std::log(0.6), 1e-15);
}

TEST(CompositeLoss, IdenticalActivationsGiveZeroPenalty) {
  const DenseMatrix feats = random_acts(3, 4, 7);
  const DenseMatrix probs(4, 2, 0.5);
  AlignmentPenalty p;
  p.lambda = 5.0;
  const auto out =
      composite_loss(fake_trace(probs, feats), one_hot({0, 1, 0, 1}, 2), fake_trace(probs, feats), p);
  EXPECT_LT(out.pen_value, 1e-20);
  EXPECT_NEAR(out.total, out.h_source, 1e-15);
}

TEST(CompositeLoss, HandBuiltTwoSampleBatches) {
  // C_S = diag(2, 0) + εI and C_T = diag(0, 2) + εI with ε = 1e-5·2/2 + 1e-12.
  const auto ts = fake_trace(DenseMatrix{{0.7, 0.2, 0.1}, {0.2, 0.5, 0.3}}, DenseMatrix{{1, -1}, {0, 0}});
  const auto tt = fake_trace(DenseMatrix{{0.3, 0.3, 0.4}, {0.1, 0.1, 0.8}}, DenseMatrix{{0, 0}, {1, -1}});
  AlignmentPenalty p;
  p.lambda = 0.1;
  const auto out = composite_loss(ts, one_hot({0, 1}, 3), tt, p);
  const double eps = 1e-5 + 1e-12;
  const double gap = std::log(2.0 + eps) - std::log(eps);
  const double pen = 2.0 * gap * gap / 16.0;
  const double h = -std::log(0.7) - std::log(0.5);
  EXPECT_NEAR(out.h_source, h, 1e-15);
  EXPECT_NEAR(out.pen_value, pen, 1e-12 * pen);
  EXPECT_NEAR(out.total, h + 0.1 * pen, 1e-12 * (h + 0.1 * pen));
}

TEST(CompositeLoss, EndToEndGradientMatchesFiniteDifferences) {
  using LDModel = Mlp<LD>;
  auto m = init_model({3, 5, 4, 3}, 11, Activation::tanh);
  const DenseMatrix xs = random_acts(3, 6, 12), xt = random_acts(3, 6, 13, 2.0);
  const DenseMatrix ys = one_hot({0, 1, 2, 2, 1, 0}, 3);
  AlignmentPenalty p;
  p.lambda = 0.5;
  const auto ts = forward(m, xs), tt = forward(m, xt);
  const auto ev = evaluate_penalty(ts.feature_acts, tt.feature_acts, p);
  auto g = backward(m, ts, grad_cross_entropy_wrt_probs(ts.probs, ys), ev.grad_source);
  g += backward(m, tt, DenseMatrix{}, ev.grad_target);
  const Matrix<LD> lxs = xs.cast<LD>(), lxt = xt.cast<LD>(), lys = ys.cast<LD>();
  const auto stats = testing::check_param_gradients(m, g, [&](const LDModel& q) {
    return composite_loss(forward(q, lxs), lys, forward(q, lxt), p).total;
  });
  EXPECT_GT(stats.checked, 30u);
  EXPECT_LT(stats.worst, 1e-4);
}

}  // namespace
}  // namespace meca
