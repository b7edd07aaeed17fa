#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "meca/alignment.hpp"
#include "meca/data.hpp"
#include "meca/network.hpp"
#include "meca/spd.hpp"
#include "meca/trainer.hpp"

// Self-check suites run by `meca verify`. Each returns one CheckResult per
// named check; the runner prints them and exits nonzero on any failure.

namespace meca::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct GradientCheckOptions {
  std::size_t seeds = 20;
  std::size_t batch = 6;
  std::vector<std::size_t> layer_sizes = {3, 5, 4, 3};
  long double step = 1e-5L;
  double tolerance = 1e-4;
  double magnitude_floor = 1e-8;
  /// Sensitivity hook: multiplies one analytic coordinate by (1 + corrupt).
  double corrupt = 0.0;
};

inline constexpr const char* kGradientLosses[] = {"cross_entropy", "entropy",
                                                  "euclidean_penalty", "log_euclidean_penalty"};

namespace detail {

using LD = long double;

// Loss `which` of a model on a (source, target) batch pair, evaluated in any precision.
template <typename T>
T batch_loss(int which, const Mlp<T>& m, const Matrix<T>& xs, const Matrix<T>& ys,
             const Matrix<T>& xt) {
  const auto ts = forward(m, xs);
  switch (which) {
    case 0: return cross_entropy(ts.probs, ys);
    case 1: return entropy(forward(m, xt).probs);
    default: {
      AlignmentPenalty p;
      p.kind = which == 2 ? PenaltyKind::euclidean : PenaltyKind::log_euclidean;
      p.lambda = 1.0;
      return evaluate_penalty(ts.feature_acts, forward(m, xt).feature_acts, p, false).value;
    }
  }
}

inline ParamGrads<double> batch_grad(int which, const MlpModel& m, const DenseMatrix& xs,
                                     const DenseMatrix& ys, const DenseMatrix& xt) {
  const auto ts = forward(m, xs);
  const auto tt = forward(m, xt);
  switch (which) {
    case 0: return backward(m, ts, grad_cross_entropy_wrt_probs(ts.probs, ys), {});
    case 1: return backward(m, tt, grad_entropy_wrt_probs(tt.probs), {});
    default: {
      AlignmentPenalty p;
      p.kind = which == 2 ? PenaltyKind::euclidean : PenaltyKind::log_euclidean;
      p.lambda = 1.0;
      const auto ev = evaluate_penalty(ts.feature_acts, tt.feature_acts, p, true);
      auto g = backward(m, ts, {}, ev.grad_source);
      g += backward(m, tt, {}, ev.grad_target);
      return g;
    }
  }
}

inline double rel_error(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

}  // namespace detail

/// End-to-end parameter gradients of the four training losses against a
/// fourth-order central difference evaluated in long double.
inline std::vector<CheckResult> check_gradients(const GradientCheckOptions& opt = {}) {
  using detail::LD;
  std::vector<CheckResult> out;
  for (int which = 0; which < 4; ++which) {
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t seed = 1; seed <= opt.seeds; ++seed) {
      const MlpModel model = init_model(opt.layer_sizes, seed, Activation::tanh);
      std::mt19937_64 rng(seed * 7919 + 17);
      std::normal_distribution<double> nd(0.0, 1.0);
      const std::size_t d0 = opt.layer_sizes.front(), k = opt.layer_sizes.back();
      DenseMatrix xs(d0, opt.batch), xt(d0, opt.batch);
      for (auto& v : xs.values()) v = nd(rng);
      for (auto& v : xt.values()) v = 0.5 + 1.5 * nd(rng);
      std::vector<int> cls(opt.batch);
      for (std::size_t i = 0; i < opt.batch; ++i) cls[i] = static_cast<int>(i % k);
      const DenseMatrix ys = one_hot(cls, k);

      ParamGrads<double> g = detail::batch_grad(which, model, xs, ys, xt);
      if (opt.corrupt != 0.0) g.weights[0](0, 0) *= 1.0 + opt.corrupt;

      Mlp<LD> probe = model.cast<LD>();
      const Matrix<LD> lxs = xs.cast<LD>(), lys = ys.cast<LD>(), lxt = xt.cast<LD>();
      auto fd = [&](LD& param) {
        const LD saved = param;
        auto at = [&](LD delta) {
          param = saved + delta;
          return detail::batch_loss(which, probe, lxs, lys, lxt);
        };
        const LD h = opt.step;
        const LD v = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        param = saved;
        return static_cast<double>(v);
      };
      auto compare = [&](double analytic, LD& param) {
        if (std::abs(analytic) <= opt.magnitude_floor) return;
        ++checked;
        worst = std::max(worst, detail::rel_error(analytic, fd(param)));
      };
      for (std::size_t l = 0; l < model.num_affine(); ++l) {
        auto pw = probe.weights[l].values();
        auto gw = g.weights[l].values();
        for (std::size_t i = 0; i < pw.size(); ++i) compare(gw[i], pw[i]);
        for (std::size_t i = 0; i < probe.biases[l].size(); ++i)
          compare(g.biases[l][i], probe.biases[l][i]);
      }
    }
    out.push_back({std::string("gradient/") + kGradientLosses[which], worst < opt.tolerance,
                   "max rel err " + format_double(worst) + " over " + std::to_string(checked) +
                       " coords"});
  }
  return out;
}

/// Metric axioms and invariances of the log-Euclidean distance.
inline std::vector<CheckResult> check_axioms(std::size_t pairs = 100, std::uint64_t seed = 2024) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> logu(std::log(0.1), std::log(10.0));
  auto orthogonal = [&](std::size_t n) {
    DenseMatrix q(n, n);
    for (auto& v : q.values()) v = nd(rng);
    // Eigenvectors of a random symmetric matrix form an orthogonal basis.
    return sym_eig(symmetrized(q)).vectors;
  };
  auto random_spd = [&](std::size_t n) {
    const DenseMatrix q = orthogonal(n);
    DenseMatrix diag(n, n);
    for (std::size_t i = 0; i < n; ++i) diag(i, i) = std::exp(logu(rng));
    return symmetrized(matmul_nt(matmul(q, diag), q));
  };
  auto spd = [](const DenseMatrix& m) { return SpdMatrix::from_symmetric(m); };

  double worst_sym = 0, worst_scale = 0, worst_rot = 0, worst_inv = 0;
  bool nonneg = true, identity = true;
  for (std::size_t d : {2u, 4u, 8u}) {
    for (std::size_t p = 0; p < pairs; ++p) {
      const DenseMatrix m1 = random_spd(d), m2 = random_spd(d);
      const auto c1 = spd(m1), c2 = spd(m2);
      const double base = dist_log_euclidean(c1, c2);
      nonneg = nonneg && base > 0.0;
      identity = identity && dist_log_euclidean(c1, c1) == 0.0;
      worst_sym = std::max(worst_sym, detail::rel_error(dist_log_euclidean(c2, c1), base));
      for (double s : {0.1, 1.0, 10.0})
        worst_scale = std::max(
            worst_scale, detail::rel_error(dist_log_euclidean(spd(m1 * s), spd(m2 * s)), base));
      const DenseMatrix q = orthogonal(d);
      auto rot = [&](const DenseMatrix& m) { return spd(symmetrized(matmul_nt(matmul(q, m), q))); };
      worst_rot = std::max(worst_rot, detail::rel_error(dist_log_euclidean(rot(m1), rot(m2)), base));
      auto inv = [&](const SpdMatrix& c) {
        return spd(compose_eigen(c.eigensystem(), [](double x) { return 1.0 / x; }));
      };
      worst_inv = std::max(worst_inv, detail::rel_error(dist_log_euclidean(inv(c1), inv(c2)), base));
    }
  }
  return {
      {"axioms/non_negativity", nonneg, "distinct pairs give positive distance"},
      {"axioms/identity", identity, "d(C, C) == 0"},
      {"axioms/symmetry", worst_sym <= 1e-12, "max rel err " + format_double(worst_sym)},
      {"axioms/scale_invariance", worst_scale <= 1e-9, "max rel err " + format_double(worst_scale)},
      {"axioms/orthogonal_invariance", worst_rot <= 1e-8, "max rel err " + format_double(worst_rot)},
      {"axioms/inversion_invariance", worst_inv <= 1e-8, "max rel err " + format_double(worst_inv)},
  };
}

/// Three well-separated classes in four dimensions (means on a radius-10 circle).
inline Dataset separable_blobs(std::uint64_t seed, std::size_t per_class = 100) {
  constexpr std::size_t kClasses = 3;
  Dataset ds = gen_blobs(kClasses, per_class, 4, seed);
  const auto cls = ds.class_indices();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double a = 2.0 * std::numbers::pi * cls[i] / static_cast<double>(kClasses);
    ds.inputs(0, i) += 6.0 * std::cos(a);
    ds.inputs(1, i) += 6.0 * std::sin(a);
  }
  ds.domain_tag = "separable";
  return ds;
}

struct AlignedDomainReport {
  bool reached = false;
  std::size_t epoch = 0;
  double h_source = 0, e_target = 0, pen_value = 0, n = 0, log_k = 0;
};

/// Target = copy of source; trains meca_geodesic until h_source < 0.01·n.
inline AlignedDomainReport aligned_domain_run(std::uint64_t seed = 1, std::size_t max_epochs = 200) {
  const Dataset source = separable_blobs(seed);
  const MlpModel model = init_model({4, 16, 8, 3}, seed, Activation::relu);
  TrainConfig cfg;
  cfg.method = Method::meca_geodesic;
  cfg.lambda_or_gamma = 1.0;
  cfg.epochs = max_epochs;
  cfg.batch_size = 32;
  cfg.seed = seed;
  const TrainResult run = train_run(model, source, source, cfg);
  AlignedDomainReport r;
  r.n = static_cast<double>(source.size());
  r.log_k = std::log(3.0);
  for (const auto& m : run.metrics) {
    if (m.h_source < 0.01 * r.n) {
      r.reached = true;
      r.epoch = m.epoch;
      r.h_source = m.h_source;
      r.e_target = m.e_target;
      r.pen_value = m.pen_value;
      break;
    }
  }
  return r;
}

inline std::vector<CheckResult> check_aligned_domains() {
  const auto r = aligned_domain_run();
  if (!r.reached) return {{"aligned_domains", false, "h_source never fell below 0.01 n"}};
  const bool ok = r.e_target < 0.05 * r.n * r.log_k && r.pen_value < 1e-3;
  return {{"aligned_domains", ok,
           "epoch " + std::to_string(r.epoch) + ": h_source " + format_double(r.h_source) +
               ", e_target " + format_double(r.e_target) + " (bound " +
               format_double(0.05 * r.n * r.log_k) + "), pen " + format_double(r.pen_value)}};
}

struct DummyClassifierReport {
  double e_target = -1;
  double dist_before = 0, dist_after = 0;
  double kl_before = 0, kl_after = 0;
};

/// A network whose output layer ignores its input and always emits class 0.
inline MlpModel constant_predictor(const std::vector<std::size_t>& layer_sizes) {
  MlpModel m = init_model(layer_sizes, 0);
  auto& w = m.weights.back();
  for (auto& v : w.values()) v = 0.0;
  auto& b = m.biases.back();
  std::fill(b.begin(), b.end(), 0.0);
  b[0] = 1000.0;
  return m;
}

/// Entropy-optimal dummy on the rotated-blobs pair; the raw-domain statistics
/// are measured before and after it is built.
inline DummyClassifierReport dummy_classifier_run(std::uint64_t seed = 1) {
  const DomainPair pair = rotated_blobs_benchmark(seed);
  DummyClassifierReport r;
  auto raw_stats = [&](double& dist, double& kl) {
    dist = dist_log_euclidean(covariance(pair.source.inputs), covariance(pair.target.inputs));
    kl = kl_diagnostic(pair.source.inputs, pair.target.inputs);
  };
  raw_stats(r.dist_before, r.kl_before);
  const MlpModel dummy = constant_predictor({pair.source.dim(), 32, 64, pair.source.num_classes()});
  r.e_target = entropy(forward(dummy, pair.target.inputs).probs);
  raw_stats(r.dist_after, r.kl_after);
  return r;
}

inline std::vector<CheckResult> check_dummy_classifier() {
  const auto r = dummy_classifier_run();
  const bool ok = r.e_target == 0.0 && r.dist_before > 0.0 && r.dist_after == r.dist_before &&
                  r.kl_before > 0.0 && r.kl_after == r.kl_before;
  return {{"dummy_classifier", ok,
           "e_target " + format_double(r.e_target) + ", raw log-euclidean distance " +
               format_double(r.dist_after) + ", raw KL " + format_double(r.kl_after)}};
}

}  // namespace meca::verify
