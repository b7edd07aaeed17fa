#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "meca/data.hpp"
#include "meca/error.hpp"
#include "meca/network.hpp"
#include "meca/trainer.hpp"

namespace meca {

inline const std::vector<double> kDefaultLambdaGrid = {0.1, 0.5, 1, 2, 5, 7, 10, 20};
inline constexpr std::size_t kFinalWindow = 5;
inline constexpr double kEntropyTieTol = 1e-12;
inline constexpr const char* kSelectionRule = "argmin final target entropy";

struct SweepRecord {
  double lambda = 0.0;
  double final_e_target = 0.0;
  /// Absent when the target has no labels.
  std::optional<double> final_target_acc;
  std::string metrics_path;
  bool failed = false;
  std::string message;
  std::vector<EpochMetrics> metrics;
};

struct SweepResult {
  std::vector<SweepRecord> records;
  double selected_lambda = 0.0;
  std::string selection_rule = kSelectionRule;
};

struct SweepOptions {
  std::size_t jobs = 1;
  /// When set, each run's metrics CSV is written there as metrics_lambda_<λ>.csv.
  std::optional<std::filesystem::path> metrics_dir;
};

/// Mean of the last (up to) five epochs of a metric.
template <typename Proj>
double tail_mean(const std::vector<EpochMetrics>& metrics, Proj proj) {
  require(!metrics.empty(), ErrorKind::InsufficientRecords, "run produced no metrics");
  const std::size_t k = std::min(kFinalWindow, metrics.size());
  double s = 0.0;
  for (std::size_t i = metrics.size() - k; i < metrics.size(); ++i) s += proj(metrics[i]);
  return s / static_cast<double>(k);
}

/// λ with the smallest final target entropy among successful records; ties
/// within 1e-12 go to the smaller λ. Independent of record order.
inline double select_lambda(const std::vector<SweepRecord>& records) {
  const SweepRecord* best = nullptr;
  for (const auto& r : records) {
    if (r.failed) continue;
    if (!best) {
      best = &r;
      continue;
    }
    const double diff = r.final_e_target - best->final_e_target;
    if (diff < -kEntropyTieTol || (std::abs(diff) <= kEntropyTieTol && r.lambda < best->lambda))
      best = &r;
  }
  require(best != nullptr, ErrorKind::InsufficientRecords, "no successful run to select from");
  return best->lambda;
}

inline std::string lambda_tag(double lambda) {
  std::string s = format_shortest(lambda);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

/// One train_run per λ from the same initial model and seed. Runs execute on
/// `jobs` worker threads; records come back in grid order.
inline SweepResult sweep(const MlpModel& initial_model, const TrainConfig& base_config,
                         const std::vector<double>& lambda_grid, const Dataset& source,
                         const Dataset& target, const SweepOptions& options = {}) {
  require(!lambda_grid.empty(), ErrorKind::ConfigInvalid, "lambda grid is empty");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    require(lambda_grid[i] > 0.0 && std::isfinite(lambda_grid[i]), ErrorKind::ConfigInvalid,
            "lambda values must be positive");
    require(i == 0 || lambda_grid[i] > lambda_grid[i - 1], ErrorKind::ConfigInvalid,
            "lambda grid must be strictly increasing");
  }
  base_config.validate();
  if (options.metrics_dir) std::filesystem::create_directories(*options.metrics_dir);

  std::vector<SweepRecord> records(lambda_grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < lambda_grid.size(); i = next++) {
      SweepRecord rec;
      rec.lambda = lambda_grid[i];
      TrainConfig cfg = base_config;
      cfg.lambda_or_gamma = lambda_grid[i];
      try {
        TrainResult run = train_run(initial_model, source, target, cfg);
        rec.metrics = std::move(run.metrics);
        rec.failed = run.diverged || rec.metrics.empty();
        rec.message = run.message;
        if (!rec.metrics.empty()) {
          rec.final_e_target = tail_mean(rec.metrics, [](const auto& m) { return m.e_target; });
          if (rec.metrics.back().target_accuracy)
            rec.final_target_acc =
                tail_mean(rec.metrics, [](const auto& m) { return *m.target_accuracy; });
        }
        if (options.metrics_dir) {
          const auto path =
              *options.metrics_dir / ("metrics_lambda_" + lambda_tag(rec.lambda) + ".csv");
          write_metrics_csv(rec.metrics, path.string());
          rec.metrics_path = path.string();
        }
      } catch (const std::exception& e) {
        rec.failed = true;
        rec.message = e.what();
      }
      records[i] = std::move(rec);
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, lambda_grid.size());
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  SweepResult result;
  result.records = std::move(records);
  result.selected_lambda = select_lambda(result.records);
  return result;
}

/// Best final target accuracy over the grid minus the accuracy at the selected λ.
inline double selection_gap(const SweepResult& result) {
  std::size_t ok = 0;
  double best = -1.0, at_selected = -1.0;
  for (const auto& r : result.records) {
    if (r.failed || !r.final_target_acc) continue;
    ++ok;
    best = std::max(best, *r.final_target_acc);
    if (r.lambda == result.selected_lambda) at_selected = *r.final_target_acc;
  }
  require(ok >= 2 && at_selected >= 0.0, ErrorKind::InsufficientRecords,
          "selection gap needs at least two successful labeled runs");
  return best - at_selected;
}

inline constexpr const char* kSweepHeader = "lambda,final_e_target,final_target_acc,selected";

inline std::string sweep_csv(const SweepResult& result) {
  std::string out = kSweepHeader;
  out += '\n';
  for (const auto& r : result.records) {
    const bool selected = !r.failed && r.lambda == result.selected_lambda;
    out += format_double(r.lambda) + ',' +
           (r.failed ? std::string("nan") : format_double(r.final_e_target)) + ',' +
           (r.final_target_acc && !r.failed ? format_double(*r.final_target_acc)
                                            : std::string("nan")) +
           ',' + (selected ? "1" : "0") + '\n';
  }
  return out;
}

inline void write_sweep_csv(const SweepResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot open " + path);
  f << sweep_csv(result);
  require(static_cast<bool>(f), ErrorKind::IoError, "write failed: " + path);
}

}  // namespace meca
