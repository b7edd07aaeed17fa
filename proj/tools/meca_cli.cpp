// meca: generate data, train one configuration, sweep λ, run self-checks.
//
// Exit codes: 0 success, 1 usage, 2 numerical failure, 3 I/O failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "meca/meca.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

int exit_code_for(meca::ErrorKind kind) {
  using meca::ErrorKind;
  switch (kind) {
    case ErrorKind::ConfigInvalid:
    case ErrorKind::BadParams: return kUsage;
    case ErrorKind::IoError:
    case ErrorKind::ParseError:
    case ErrorKind::BadMagic:
    case ErrorKind::TruncatedFile:
    case ErrorKind::CountMismatch: return kIo;
    default: return kNumerical;
  }
}

const std::map<std::string, meca::Method> kMethods = {
    {"source_only", meca::Method::source_only},
    {"entropy_reg", meca::Method::entropy_reg},
    {"coral", meca::Method::coral_euclidean},
    {"meca", meca::Method::meca_geodesic},
};

struct TrainFlags {
  std::string method = "meca";
  double lambda = 0.1;
  double gamma = 0.1;
  std::size_t epochs = 50;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  std::string source, target, out_dir;
  std::vector<std::size_t> hidden = {32, 64};
  std::string activation = "relu";
  std::optional<std::size_t> alignment_layer;
  double jitter = meca::kDefaultJitter;
  bool normalize_cov = false;
  bool sum_losses = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_method) {
  if (with_method)
    cmd->add_option("--method", f.method, "source_only|entropy_reg|coral|meca")
        ->check(CLI::IsMember({"source_only", "entropy_reg", "coral", "meca"}));
  cmd->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr);
  cmd->add_option("--momentum", f.momentum);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--source", f.source, "labeled source CSV")->required();
  cmd->add_option("--target", f.target, "target CSV (labels used only for accuracy)")->required();
  cmd->add_option("--out-dir", f.out_dir)->required();
  cmd->add_option("--hidden", f.hidden, "hidden layer widths")->delimiter(',');
  cmd->add_option("--activation", f.activation)->check(CLI::IsMember({"relu", "tanh"}));
  cmd->add_option("--alignment-layer", f.alignment_layer, "hidden layer index (default penultimate)");
  cmd->add_option("--jitter", f.jitter, "relative SPD jitter");
  cmd->add_flag("--normalize-cov", f.normalize_cov, "divide scatter by n-1");
  cmd->add_flag("--sum-losses", f.sum_losses, "use batch sums instead of batch means");
}

struct Problem {
  meca::Dataset source, target;
  meca::MlpModel model;
  meca::TrainConfig config;
};

Problem load_problem(const TrainFlags& f, meca::Method method, double lambda_or_gamma) {
  Problem p;
  p.source = meca::read_csv(f.source);
  meca::require(p.source.has_labels(), meca::ErrorKind::ConfigInvalid, "source CSV has no labels");
  p.target = meca::read_csv(f.target, p.source.num_classes());
  meca::require(p.source.dim() == p.target.dim(), meca::ErrorKind::ConfigInvalid,
                "source and target widths differ");
  std::vector<std::size_t> sizes{p.source.dim()};
  sizes.insert(sizes.end(), f.hidden.begin(), f.hidden.end());
  sizes.push_back(p.source.num_classes());
  p.model = meca::init_model(sizes, f.seed,
                             f.activation == "tanh" ? meca::Activation::tanh : meca::Activation::relu);
  auto& c = p.config;
  c.method = method;
  c.lambda_or_gamma = lambda_or_gamma;
  c.epochs = f.epochs;
  c.batch_size = f.batch_size;
  c.learning_rate = f.lr;
  c.momentum = f.momentum;
  c.seed = f.seed;
  c.alignment_layer_index = f.alignment_layer;
  c.jitter_rel = f.jitter;
  c.normalize_cov = f.normalize_cov;
  c.batch_mean_losses = !f.sum_losses;
  c.validate();
  return p;
}

json config_json(const meca::TrainConfig& c, const std::vector<std::size_t>& sizes) {
  json j;
  j["method"] = std::string(meca::to_string(c.method));
  j["lambda_or_gamma"] = c.lambda_or_gamma;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["seed"] = c.seed;
  j["alignment_layer_index"] =
      c.alignment_layer_index ? json(*c.alignment_layer_index) : json(nullptr);
  j["jitter_rel"] = c.jitter_rel;
  j["normalize_cov"] = c.normalize_cov;
  j["batch_mean_losses"] = c.batch_mean_losses;
  j["layer_sizes"] = sizes;
  return j;
}

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const json& artifacts, double seconds) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["artifacts"] = artifacts;
  m["wall_clock_seconds"] = seconds;
  m["version"] = meca::kVersion;
  std::ofstream f(path);
  meca::require(static_cast<bool>(f), meca::ErrorKind::IoError, "cannot write " + path.string());
  f << m.dump(2) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_gen(const std::string& preset, std::uint64_t seed, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const meca::DomainPair pair =
      preset == "blobs" ? meca::rotated_blobs_benchmark(seed) : meca::rotated_moons_benchmark(seed);
  meca::write_csv(pair.source, (fs::path(out_dir) / "source.csv").string());
  meca::write_csv(pair.target, (fs::path(out_dir) / "target.csv").string());
  std::cout << "wrote " << out_dir << "/source.csv and " << out_dir << "/target.csv\n";
  return kOk;
}

int cmd_train(const TrainFlags& f, std::optional<double> lambda, std::optional<double> gamma,
              const std::string& command) {
  const auto t0 = std::chrono::steady_clock::now();
  const meca::Method method = kMethods.at(f.method);
  const double weight = method == meca::Method::entropy_reg ? gamma.value_or(f.gamma)
                                                            : lambda.value_or(f.lambda);
  const Problem p = load_problem(f, method, weight);
  const meca::TrainResult run = meca::train_run(p.model, p.source, p.target, p.config);

  const fs::path dir(f.out_dir);
  fs::create_directories(dir);
  const fs::path metrics = dir / "metrics.csv", model = dir / "model.bin";
  meca::write_metrics_csv(run.metrics, metrics.string());
  meca::save_model(run.model, model.string());
  write_manifest(dir / "manifest.json", command, config_json(p.config, p.model.layer_sizes),
                 {{"metrics", metrics.string()}, {"model", model.string()}}, seconds_since(t0));
  if (!run.metrics.empty()) {
    const auto& last = run.metrics.back();
    std::cout << "epochs " << run.metrics.size() << "  h_source " << meca::format_double(last.h_source)
              << "  e_target " << meca::format_double(last.e_target);
    if (last.target_accuracy) std::cout << "  target_acc " << *last.target_accuracy;
    std::cout << '\n';
  }
  if (run.diverged) {
    std::cerr << "NumericalDivergence: " << run.message << '\n';
    return kNumerical;
  }
  return kOk;
}

int cmd_sweep(const TrainFlags& f, const std::string& penalty, const std::vector<double>& grid,
              std::size_t jobs, const std::string& command) {
  const auto t0 = std::chrono::steady_clock::now();
  const Problem p = load_problem(f, kMethods.at(penalty), 0.0);
  const fs::path dir(f.out_dir);
  fs::create_directories(dir);
  meca::SweepOptions opt;
  opt.jobs = jobs;
  opt.metrics_dir = dir;
  const meca::SweepResult res = meca::sweep(p.model, p.config, grid, p.source, p.target, opt);
  const fs::path summary = dir / "sweep.csv";
  meca::write_sweep_csv(res, summary.string());

  json runs = json::array();
  for (const auto& r : res.records) {
    runs.push_back({{"lambda", r.lambda}, {"metrics", r.metrics_path}, {"failed", r.failed}});
    if (r.failed) std::cerr << "lambda " << r.lambda << " failed: " << r.message << '\n';
  }
  write_manifest(dir / "manifest.json", command, config_json(p.config, p.model.layer_sizes),
                 {{"summary", summary.string()}, {"runs", runs}}, seconds_since(t0));

  std::cout << "selected lambda " << meca::format_shortest(res.selected_lambda) << " ("
            << res.selection_rule << ")\n";
  try {
    std::cout << "selection gap " << meca::format_double(meca::selection_gap(res)) << '\n';
  } catch (const meca::Error& e) {
    std::cout << "selection gap unavailable: " << e.what() << '\n';
  }
  return kOk;
}

int cmd_verify(const std::vector<std::string>& checks, double corrupt) {
  std::vector<meca::verify::CheckResult> results;
  auto wanted = [&](const std::string& name) {
    return std::find(checks.begin(), checks.end(), name) != checks.end();
  };
  if (wanted("gradients")) {
    meca::verify::GradientCheckOptions opt;
    opt.corrupt = corrupt;
    for (auto& r : meca::verify::check_gradients(opt)) results.push_back(std::move(r));
  }
  if (wanted("axioms"))
    for (auto& r : meca::verify::check_axioms()) results.push_back(std::move(r));
  if (wanted("aligned_domains"))
    for (auto& r : meca::verify::check_aligned_domains()) results.push_back(std::move(r));
  if (wanted("dummy_classifier"))
    for (auto& r : meca::verify::check_dummy_classifier()) results.push_back(std::move(r));
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name << "  " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  std::string command;
  for (int i = 0; i < argc; ++i) command += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Covariance alignment for domain adaptation: data, training, lambda sweeps, checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(meca::kVersion));

  std::string preset;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "write source/target CSV pairs");
  gen->add_option("--preset", preset)->required()->check(CLI::IsMember({"blobs", "moons"}));
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out-dir", gen_out)->required();

  TrainFlags train_flags;
  std::optional<double> lambda, gamma;
  auto* train = app.add_subcommand("train", "train one (method, lambda) configuration");
  add_train_flags(train, train_flags, true);
  train->add_option("--lambda", lambda, "alignment weight (coral, meca)");
  train->add_option("--gamma", gamma, "entropy weight (entropy_reg)");

  TrainFlags sweep_flags;
  std::string penalty = "meca";
  std::vector<double> grid = meca::kDefaultLambdaGrid;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "train over a lambda grid and select by target entropy");
  add_train_flags(sweep, sweep_flags, false);
  sweep->add_option("--penalty", penalty, "meca|coral")->check(CLI::IsMember({"meca", "coral"}));
  sweep->add_option("--grid", grid, "comma-separated lambda values")->delimiter(',');
  sweep->add_option("--jobs", jobs)->check(CLI::PositiveNumber);

  std::vector<std::string> checks = {"gradients", "axioms", "aligned_domains", "dummy_classifier"};
  double corrupt = 0.0;
  auto* verify = app.add_subcommand("verify", "run the self-check suites");
  verify->add_option("--checks", checks, "gradients,axioms,aligned_domains,dummy_classifier")
      ->delimiter(',')
      ->check(CLI::IsMember({"gradients", "axioms", "aligned_domains", "dummy_classifier"}));
  verify->add_option("--corrupt-gradient", corrupt, "test hook: perturb one analytic coordinate")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(preset, gen_seed, gen_out);
    if (*train) return cmd_train(train_flags, lambda, gamma, command);
    if (*sweep) return cmd_sweep(sweep_flags, penalty, grid, jobs, command);
    if (*verify) return cmd_verify(checks, corrupt);
  } catch (const meca::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}
