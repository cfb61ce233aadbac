/* Copyright 2026 The dfmerge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Acceptance checks: one PASS/FAIL line per criterion. The exit
// status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dfmerge/bayesopt.hpp"
#include "dfmerge/commands.hpp"
#include "dfmerge/config.hpp"
#include "dfmerge/fisher.hpp"
#include "dfmerge/harness.hpp"
#include "dfmerge/merge.hpp"
#include "dfmerge/rng.hpp"
#include "dfmerge/toymodels.hpp"

using namespace dfmerge;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeedBase = 1000;
constexpr int kSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0.0 && secs > limit_s) {
    out.pass = false;
    out.detail += " (over the " + std::to_string(static_cast<int>(limit_s)) + " s limit)";
  }
  std::printf("[%s] %2d %s: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", id, title, out.detail.c_str(), secs);
  std::fflush(stdout);
  if (!out.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

ParamVector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return ParamVector(SegmentLayout::from_lengths({{"w", n}}), std::move(v));
}

// ---------------------------------------------------------------------------
// Toy experiments, built exactly as `dfmerge train` builds them.

struct Toy {
  ExperimentConfig cfg;
  std::shared_ptr<Suite> suite;
  ParamVector pretrained;
  std::vector<ParamVector> finetuned;
  MergeInputs inputs;
};

ExperimentConfig shipped_config(const char* name, std::uint64_t seed) {
  ExperimentConfig cfg = load_config(fs::path(DFMERGE_SOURCE_DIR) / "configs" / name);
  cfg.seed = seed;
  return cfg;
}

Toy make_toy(const ExperimentConfig& cfg) {
  Toy t;
  t.cfg = cfg;
  t.suite = std::make_shared<Suite>();
  t.suite->spec = cfg.spec();
  t.suite->tasks = build_datasets(cfg);
  t.pretrained = pretrain_shared_init(t.suite->spec, stage_seed(cfg, "pretrain"), t.suite->tasks, cfg.pretrain).params;
  for (std::size_t i = 0; i < t.suite->tasks.size(); ++i) {
    TrainConfig tc = cfg.train;
    tc.seed = stage_seed(cfg, "train/task-" + std::to_string(i));
    t.finetuned.push_back(finetune(t.pretrained, t.suite->spec, t.suite->tasks[i], tc).params);
  }
  t.inputs = MergeInputs::from_models(t.pretrained, t.finetuned);
  return t;
}

// Every trajectory the runs below produce, for the trajectory check.
struct TrajectoryLog {
  std::vector<std::pair<std::vector<TrajectoryRecord>, std::size_t>> runs;  // records, expected length
  void add(const BOResult& r, const BOConfig& cfg) { runs.emplace_back(r.trajectory, cfg.init_points + cfg.iterations); }
};
TrajectoryLog trajectories;

// ---------------------------------------------------------------------------

Outcome reductions() {
  Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.index(5), d = 1 + rng.index(200);
    MergeInputs in{random_vector(d, rng), {}, {}};
    std::vector<FisherDiagonal> fs;
    std::vector<double> lam(m);
    for (std::size_t i = 0; i < m; ++i) {
      in.taus.push_back(random_vector(d, rng, 0.5));
      std::vector<double> f(d);
      for (double& x : f) x = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.01, 3.0);
      fs.emplace_back(in.pretrained.layout(), f);
      lam[i] = rng.uniform();
    }
    const std::vector<double> uniform(m, 1.0 / static_cast<double>(m));
    const ParamVector avg = unified_merge(in, uniform, IdentityWeights{});
    const ParamVector gta = unified_merge(in, lam, IdentityWeights{});
    const ParamVector fis = unified_merge(in, uniform, DiagonalWeights{fs});
    for (std::size_t k = 0; k < d; ++k) {
      double mean = 0.0, lin = in.pretrained[k], fw = 0.0, fsum = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double th = in.pretrained[k] + in.taus[i][k];
        mean += th / static_cast<double>(m);
        lin += lam[i] * in.taus[i][k];
        fw += fs[i][k] * th;
        fsum += fs[i][k];
      }
      const double fisher = fsum >= kMergeEps ? fw / fsum : mean;
      worst = std::max({worst, std::fabs(avg[k] - mean), std::fabs(gta[k] - lin), std::fabs(fis[k] - fisher)});
    }
  }
  return {worst <= 1e-12, fmt("max deviation %.2e over 100 instances (tol 1e-12)", worst)};
}

Outcome geometric_oracle() {
  Rng rng(2);
  double worst_rel = 0.0, worst_stat = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(trial % 2);
    const std::size_t d = 5 + 5 * static_cast<std::size_t>(trial);  // up to 50
    const auto n = static_cast<Eigen::Index>(d);
    MergeInputs in{random_vector(d, rng), {}, {}};
    std::vector<FisherFull> fs;
    std::vector<Eigen::VectorXd> models;
    Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < m; ++i) {
      in.taus.push_back(random_vector(d, rng, 0.5));
      const Eigen::MatrixXd g = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return rng.normal(); });
      const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
      const Eigen::VectorXd lam = Eigen::VectorXd::NullaryExpr(n, [&] { return std::exp(rng.uniform(std::log(1e-2), 0.0)); });
      fs.push_back(FisherFull{q * lam.asDiagonal() * q.transpose()});
      total += fs.back().matrix;
      Eigen::VectorXd th(n);
      for (Eigen::Index k = 0; k < n; ++k) th(k) = in.pretrained[static_cast<std::size_t>(k)] + in.taus[i][static_cast<std::size_t>(k)];
      models.push_back(th);
    }
    const ParamVector merged = merge_fisher_full(in, fs);

    // Plain gradient descent on sum_i (theta - theta_i)^T F_i (theta - theta_i).
    const double step = 1.0 / (2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(total).eigenvalues().maxCoeff());
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int it = 0; it < 200000; ++it) {
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
      for (std::size_t i = 0; i < m; ++i) grad += 2.0 * fs[i].matrix * (x - models[i]);
      x -= step * grad;
      if (grad.norm() <= 1e-13 * (1.0 + x.norm())) break;
    }
    const Eigen::Map<const Eigen::VectorXd> got(merged.values().data(), n);
    Eigen::VectorXd residual = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < m; ++i) residual += fs[i].matrix * (got - models[i]);
    worst_rel = std::max(worst_rel, (got - x).norm() / x.norm());
    worst_stat = std::max(worst_stat, residual.norm() / got.norm());
  }
  return {worst_rel <= 1e-6 && worst_stat <= 1e-8,
          fmt("relative error %.2e (tol 1e-6), stationarity %.2e (tol 1e-8)", worst_rel, worst_stat)};
}

Outcome fisher_oracle() {
  Rng rng(3);
  double diag_err = 0.0, fd_err = 0.0;
  for (const ClassifierSpec& spec : {ClassifierSpec{4, 0, 3}, ClassifierSpec{5, 3, 2}, ClassifierSpec{3, 4, 3},
                                     ClassifierSpec{6, 6, 4}, ClassifierSpec{24, 16, 4}}) {
    std::vector<double> pv(spec.param_count());
    for (double& v : pv) v = 0.7 * rng.normal();
    const ParamVector params(spec.layout(), pv);
    std::vector<double> x(8 * spec.input_dim);
    for (double& v : x) v = rng.normal();
    if (spec.param_count() <= kFullFisherCap) {
      const FisherFull full = empirical_fisher_full(params, spec, InputBatch{x, spec.input_dim});
      const FisherDiagonal diag = empirical_fisher_diag(params, spec, InputBatch{x, spec.input_dim});
      for (std::size_t k = 0; k < diag.size(); ++k) {
        diag_err = std::max(diag_err, std::fabs(full.matrix(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) - diag[k]));
      }
    }
    std::vector<std::uint32_t> y(8);
    for (auto& v : y) v = static_cast<std::uint32_t>(rng.index(spec.num_classes));
    const BatchView batch{x, y, spec.input_dim};
    const LossAndGrad lg = nll_and_grad(params, spec, batch);
    const double h = 1e-5;
    for (std::size_t k = 0; k < pv.size(); ++k) {
      std::vector<double> plus = pv, minus = pv;
      plus[k] += h;
      minus[k] -= h;
      const double fp = nll_and_grad(ParamVector(spec.layout(), plus), spec, batch).loss;
      const double fm = nll_and_grad(ParamVector(spec.layout(), minus), spec, batch).loss;
      fd_err = std::max(fd_err, std::fabs((fp - fm) / (2 * h) - lg.grad[k]));
    }
  }
  return {diag_err <= 1e-10 && fd_err <= 1e-6,
          fmt("diag vs full %.2e (tol 1e-10), finite differences %.2e (tol 1e-6)", diag_err, fd_err)};
}

long double matern52l(long double dist, long double ell) {
  const long double r = std::sqrt(5.0L) * dist / ell;
  return (1.0L + r + r * r / 3.0L) * std::exp(-r);
}

Outcome gp_correctness() {
  Rng rng(4);
  double post_err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index dims = 1 + static_cast<Eigen::Index>(rng.index(3));
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng.index(12));
    const Eigen::MatrixXd pts = Eigen::MatrixXd::NullaryExpr(n, dims, [&] { return rng.uniform(); });
    const Eigen::VectorXd y = Eigen::VectorXd::NullaryExpr(n, [&] { return rng.normal(); });
    const double ell = rng.uniform(0.2, 1.0), s = rng.uniform(0.5, 2.0), jitter = 1e-6;
    const GPState gp = gp_build(pts, y, Kernel{KernelFamily::kMatern52, ell, s}, jitter, jitter);
    // Dense inverse in extended precision, so the oracle's own round-off stays
    // well below the tolerance even for ill-conditioned kernel matrices.
    using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    const MatL ptsl = pts.cast<long double>();
    const long double s2 = static_cast<long double>(s) * s;
    MatL kmat(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        kmat(i, j) = s2 * (matern52l((ptsl.row(i) - ptsl.row(j)).norm(), ell) + (i == j ? jitter : 0.0L));
      }
    }
    const MatL kinv = kmat.inverse();
    const VecL resid = (y.cast<long double>().array() - y.cast<long double>().mean()).matrix();
    for (int q = 0; q < 5; ++q) {
      std::vector<double> query(static_cast<std::size_t>(dims));
      for (double& v : query) v = rng.uniform();
      const Eigen::Map<const Eigen::RowVectorXd> qv(query.data(), dims);
      VecL ks(n);
      for (Eigen::Index i = 0; i < n; ++i) ks(i) = s2 * matern52l((ptsl.row(i) - qv.cast<long double>()).norm(), ell);
      const long double mean = y.cast<long double>().mean() + ks.dot(kinv * resid);
      const long double sd = std::sqrt(std::max(s2 - ks.dot(kinv * ks), 0.0L));
      const Posterior post = gp.posterior(query);
      post_err = std::max({post_err, static_cast<double>(std::fabs(post.mean - mean)),
                           static_cast<double>(std::fabs(post.stddev - sd))});
    }
  }

  Eigen::MatrixXd pts(4, 1);
  pts << 0.1, 0.4, 0.7, 0.95;
  Eigen::VectorXd y(4);
  y << 0.2, 0.8, 0.5, 0.1;
  const GPState gp = gp_build(pts, y, Kernel{KernelFamily::kMatern52, 0.2, 0.5}, 1e-6, 1e-6);
  const Acquisition ei = Acquisition::ei(gp.best_value());
  double mc_err = 0.0;
  for (double x : {0.0, 0.25, 0.5, 0.6, 0.85}) {
    const double q[] = {x};
    const Posterior post = gp.posterior(q);
    double mc = 0.0;
    for (int i = 0; i < 1000000; ++i) mc += std::max(post.mean + post.stddev * rng.normal() - ei.best_so_far, 0.0);
    mc_err = std::max(mc_err, std::fabs(acquisition_value(gp, q, ei) - mc / 1e6));
  }
  double at_obs = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double q[] = {pts(i, 0)};
    at_obs = std::max(at_obs, acquisition_value(gp, q, ei));
  }
  return {post_err <= 1e-8 && mc_err <= 1e-3 && at_obs <= 1e-8,
          fmt("posterior %.2e (tol 1e-8), EI vs Monte Carlo %.2e (tol 1e-3), EI at observations %.2e (tol 1e-8)",
              post_err, mc_err, at_obs)};
}

Outcome bo_efficiency() {
  int ok = 0;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    const Toy t = make_toy(shipped_config("toy2.json", kSeedBase + static_cast<std::uint64_t>(s)));
    const MergeObjective obj(t.inputs, t.suite, ObjectiveMethod::kDf, t.cfg.objective_options());
    BOConfig bo = t.cfg.bo_config();
    bo.init_points = 10;
    bo.iterations = 20;
    const BOResult r = optimize(objective_fn(std::make_shared<MergeObjective>(obj)), bo);
    trajectories.add(r, bo);
    double grid = -1.0;
    for (int a = 0; a <= 20; ++a) {
      for (int b = 0; b <= 20; ++b) {
        const double l[] = {a / 20.0, b / 20.0};
        grid = std::max(grid, obj(l));
      }
    }
    const bool pass = r.best.value >= grid - 0.01;
    ok += pass;
    detail += fmt(" %.4f/%.4f", r.best.value, grid) + (pass ? "" : "!");
  }
  return {ok >= 4, std::to_string(ok) + "/5 seeds within 1 point of the 21x21 grid (bo/grid:" + detail + ")"};
}

Outcome method_ordering() {
  double df = 0.0, avg = 0.0, fisher = 0.0, gta = 0.0;
  bool beats_zero_shot = true;
  for (int s = 0; s < kSeeds; ++s) {
    const Toy t = make_toy(shipped_config("toy3.json", kSeedBase + static_cast<std::uint64_t>(s)));
    for (std::size_t i = 0; i < t.finetuned.size(); ++i) {
      const auto own = std::span(&t.suite->tasks[i], 1);
      const double ft = evaluate(t.finetuned[i], t.suite->spec, own, SplitKind::kTest).average;
      const double zs = evaluate(t.pretrained, t.suite->spec, own, SplitKind::kTest).average;
      beats_zero_shot = beats_zero_shot && ft > zs;
    }
    const auto rows = ablate(t.inputs, t.suite, AblationConfig{t.cfg.bo_config(), t.cfg.objective_options()});
    for (const AblationRow& r : rows) {
      if (r.name == "DF-Merge (EI)") df += r.test.average / kSeeds;
      if (r.name == "Averaging") avg += r.test.average / kSeeds;
      if (r.name == "w/o BO (Fisher Merging)") fisher += r.test.average / kSeeds;
      if (r.name == "w/o Fisher (GTA+BO)") gta += r.test.average / kSeeds;
    }
  }
  const bool pass = df >= avg && df >= fisher && df >= gta - 0.005 && beats_zero_shot;
  return {pass, fmt("test avg DF %.4f, Averaging %.4f, Fisher %.4f, GTA+BO %.4f", df, avg, fisher, gta) +
                    (beats_zero_shot ? "; fine-tuned > zero-shot on every task" : "; a fine-tuned model lost to zero-shot")};
}

Outcome validation_ratio() {
  int ok = 0;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    const Toy t = make_toy(shipped_config("toy3.json", kSeedBase + static_cast<std::uint64_t>(s)));
    ObjectiveOptions opts = t.cfg.objective_options();
    const BOConfig bo = t.cfg.bo_config();
    const OptimizationRun full = run_optimization(MergeObjective(t.inputs, t.suite, ObjectiveMethod::kDf, opts), bo);
    opts.val_ratio = 0.1;
    const OptimizationRun part = run_optimization(MergeObjective(t.inputs, t.suite, ObjectiveMethod::kDf, opts), bo);
    trajectories.add(full.bo, bo);
    trajectories.add(part.bo, bo);
    const bool pass = std::fabs(full.test.average - part.test.average) <= 0.02;
    ok += pass;
    detail += fmt(" %.4f/%.4f", full.test.average, part.test.average) + (pass ? "" : "!");
  }
  return {ok >= 3, std::to_string(ok) + "/5 seeds within 2 points (full/10%:" + detail + ")"};
}

Outcome landscape_structure() {
  int ok = 0;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    const Toy t = make_toy(shipped_config("toy2.json", kSeedBase + static_cast<std::uint64_t>(s)));
    const MergeObjective obj(t.inputs, t.suite, ObjectiveMethod::kDf, t.cfg.objective_options());
    bool pass = true;
    for (LandscapeVariant v : {LandscapeVariant::kGta, LandscapeVariant::kDf}) {
      const LandscapeGrid g = landscape(obj, v, t.cfg.landscape);
      const LandscapeCell& c = g.best_cell();
      const bool inside = c.c1 > 0.25 * g.c1_axis.back() && c.c2 > 0.25 * g.c2_axis.back();
      pass = pass && inside;
      detail += std::string(" ") + to_string(v) + fmt("(%.2f,%.2f)", c.c1 / g.c1_axis.back(), c.c2 / g.c2_axis.back());
    }
    ok += pass;
    detail += pass ? ";" : "!;";
  }
  return {ok >= 4, std::to_string(ok) + "/5 seeds with both optima past 0.25 of each axis (fractions:" + detail + ")"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DFMERGE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path cli_workspace() { return fs::temp_directory_path() / "dfmerge_acceptance_cli"; }

// Runs every command once through the CLI; criteria 8 and 10 read the results.
bool cli_ran = false;
std::string cli_error;
const std::vector<std::string> kCommands = {"train", "merge", "optimize", "eval", "landscape", "ablate", "sweep"};

void run_cli_commands() {
  if (cli_ran) return;
  cli_ran = true;
  const fs::path dir = cli_workspace();
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string base =
      " -c " + (fs::path(DFMERGE_SOURCE_DIR) / "configs" / "toy2.json").string() + " -o " + (dir / "run").string();
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"train", ""},
      {"merge", "--method df --lambdas 0.6,0.4"},
      {"optimize", ""},
      {"eval", "--checkpoint optimize/merged.ckpt --split test"},
      {"landscape", "--resolution 6"},
      {"ablate", "--init 5 --iterations 5"},
      {"sweep", "--axis iterations --values 0,5,10 --init 5"},
  };
  for (const auto& [command, flags] : steps) {
    const int rc = run_cli(command + base + " " + flags);
    if (rc != 0) {
      cli_error = command + " exited " + std::to_string(rc);
      return;
    }
  }
}

Outcome trajectory_property() {
  run_cli_commands();
  if (!cli_error.empty()) return {false, cli_error};
  std::size_t files = 0;
  // The CLI trajectory plus a shortened and an init-only run.
  const fs::path traj = cli_workspace() / "run" / "optimize" / "trajectory.jsonl";
  std::vector<std::pair<std::vector<TrajectoryRecord>, std::size_t>> all = trajectories.runs;
  all.emplace_back(read_trajectory_jsonl(traj), 60);
  ++files;
  const std::string base =
      " -c " + (fs::path(DFMERGE_SOURCE_DIR) / "configs" / "toy2.json").string() + " -o " +
      (cli_workspace() / "run").string();
  for (const auto& [flags, expected] :
       std::vector<std::pair<std::string, std::size_t>>{{"--init 5 --iterations 0", 5}, {"--init 3 --iterations 7", 10}}) {
    if (run_cli("optimize" + base + " " + flags) != 0) return {false, "optimize " + flags + " failed"};
    all.emplace_back(read_trajectory_jsonl(traj), expected);
    ++files;
  }
  std::size_t bad = 0;
  for (const auto& [records, expected] : all) {
    bool good = records.size() == expected;
    for (std::size_t i = 1; i < records.size(); ++i) good = good && records[i].best_so_far >= records[i - 1].best_so_far;
    for (std::size_t i = 0; i < records.size(); ++i) {
      double running = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) running = std::max(running, records[j].objective);
      good = good && records[i].best_so_far == running;
    }
    bad += !good;
  }
  return {bad == 0, std::to_string(all.size()) + " trajectories (" + std::to_string(files) +
                        " exported by the CLI), " + std::to_string(bad) + " violating monotonicity or length"};
}

Outcome reproducibility() {
  run_cli_commands();
  if (!cli_error.empty()) return {false, cli_error};
  // Restore the default optimize run, then rerun every manifest.
  const std::string base =
      " -c " + (fs::path(DFMERGE_SOURCE_DIR) / "configs" / "toy2.json").string() + " -o " +
      (cli_workspace() / "run").string();
  if (run_cli("optimize" + base) != 0) return {false, "optimize failed"};
  std::size_t artifacts = 0;
  std::string failed;
  for (const std::string& command : kCommands) {
    const fs::path manifest = cli_workspace() / "run" / "manifests" / (command + ".json");
    const RunManifest before = load_manifest(manifest);
    artifacts += before.artifacts.size();
    const int rc = run_cli("rerun --manifest " + manifest.string());
    if (rc != 0 || load_manifest(manifest).artifacts != before.artifacts) failed += " " + command;
  }
  if (!failed.empty()) return {false, "checksums differ after rerun of:" + failed};
  return {true, std::to_string(kCommands.size()) + " commands rerun, " + std::to_string(artifacts) +
                    " artifact checksums identical"};
}

}  // namespace

int main() {
  report(1, "reductions of the unified merge", 1.0, reductions);
  report(2, "full-Fisher merge vs gradient-descent minimizer", 30.0, geometric_oracle);
  report(3, "Fisher and gradient oracles", 10.0, fisher_oracle);
  report(4, "GP posterior and expected improvement", 60.0, gp_correctness);
  report(5, "BO efficiency on the 2-task suite", 300.0, bo_efficiency);
  report(6, "method ordering on the 3-task suite", 600.0, method_ordering);
  report(7, "validation-ratio robustness", 600.0, validation_ratio);
  report(8, "trajectory monotonicity and length", 0.0, trajectory_property);
  report(9, "landscape optimum away from low coefficients", 300.0, landscape_structure);
  report(10, "rerun reproduces artifact checksums", 0.0, reproducibility);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
