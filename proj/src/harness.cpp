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

#include "dfmerge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "dfmerge/errors.hpp"
#include "dfmerge/kernels.hpp"
#include "dfmerge/parallel.hpp"
#include "dfmerge/rng.hpp"

namespace dfmerge {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string join(std::span<const double> values, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? sep : "") + fmt(values[i]);
  return out;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["split"] = to_string(split);
  j["sample_ratio"] = sample_ratio;
  j["average"] = average;
  j["tasks"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    j["tasks"].push_back({{"task", tasks[i]}, {"accuracy", accuracy[i]}, {"samples", samples[i]}});
  }
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "task,split,sample_ratio,samples,accuracy\n";
  std::size_t total = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    os << tasks[i] << ',' << to_string(split) << ',' << fmt(sample_ratio) << ',' << samples[i] << ','
       << fmt(accuracy[i]) << '\n';
    total += samples[i];
  }
  os << "average," << to_string(split) << ',' << fmt(sample_ratio) << ',' << total << ',' << fmt(average) << '\n';
  return os.str();
}

std::vector<std::size_t> nested_subset(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("sample ratio must lie in (0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
  if (keep == 0) throw ConfigError("sample ratio selects no samples");
  order.resize(keep);
  return order;
}

std::uint64_t subset_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, "eval-subset/" + std::to_string(index));
}

EvalReport evaluate(const ParamVector& model, const ClassifierSpec& spec, std::span<const Dataset> tasks,
                    SplitKind split, double sample_ratio, std::uint64_t seed) {
  if (tasks.empty()) throw ConfigError("evaluate needs at least one task");
  EvalReport report;
  report.split = split;
  report.sample_ratio = sample_ratio;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Split& s = tasks[i].split(split);
    const auto subset = nested_subset(s.size(), sample_ratio, subset_seed(seed, i));
    report.tasks.push_back(tasks[i].task_id);
    report.accuracy.push_back(accuracy(model, spec, s, subset));
    report.samples.push_back(subset.size());
  }
  report.average = std::accumulate(report.accuracy.begin(), report.accuracy.end(), 0.0) /
                   static_cast<double>(report.accuracy.size());
  return report;
}

const char* to_string(ObjectiveMethod method) { return method == ObjectiveMethod::kDf ? "df" : "gta"; }

std::vector<double> fisher_batch(const Dataset& task, std::size_t count, std::uint64_t seed, std::size_t index) {
  const Split& val = task.validation;
  if (val.size() == 0 || count == 0) throw ConfigError("Fisher batch needs validation inputs");
  std::vector<std::size_t> order(val.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "fisher-batch/" + std::to_string(index)));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(std::min(count, order.size()));
  std::vector<double> out;
  for (std::size_t r : order) {
    const auto row = val.row(r);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

MergeObjective::MergeObjective(MergeInputs inputs, std::shared_ptr<const Suite> suite, ObjectiveMethod method,
                               ObjectiveOptions options)
    : inputs_(std::move(inputs)), suite_(std::move(suite)), method_(method), options_(options) {
  inputs_.validate();
  if (!suite_ || suite_->tasks.size() != inputs_.num_models()) {
    throw ConfigError("objective needs exactly one task per merged model");
  }
  require_same_layout(inputs_.pretrained.layout(), suite_->spec.layout(), "objective");
  for (std::size_t i = 0; i < suite_->tasks.size(); ++i) {
    const Dataset& task = suite_->tasks[i];
    fisher_batches_.push_back(fisher_batch(task, options_.fisher_samples, options_.seed, i));
    val_subsets_.push_back(nested_subset(task.validation.size(), options_.val_ratio, subset_seed(options_.seed, i)));
  }
}

InputBatch MergeObjective::fisher_inputs(std::size_t model) const {
  return InputBatch{fisher_batches_.at(model), suite_->spec.input_dim};
}

FisherDiagonal MergeObjective::fisher(std::size_t model, double lambda) const {
  return fisher_at_scaled(inputs_.pretrained, inputs_.taus.at(model), lambda, suite_->spec, fisher_inputs(model));
}

ParamVector MergeObjective::merge(std::span<const double> lambdas, bool allow_unbounded) const {
  if (method_ == ObjectiveMethod::kGta) {
    check_coefficients(lambdas, inputs_.num_models(), allow_unbounded);
    return merge_gta(inputs_, lambdas);
  }
  return merge_df(inputs_, lambdas, [this](std::size_t i, double lambda) { return fisher(i, lambda); },
                  allow_unbounded);
}

double MergeObjective::operator()(std::span<const double> lambdas) const {
  const ParamVector merged = merge(lambdas);
  double total = 0.0;
  for (std::size_t i = 0; i < suite_->tasks.size(); ++i) {
    total += accuracy(merged, suite_->spec, suite_->tasks[i].validation, val_subsets_[i]);
  }
  return total / static_cast<double>(suite_->tasks.size());
}

Objective objective_fn(std::shared_ptr<const MergeObjective> objective) {
  return [objective](std::span<const double> lambdas) { return (*objective)(lambdas); };
}

// ---------------------------------------------------------------------------
// Grid searches

namespace {

double validation_average(const ParamVector& model, const Suite& suite, const ObjectiveOptions& options) {
  return evaluate(model, suite.spec, suite.tasks, SplitKind::kValidation, options.val_ratio, options.seed).average;
}

// Evaluates every candidate; the winner is the highest score, then the
// lexicographically smallest hyperparameters.
template <typename Build>
GridResult run_grid(std::vector<std::vector<double>> candidates, Build&& build, const Suite& suite,
                    const ObjectiveOptions& options) {
  if (candidates.empty()) throw ConfigError("grid search needs at least one grid point");
  std::vector<double> scores(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) { scores[i] = validation_average(build(candidates[i]), suite, options); });
  GridResult result;
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    result.evaluated.emplace_back(candidates[i], scores[i]);
    if (scores[i] > scores[best] || (scores[i] == scores[best] && candidates[i] < candidates[best])) best = i;
  }
  result.best = candidates[best];
  result.best_value = scores[best];
  return result;
}

}  // namespace

std::vector<double> linear_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("invalid grid bounds");
  std::vector<double> out;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= count; ++i) out.push_back(lo + step * static_cast<double>(i));
  return out;
}

GridResult grid_search_ta(const MergeInputs& inputs, std::span<const double> grid, const Suite& suite,
                          const ObjectiveOptions& options) {
  std::vector<std::vector<double>> candidates;
  for (double l : grid) candidates.push_back({l});
  return run_grid(std::move(candidates), [&](const std::vector<double>& c) { return merge_task_arithmetic(inputs, c[0]); },
                  suite, options);
}

GridResult grid_search_ties(const MergeInputs& inputs, double keep_fraction, std::span<const double> grid,
                            const Suite& suite, const ObjectiveOptions& options) {
  std::vector<ParamVector> trimmed;
  for (const ParamVector& tau : inputs.taus) trimmed.push_back(ties_trim(tau, keep_fraction));
  const ParamVector merged_tau = ties_elect_disjoint_mean(trimmed);
  std::vector<std::vector<double>> candidates;
  for (double l : grid) candidates.push_back({l});
  return run_grid(
      std::move(candidates),
      [&](const std::vector<double>& c) {
        const ScaledVector scaled[] = {{c[0], &merged_tau}};
        return axpy_into_pretrained(inputs.pretrained, scaled);
      },
      suite, options);
}

GridResult grid_search_dare(const MergeInputs& inputs, std::span<const double> drop_rates,
                            std::span<const double> grid, const Suite& suite, const ObjectiveOptions& options,
                            std::uint64_t seed) {
  std::vector<std::vector<double>> candidates;
  for (double p : drop_rates) {
    for (double l : grid) candidates.push_back({p, l});
  }
  return run_grid(std::move(candidates),
                  [&](const std::vector<double>& c) { return merge_dare(inputs, c[0], c[1], seed); }, suite, options);
}

// ---------------------------------------------------------------------------
// Optimization

OptimizationRun run_optimization(const MergeObjective& objective, const BOConfig& cfg) {
  BOConfig local = cfg;
  local.dims = objective.inputs().num_models();
  OptimizationRun run;
  run.bo = optimize([&](std::span<const double> l) { return objective(l); }, local);
  run.merged = objective.merge(run.bo.best.lambdas);
  const Suite& suite = objective.suite();
  run.validation = evaluate(run.merged, suite.spec, suite.tasks, SplitKind::kValidation, objective.options().val_ratio,
                            objective.options().seed);
  run.test = evaluate(run.merged, suite.spec, suite.tasks, SplitKind::kTest);
  return run;
}

// ---------------------------------------------------------------------------
// Landscape

std::pair<double, double> PlaneBasis::to_lambdas(double c1, double c2) const {
  const double lambda2 = c2 / tau2_across;
  const double lambda1 = (c1 - lambda2 * tau2_along_u) / tau1_norm;
  return {lambda1, lambda2};
}

PlaneBasis plane_basis(const ParamVector& tau1, const ParamVector& tau2) {
  require_same_layout(tau1.layout(), tau2.layout(), "plane_basis");
  const auto& k = kernels::active();
  const std::size_t d = tau1.size();
  PlaneBasis b;
  b.tau1_norm = std::sqrt(k.dot(tau1.values().data(), tau1.values().data(), d));
  if (!(b.tau1_norm > 0.0)) throw ConfigError("landscape: first task vector is zero");
  b.u.resize(d);
  for (std::size_t i = 0; i < d; ++i) b.u[i] = tau1[i] / b.tau1_norm;
  b.tau2_along_u = k.dot(tau2.values().data(), b.u.data(), d);
  std::vector<double> v(tau2.values().begin(), tau2.values().end());
  k.axpy(-b.tau2_along_u, b.u.data(), v.data(), d);
  // One re-orthogonalization pass keeps <u, v> at round-off level.
  k.axpy(-k.dot(v.data(), b.u.data(), d), b.u.data(), v.data(), d);
  b.tau2_across = std::sqrt(k.dot(v.data(), v.data(), d));
  const double tau2_norm = std::sqrt(k.dot(tau2.values().data(), tau2.values().data(), d));
  if (!(b.tau2_across > 1e-12 * std::max(tau2_norm, 1e-300))) {
    throw ConfigError("landscape: task vectors are parallel, the plane basis is degenerate");
  }
  b.v.resize(d);
  for (std::size_t i = 0; i < d; ++i) b.v[i] = v[i] / b.tau2_across;
  return b;
}

ParamVector plane_point(const ParamVector& pretrained, const PlaneBasis& basis, double c1, double c2) {
  if (basis.u.size() != pretrained.size()) throw StructuralError("plane basis does not match the model");
  std::vector<double> out(pretrained.values().begin(), pretrained.values().end());
  const auto& k = kernels::active();
  k.axpy(c1, basis.u.data(), out.data(), out.size());
  k.axpy(c2, basis.v.data(), out.data(), out.size());
  return ParamVector(pretrained.layout(), std::move(out));
}

const char* to_string(LandscapeVariant variant) { return variant == LandscapeVariant::kDf ? "df" : "gta"; }

const LandscapeCell& LandscapeGrid::best_cell() const {
  if (cells.empty()) throw ConfigError("empty landscape");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    if (cells[i].accuracy > cells[best].accuracy) best = i;
  }
  return cells[best];
}

std::string LandscapeGrid::to_csv() const {
  std::ostringstream os;
  os << "variant,c1,c2,lambda1,lambda2,accuracy\n";
  for (const auto& c : cells) {
    os << to_string(variant) << ',' << fmt(c.c1) << ',' << fmt(c.c2) << ',' << fmt(c.lambda1) << ','
       << fmt(c.lambda2) << ',' << fmt(c.accuracy) << '\n';
  }
  return os.str();
}

nlohmann::json LandscapeGrid::to_json() const {
  nlohmann::json j;
  j["variant"] = to_string(variant);
  j["theta1"] = {basis.tau1_norm, 0.0};
  j["theta2"] = {basis.tau2_along_u, basis.tau2_across};
  j["c1_axis"] = c1_axis;
  j["c2_axis"] = c2_axis;
  j["accuracy"] = nlohmann::json::array();
  for (std::size_t a = 0; a < c1_axis.size(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t b = 0; b < c2_axis.size(); ++b) row.push_back(cells[a * c2_axis.size() + b].accuracy);
    j["accuracy"].push_back(row);
  }
  const auto& best = best_cell();
  j["best"] = {{"c1", best.c1}, {"c2", best.c2}, {"lambda1", best.lambda1}, {"lambda2", best.lambda2},
               {"accuracy", best.accuracy}};
  return j;
}

LandscapeGrid landscape(const MergeObjective& objective, LandscapeVariant variant, const LandscapeOptions& options) {
  const MergeInputs& inputs = objective.inputs();
  if (inputs.num_models() != 2) throw ConfigError("landscape needs exactly two task vectors");
  if (options.resolution < 2) throw ConfigError("landscape resolution must be >= 2");
  LandscapeGrid grid;
  grid.variant = variant;
  grid.basis = plane_basis(inputs.taus[0], inputs.taus[1]);
  const PlaneBasis& b = grid.basis;

  double c1_lo = options.c1_lo, c1_hi = options.c1_hi, c2_lo = options.c2_lo, c2_hi = options.c2_hi;
  if (!(c1_lo < c1_hi)) {
    c1_lo = 1.25 * std::min(0.0, b.tau2_along_u);
    c1_hi = 1.25 * std::max(b.tau1_norm, b.tau2_along_u);
  }
  if (!(c2_lo < c2_hi)) {
    c2_lo = 0.0;
    c2_hi = 1.25 * b.tau2_across;
  }
  const std::size_t r = options.resolution;
  for (std::size_t i = 0; i < r; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(r - 1);
    grid.c1_axis.push_back(c1_lo + t * (c1_hi - c1_lo));
    grid.c2_axis.push_back(c2_lo + t * (c2_hi - c2_lo));
  }
  grid.cells.resize(r * r);
  const Suite& suite = objective.suite();
  const ObjectiveOptions& opts = objective.options();
  parallel_for(r * r, [&](std::size_t idx) {
    LandscapeCell& cell = grid.cells[idx];
    cell.c1 = grid.c1_axis[idx / r];
    cell.c2 = grid.c2_axis[idx % r];
    std::tie(cell.lambda1, cell.lambda2) = b.to_lambdas(cell.c1, cell.c2);
    ParamVector model;
    if (variant == LandscapeVariant::kGta) {
      model = plane_point(inputs.pretrained, b, cell.c1, cell.c2);
    } else {
      const double lambdas[] = {cell.lambda1, cell.lambda2};
      model = merge_df(inputs, lambdas, [&](std::size_t i, double l) { return objective.fisher(i, l); }, true);
    }
    cell.accuracy = evaluate(model, suite.spec, suite.tasks, SplitKind::kValidation, opts.val_ratio, opts.seed).average;
  });
  return grid;
}

// ---------------------------------------------------------------------------
// Ablation and sweeps

std::vector<AblationRow> ablate(const MergeInputs& inputs, std::shared_ptr<const Suite> suite,
                                const AblationConfig& cfg) {
  const MergeObjective df(inputs, suite, ObjectiveMethod::kDf, cfg.objective);
  const MergeObjective gta(inputs, suite, ObjectiveMethod::kGta, cfg.objective);
  std::vector<AblationRow> rows;
  auto from_run = [&](const std::string& name, const MergeObjective& obj, AcquisitionKind acq) {
    BOConfig bo = cfg.bo;
    bo.acquisition = acq;
    const OptimizationRun run = run_optimization(obj, bo);
    rows.push_back({name, run.bo.best.lambdas, run.validation.average, run.test});
  };
  auto from_model = [&](const std::string& name, std::vector<double> lambdas, const ParamVector& model) {
    const double val = validation_average(model, *suite, cfg.objective);
    rows.push_back({name, std::move(lambdas), val, evaluate(model, suite->spec, suite->tasks, SplitKind::kTest)});
  };

  from_run("DF-Merge (EI)", df, AcquisitionKind::kEI);
  from_run("DF-Merge (UCB)", df, AcquisitionKind::kUCB);
  from_run("w/o Fisher (GTA+BO)", gta, AcquisitionKind::kEI);

  std::vector<FisherDiagonal> fishers;
  for (std::size_t i = 0; i < inputs.num_models(); ++i) fishers.push_back(df.fisher(i, 1.0));
  const double uniform = 1.0 / static_cast<double>(inputs.num_models());
  from_model("w/o BO (Fisher Merging)", std::vector<double>(inputs.num_models(), uniform), merge_fisher(inputs, fishers));
  from_model("Averaging", std::vector<double>(inputs.num_models(), uniform), merge_averaging(inputs));
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "method,lambdas,validation_average,test_average";
  if (!rows.empty()) {
    for (const auto& t : rows.front().test.tasks) os << ",test_" << t;
  }
  os << '\n';
  for (const auto& r : rows) {
    os << '"' << r.name << "\"," << join(r.lambdas, ";") << ',' << fmt(r.validation_average) << ','
       << fmt(r.test.average);
    for (double a : r.test.accuracy) os << ',' << fmt(a);
    os << '\n';
  }
  return os.str();
}

std::vector<SweepRow> sweep_iterations(const MergeObjective& objective, const BOConfig& cfg,
                                       std::span<const std::size_t> iterations) {
  if (iterations.empty()) throw ConfigError("sweep needs at least one value");
  BOConfig local = cfg;
  local.dims = objective.inputs().num_models();
  local.iterations = *std::max_element(iterations.begin(), iterations.end());
  const BOResult full = optimize([&](std::span<const double> l) { return objective(l); }, local);
  const Suite& suite = objective.suite();
  std::vector<SweepRow> rows;
  for (std::size_t count : iterations) {
    const std::size_t prefix = local.init_points + count;
    std::size_t best = 0;
    for (std::size_t i = 1; i < prefix; ++i) {
      if (full.trajectory[i].objective > full.trajectory[best].objective) best = i;
    }
    const auto& rec = full.trajectory[best];
    const ParamVector merged = objective.merge(rec.lambdas);
    rows.push_back({static_cast<double>(count), rec.lambdas, rec.objective,
                    evaluate(merged, suite.spec, suite.tasks, SplitKind::kTest).average});
  }
  return rows;
}

std::vector<SweepRow> sweep_val_ratio(const MergeInputs& inputs, std::shared_ptr<const Suite> suite,
                                      ObjectiveMethod method, const ObjectiveOptions& base, const BOConfig& cfg,
                                      std::span<const double> ratios) {
  if (ratios.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double ratio : ratios) {
    ObjectiveOptions opts = base;
    opts.val_ratio = ratio;
    const MergeObjective objective(inputs, suite, method, opts);
    const OptimizationRun run = run_optimization(objective, cfg);
    rows.push_back({ratio, run.bo.best.lambdas, run.bo.best.value, run.test.average});
  }
  return rows;
}

std::string sweep_csv(const std::string& axis, std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << axis << ",lambdas,validation_best,test_average\n";
  for (const auto& r : rows) {
    os << fmt(r.value) << ',' << join(r.lambdas, ";") << ',' << fmt(r.validation_best) << ',' << fmt(r.test_average)
       << '\n';
  }
  return os.str();
}

}  // namespace dfmerge
