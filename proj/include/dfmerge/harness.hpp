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

#pragma once

// Evaluation, the merge-then-evaluate objective, baseline grid searches,
// ablations, sweeps, and the 2-D task-vector landscape.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dfmerge/bayesopt.hpp"
#include "dfmerge/fisher.hpp"
#include "dfmerge/merge.hpp"
#include "dfmerge/toymodels.hpp"

#include "json.hpp"

namespace dfmerge {

/// A classifier architecture and the tasks it is evaluated on.
struct Suite {
  ClassifierSpec spec;
  std::vector<Dataset> tasks;
};

struct EvalReport {
  std::vector<std::string> tasks;
  std::vector<double> accuracy;     // per task, in [0, 1]
  std::vector<std::size_t> samples;  // per task
  double average = 0.0;              // unweighted mean over tasks
  SplitKind split = SplitKind::kValidation;
  double sample_ratio = 1.0;

  nlohmann::json to_json() const;
  // Header plus one row per task and a final "average" row.
  std::string to_csv() const;
};

/// The first ceil(ratio * n) entries of a seeded permutation of [0, n), so a
/// smaller ratio always selects a subset of a larger one.
std::vector<std::size_t> nested_subset(std::size_t n, double ratio, std::uint64_t seed);

/// Seed for the evaluation subset of task `index`.
std::uint64_t subset_seed(std::uint64_t seed, std::size_t index);

EvalReport evaluate(const ParamVector& model, const ClassifierSpec& spec, std::span<const Dataset> tasks,
                    SplitKind split, double sample_ratio = 1.0, std::uint64_t seed = 0);

enum class ObjectiveMethod { kDf, kGta };

const char* to_string(ObjectiveMethod method);

struct ObjectiveOptions {
  double val_ratio = 1.0;
  std::uint64_t seed = 0;
  std::size_t fisher_samples = kDefaultFisherSamples;
};

/// Black-box f(lambda) = average validation accuracy of the merged model.
///
/// DF merges with diagonal Fisher re-estimated at theta_pre + lambda_i tau_i
/// on a fixed, seed-selected batch of unlabeled validation inputs of task i;
/// GTA merges with identity weights. Both are pure functions of lambda.
class MergeObjective {
 public:
  MergeObjective(MergeInputs inputs, std::shared_ptr<const Suite> suite, ObjectiveMethod method,
                 ObjectiveOptions options);

  double operator()(std::span<const double> lambdas) const;

  ParamVector merge(std::span<const double> lambdas, bool allow_unbounded = false) const;
  FisherDiagonal fisher(std::size_t model, double lambda) const;
  InputBatch fisher_inputs(std::size_t model) const;

  const MergeInputs& inputs() const { return inputs_; }
  const Suite& suite() const { return *suite_; }
  ObjectiveMethod method() const { return method_; }
  const ObjectiveOptions& options() const { return options_; }

 private:
  MergeInputs inputs_;
  std::shared_ptr<const Suite> suite_;
  ObjectiveMethod method_;
  ObjectiveOptions options_;
  std::vector<std::vector<double>> fisher_batches_;
  std::vector<std::vector<std::size_t>> val_subsets_;
};

Objective objective_fn(std::shared_ptr<const MergeObjective> objective);

/// Unlabeled Fisher batch for task `index`: `count` validation inputs picked by seed.
std::vector<double> fisher_batch(const Dataset& task, std::size_t count, std::uint64_t seed, std::size_t index);

struct GridResult {
  std::vector<double> best;  // winning hyperparameters
  double best_value = 0.0;   // validation average at the winner
  std::vector<std::pair<std::vector<double>, double>> evaluated;
};

/// Task arithmetic lambda chosen by validation accuracy; ties keep the smallest lambda.
GridResult grid_search_ta(const MergeInputs& inputs, std::span<const double> grid, const Suite& suite,
                          const ObjectiveOptions& options);

/// TIES over a lambda grid at fixed keep fraction; ties keep the smallest lambda.
GridResult grid_search_ties(const MergeInputs& inputs, double keep_fraction, std::span<const double> grid,
                            const Suite& suite, const ObjectiveOptions& options);

/// DARE on task arithmetic over drop rates x lambdas; ties keep the smallest (p, lambda).
GridResult grid_search_dare(const MergeInputs& inputs, std::span<const double> drop_rates,
                            std::span<const double> grid, const Suite& suite, const ObjectiveOptions& options,
                            std::uint64_t seed);

/// Inclusive arithmetic grid lo, lo+step, ..., hi.
std::vector<double> linear_grid(double lo, double hi, double step);

// ---------------------------------------------------------------------------
// Optimization driver

struct OptimizationRun {
  BOResult bo;
  ParamVector merged;
  EvalReport validation;
  EvalReport test;
};

OptimizationRun run_optimization(const MergeObjective& objective, const BOConfig& cfg);

// ---------------------------------------------------------------------------
// Landscape

/// Orthonormal basis of the plane spanned by two task vectors:
/// u = tau_1 / |tau_1|, v = (tau_2 - <tau_2,u> u) / |tau_2 - <tau_2,u> u|.
struct PlaneBasis {
  std::vector<double> u;
  std::vector<double> v;
  double tau1_norm = 0.0;      // plane coordinates of theta_1: (tau1_norm, 0)
  double tau2_along_u = 0.0;   // plane coordinates of theta_2: (tau2_along_u, tau2_across)
  double tau2_across = 0.0;

  // Per-task coefficients (lambda_1, lambda_2) with lambda_1 tau_1 + lambda_2 tau_2 = c1 u + c2 v.
  std::pair<double, double> to_lambdas(double c1, double c2) const;
};

/// Throws ConfigError when tau_1 is zero or the vectors are parallel.
PlaneBasis plane_basis(const ParamVector& tau1, const ParamVector& tau2);

/// theta_pre + c1 u + c2 v.
ParamVector plane_point(const ParamVector& pretrained, const PlaneBasis& basis, double c1, double c2);

enum class LandscapeVariant { kGta, kDf };

const char* to_string(LandscapeVariant variant);

struct LandscapeOptions {
  std::size_t resolution = 21;  // cells per axis
  // Plane-coordinate bounds; when lo >= hi they default to cover theta_pre,
  // theta_1 and theta_2 with a 25% margin beyond the farther model.
  double c1_lo = 0.0, c1_hi = 0.0;
  double c2_lo = 0.0, c2_hi = 0.0;
};

struct LandscapeCell {
  double c1 = 0.0;
  double c2 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double accuracy = 0.0;  // average validation accuracy
};

struct LandscapeGrid {
  LandscapeVariant variant = LandscapeVariant::kGta;
  PlaneBasis basis;
  std::vector<double> c1_axis;
  std::vector<double> c2_axis;
  std::vector<LandscapeCell> cells;  // row-major: c1 index outer, c2 index inner

  /// Highest-accuracy cell; ties go to the first in row-major order.
  const LandscapeCell& best_cell() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Evaluates a resolution x resolution grid on the task-vector plane. GTA
/// cells use the plane point directly; DF cells map plane coordinates to
/// per-task coefficients and merge with Fisher weights at those coefficients.
LandscapeGrid landscape(const MergeObjective& objective, LandscapeVariant variant, const LandscapeOptions& options);

// ---------------------------------------------------------------------------
// Ablation and sweeps

struct AblationRow {
  std::string name;
  std::vector<double> lambdas;
  double validation_average = 0.0;
  EvalReport test;
};

struct AblationConfig {
  BOConfig bo;  // dims is overwritten with the number of models
  ObjectiveOptions objective;
};

/// DF-Merge (EI), DF-Merge (UCB), w/o Fisher (GTA + BO with EI), w/o BO
/// (Fisher merging), and Averaging, on shared seeds and data.
std::vector<AblationRow> ablate(const MergeInputs& inputs, std::shared_ptr<const Suite> suite,
                                const AblationConfig& cfg);

std::string ablation_csv(std::span<const AblationRow> rows);

struct SweepRow {
  double value = 0.0;
  std::vector<double> lambdas;
  double validation_best = 0.0;
  double test_average = 0.0;
};

/// Best-so-far after each requested iteration count, read from one run with
/// the largest count (shorter runs are prefixes of it).
std::vector<SweepRow> sweep_iterations(const MergeObjective& objective, const BOConfig& cfg,
                                       std::span<const std::size_t> iterations);

/// One optimization per validation ratio; subsets are nested across ratios.
std::vector<SweepRow> sweep_val_ratio(const MergeInputs& inputs, std::shared_ptr<const Suite> suite,
                                      ObjectiveMethod method, const ObjectiveOptions& base, const BOConfig& cfg,
                                      std::span<const double> ratios);

std::string sweep_csv(const std::string& axis, std::span<const SweepRow> rows);

}  // namespace dfmerge
