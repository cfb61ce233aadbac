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

// Model merging through one importance-weighted combination rule:
//
//   theta* = theta_pre + (sum_i C_i)^-1 (M sum_i C_i lambda_i tau_i)
//
// With C_i = I and lambda_i = 1/M this is plain averaging; C_i = I with free
// lambda is generalized task arithmetic; C_i = diag(F_i) with lambda_i = 1/M is
// Fisher merging; C_i = diag(F at theta_pre + lambda_i tau_i) with free lambda
// is DF-Merge.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dfmerge/fisher.hpp"
#include "dfmerge/params.hpp"

namespace dfmerge {

/// Per-coordinate floor on sum_i C_i. Below it the shortfall is spread evenly
/// over the models, so coordinates no model weights fall back to the
/// unweighted scaled sum.
inline constexpr double kMergeEps = 1e-8;

struct MergeInputs {
  ParamVector pretrained;
  std::vector<ParamVector> taus;
  std::vector<std::string> names;

  std::size_t num_models() const { return taus.size(); }

  /// Throws unless M >= 1, every layout matches, and names (if given) line up.
  void validate() const;

  /// Builds task vectors from fine-tuned checkpoints.
  static MergeInputs from_models(const ParamVector& pretrained, std::span<const ParamVector> fine_tuned,
                                 std::vector<std::string> names = {});
};

struct IdentityWeights {};

struct DiagonalWeights {
  std::vector<FisherDiagonal> diagonals;  // one per model
};

using ImportanceWeights = std::variant<IdentityWeights, DiagonalWeights>;

/// Throws ConfigError unless there is one finite coefficient per model and,
/// unless `allow_unbounded`, each lies in [0, 1].
void check_coefficients(std::span<const double> lambdas, std::size_t models, bool allow_unbounded);

ParamVector unified_merge(const MergeInputs& inputs, std::span<const double> lambdas,
                          const ImportanceWeights& weights, double eps = kMergeEps);

ParamVector merge_averaging(const MergeInputs& inputs);

/// theta_pre + lambda * sum_i tau_i.
ParamVector merge_task_arithmetic(const MergeInputs& inputs, double lambda);

/// theta_pre + sum_i lambda_i tau_i.
ParamVector merge_gta(const MergeInputs& inputs, std::span<const double> lambdas);

ParamVector merge_fisher(const MergeInputs& inputs, std::span<const FisherDiagonal> fishers);

/// (sum F_i + eps I)^-1 (sum F_i theta_i) computed in task-vector form with
/// eps = 1e-12 * trace(sum F_i) / d. Solved with a symmetric LDL^T factorization.
ParamVector merge_fisher_full(const MergeInputs& inputs, std::span<const FisherFull> fishers,
                              std::size_t cap = kFullFisherCap);

/// Diagonal Fisher of model `index` evaluated at theta_pre + lambda * tau_index.
using FisherProvider = std::function<FisherDiagonal(std::size_t index, double lambda)>;

ParamVector merge_df(const MergeInputs& inputs, std::span<const double> lambdas, const FisherProvider& fisher_fn,
                     bool allow_unbounded = false);

/// Zero all but the ceil(keep_fraction * d) largest-magnitude entries.
/// Equal magnitudes at the cut keep the lower index.
ParamVector ties_trim(const ParamVector& tau, double keep_fraction);

/// Sign election and disjoint mean over already-trimmed task vectors. A
/// coordinate whose signed sum is zero elects the positive sign.
ParamVector ties_elect_disjoint_mean(std::span<const ParamVector> trimmed);

/// theta_pre + lambda * disjoint_mean(elect(trim(tau_i))).
ParamVector merge_ties(const MergeInputs& inputs, double keep_fraction, double lambda);

/// Drop each entry with probability drop_rate and rescale survivors by 1/(1-p).
ParamVector dare_preprocess(const ParamVector& tau, double drop_rate, std::uint64_t seed);

/// Task arithmetic over DARE-processed task vectors; model i uses a seed derived from `seed`.
ParamVector merge_dare(const MergeInputs& inputs, double drop_rate, double lambda, std::uint64_t seed);

}  // namespace dfmerge
