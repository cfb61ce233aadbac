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

#include "dfmerge/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "dfmerge/errors.hpp"
#include "dfmerge/kernels.hpp"
#include "dfmerge/rng.hpp"

namespace dfmerge {

void MergeInputs::validate() const {
  if (taus.empty()) throw ConfigError("merging needs at least one task vector");
  for (const ParamVector& tau : taus) require_same_layout(pretrained.layout(), tau.layout(), "merge inputs");
  if (!names.empty() && names.size() != taus.size()) throw ConfigError("merge inputs: one name per task vector");
}

MergeInputs MergeInputs::from_models(const ParamVector& pretrained, std::span<const ParamVector> fine_tuned,
                                     std::vector<std::string> names) {
  MergeInputs inputs{pretrained, {}, std::move(names)};
  for (const ParamVector& theta : fine_tuned) inputs.taus.push_back(task_vector(theta, pretrained));
  inputs.validate();
  return inputs;
}

void check_coefficients(std::span<const double> lambdas, std::size_t models, bool allow_unbounded) {
  if (lambdas.size() != models) {
    throw ConfigError("expected " + std::to_string(models) + " coefficients, got " + std::to_string(lambdas.size()));
  }
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!std::isfinite(lambdas[i])) throw ConfigError("coefficient " + std::to_string(i) + " is not finite");
    if (!allow_unbounded && (lambdas[i] < 0.0 || lambdas[i] > 1.0)) {
      throw ConfigError("coefficient " + std::to_string(i) + " = " + std::to_string(lambdas[i]) +
                        " outside [0, 1]; pass the unbounded override to allow it");
    }
  }
}

ParamVector unified_merge(const MergeInputs& inputs, std::span<const double> lambdas,
                          const ImportanceWeights& weights, double eps) {
  inputs.validate();
  check_coefficients(lambdas, inputs.num_models(), /*allow_unbounded=*/true);

  std::vector<const double*> tau_ptrs;
  for (const ParamVector& tau : inputs.taus) tau_ptrs.push_back(tau.values().data());
  std::vector<const double*> weight_ptrs;
  if (const auto* diag = std::get_if<DiagonalWeights>(&weights)) {
    if (diag->diagonals.size() != inputs.num_models()) {
      throw ConfigError("expected one Fisher diagonal per model (" + std::to_string(inputs.num_models()) + "), got " +
                        std::to_string(diag->diagonals.size()));
    }
    for (const FisherDiagonal& f : diag->diagonals) {
      require_same_layout(inputs.pretrained.layout(), f.layout(), "importance weights");
      weight_ptrs.push_back(f.values().data());
    }
  }

  std::vector<double> out(inputs.pretrained.size());
  kernels::MergeArgs args;
  args.pretrained = inputs.pretrained.values().data();
  args.taus = tau_ptrs;
  args.weights = weight_ptrs;
  args.lambdas = lambdas;
  args.eps = eps;
  args.out = out.data();
  args.n = out.size();
  kernels::active().merge_weighted(args);
  return ParamVector(inputs.pretrained.layout(), std::move(out));
}

ParamVector merge_averaging(const MergeInputs& inputs) {
  inputs.validate();
  const std::vector<double> lambdas(inputs.num_models(), 1.0 / static_cast<double>(inputs.num_models()));
  return unified_merge(inputs, lambdas, IdentityWeights{});
}

ParamVector merge_task_arithmetic(const MergeInputs& inputs, double lambda) {
  inputs.validate();
  const std::vector<double> lambdas(inputs.num_models(), lambda);
  return unified_merge(inputs, lambdas, IdentityWeights{});
}

ParamVector merge_gta(const MergeInputs& inputs, std::span<const double> lambdas) {
  return unified_merge(inputs, lambdas, IdentityWeights{});
}

ParamVector merge_fisher(const MergeInputs& inputs, std::span<const FisherDiagonal> fishers) {
  inputs.validate();
  const std::vector<double> lambdas(inputs.num_models(), 1.0 / static_cast<double>(inputs.num_models()));
  return unified_merge(inputs, lambdas, DiagonalWeights{{fishers.begin(), fishers.end()}});
}

ParamVector merge_fisher_full(const MergeInputs& inputs, std::span<const FisherFull> fishers, std::size_t cap) {
  inputs.validate();
  const std::size_t d = inputs.pretrained.size();
  if (d > cap) throw ConfigError("full-Fisher merge of " + std::to_string(d) + " parameters exceeds cap " + std::to_string(cap));
  if (fishers.size() != inputs.num_models()) throw ConfigError("expected one Fisher matrix per model");
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < fishers.size(); ++i) {
    if (fishers[i].matrix.rows() != n || fishers[i].matrix.cols() != n) throw StructuralError("Fisher matrix has wrong dimension");
    const Eigen::Map<const Eigen::VectorXd> tau(inputs.taus[i].values().data(), n);
    total += fishers[i].matrix;
    rhs += fishers[i].matrix * tau;
  }
  const double trace = total.trace();
  const double ridge = 1e-12 * (trace > 0.0 ? trace / static_cast<double>(d) : 1.0);
  total.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(total);
  if (ldlt.info() != Eigen::Success) throw NumericalError("full-Fisher system could not be factorized");
  const Eigen::VectorXd step = ldlt.solve(rhs);
  std::vector<double> out(d);
  for (std::size_t k = 0; k < d; ++k) out[k] = inputs.pretrained[k] + step[static_cast<Eigen::Index>(k)];
  return ParamVector(inputs.pretrained.layout(), std::move(out));
}

ParamVector merge_df(const MergeInputs& inputs, std::span<const double> lambdas, const FisherProvider& fisher_fn,
                     bool allow_unbounded) {
  inputs.validate();
  check_coefficients(lambdas, inputs.num_models(), allow_unbounded);
  DiagonalWeights weights;
  for (std::size_t i = 0; i < inputs.num_models(); ++i) weights.diagonals.push_back(fisher_fn(i, lambdas[i]));
  return unified_merge(inputs, lambdas, weights);
}

ParamVector ties_trim(const ParamVector& tau, double keep_fraction) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0) throw ConfigError("TIES keep_fraction must lie in (0, 1]");
  const std::size_t d = tau.size();
  const auto keep = std::min(d, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(d) - 1e-9)));
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  const auto values = tau.values();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(values[a]) > std::abs(values[b]); });
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < keep; ++r) out[order[r]] = values[order[r]];
  return ParamVector(tau.layout(), std::move(out));
}

ParamVector ties_elect_disjoint_mean(std::span<const ParamVector> trimmed) {
  if (trimmed.empty()) throw ConfigError("TIES needs at least one task vector");
  const ParamVector& first = trimmed.front();
  for (const ParamVector& t : trimmed) require_same_layout(first.layout(), t.layout(), "TIES");
  std::vector<double> out(first.size(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double signed_sum = 0.0;
    for (const ParamVector& t : trimmed) signed_sum += t[k];
    const bool positive = signed_sum >= 0.0;
    double total = 0.0;
    std::size_t count = 0;
    for (const ParamVector& t : trimmed) {
      const double v = t[k];
      if (v != 0.0 && (v > 0.0) == positive) {
        total += v;
        ++count;
      }
    }
    out[k] = count == 0 ? 0.0 : total / static_cast<double>(count);
  }
  return ParamVector(first.layout(), std::move(out));
}

ParamVector merge_ties(const MergeInputs& inputs, double keep_fraction, double lambda) {
  inputs.validate();
  std::vector<ParamVector> trimmed;
  for (const ParamVector& tau : inputs.taus) trimmed.push_back(ties_trim(tau, keep_fraction));
  const ParamVector merged = ties_elect_disjoint_mean(trimmed);
  const ScaledVector scaled[] = {{lambda, &merged}};
  return axpy_into_pretrained(inputs.pretrained, scaled);
}

ParamVector dare_preprocess(const ParamVector& tau, double drop_rate, std::uint64_t seed) {
  if (!(drop_rate >= 0.0) || !(drop_rate < 1.0)) throw ConfigError("DARE drop rate must lie in [0, 1)");
  if (drop_rate == 0.0) return tau;
  Rng rng(seed);
  const double rescale = 1.0 / (1.0 - drop_rate);
  std::vector<double> out(tau.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = rng.bernoulli(drop_rate) ? 0.0 : tau[k] * rescale;
  return ParamVector(tau.layout(), std::move(out));
}

ParamVector merge_dare(const MergeInputs& inputs, double drop_rate, double lambda, std::uint64_t seed) {
  inputs.validate();
  MergeInputs dropped{inputs.pretrained, {}, inputs.names};
  for (std::size_t i = 0; i < inputs.num_models(); ++i) {
    dropped.taus.push_back(dare_preprocess(inputs.taus[i], drop_rate, derive_seed(seed, "dare/" + std::to_string(i))));
  }
  return merge_task_arithmetic(dropped, lambda);
}

}  // namespace dfmerge
