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

// Empirical Fisher information of the toy classifiers.
//
// The expectation over labels is taken exactly under the model's own
// predictive distribution; true labels are never used:
//
//   F = (1/N) sum_j sum_y p(y | x_j) grad l_y(x_j) grad l_y(x_j)^T,
//   l_y = -log p(y | x).

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dfmerge/params.hpp"
#include "dfmerge/toymodels.hpp"

namespace dfmerge {

/// Nonnegative per-parameter importance vector.
class FisherDiagonal {
 public:
  FisherDiagonal() = default;
  FisherDiagonal(SegmentLayout layout, std::vector<double> values);

  const SegmentLayout& layout() const { return layout_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  // Mean over one named segment.
  double segment_mean(const std::string& name) const;

  bool operator==(const FisherDiagonal&) const = default;

 private:
  SegmentLayout layout_;
  std::vector<double> values_;
};

/// Dense symmetric positive-semidefinite Fisher matrix.
struct FisherFull {
  Eigen::MatrixXd matrix;

  std::size_t dim() const { return static_cast<std::size_t>(matrix.rows()); }
};

inline constexpr std::size_t kFullFisherCap = 500;
inline constexpr std::size_t kDefaultFisherSamples = 30;

/// Unlabeled inputs, row-major `rows x dim`.
struct InputBatch {
  std::span<const double> features;
  std::size_t dim = 0;

  std::size_t size() const { return dim == 0 ? 0 : features.size() / dim; }
  std::span<const double> row(std::size_t i) const { return features.subspan(i * dim, dim); }
};

FisherDiagonal empirical_fisher_diag(const ParamVector& params, const ClassifierSpec& spec, const InputBatch& inputs);

FisherFull empirical_fisher_full(const ParamVector& params, const ClassifierSpec& spec, const InputBatch& inputs,
                                 std::size_t cap = kFullFisherCap);

/// Diagonal Fisher at pretrained + lambda * tau.
FisherDiagonal fisher_at_scaled(const ParamVector& pretrained, const ParamVector& tau, double lambda,
                                const ClassifierSpec& spec, const InputBatch& inputs);

void save_fisher(const FisherDiagonal& fisher, const std::filesystem::path& path);
FisherDiagonal load_fisher(const std::filesystem::path& path);

}  // namespace dfmerge
