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

// Data-parallel inner loops over flat f64 parameter arrays.
//
// Every kernel has a portable scalar reference and, where the CPU allows, a
// SIMD variant selected once at startup. The reference kernels accumulate
// reductions in four interleaved lanes and combine them as (l0+l1)+(l2+l3), so
// the 4-wide AVX2 variant performs the exact same sequence of IEEE operations.
// Neither variant contracts multiply-add into FMA. Results are therefore
// bit-identical across dispatch targets, which keeps runs reproducible on
// machines with different instruction sets.

#include <cstddef>
#include <span>
#include <string_view>

namespace dfmerge::kernels {

/// Per-coordinate inputs to the importance-weighted merge.
///
/// `taus[i]` and `weights[i]` point at arrays of length `n`. When `weights` is
/// empty every model gets unit weight (the identity covariance case).
struct MergeArgs {
  const double* pretrained = nullptr;
  std::span<const double* const> taus;
  std::span<const double* const> weights;
  std::span<const double> lambdas;
  double eps = 1e-8;
  double* out = nullptr;
  std::size_t n = 0;
};

struct KernelTable {
  std::string_view name;

  // out = a - b
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // acc += w * (g * g)
  void (*add_weighted_square)(double w, const double* g, double* acc, std::size_t n);
  // Four-lane dot product.
  double (*dot)(const double* a, const double* b, std::size_t n);
  // out = pre + M * sum_i ((C_i + d) / S_eff * lambda_i) * tau_i
  // with S = sum_i C_i, S_eff = max(S, eps), d = (S_eff - S) / M.
  void (*merge_weighted)(const MergeArgs& args);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

/// The table every library routine uses. Chosen on first call: AVX2 when the
/// CPU supports it, else scalar. The DFMERGE_KERNELS environment variable
/// ("scalar" or "avx2") overrides the choice.
const KernelTable& active();

/// Force a specific table for the rest of the process. Returns false when the
/// requested variant is unavailable.
bool select(std::string_view name);

}  // namespace dfmerge::kernels
