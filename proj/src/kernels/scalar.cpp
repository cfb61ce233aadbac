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

#include "dfmerge/kernels.hpp"

#include <algorithm>

namespace dfmerge::kernels {
namespace {

void sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] - b[k];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] = y[k] + alpha * x[k];
}

void add_weighted_square(double w, const double* g, double* acc, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) acc[k] = acc[k] + w * (g[k] * g[k]);
}

double dot(const double* a, const double* b, std::size_t n) {
  double lane[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    for (std::size_t l = 0; l < 4; ++l) lane[l] = lane[l] + a[k + l] * b[k + l];
  }
  double s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (; k < n; ++k) s = s + a[k] * b[k];
  return s;
}

void merge_weighted(const MergeArgs& args) {
  const std::size_t models = args.taus.size();
  const bool identity = args.weights.empty();
  const double m = static_cast<double>(models);
  for (std::size_t k = 0; k < args.n; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < models; ++i) total = total + (identity ? 1.0 : args.weights[i][k]);
    const double floored = std::max(total, args.eps);
    const double deficit = (floored - total) / m;
    double acc = 0.0;
    for (std::size_t i = 0; i < models; ++i) {
      const double c = identity ? 1.0 : args.weights[i][k];
      const double w = (c + deficit) / floored;
      acc = acc + (w * args.lambdas[i]) * args.taus[i][k];
    }
    args.out[k] = args.pretrained[k] + m * acc;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", sub, axpy, add_weighted_square, dot, merge_weighted};
  return table;
}

}  // namespace dfmerge::kernels
