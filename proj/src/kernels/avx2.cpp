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

#if defined(DFMERGE_HAVE_AVX2) && defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>

namespace dfmerge::kernels {
namespace {

void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(out + k, _mm256_sub_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k)));
  }
  for (; k < n; ++k) out[k] = a[k] - b[k];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + k));
    _mm256_storeu_pd(y + k, _mm256_add_pd(_mm256_loadu_pd(y + k), prod));
  }
  for (; k < n; ++k) y[k] = y[k] + alpha * x[k];
}

void add_weighted_square(double w, const double* g, double* acc, std::size_t n) {
  const __m256d vw = _mm256_set1_pd(w);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d vg = _mm256_loadu_pd(g + k);
    const __m256d term = _mm256_mul_pd(vw, _mm256_mul_pd(vg, vg));
    _mm256_storeu_pd(acc + k, _mm256_add_pd(_mm256_loadu_pd(acc + k), term));
  }
  for (; k < n; ++k) acc[k] = acc[k] + w * (g[k] * g[k]);
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d lanes = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    lanes = _mm256_add_pd(lanes, _mm256_mul_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k)));
  }
  alignas(32) double lane[4];
  _mm256_store_pd(lane, lanes);
  double s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (; k < n; ++k) s = s + a[k] * b[k];
  return s;
}

void merge_weighted(const MergeArgs& args) {
  const std::size_t models = args.taus.size();
  const bool identity = args.weights.empty();
  const double m = static_cast<double>(models);
  const __m256d vm = _mm256_set1_pd(m);
  const __m256d veps = _mm256_set1_pd(args.eps);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t k = 0;
  for (; k + 4 <= args.n; k += 4) {
    __m256d total = _mm256_setzero_pd();
    for (std::size_t i = 0; i < models; ++i) {
      total = _mm256_add_pd(total, identity ? one : _mm256_loadu_pd(args.weights[i] + k));
    }
    // max_pd(eps, total) returns total unless total < eps, matching std::max.
    const __m256d floored = _mm256_max_pd(veps, total);
    const __m256d deficit = _mm256_div_pd(_mm256_sub_pd(floored, total), vm);
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t i = 0; i < models; ++i) {
      const __m256d c = identity ? one : _mm256_loadu_pd(args.weights[i] + k);
      const __m256d w = _mm256_div_pd(_mm256_add_pd(c, deficit), floored);
      const __m256d wl = _mm256_mul_pd(w, _mm256_set1_pd(args.lambdas[i]));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(wl, _mm256_loadu_pd(args.taus[i] + k)));
    }
    const __m256d pre = _mm256_loadu_pd(args.pretrained + k);
    _mm256_storeu_pd(args.out + k, _mm256_add_pd(pre, _mm256_mul_pd(vm, acc)));
  }
  for (; k < args.n; ++k) {
    double total = 0.0;
    for (std::size_t i = 0; i < models; ++i) total = total + (identity ? 1.0 : args.weights[i][k]);
    const double floored = std::max(total, args.eps);
    const double deficit = (floored - total) / m;
    double acc = 0.0;
    for (std::size_t i = 0; i < models; ++i) {
      const double c = identity ? 1.0 : args.weights[i][k];
      acc = acc + (((c + deficit) / floored) * args.lambdas[i]) * args.taus[i][k];
    }
    args.out[k] = args.pretrained[k] + m * acc;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2", sub, axpy, add_weighted_square, dot, merge_weighted};
  return __builtin_cpu_supports("avx2") ? &table : nullptr;
}

}  // namespace dfmerge::kernels

#else

namespace dfmerge::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace dfmerge::kernels

#endif
