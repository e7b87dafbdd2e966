// Copyright 2026 The fallgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fallgen/kernels.hpp"

#include <cmath>

namespace fallgen::kernels {
namespace {

inline void mm_row(const double* a, const double* b, double* c, int i, int k, int n, bool accumulate) {
  double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
  if (!accumulate)
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
  const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
  for (int p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + static_cast<std::ptrdiff_t>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void mm_nt_row(const double* a, const double* b, double* c, int i, int k, int n, bool accumulate) {
  double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
  const double* ai = a + static_cast<std::ptrdiff_t>(i) * k;
  for (int j = 0; j < n; ++j) {
    const double* bj = b + static_cast<std::ptrdiff_t>(j) * k;
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] = accumulate ? ci[j] + acc : acc;
  }
}

inline void mm_tn_row(const double* a, const double* b, double* c, int i, int m, int k, int n, bool accumulate) {
  double* ci = c + static_cast<std::ptrdiff_t>(i) * n;
  if (!accumulate)
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
  for (int p = 0; p < k; ++p) {
    const double api = a[static_cast<std::ptrdiff_t>(p) * m + i];
    const double* bp = b + static_cast<std::ptrdiff_t>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
  }
}

inline void dist_row(const double* x, int n, int d, double* out, int i) {
  const double* xi = x + static_cast<std::ptrdiff_t>(i) * d;
  for (int j = 0; j < n; ++j) {
    const double* xj = x + static_cast<std::ptrdiff_t>(j) * d;
    double acc = 0.0;
    for (int p = 0; p < d; ++p) {
      const double t = xi[p] - xj[p];
      acc += t * t;
    }
    out[static_cast<std::ptrdiff_t>(i) * n + j] = std::sqrt(acc);
  }
}

inline void column_mean(const double* x, int n, int d, double* mean, int p) {
  double acc = 0.0;
  for (int r = 0; r < n; ++r) acc += x[static_cast<std::ptrdiff_t>(r) * d + p];
  mean[p] = acc / n;
}

inline void cov_row(const double* x, int n, int d, const double* mean, double* cov, int p) {
  for (int q = 0; q < d; ++q) {
    double acc = 0.0;
    for (int r = 0; r < n; ++r) {
      const double* xr = x + static_cast<std::ptrdiff_t>(r) * d;
      acc += (xr[p] - mean[p]) * (xr[q] - mean[q]);
    }
    cov[static_cast<std::ptrdiff_t>(p) * d + q] = acc / (n - 1);
  }
}

}  // namespace

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) mm_row(a, b, c, i, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) mm_nt_row(a, b, c, i, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) mm_tn_row(a, b, c, i, m, k, n, accumulate);
}

void pairwise_distances(const double* x, int n, int d, double* out) {
  for (int i = 0; i < n; ++i) dist_row(x, n, d, out, i);
}

void covariance(const double* x, int n, int d, double* mean, double* cov) {
  for (int p = 0; p < d; ++p) column_mean(x, n, d, mean, p);
  for (int p = 0; p < d; ++p) cov_row(x, n, d, mean, cov, p);
}

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) mm_row(a, b, c, i, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) mm_nt_row(a, b, c, i, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) mm_tn_row(a, b, c, i, m, k, n, accumulate);
}

void pairwise_distances(const double* x, int n, int d, double* out) {
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < n; ++i) dist_row(x, n, d, out, i);
}

void covariance(const double* x, int n, int d, double* mean, double* cov) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < d; ++p) column_mean(x, n, d, mean, p);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < d; ++p) cov_row(x, n, d, mean, cov, p);
}

}  // namespace parallel

namespace {
bool big(int m, int k, int n) {
  return static_cast<std::size_t>(m) * static_cast<std::size_t>(k) * static_cast<std::size_t>(n) >= kParallelThreshold;
}
}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  big(m, k, n) ? parallel::matmul(a, b, c, m, k, n, accumulate) : serial::matmul(a, b, c, m, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  big(m, k, n) ? parallel::matmul_nt(a, b, c, m, k, n, accumulate) : serial::matmul_nt(a, b, c, m, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
  big(m, k, n) ? parallel::matmul_tn(a, b, c, m, k, n, accumulate) : serial::matmul_tn(a, b, c, m, k, n, accumulate);
}

}  // namespace fallgen::kernels
