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

#pragma once

#include <cstddef>

namespace fallgen::kernels {

// Dense row-major kernels. When `accumulate` is false the output is
// overwritten, otherwise the product is added to it.
//
// Every kernel exists twice: `serial` is the plain reference loop and
// `parallel` splits output rows across OpenMP threads. Each output element
// is reduced in the same order by both, so results are bit-identical.

namespace serial {

/// C[m,n] (+)= A[m,k] B[k,n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
/// C[m,n] (+)= A[m,k] B[n,k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
/// C[m,n] (+)= A[k,m]^T B[k,n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
/// out[n,n] = Euclidean distances between the rows of x[n,d].
void pairwise_distances(const double* x, int n, int d, double* out);
/// cov[d,d] = sample covariance (divisor n-1) of the rows of x[n,d];
/// mean[d] receives the column means.
void covariance(const double* x, int n, int d, double* mean, double* cov);

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void pairwise_distances(const double* x, int n, int d, double* out);
void covariance(const double* x, int n, int d, double* mean, double* cov);

}  // namespace parallel

// Library entry points: the parallel variant once the work is large enough
// to amortize a parallel region, the serial one otherwise.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

void matmul(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate = false);

}  // namespace fallgen::kernels
