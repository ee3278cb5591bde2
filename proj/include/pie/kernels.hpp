// Copyright 2026 The PIE Authors. All Rights Reserved.
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

// Dense inner loops. Each kernel exists twice: `serial::` is the plain
// reference loop, `parallel::` distributes the outermost independent loop
// with OpenMP. Every output element is accumulated by exactly one thread in
// the same order as the serial loop, so both variants agree bit for bit.
// The unqualified names in `pie::kernels` dispatch to the parallel variant.

#include <cstddef>
#include <span>

namespace pie::kernels {

// Row-major shapes: a is m x k, b is k x n, c is m x n.

namespace serial {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
/// c (k x n) += a^T b with a m x k, b m x n.
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n);
/// c (m x k) += a b^T with a m x n, b k x n.
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n);
/// out[j] += sum_i x[i, j] for x rows x cols.
void column_sums_acc(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols);
/// out[i] = sum_j x[i, j].
void row_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols);
/// out_r = x_r - 2 (x_r . u) u for every row r; u has unit norm.
void reflect_rows(std::span<const double> x, std::span<const double> unit, std::span<double> out,
                  std::size_t rows, std::size_t cols);
/// Population variance of the valid-mode 4-neighbour Laplacian response of each
/// height x width image in `images` (count images stored back to back).
void laplace_variances(std::span<const double> images, std::span<double> out, std::size_t count,
                       std::size_t height, std::size_t width);
}  // namespace serial

namespace parallel {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n);
void column_sums_acc(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols);
void row_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols);
void reflect_rows(std::span<const double> x, std::span<const double> unit, std::span<double> out,
                  std::size_t rows, std::size_t cols);
void laplace_variances(std::span<const double> images, std::span<double> out, std::size_t count,
                       std::size_t height, std::size_t width);
}  // namespace parallel

using parallel::column_sums_acc;
using parallel::laplace_variances;
using parallel::matmul;
using parallel::matmul_nt_acc;
using parallel::matmul_tn_acc;
using parallel::reflect_rows;
using parallel::row_sums;

/// Loops shorter than this stay on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1 << 14;

/// Applies f(i) for i in [0, n). Iterations must be independent.
template <class F>
void for_each_index(std::size_t n, F&& f) {
  const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) if (n >= kParallelThreshold)
  for (long long i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
}

/// Worker threads available to the parallel kernels.
int max_threads();
/// Overrides the worker count; values < 1 are ignored.
void set_threads(int count);

}  // namespace pie::kernels
