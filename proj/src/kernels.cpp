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

#include "pie/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace pie::kernels {

namespace {

using Index = long long;

// Shared loop bodies. The serial and parallel variants call the same body
// per outer index so their arithmetic is identical.

inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                       std::size_t n) {
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t p, std::size_t m,
                          std::size_t k, std::size_t n) {
  double* cp = c + p * n;
  for (std::size_t i = 0; i < m; ++i) {
    const double aip = a[i * k + p];
    if (aip == 0.0) continue;
    const double* bi = b + i * n;
    for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                          std::size_t n) {
  const double* ai = a + i * n;
  double* ci = c + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
    ci[p] += acc;
  }
}

inline void column_sum_block(const double* x, double* out, std::size_t j0, std::size_t j1, std::size_t rows,
                             std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * cols;
    for (std::size_t j = j0; j < j1; ++j) out[j] += xi[j];
  }
}

inline double row_sum(const double* x, std::size_t i, std::size_t cols) {
  const double* xi = x + i * cols;
  double acc = 0.0;
  for (std::size_t j = 0; j < cols; ++j) acc += xi[j];
  return acc;
}

inline void reflect_row(const double* x, const double* u, double* out, std::size_t r, std::size_t cols) {
  const double* xr = x + r * cols;
  double* yr = out + r * cols;
  double dot = 0.0;
  for (std::size_t j = 0; j < cols; ++j) dot += xr[j] * u[j];
  const double scale = 2.0 * dot;
  for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] - scale * u[j];
}

inline double laplace_variance(const double* img, std::size_t height, std::size_t width) {
  const std::size_t oh = height - 2;
  const std::size_t ow = width - 2;
  const double count = static_cast<double>(oh * ow);
  double sum = 0.0;
  for (std::size_t i = 1; i + 1 < height; ++i) {
    for (std::size_t j = 1; j + 1 < width; ++j) {
      const double* c = img + i * width + j;
      sum += c[-static_cast<std::ptrdiff_t>(width)] + c[width] + c[-1] + c[1] - 4.0 * c[0];
    }
  }
  const double mean = sum / count;
  double ss = 0.0;
  for (std::size_t i = 1; i + 1 < height; ++i) {
    for (std::size_t j = 1; j + 1 < width; ++j) {
      const double* c = img + i * width + j;
      const double r = c[-static_cast<std::ptrdiff_t>(width)] + c[width] + c[-1] + c[1] - 4.0 * c[0] - mean;
      ss += r * r;
    }
  }
  return ss / count;
}

constexpr std::size_t kColumnBlock = 64;

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data(), b.data(), c.data(), i, k, n);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) matmul_tn_row(a.data(), b.data(), c.data(), p, m, k, n);
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a.data(), b.data(), c.data(), i, k, n);
}

void column_sums_acc(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t j0 = 0; j0 < cols; j0 += kColumnBlock) {
    column_sum_block(x.data(), out.data(), j0, std::min(cols, j0 + kColumnBlock), rows, cols);
  }
}

void row_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) out[i] = row_sum(x.data(), i, cols);
}

void reflect_rows(std::span<const double> x, std::span<const double> unit, std::span<double> out,
                  std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) reflect_row(x.data(), unit.data(), out.data(), r, cols);
}

void laplace_variances(std::span<const double> images, std::span<double> out, std::size_t count,
                       std::size_t height, std::size_t width) {
  for (std::size_t i = 0; i < count; ++i) out[i] = laplace_variance(images.data() + i * height * width, height, width);
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const bool go = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n) {
  const bool go = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go)
  for (Index p = 0; p < static_cast<Index>(k); ++p) {
    matmul_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(p), m, k, n);
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n) {
  const bool go = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    matmul_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, n);
  }
}

void column_sums_acc(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  const Index blocks = static_cast<Index>((cols + kColumnBlock - 1) / kColumnBlock);
  const bool go = rows * cols >= kParallelThreshold && blocks > 1;
#pragma omp parallel for schedule(static) if (go)
  for (Index b = 0; b < blocks; ++b) {
    const std::size_t j0 = static_cast<std::size_t>(b) * kColumnBlock;
    column_sum_block(x.data(), out.data(), j0, std::min(cols, j0 + kColumnBlock), rows, cols);
  }
}

void row_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  const bool go = rows * cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go)
  for (Index i = 0; i < static_cast<Index>(rows); ++i) {
    out[static_cast<std::size_t>(i)] = row_sum(x.data(), static_cast<std::size_t>(i), cols);
  }
}

void reflect_rows(std::span<const double> x, std::span<const double> unit, std::span<double> out,
                  std::size_t rows, std::size_t cols) {
  const bool go = rows * cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    reflect_row(x.data(), unit.data(), out.data(), static_cast<std::size_t>(r), cols);
  }
}

void laplace_variances(std::span<const double> images, std::span<double> out, std::size_t count,
                       std::size_t height, std::size_t width) {
  const bool go = count > 1;
#pragma omp parallel for schedule(static) if (go)
  for (Index i = 0; i < static_cast<Index>(count); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out[idx] = laplace_variance(images.data() + idx * height * width, height, width);
  }
}

}  // namespace parallel

int max_threads() { return omp_get_max_threads(); }

void set_threads(int count) {
  if (count >= 1) omp_set_num_threads(count);
}

}  // namespace pie::kernels
