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


// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <vector>

#include "pie/kernels.hpp"

namespace k = pie::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <auto Kernel>
void BM_matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t kk = 392, n = 392;
  const auto a = filled(m * kk, 1), b = filled(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m * kk * n));
}

template <auto Kernel>
void BM_matmul_tn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t kk = 392, n = 392;
  const auto a = filled(m * kk, 3), b = filled(m * n, 4);
  std::vector<double> c(kk * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
}

template <auto Kernel>
void BM_reflect(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 784;
  const auto x = filled(rows * cols, 5);
  auto u = filled(cols, 6);
  double norm = 0.0;
  for (double v : u) norm += v * v;
  for (double& v : u) v /= std::sqrt(norm);
  std::vector<double> out(rows * cols);
  for (auto _ : state) {
    Kernel(x, u, out, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void BM_laplace(benchmark::State& state) {
  const auto count = static_cast<std::size_t>(state.range(0));
  const auto images = filled(count * 28 * 28, 7);
  std::vector<double> out(count);
  for (auto _ : state) {
    Kernel(images, out, count, 28, 28);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_matmul<k::parallel::matmul>)->Name("matmul/parallel")->Arg(32)->Arg(256)->UseRealTime();
BENCHMARK(BM_matmul_tn<k::serial::matmul_tn_acc>)->Name("matmul_tn/serial")->Arg(32)->Arg(256);
BENCHMARK(BM_matmul_tn<k::parallel::matmul_tn_acc>)->Name("matmul_tn/parallel")->Arg(32)->Arg(256)->UseRealTime();
BENCHMARK(BM_reflect<k::serial::reflect_rows>)->Name("reflect/serial")->Arg(256)->Arg(2048);
BENCHMARK(BM_reflect<k::parallel::reflect_rows>)->Name("reflect/parallel")->Arg(256)->Arg(2048)->UseRealTime();
BENCHMARK(BM_laplace<k::serial::laplace_variances>)->Name("laplace/serial")->Arg(2000);
BENCHMARK(BM_laplace<k::parallel::laplace_variances>)->Name("laplace/parallel")->Arg(2000)->UseRealTime();

BENCHMARK_MAIN();
