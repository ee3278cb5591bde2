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

// Independent reference computations used by the tests. Nothing here calls the
// library's analytic derivatives or log-determinants.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "pie/tensor.hpp"

namespace pie::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Central-difference Jacobian of f: R^n -> R^m at x (m taken from f(x)).
inline Eigen::MatrixXd fd_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                   const std::vector<double>& x, double h = 1e-6) {
  const std::size_t n = x.size();
  const std::size_t m = f(x).size();
  Eigen::MatrixXd J(m, n);
  std::vector<double> xp = x, xm = x;
  for (std::size_t j = 0; j < n; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const auto fp = f(xp);
    const auto fm = f(xm);
    for (std::size_t i = 0; i < m; ++i) J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (fp[i] - fm[i]) / (2 * h);
    xp[j] = xm[j] = x[j];
  }
  return J;
}

inline double log_abs_det(const Eigen::MatrixXd& J) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
  const auto& U = lu.matrixLU();
  double s = 0.0;
  for (Eigen::Index i = 0; i < U.rows(); ++i) s += std::log(std::abs(U(i, i)));
  return s;
}

/// Central-difference derivative of a scalar function of one coordinate.
inline double fd_scalar(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// log N(x | mean, var I) summed over coordinates, written out directly.
inline double gaussian_log_density(const std::vector<double>& x, const std::vector<double>& mean, double var) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    s += -0.5 * std::log(2 * std::numbers::pi * var) - d * d / (2 * var);
  }
  return s;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pie::testing
