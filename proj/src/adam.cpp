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


#include "pie/adam.hpp"

#include <cmath>

#include "pie/errors.hpp"

namespace pie::train {

StepStatus adam_step(std::span<ad::Parameter* const> params, const ad::Gradients& grads, AdamState& state,
                     const AdamConfig& config) {
  for (const auto* p : params) {
    const auto it = grads.find(p->name);
    if (it == grads.end()) continue;
    if (it->second.shape() != p->value.shape()) {
      throw ShapeError("gradient shape mismatch for " + p->name + ": " + shape_string(it->second.shape()) +
                       " vs " + shape_string(p->value.shape()));
    }
    if (!it->second.all_finite()) return StepStatus::RejectedNonFinite;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto* p : params) {
    auto [m_it, m_new] = state.first.try_emplace(p->name, Tensor::zeros(p->value.shape()));
    auto [v_it, v_new] = state.second.try_emplace(p->name, Tensor::zeros(p->value.shape()));
    auto m = m_it->second.data();
    auto v = v_it->second.data();
    auto w = p->value.data();
    const auto g_it = grads.find(p->name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = g_it == grads.end() ? 0.0 : g_it->second[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      w[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
    }
  }
  return StepStatus::Applied;
}

double global_norm(const ad::Gradients& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.data()) ss += x * x;
  }
  return std::sqrt(ss);
}

double clip_gradients(ad::Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads) {
      for (double& x : g.data()) x *= factor;
    }
  }
  return norm;
}

}  // namespace pie::train
