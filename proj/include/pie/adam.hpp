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

#include <cstdint>
#include <span>
#include <string>

#include "pie/autodiff.hpp"

namespace pie::train {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  ad::Gradients first;   // m, keyed by parameter name
  ad::Gradients second;  // v
};

enum class StepStatus { Applied, RejectedNonFinite };

/// One bias-corrected Adam update:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
/// A non-finite gradient leaves parameters and state untouched.
/// Parameters absent from `grads` are treated as having zero gradient.
StepStatus adam_step(std::span<ad::Parameter* const> params, const ad::Gradients& grads, AdamState& state,
                     const AdamConfig& config);

double global_norm(const ad::Gradients& grads);

/// Rescales all gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
double clip_gradients(ad::Gradients& grads, double max_norm);

}  // namespace pie::train
