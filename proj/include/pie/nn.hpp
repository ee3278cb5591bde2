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

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "pie/autodiff.hpp"

namespace pie {

/// The single random engine used everywhere; all randomness derives from one seed.
using Rng = std::mt19937_64;

/// Fully connected tanh network. Widths {in, h1, ..., out}; no activation on the output.
/// Applied row-wise, so on channel-last image rows it acts as a stack of 1x1 convolutions.
class Mlp {
 public:
  Mlp() = default;
  /// Weights ~ N(0, 1/fan_in); the output layer is further scaled by `output_scale`. Biases start at 0.
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng, double output_scale);

  ad::Var forward(ad::Tape& tape, ad::Var x) const;

  std::size_t input_width() const;
  std::size_t output_width() const;

  /// Zero every weight and set the output bias to `value`, so the net is constant.
  void make_constant(double value);

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  std::vector<ad::Parameter> weights_;
  std::vector<ad::Parameter> biases_;
};

}  // namespace pie
