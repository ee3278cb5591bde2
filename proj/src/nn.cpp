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

#include "pie/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pie/errors.hpp"

namespace pie {

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& widths, Rng& rng, double output_scale) {
  if (widths.size() < 2) throw ConfigError("Mlp '" + name + "' needs at least input and output widths");
  const std::size_t layers = widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    if (l + 1 == layers) stddev *= output_scale;
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor w(Shape{in, out});
    for (double& v : w.data()) v = stddev * normal(rng);
    weights_.push_back({name + ".w" + std::to_string(l), std::move(w)});
    biases_.push_back({name + ".b" + std::to_string(l), Tensor(Shape{out}, 0.0)});
  }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const {
  ad::Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::affine(h, tape.parameter(weights_[l]), tape.parameter(biases_[l]));
    if (l + 1 < weights_.size()) h = ad::tanh(h);
  }
  return h;
}

std::size_t Mlp::input_width() const { return weights_.front().value.dim(0); }
std::size_t Mlp::output_width() const { return weights_.back().value.dim(1); }

void Mlp::make_constant(double value) {
  for (auto& w : weights_) std::fill(w.value.data().begin(), w.value.data().end(), 0.0);
  for (auto& b : biases_) std::fill(b.value.data().begin(), b.value.data().end(), 0.0);
  auto& out = biases_.back().value;
  std::fill(out.data().begin(), out.data().end(), value);
}

std::vector<ad::Parameter*> Mlp::parameters() {
  std::vector<ad::Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const ad::Parameter*> Mlp::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

}  // namespace pie
