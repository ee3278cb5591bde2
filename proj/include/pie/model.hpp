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

// Pseudo-invertible encoder: a stack of blocks, each a bijection followed by
// a split that keeps z and scores the discarded residual r under
// N(g(z), eps^2 I). Encoding maps x -> (z, r_1..r_L); decoding re-attaches
// r_l = g_l(z_l) block by block and runs every bijection backwards.
//
// The per-sample objective is
//   log p(x) ~= log N(z | 0, I) + sum_l log N(r_l | g_l(z_l), eps^2 I) + sum log|det J|.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pie/autodiff.hpp"
#include "pie/flow_layers.hpp"
#include "pie/nn.hpp"
#include "pie/tensor.hpp"

namespace pie::model {

enum class BlockKind { Convolutional, Linear };

struct BlockSpec {
  BlockKind kind = BlockKind::Linear;
  /// Channels (convolutional) or features (linear) kept by the split; 0 = no split.
  std::size_t keep = 0;
};

struct ModelConfig {
  /// {C, H, W} for images or {D} for flat data.
  Shape input_shape;
  std::vector<BlockSpec> blocks;
  std::size_t k_repeats = 3;
  std::size_t householder_count = 3;
  std::size_t hidden_min = 16;
  flow::ResidualMean residual_mean = flow::ResidualMean::Zero;
  double epsilon_sq = 0.01;
  /// Scale of the output layer of every coupling / g network at initialisation.
  double init_scale = 0.01;

  /// Two convolutional blocks halving the channels, linear blocks to 64 and 10, then a non-splitting block.
  static ModelConfig mnist(double epsilon_sq);
};

/// [downsample] -> mixing -> K x (coupling -> mixing) -> [split].
class PieBlock {
 public:
  struct Output {
    ad::Var z;
    flow::Layout layout;
    ad::Var residual;           // invalid when the block has no split
    ad::Var log_det;            // {batch}
    ad::Var residual_log_prob;  // {batch}; invalid without split
  };

  PieBlock(const std::string& name, BlockKind kind, const flow::Layout& input, std::size_t keep,
           const ModelConfig& config, Rng& rng);

  BlockKind kind() const { return kind_; }
  bool has_split() const { return split_.has_value(); }
  /// Per-sample layouts (batch = 1).
  const flow::Layout& input_layout() const { return input_; }
  const flow::Layout& output_layout() const { return output_; }
  /// Layout right before the split.
  const flow::Layout& inner_layout() const { return inner_; }

  Output forward(ad::Tape& tape, ad::Var x, std::size_t batch) const;
  /// Exact inverse when `residual` is given, otherwise extends with r = g(z).
  ad::Var inverse(ad::Tape& tape, ad::Var z, std::size_t batch, std::optional<ad::Var> residual) const;

  const std::vector<flow::CouplingLayer>& couplings() const { return couplings_; }
  std::vector<flow::CouplingLayer>& couplings() { return couplings_; }
  const std::vector<flow::HouseholderTransform>& mixings() const { return mixings_; }
  std::vector<flow::HouseholderTransform>& mixings() { return mixings_; }
  const std::optional<flow::SplitLayer>& split() const { return split_; }
  std::optional<flow::SplitLayer>& split() { return split_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  std::string name_;
  BlockKind kind_;
  flow::Layout input_, inner_, output_;
  bool downsample_ = false;
  std::vector<flow::HouseholderTransform> mixings_;  // K + 1, the first precedes every coupling
  std::vector<flow::CouplingLayer> couplings_;
  std::optional<flow::SplitLayer> split_;
};

struct Encoding {
  Tensor z;                        // {N, d}
  std::vector<Tensor> residuals;   // residuals[l] is {N, D_l - D_{l+1}}
  Tensor log_det;                  // {N}
  Tensor residual_log_prob;        // {N}
  Tensor prior_log_prob;           // {N}
  Tensor log_likelihood;           // {N}
};

class PieModel {
 public:
  struct Trace {
    ad::Var z;
    std::vector<ad::Var> residuals;
    ad::Var log_det;
    ad::Var residual_log_prob;
    ad::Var prior_log_prob;
    ad::Var log_likelihood;  // {N}
  };

  /// Validates the block sequence and the strictly decreasing dimension chain.
  PieModel(ModelConfig config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::size_t input_dim() const;
  std::size_t latent_dim() const;
  /// D, then the dimension after every split.
  std::vector<std::size_t> dimension_chain() const;

  /// Differentiable evaluation of a batch {N, input_shape...} (or one sample of input_shape).
  Trace trace(ad::Tape& tape, const Tensor& x) const;

  Encoding encode(const Tensor& x) const;
  /// z is {d} or {N, d}; the result has the input's sample shape (batched if z is).
  Tensor decode(const Tensor& z) const;
  /// Exact inverse of the full bijection given every residual from `encode`.
  Tensor invert(const Tensor& z, const std::vector<Tensor>& residuals) const;
  /// Per-sample log-likelihood {N}.
  Tensor log_likelihood(const Tensor& x) const;
  /// Full-dimensional bijection x -> [z, r_1, ..., r_L] per sample, {N, D}.
  Tensor bijection(const Tensor& x) const;

  std::vector<PieBlock>& blocks() { return blocks_; }
  const std::vector<PieBlock>& blocks() const { return blocks_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

  /// Number of samples in x: 1 for a single input-shaped sample, N for {N, input_shape...}.
  /// Throws ShapeError if x fits neither form.
  std::size_t batch_size(const Tensor& x) const;

 private:
  ad::Var to_rows(ad::Tape& tape, const Tensor& x, std::size_t batch) const;
  Tensor from_rows(const Tensor& rows, std::size_t batch, bool batched) const;
  Tensor run_inverse(const Tensor& z, const std::vector<Tensor>* residuals) const;

  ModelConfig config_;
  std::vector<PieBlock> blocks_;
};

/// The same flow read as a multi-scale normalizing flow: every factored-out
/// variable and the final code are scored jointly under N(0, I), plus log|det J|.
/// Coincides with the PIE objective when g = 0 and eps^2 = 1.
Tensor multiscale_flow_log_likelihood(const PieModel& model, const Tensor& x);

/// `count` decodes of z ~ N(0, prior_std^2 I); each sample has the input shape.
std::vector<Tensor> sample(const PieModel& model, std::size_t count, double prior_std, Rng& rng);

/// Decodes (1 - t) z_a + t z_b for `steps` evenly spaced t in [0, 1].
std::vector<Tensor> interpolate(const PieModel& model, const Tensor& xa, const Tensor& xb, std::size_t steps);

}  // namespace pie::model
