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

// Invertible building blocks.
//
// Layers operate on rank-2 activations whose rows are independent positions
// and whose columns are features. For linear blocks a row is one sample; for
// convolutional blocks the activation is stored channel-last (batch, height,
// width, channels) flattened to rows = batch*height*width, so a row-wise
// network is a stack of 1x1 convolutions and a column split is a channel split.

#include <cstddef>
#include <string>
#include <vector>

#include "pie/autodiff.hpp"
#include "pie/nn.hpp"
#include "pie/tensor.hpp"

namespace pie::flow {

/// Bound on the pre-activation log-scale of coupling layers: s = exp(clamp(raw, -5, 5)).
inline constexpr double kLogScaleBound = 5.0;

struct Layout {
  std::size_t batch = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 0;

  std::size_t rows() const { return batch * height * width; }
  std::size_t sample_size() const { return height * width * channels; }
  bool spatial() const { return height * width > 1; }
  bool operator==(const Layout&) const = default;
};

/// Hidden width of the scale/bias networks: max(2 * partition width, minimum).
std::size_t hidden_width(std::size_t partition_width, std::size_t minimum = 16);

/// Affine coupling on two equal halves of the columns:
///   y1 = s1(x2) * x1 + b1(x2),   y2 = s2(y1) * x2 + b2(y1)
/// with log|det J| = sum log s1 + sum log s2 per row.
class CouplingLayer {
 public:
  struct Output {
    ad::Var y;
    ad::Var log_det;  // shape {rows}
  };

  CouplingLayer() = default;
  /// Throws ShapeError when `width` is odd.
  CouplingLayer(const std::string& name, std::size_t width, Rng& rng, double output_scale,
                std::size_t hidden_min = 16);

  std::size_t width() const { return width_; }

  Output forward(ad::Tape& tape, ad::Var x) const;
  /// Throws SingularityError if a scale is (near) zero.
  ad::Var inverse(ad::Tape& tape, ad::Var y) const;

  Mlp& scale1() { return s1_; }
  Mlp& bias1() { return b1_; }
  Mlp& scale2() { return s2_; }
  Mlp& bias2() { return b2_; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  struct Scale {
    ad::Var scale;
    ad::Var log_scale;
  };
  Scale scale_of(ad::Tape& tape, const Mlp& net, ad::Var conditioner) const;
  void check_width(ad::Var v) const;

  std::size_t width_ = 0;
  Mlp s1_, b1_, s2_, b2_;
};

/// Chain of Householder reflections H_k ... H_1 with H(v) = I - 2 v v^T / v^T v.
/// Orthogonal, so the inverse applies the same reflections in reverse order and log|det| = 0.
class HouseholderTransform {
 public:
  HouseholderTransform() = default;
  /// `count` generators of length `width` drawn from a standard normal.
  HouseholderTransform(const std::string& name, std::size_t width, std::size_t count, Rng& rng);
  /// Explicit generators; throws DomainError for a zero vector.
  HouseholderTransform(const std::string& name, const std::vector<Tensor>& generators);

  std::size_t width() const { return width_; }
  std::size_t count() const { return generators_.size(); }

  ad::Var apply(ad::Tape& tape, ad::Var x, bool inverse) const;
  /// Dense width x width matrix M with y_row = M x_row.
  Tensor matrix() const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  std::size_t width_ = 0;
  std::vector<ad::Parameter> generators_;
};

/// Checkerboard squeeze C x H x W -> 4C x H/2 x W/2. Output channel 4c + k holds the
/// k-th entry of every 2x2 block of input channel c, k in (top-left, top-right,
/// bottom-left, bottom-right). A pure permutation; log|det| = 0.
class DownsampleLayer {
 public:
  static constexpr std::size_t kBlockSize = 2;

  /// Throws ShapeError for odd height or width.
  static Layout output_layout(const Layout& in);
  ad::Var forward(ad::Var x, const Layout& in) const;
  /// `out` is the downsampled layout.
  ad::Var inverse(ad::Var y, const Layout& out) const;
};

/// Channel-first helpers for a single C x H x W tensor.
Tensor downsample(const Tensor& chw);
Tensor upsample(const Tensor& chw);

enum class ResidualMean { Zero, Network };

/// Keeps the first `keep` columns as z and scores the rest, r, under N(g(z), eps^2 I).
/// The inverse re-attaches r = g(z).
class SplitLayer {
 public:
  struct Output {
    ad::Var z;
    ad::Var r;
    ad::Var log_prob;  // shape {rows}
  };

  SplitLayer() = default;
  SplitLayer(const std::string& name, std::size_t width, std::size_t keep, ResidualMean mean, double epsilon_sq,
             Rng& rng, double output_scale, std::size_t hidden_min = 16);

  std::size_t width() const { return width_; }
  std::size_t keep() const { return keep_; }
  std::size_t residual() const { return width_ - keep_; }
  double epsilon_sq() const { return epsilon_sq_; }
  ResidualMean mean_kind() const { return mean_kind_; }

  Output forward(ad::Tape& tape, ad::Var x) const;
  /// [z, g(z)].
  ad::Var inverse(ad::Tape& tape, ad::Var z) const;
  /// [z, r] with an explicit residual; the exact inverse of forward.
  ad::Var inverse(ad::Tape& tape, ad::Var z, ad::Var r) const;
  ad::Var residual_mean(ad::Tape& tape, ad::Var z) const;

  Mlp* mean_network() { return mean_kind_ == ResidualMean::Network ? &g_ : nullptr; }

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;

 private:
  std::size_t width_ = 0;
  std::size_t keep_ = 0;
  ResidualMean mean_kind_ = ResidualMean::Zero;
  double epsilon_sq_ = 1.0;
  Mlp g_;
};

// Tensor-level entry points. Inputs are a single vector {n} or a batch {rows, n};
// per-row quantities come back with shape {rows} (rank 0 for a single vector).

struct CouplingResult {
  Tensor y;
  Tensor log_det;
};
CouplingResult coupling_forward(const CouplingLayer& layer, const Tensor& x);
Tensor coupling_inverse(const CouplingLayer& layer, const Tensor& y);

struct HouseholderResult {
  Tensor y;
  double log_det = 0.0;
};
HouseholderResult householder_apply(const HouseholderTransform& t, const Tensor& x, bool inverse);

struct SplitResult {
  Tensor z;
  Tensor r;
  Tensor log_prob;
};
SplitResult split_forward(const SplitLayer& layer, const Tensor& x);
Tensor split_inverse(const SplitLayer& layer, const Tensor& z);

}  // namespace pie::flow
