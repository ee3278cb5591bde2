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

#include "pie/flow_layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pie/errors.hpp"

namespace pie::flow {

namespace {

constexpr double kMinScale = 1e-12;

template <class T>
void append(std::vector<T>& out, std::vector<T> more) {
  out.insert(out.end(), more.begin(), more.end());
}

// Lifts a {n} vector to a {1, n} batch; batches pass through unchanged.
Tensor as_batch(const Tensor& x, const char* op) {
  if (x.rank() == 1) return x.reshaped(Shape{1, x.dim(0)});
  if (x.rank() == 2) return x;
  throw ShapeError(std::string(op) + ": expected {n} or {rows, n}, got " + shape_string(x.shape()));
}

Tensor restore(const Tensor& out, const Tensor& like) {
  return like.rank() == 1 ? out.reshaped(Shape{out.size()}) : out;
}

Tensor restore_rows(const Tensor& per_row, const Tensor& like) {
  return like.rank() == 1 ? Tensor::scalar(per_row[0]) : per_row;
}

}  // namespace

std::size_t hidden_width(std::size_t partition_width, std::size_t minimum) {
  return std::max(2 * partition_width, minimum);
}

// ---------------------------------------------------------------------------
// Coupling

CouplingLayer::CouplingLayer(const std::string& name, std::size_t width, Rng& rng, double output_scale,
                             std::size_t hidden_min)
    : width_(width) {
  if (width < 2 || width % 2 != 0) {
    throw ShapeError("coupling '" + name + "' needs an even width, got " + std::to_string(width));
  }
  const std::size_t half = width / 2;
  const std::size_t hidden = hidden_width(half, hidden_min);
  const std::vector<std::size_t> widths{half, hidden, hidden, half};
  s1_ = Mlp(name + ".s1", widths, rng, output_scale);
  b1_ = Mlp(name + ".b1", widths, rng, output_scale);
  s2_ = Mlp(name + ".s2", widths, rng, output_scale);
  b2_ = Mlp(name + ".b2", widths, rng, output_scale);
}

void CouplingLayer::check_width(ad::Var v) const {
  const Tensor& t = v.value();
  if (t.rank() != 2 || t.dim(1) != width_) {
    throw ShapeError("coupling of width " + std::to_string(width_) + " applied to " + shape_string(t.shape()));
  }
}

CouplingLayer::Scale CouplingLayer::scale_of(ad::Tape& tape, const Mlp& net, ad::Var conditioner) const {
  ad::Var raw = net.forward(tape, conditioner);
  raw.value().check_finite("coupling scale network output");
  ad::Var log_scale = ad::clamp(raw, -kLogScaleBound, kLogScaleBound);
  return {ad::exp(log_scale), log_scale};
}

CouplingLayer::Output CouplingLayer::forward(ad::Tape& tape, ad::Var x) const {
  check_width(x);
  const std::size_t half = width_ / 2;
  ad::Var x1 = ad::slice_cols(x, 0, half);
  ad::Var x2 = ad::slice_cols(x, half, width_);

  const Scale sc1 = scale_of(tape, s1_, x2);
  ad::Var y1 = sc1.scale * x1 + b1_.forward(tape, x2);
  const Scale sc2 = scale_of(tape, s2_, y1);
  ad::Var y2 = sc2.scale * x2 + b2_.forward(tape, y1);

  ad::Var log_det = ad::row_sum(sc1.log_scale) + ad::row_sum(sc2.log_scale);
  return {ad::concat_cols(y1, y2), log_det};
}

ad::Var CouplingLayer::inverse(ad::Tape& tape, ad::Var y) const {
  check_width(y);
  const std::size_t half = width_ / 2;
  ad::Var y1 = ad::slice_cols(y, 0, half);
  ad::Var y2 = ad::slice_cols(y, half, width_);

  auto checked = [](const Scale& s) {
    for (double v : s.scale.value().data()) {
      if (!(std::abs(v) > kMinScale)) throw SingularityError("coupling inverse: scale is (near) zero");
    }
    return s.scale;
  };
  ad::Var x2 = (y2 - b2_.forward(tape, y1)) / checked(scale_of(tape, s2_, y1));
  ad::Var x1 = (y1 - b1_.forward(tape, x2)) / checked(scale_of(tape, s1_, x2));
  return ad::concat_cols(x1, x2);
}

std::vector<ad::Parameter*> CouplingLayer::parameters() {
  std::vector<ad::Parameter*> out;
  for (Mlp* net : {&s1_, &b1_, &s2_, &b2_}) append(out, net->parameters());
  return out;
}

std::vector<const ad::Parameter*> CouplingLayer::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const Mlp* net : {&s1_, &b1_, &s2_, &b2_}) append(out, net->parameters());
  return out;
}

// ---------------------------------------------------------------------------
// Householder

HouseholderTransform::HouseholderTransform(const std::string& name, std::size_t width, std::size_t count,
                                           Rng& rng)
    : width_(width) {
  if (width == 0) throw ShapeError("householder '" + name + "' needs a positive width");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < count; ++k) {
    Tensor v(Shape{width});
    double norm_sq = 0.0;
    // Redraw the (measure-zero) degenerate case so every generator is usable.
    while (!(norm_sq > 1e-12)) {
      norm_sq = 0.0;
      for (double& x : v.data()) {
        x = normal(rng);
        norm_sq += x * x;
      }
    }
    generators_.push_back({name + ".v" + std::to_string(k), std::move(v)});
  }
}

HouseholderTransform::HouseholderTransform(const std::string& name, const std::vector<Tensor>& generators) {
  if (generators.empty()) throw ShapeError("householder '" + name + "' needs at least one generator");
  width_ = generators.front().size();
  for (std::size_t k = 0; k < generators.size(); ++k) {
    const Tensor& v = generators[k];
    if (v.rank() != 1 || v.size() != width_) {
      throw ShapeError("householder '" + name + "': generator " + std::to_string(k) + " has shape " +
                       shape_string(v.shape()));
    }
    double norm_sq = 0.0;
    for (double x : v.data()) norm_sq += x * x;
    if (!(norm_sq > 0.0)) throw DomainError("householder '" + name + "': zero generator");
    generators_.push_back({name + ".v" + std::to_string(k), v});
  }
}

ad::Var HouseholderTransform::apply(ad::Tape& tape, ad::Var x, bool inverse) const {
  const std::size_t n = generators_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = inverse ? n - 1 - i : i;
    x = ad::reflect(x, tape.parameter(generators_[k]));
  }
  return x;
}

Tensor HouseholderTransform::matrix() const {
  ad::Tape tape(false);
  Tensor eye(Shape{width_, width_});
  for (std::size_t i = 0; i < width_; ++i) eye.at(i, i) = 1.0;
  // Row i of the result is (M e_i)^T, i.e. column i of M.
  const Tensor cols = apply(tape, tape.constant(eye), false).value();
  Tensor m(Shape{width_, width_});
  for (std::size_t i = 0; i < width_; ++i) {
    for (std::size_t j = 0; j < width_; ++j) m.at(j, i) = cols.at(i, j);
  }
  return m;
}

std::vector<ad::Parameter*> HouseholderTransform::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& g : generators_) out.push_back(&g);
  return out;
}

std::vector<const ad::Parameter*> HouseholderTransform::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& g : generators_) out.push_back(&g);
  return out;
}

// ---------------------------------------------------------------------------
// Downsampling

namespace {

// source[o] = input flat index feeding output flat index o, channel-last layout.
std::vector<std::size_t> squeeze_sources(const Layout& in) {
  const std::size_t n = in.batch, h = in.height, w = in.width, c = in.channels;
  const std::size_t oh = h / 2, ow = w / 2, oc = 4 * c;
  std::vector<std::size_t> source(n * h * w * c);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        for (std::size_t ch = 0; ch < oc; ++ch, ++o) {
          const std::size_t cin = ch / 4, k = ch % 4;
          const std::size_t di = k / 2, dj = k % 2;
          source[o] = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + cin;
        }
      }
    }
  }
  return source;
}

}  // namespace

Layout DownsampleLayer::output_layout(const Layout& in) {
  if (in.height % kBlockSize != 0 || in.width % kBlockSize != 0) {
    throw ShapeError("downsample needs even height and width, got " + std::to_string(in.height) + "x" +
                     std::to_string(in.width));
  }
  return Layout{in.batch, in.height / 2, in.width / 2, in.channels * 4};
}

ad::Var DownsampleLayer::forward(ad::Var x, const Layout& in) const {
  const Layout out = output_layout(in);
  if (x.value().size() != in.rows() * in.channels) {
    throw ShapeError("downsample: activation " + shape_string(x.shape()) + " does not match layout");
  }
  return ad::permute(x, squeeze_sources(in), Shape{out.rows(), out.channels});
}

ad::Var DownsampleLayer::inverse(ad::Var y, const Layout& out) const {
  if (out.channels % 4 != 0) throw ShapeError("upsample needs a channel count divisible by 4");
  const Layout in{out.batch, out.height * 2, out.width * 2, out.channels / 4};
  if (y.value().size() != out.rows() * out.channels) {
    throw ShapeError("upsample: activation " + shape_string(y.shape()) + " does not match layout");
  }
  const std::vector<std::size_t> fwd = squeeze_sources(in);
  std::vector<std::size_t> source(fwd.size());
  for (std::size_t o = 0; o < fwd.size(); ++o) source[fwd[o]] = o;
  return ad::permute(y, std::move(source), Shape{in.rows(), in.channels});
}

Tensor downsample(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("downsample expects C x H x W, got " + shape_string(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("downsample needs even height and width");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{4 * c, oh, ow});
  for (std::size_t ch = 0; ch < 4 * c; ++ch) {
    const std::size_t cin = ch / 4, di = (ch % 4) / 2, dj = ch % 2;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out[(ch * oh + i) * ow + j] = chw[(cin * h + 2 * i + di) * w + 2 * j + dj];
      }
    }
  }
  return out;
}

Tensor upsample(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) % 4 != 0) {
    throw ShapeError("upsample expects 4C x H x W, got " + shape_string(chw.shape()));
  }
  const std::size_t oc = chw.dim(0), oh = chw.dim(1), ow = chw.dim(2);
  const std::size_t h = oh * 2, w = ow * 2;
  Tensor out(Shape{oc / 4, h, w});
  for (std::size_t ch = 0; ch < oc; ++ch) {
    const std::size_t cin = ch / 4, di = (ch % 4) / 2, dj = ch % 2;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out[(cin * h + 2 * i + di) * w + 2 * j + dj] = chw[(ch * oh + i) * ow + j];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split

SplitLayer::SplitLayer(const std::string& name, std::size_t width, std::size_t keep, ResidualMean mean,
                       double epsilon_sq, Rng& rng, double output_scale, std::size_t hidden_min)
    : width_(width), keep_(keep), mean_kind_(mean), epsilon_sq_(epsilon_sq) {
  if (keep == 0 || keep >= width) {
    throw ShapeError("split '" + name + "' must keep between 1 and " + std::to_string(width - 1) + " of " +
                     std::to_string(width) + " columns, got " + std::to_string(keep));
  }
  if (!(epsilon_sq > 0.0) || !std::isfinite(epsilon_sq)) {
    throw ConfigError("split '" + name + "': epsilon^2 must be positive and finite");
  }
  if (mean == ResidualMean::Network) {
    const std::size_t hidden = hidden_width(keep, hidden_min);
    g_ = Mlp(name + ".g", {keep, hidden, width - keep}, rng, output_scale);
  }
}

ad::Var SplitLayer::residual_mean(ad::Tape& tape, ad::Var z) const {
  if (mean_kind_ == ResidualMean::Network) return g_.forward(tape, z);
  return tape.constant(Tensor(Shape{z.value().dim(0), residual()}, 0.0));
}

SplitLayer::Output SplitLayer::forward(ad::Tape& tape, ad::Var x) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || xv.dim(1) != width_) {
    throw ShapeError("split of width " + std::to_string(width_) + " applied to " + shape_string(xv.shape()));
  }
  ad::Var z = ad::slice_cols(x, 0, keep_);
  ad::Var r = ad::slice_cols(x, keep_, width_);
  ad::Var diff = mean_kind_ == ResidualMean::Network ? r - g_.forward(tape, z) : r;
  const double m = static_cast<double>(residual());
  const double norm_const = -0.5 * m * std::log(2.0 * std::numbers::pi * epsilon_sq_);
  ad::Var log_prob = ad::shift(ad::scale(ad::row_sum(ad::square(diff)), -0.5 / epsilon_sq_), norm_const);
  return {z, r, log_prob};
}

ad::Var SplitLayer::inverse(ad::Tape& tape, ad::Var z) const { return inverse(tape, z, residual_mean(tape, z)); }

ad::Var SplitLayer::inverse(ad::Tape&, ad::Var z, ad::Var r) const {
  const Tensor& zv = z.value();
  const Tensor& rv = r.value();
  if (zv.rank() != 2 || zv.dim(1) != keep_ || rv.rank() != 2 || rv.dim(1) != residual() ||
      rv.dim(0) != zv.dim(0)) {
    throw ShapeError("split inverse: got z " + shape_string(zv.shape()) + ", r " + shape_string(rv.shape()) +
                     " for split " + std::to_string(keep_) + "+" + std::to_string(residual()));
  }
  return ad::concat_cols(z, r);
}

std::vector<ad::Parameter*> SplitLayer::parameters() {
  if (mean_kind_ == ResidualMean::Network) return g_.parameters();
  return {};
}

std::vector<const ad::Parameter*> SplitLayer::parameters() const {
  if (mean_kind_ == ResidualMean::Network) return g_.parameters();
  return {};
}

// ---------------------------------------------------------------------------
// Tensor-level entry points

CouplingResult coupling_forward(const CouplingLayer& layer, const Tensor& x) {
  ad::Tape tape(false);
  const auto out = layer.forward(tape, tape.constant(as_batch(x, "coupling_forward")));
  return {restore(out.y.value(), x), restore_rows(out.log_det.value(), x)};
}

Tensor coupling_inverse(const CouplingLayer& layer, const Tensor& y) {
  ad::Tape tape(false);
  return restore(layer.inverse(tape, tape.constant(as_batch(y, "coupling_inverse"))).value(), y);
}

HouseholderResult householder_apply(const HouseholderTransform& t, const Tensor& x, bool inverse) {
  ad::Tape tape(false);
  const Tensor batch = as_batch(x, "householder_apply");
  if (batch.dim(1) != t.width()) {
    throw ShapeError("householder of width " + std::to_string(t.width()) + " applied to " +
                     shape_string(x.shape()));
  }
  return {restore(t.apply(tape, tape.constant(batch), inverse).value(), x), 0.0};
}

SplitResult split_forward(const SplitLayer& layer, const Tensor& x) {
  ad::Tape tape(false);
  const auto out = layer.forward(tape, tape.constant(as_batch(x, "split_forward")));
  return {restore(out.z.value(), x), restore(out.r.value(), x), restore_rows(out.log_prob.value(), x)};
}

Tensor split_inverse(const SplitLayer& layer, const Tensor& z) {
  ad::Tape tape(false);
  return restore(layer.inverse(tape, tape.constant(as_batch(z, "split_inverse"))).value(), z);
}

}  // namespace pie::flow
