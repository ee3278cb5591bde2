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

#include "pie/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pie/errors.hpp"

namespace pie::model {

namespace {

using flow::Layout;

Layout with_batch(Layout l, std::size_t batch) {
  l.batch = batch;
  return l;
}

// Per-row quantities {batch * positions} summed to per-sample {batch}.
ad::Var per_sample(ad::Var per_row, std::size_t batch) {
  const std::size_t rows = per_row.value().size();
  if (rows == batch) return per_row;
  return ad::row_sum(ad::reshape(per_row, Shape{batch, rows / batch}));
}

ad::Var accumulate(ad::Var total, ad::Var term) { return total.valid() ? total + term : term; }

void check_activation(ad::Var v, const std::string& block, std::size_t layer, const char* kind) {
  if (!v.value().all_finite()) {
    throw NonFiniteError("non-finite activation after " + block + " layer " + std::to_string(layer) + " (" + kind +
                         ")");
  }
}

ad::Var standard_normal_log_prob(ad::Var rows) {
  const double dim = static_cast<double>(rows.value().dim(1));
  return ad::shift(ad::scale(ad::row_sum(ad::square(rows)), -0.5), -0.5 * dim * std::log(2.0 * std::numbers::pi));
}

}  // namespace

ModelConfig ModelConfig::mnist(double epsilon_sq) {
  ModelConfig c;
  c.input_shape = {1, 28, 28};
  c.blocks = {{BlockKind::Convolutional, 2},
              {BlockKind::Convolutional, 4},
              {BlockKind::Linear, 64},
              {BlockKind::Linear, 10},
              {BlockKind::Linear, 0}};
  c.epsilon_sq = epsilon_sq;
  return c;
}

// ---------------------------------------------------------------------------
// PieBlock

PieBlock::PieBlock(const std::string& name, BlockKind kind, const Layout& input, std::size_t keep,
                   const ModelConfig& config, Rng& rng)
    : name_(name), kind_(kind), input_(with_batch(input, 1)) {
  if (kind == BlockKind::Convolutional) {
    inner_ = flow::DownsampleLayer::output_layout(input_);
    downsample_ = true;
  } else {
    inner_ = Layout{1, 1, 1, input_.sample_size()};
  }
  const std::size_t width = inner_.channels;
  for (std::size_t k = 0; k <= config.k_repeats; ++k) {
    if (config.householder_count > 0) {
      mixings_.emplace_back(name + ".mix" + std::to_string(k), width, config.householder_count, rng);
    }
    if (k < config.k_repeats) {
      couplings_.emplace_back(name + ".coupling" + std::to_string(k), width, rng, config.init_scale,
                              config.hidden_min);
    }
  }
  output_ = inner_;
  if (keep > 0) {
    split_.emplace(name + ".split", width, keep, config.residual_mean, config.epsilon_sq, rng, config.init_scale,
                   config.hidden_min);
    output_.channels = keep;
  }
}

PieBlock::Output PieBlock::forward(ad::Tape& tape, ad::Var x, std::size_t batch) const {
  const Layout in = with_batch(input_, batch);
  const Layout inner = with_batch(inner_, batch);
  if (x.value().size() != in.rows() * in.channels) {
    throw ShapeError(name_ + ": input " + shape_string(x.shape()) + " does not match the block layout");
  }
  ad::Var h = downsample_ ? flow::DownsampleLayer{}.forward(x, in) : ad::reshape(x, Shape{inner.rows(), inner.channels});
  check_activation(x, name_, 0, "input");

  std::size_t layer = downsample_ ? 1 : 0;
  ad::Var log_det_rows;
  const bool lead_mix = mixings_.size() > couplings_.size();
  auto mix = [&](std::size_t k) {
    if (k >= mixings_.size()) return;
    h = mixings_[k].apply(tape, h, false);
    check_activation(h, name_, layer++, "householder");
  };
  if (lead_mix) mix(0);
  for (std::size_t k = 0; k < couplings_.size(); ++k) {
    flow::CouplingLayer::Output out;
    try {
      out = couplings_[k].forward(tape, h);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(name_ + " layer " + std::to_string(layer) + " (coupling): " + e.what());
    }
    h = out.y;
    check_activation(h, name_, layer++, "coupling");
    log_det_rows = accumulate(log_det_rows, out.log_det);
    mix(lead_mix ? k + 1 : k);
  }

  Output result;
  result.log_det = log_det_rows.valid() ? per_sample(log_det_rows, batch)
                                        : tape.constant(Tensor(Shape{batch}, 0.0));
  if (split_) {
    const auto out = split_->forward(tape, h);
    result.z = out.z;
    result.residual = out.r;
    result.residual_log_prob = per_sample(out.log_prob, batch);
  } else {
    result.z = h;
  }
  result.layout = with_batch(output_, batch);
  return result;
}

ad::Var PieBlock::inverse(ad::Tape& tape, ad::Var z, std::size_t batch, std::optional<ad::Var> residual) const {
  const Layout out = with_batch(output_, batch);
  if (z.value().size() != out.rows() * out.channels) {
    throw ShapeError(name_ + ": code " + shape_string(z.shape()) + " does not match the block output");
  }
  ad::Var h = ad::reshape(z, Shape{out.rows(), out.channels});
  if (split_) h = residual ? split_->inverse(tape, h, *residual) : split_->inverse(tape, h);

  const bool lead_mix = mixings_.size() > couplings_.size();
  for (std::size_t k = couplings_.size(); k-- > 0;) {
    const std::size_t m = lead_mix ? k + 1 : k;
    if (m < mixings_.size()) h = mixings_[m].apply(tape, h, true);
    h = couplings_[k].inverse(tape, h);
  }
  if (lead_mix) h = mixings_[0].apply(tape, h, true);

  const Layout in = with_batch(input_, batch);
  if (downsample_) return flow::DownsampleLayer{}.inverse(h, with_batch(inner_, batch));
  return ad::reshape(h, Shape{in.rows(), in.channels});
}

std::vector<ad::Parameter*> PieBlock::parameters() {
  std::vector<ad::Parameter*> out;
  auto take = [&out](std::vector<ad::Parameter*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  const bool lead_mix = mixings_.size() > couplings_.size();
  if (lead_mix) take(mixings_[0].parameters());
  for (std::size_t k = 0; k < couplings_.size(); ++k) {
    take(couplings_[k].parameters());
    const std::size_t m = lead_mix ? k + 1 : k;
    if (m < mixings_.size()) take(mixings_[m].parameters());
  }
  if (split_) take(split_->parameters());
  return out;
}

std::vector<const ad::Parameter*> PieBlock::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (ad::Parameter* p : const_cast<PieBlock*>(this)->parameters()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// PieModel

PieModel::PieModel(ModelConfig config, Rng& rng) : config_(std::move(config)) {
  const Shape& in = config_.input_shape;
  Layout layout;
  if (in.size() == 3) {
    layout = Layout{1, in[1], in[2], in[0]};
  } else if (in.size() == 1) {
    layout = Layout{1, 1, 1, in[0]};
  } else {
    throw ConfigError("input shape must be {C, H, W} or {D}, got " + shape_string(in));
  }
  if (shape_size(in) == 0) throw ConfigError("empty input shape");
  if (config_.blocks.empty()) throw ConfigError("a model needs at least one block");
  if (!(config_.epsilon_sq > 0.0)) throw ConfigError("epsilon^2 must be positive");

  bool seen_linear = false;
  std::size_t dim = layout.sample_size();
  for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
    const BlockSpec& spec = config_.blocks[b];
    const std::string name = "block" + std::to_string(b);
    if (spec.kind == BlockKind::Convolutional) {
      if (seen_linear) throw ConfigError(name + ": convolutional blocks must precede linear blocks");
      if (in.size() != 3) throw ConfigError(name + ": convolutional blocks need an image input");
    } else {
      seen_linear = true;
    }
    if (spec.keep == 0 && b + 1 != config_.blocks.size()) {
      throw ConfigError(name + ": only the final block may omit the split");
    }
    try {
      blocks_.emplace_back(name, spec.kind, layout, spec.keep, config_, rng);
    } catch (const ShapeError& e) {
      throw ConfigError(name + ": " + e.what());
    }
    layout = blocks_.back().output_layout();
    const std::size_t next = layout.sample_size();
    if (spec.keep > 0 && !(next < dim)) throw ConfigError(name + ": dimension chain must strictly decrease");
    dim = next;
  }
}

std::size_t PieModel::input_dim() const { return shape_size(config_.input_shape); }

std::size_t PieModel::latent_dim() const { return blocks_.back().output_layout().sample_size(); }

std::vector<std::size_t> PieModel::dimension_chain() const {
  std::vector<std::size_t> dims{input_dim()};
  for (const auto& b : blocks_) {
    if (b.has_split()) dims.push_back(b.output_layout().sample_size());
  }
  return dims;
}

std::size_t PieModel::batch_size(const Tensor& x) const {
  const Shape& in = config_.input_shape;
  const Shape& s = x.shape();
  if (s == in) return 1;
  if (s.size() == in.size() + 1 && std::equal(in.begin(), in.end(), s.begin() + 1)) return s[0];
  throw ShapeError("input " + shape_string(s) + " does not match model input " + shape_string(in));
}

ad::Var PieModel::to_rows(ad::Tape& tape, const Tensor& x, std::size_t batch) const {
  const Shape& in = config_.input_shape;
  if (in.size() == 1) return tape.constant(x.reshaped(Shape{batch, in[0]}));
  const std::size_t c = in[0], h = in[1], w = in[2];
  Tensor rows(Shape{batch * h * w, c});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < h * w; ++p) rows[(n * h * w + p) * c + ch] = x[(n * c + ch) * h * w + p];
    }
  }
  return tape.constant(std::move(rows));
}

Tensor PieModel::from_rows(const Tensor& rows, std::size_t batch, bool batched) const {
  const Shape& in = config_.input_shape;
  Shape shape = in;
  if (batched) shape.insert(shape.begin(), batch);
  if (in.size() == 1) return rows.reshaped(std::move(shape));
  const std::size_t c = in[0], h = in[1], w = in[2];
  Tensor out(std::move(shape));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < h * w; ++p) out[(n * c + ch) * h * w + p] = rows[(n * h * w + p) * c + ch];
    }
  }
  return out;
}

PieModel::Trace PieModel::trace(ad::Tape& tape, const Tensor& x) const {
  const std::size_t batch = batch_size(x);
  ad::Var h = to_rows(tape, x, batch);
  Trace t;
  for (const auto& block : blocks_) {
    const auto out = block.forward(tape, h, batch);
    h = out.z;
    t.log_det = accumulate(t.log_det, out.log_det);
    if (out.residual.valid()) {
      t.residuals.push_back(out.residual);
      t.residual_log_prob = accumulate(t.residual_log_prob, out.residual_log_prob);
    }
  }
  t.z = ad::reshape(h, Shape{batch, latent_dim()});
  if (!t.residual_log_prob.valid()) t.residual_log_prob = tape.constant(Tensor(Shape{batch}, 0.0));
  t.prior_log_prob = standard_normal_log_prob(t.z);
  t.log_likelihood = t.prior_log_prob + t.residual_log_prob + t.log_det;
  return t;
}

Encoding PieModel::encode(const Tensor& x) const {
  ad::Tape tape(false);
  const Trace t = trace(tape, x);
  const std::size_t batch = batch_size(x);
  Encoding e;
  e.z = t.z.value();
  for (ad::Var r : t.residuals) {
    const Tensor& rv = r.value();
    e.residuals.push_back(rv.reshaped(Shape{batch, rv.size() / batch}));
  }
  e.log_det = t.log_det.value();
  e.residual_log_prob = t.residual_log_prob.value();
  e.prior_log_prob = t.prior_log_prob.value();
  e.log_likelihood = t.log_likelihood.value();
  e.log_likelihood.check_finite("log-likelihood");
  return e;
}

Tensor PieModel::run_inverse(const Tensor& z, const std::vector<Tensor>* residuals) const {
  const std::size_t d = latent_dim();
  bool batched = false;
  std::size_t batch = 1;
  if (z.rank() == 1 && z.dim(0) == d) {
    batched = false;
  } else if (z.rank() == 2 && z.dim(1) == d) {
    batched = true;
    batch = z.dim(0);
  } else {
    throw ShapeError("code " + shape_string(z.shape()) + " does not match latent dimension " + std::to_string(d));
  }

  std::size_t splits = 0;
  for (const auto& b : blocks_) splits += b.has_split() ? 1 : 0;
  if (residuals && residuals->size() != splits) {
    throw ShapeError("expected " + std::to_string(splits) + " residuals, got " + std::to_string(residuals->size()));
  }

  ad::Tape tape(false);
  ad::Var h = tape.constant(z.reshaped(Shape{batch, d}));
  std::size_t r = splits;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    const PieBlock& block = blocks_[b];
    std::optional<ad::Var> residual;
    if (block.has_split() && residuals) {
      const Tensor& rv = (*residuals)[--r];
      const std::size_t cols = block.split()->residual();
      if (rv.size() != batch * block.output_layout().rows() * cols) {
        throw ShapeError("residual " + shape_string(rv.shape()) + " does not match block " + std::to_string(b));
      }
      residual = tape.constant(rv.reshaped(Shape{rv.size() / cols, cols}));
    }
    h = block.inverse(tape, h, batch, residual);
  }
  return from_rows(h.value(), batch, batched);
}

Tensor PieModel::decode(const Tensor& z) const { return run_inverse(z, nullptr); }

Tensor PieModel::invert(const Tensor& z, const std::vector<Tensor>& residuals) const {
  return run_inverse(z, &residuals);
}

Tensor PieModel::log_likelihood(const Tensor& x) const { return encode(x).log_likelihood; }

Tensor PieModel::bijection(const Tensor& x) const {
  const Encoding e = encode(x);
  const std::size_t batch = e.z.dim(0);
  Tensor out(Shape{batch, input_dim()});
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t o = n * input_dim();
    const std::size_t d = e.z.dim(1);
    for (std::size_t j = 0; j < d; ++j) out[o++] = e.z[n * d + j];
    for (const Tensor& r : e.residuals) {
      const std::size_t m = r.dim(1);
      for (std::size_t j = 0; j < m; ++j) out[o++] = r[n * m + j];
    }
  }
  return out;
}

std::vector<ad::Parameter*> PieModel::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& b : blocks_) {
    auto ps = b.parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

std::vector<const ad::Parameter*> PieModel::parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& b : blocks_) {
    auto ps = b.parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor multiscale_flow_log_likelihood(const PieModel& model, const Tensor& x) {
  // Gather every factored-out variable plus the final code into one vector per
  // sample and score it under a single standard normal.
  ad::Tape tape(false);
  const PieModel::Trace t = model.trace(tape, x);
  const std::size_t batch = model.batch_size(x);
  const std::size_t dim = model.input_dim();
  Tensor all(Shape{batch, dim});
  std::vector<const Tensor*> parts{&t.z.value()};
  for (ad::Var r : t.residuals) parts.push_back(&r.value());
  std::size_t offset = 0;
  for (const Tensor* part : parts) {
    const std::size_t per = part->size() / batch;
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t j = 0; j < per; ++j) all[n * dim + offset + j] = (*part)[n * per + j];
    }
    offset += per;
  }
  const Tensor& log_det = t.log_det.value();
  Tensor out(Shape{batch});
  const double log_norm = -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
  for (std::size_t n = 0; n < batch; ++n) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += all[n * dim + j] * all[n * dim + j];
    out[n] = log_norm - 0.5 * sq + log_det[n];
  }
  return out;
}

std::vector<Tensor> sample(const PieModel& model, std::size_t count, double prior_std, Rng& rng) {
  if (count == 0) throw ConfigError("sample count must be at least 1");
  if (!(prior_std >= 0.0)) throw ConfigError("prior standard deviation must be non-negative");
  const std::size_t d = model.latent_dim();
  Tensor z(Shape{count, d});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : z.data()) v = prior_std * normal(rng);
  const Tensor x = model.decode(z);
  const std::size_t per = model.input_dim();
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<double> values(x.data().begin() + n * per, x.data().begin() + (n + 1) * per);
    out.emplace_back(model.config().input_shape, std::move(values));
  }
  return out;
}

std::vector<Tensor> interpolate(const PieModel& model, const Tensor& xa, const Tensor& xb, std::size_t steps) {
  if (steps < 2) throw ConfigError("interpolation needs at least 2 steps");
  if (model.batch_size(xa) != 1 || model.batch_size(xb) != 1 || xa.shape() != model.config().input_shape ||
      xb.shape() != model.config().input_shape) {
    throw ShapeError("interpolate expects two single samples");
  }
  const Tensor za = model.encode(xa).z;
  const Tensor zb = model.encode(xb).z;
  const std::size_t d = za.size();
  Tensor codes(Shape{steps, d});
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
    for (std::size_t j = 0; j < d; ++j) codes[i * d + j] = (1.0 - t) * za[j] + t * zb[j];
  }
  const Tensor x = model.decode(codes);
  const std::size_t per = model.input_dim();
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < steps; ++i) {
    std::vector<double> values(x.data().begin() + i * per, x.data().begin() + (i + 1) * per);
    out.emplace_back(model.config().input_shape, std::move(values));
  }
  return out;
}

}  // namespace pie::model
