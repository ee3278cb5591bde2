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


#include "pie/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pie/errors.hpp"
#include "pie/kernels.hpp"

namespace pie::eval {

namespace {

struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
};

Plane plane_of(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
  throw ShapeError("expected a grey-scale image (1 x H x W or H x W), got " + shape_string(s));
}

std::vector<std::size_t> leading(const std::vector<std::size_t>& indices, std::size_t n) {
  std::vector<std::size_t> out(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(std::min(n, indices.size())));
  return out;
}

}  // namespace

std::string_view to_string(SharpnessSource source) {
  return source == SharpnessSource::Dataset ? "dataset" : "model-samples";
}

double laplace_variance(const Tensor& image) {
  const Plane p = plane_of(image);
  if (p.height < 3 || p.width < 3) throw ShapeError("image smaller than the 3 x 3 Laplace kernel");
  double out = 0.0;
  kernels::serial::laplace_variances(image.data(), std::span<double>(&out, 1), 1, p.height, p.width);
  return out;
}

SharpnessReport laplace_sharpness(std::span<const Tensor> images, SharpnessSource source) {
  if (images.empty()) throw ConfigError("sharpness needs at least one image");
  const Plane first = plane_of(images.front());
  bool uniform = true;
  for (const Tensor& img : images) {
    const Plane p = plane_of(img);
    if (p.height < 3 || p.width < 3) throw ShapeError("image smaller than the 3 x 3 Laplace kernel");
    uniform = uniform && p.height == first.height && p.width == first.width;
  }
  std::vector<double> variances(images.size());
  if (uniform) {
    const std::size_t per = first.height * first.width;
    std::vector<double> packed(images.size() * per);
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::copy(images[i].data().begin(), images[i].data().end(), packed.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    kernels::laplace_variances(packed, variances, images.size(), first.height, first.width);
  } else {
    for (std::size_t i = 0; i < images.size(); ++i) variances[i] = laplace_variance(images[i]);
  }
  SharpnessReport r;
  r.mean_variance = std::accumulate(variances.begin(), variances.end(), 0.0) / static_cast<double>(images.size());
  r.sample_count = images.size();
  r.source = source;
  return r;
}

nlohmann::json to_json(const SharpnessReport& report) {
  return {{"meanVariance", report.mean_variance},
          {"sampleCount", report.sample_count},
          {"source", std::string(to_string(report.source))}};
}

double reconstruction_mse(const model::PieModel& model, const Tensor& x) {
  const Tensor rec = model.decode(model.encode(x).z);
  if (rec.size() != x.size()) throw ShapeError("reconstruction size mismatch");
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = rec[i] - x[i];
    ss += d * d;
  }
  return ss / static_cast<double>(x.size());
}

Reconstruction reconstruct(const model::PieModel& model, const data::Dataset& dataset,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("reconstruction needs at least one item");
  if (dataset.item_shape != model.config().input_shape) {
    throw ShapeError("dataset items " + shape_string(dataset.item_shape) + " do not match the model input " +
                     shape_string(model.config().input_shape));
  }
  const Tensor x = dataset.batch(indices);
  const Tensor rec = model.decode(model.encode(x).z);
  const std::size_t per = shape_size(dataset.item_shape);
  Reconstruction out;
  double ss = 0.0;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    out.originals.push_back(dataset.items[indices[n]]);
    std::vector<double> values(rec.data().begin() + static_cast<std::ptrdiff_t>(n * per),
                               rec.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
    for (std::size_t j = 0; j < per; ++j) {
      const double d = values[j] - x[n * per + j];
      ss += d * d;
    }
    out.reconstructions.emplace_back(dataset.item_shape, std::move(values));
  }
  out.mse = ss / static_cast<double>(x.size());
  return out;
}

Reconstruction reconstruct_batch(const model::PieModel& model, const data::Dataset& dataset, std::size_t n) {
  const auto& pool = dataset.test_indices.empty() ? dataset.train_indices : dataset.test_indices;
  return reconstruct(model, dataset, leading(pool, n));
}

std::uint8_t to_byte(double value) {
  if (std::isnan(value)) return 0;
  const double v = std::clamp(value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

GreyImage render_grid(std::span<const Tensor> images, std::size_t rows, std::size_t cols) {
  if (rows * cols != images.size() || images.empty()) {
    throw ShapeError("grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not hold " +
                     std::to_string(images.size()) + " images");
  }
  const Plane p = plane_of(images.front());
  GreyImage g;
  g.height = rows * p.height;
  g.width = cols * p.width;
  g.pixels.assign(g.height * g.width, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const Tensor& img = images[i * cols + j];
      const Plane q = plane_of(img);
      if (q.height != p.height || q.width != p.width) throw ShapeError("grid images differ in size");
      for (std::size_t r = 0; r < p.height; ++r) {
        for (std::size_t c = 0; c < p.width; ++c) {
          g.pixels[(i * p.height + r) * g.width + j * p.width + c] = to_byte(img[r * p.width + c]);
        }
      }
    }
  }
  return g;
}

void write_pgm(const GreyImage& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::string text = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  text.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  train::write_file_atomic(path, text);
}

GreyImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  auto token = [&in, &path]() {
    std::string t;
    char ch = 0;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) return t;
        continue;
      }
      t.push_back(ch);
    }
    if (t.empty()) throw FormatError(path.string() + ": truncated PGM header");
    return t;
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
  GreyImage g;
  try {
    g.width = std::stoul(token());
    g.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": bad PGM header");
  }
  g.pixels.resize(g.width * g.height);
  in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != g.pixels.size()) throw FormatError(path.string() + ": truncated PGM data");
  return g;
}

std::vector<SweepPoint> sweep_epsilon(const train::TrainConfig& base, const data::Dataset& dataset,
                                      std::span<const double> epsilons) {
  std::vector<SweepPoint> out;
  for (double eps : epsilons) {
    train::TrainConfig config = base;
    config.epsilonSq = eps;
    auto state = train::init_training(config, dataset.item_shape);
    const auto held = train::eval_indices(dataset, config);
    const auto& pool = held.empty() ? dataset.train_indices : held;
    SweepPoint p;
    p.epsilon_sq = eps;
    p.initial_mse = reconstruct(state.model, dataset, pool).mse;
    p.initial_eval_nll = train::mean_nll(state.model, dataset, pool, config);
    const auto report = train::run_training(state, dataset);
    p.diverged = report.diverged;
    p.final_mse = reconstruct(state.model, dataset, pool).mse;
    p.final_eval_nll = train::mean_nll(state.model, dataset, pool, config);
    out.push_back(p);
  }
  return out;
}

}  // namespace pie::eval
