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

// Reconstruction, sharpness and image-grid output.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pie/data.hpp"
#include "pie/model.hpp"
#include "pie/tensor.hpp"
#include "pie/train.hpp"

namespace pie::eval {

enum class SharpnessSource { Dataset, ModelSamples };

std::string_view to_string(SharpnessSource source);

struct SharpnessReport {
  double mean_variance = 0.0;
  std::size_t sample_count = 0;
  SharpnessSource source = SharpnessSource::Dataset;
};

/// Population variance of the valid-mode response to [[0,1,0],[1,-4,1],[0,1,0]].
/// Accepts 1 x H x W or H x W; H, W >= 3.
double laplace_variance(const Tensor& image);

/// Mean of laplace_variance over the images. Throws on an empty list or an image smaller than 3 x 3.
SharpnessReport laplace_sharpness(std::span<const Tensor> images, SharpnessSource source);

nlohmann::json to_json(const SharpnessReport& report);

struct Reconstruction {
  std::vector<Tensor> originals;
  std::vector<Tensor> reconstructions;
  /// Mean squared error over every value of every item.
  double mse = 0.0;
};

/// decode(encode(x).z) for each given item.
Reconstruction reconstruct(const model::PieModel& model, const data::Dataset& dataset,
                           std::span<const std::size_t> indices);
/// The first n held-out items (training items when nothing is held out).
Reconstruction reconstruct_batch(const model::PieModel& model, const data::Dataset& dataset, std::size_t n);

/// Mean squared reconstruction error of a batch {N, input_shape...}.
double reconstruction_mse(const model::PieModel& model, const Tensor& x);

struct GreyImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// floor(clamp(v, 0, 1) * 255 + 0.5), so 0.5 maps to 128.
std::uint8_t to_byte(double value);

/// Tiles images (1 x H x W or H x W, all the same size) row-major into a rows x cols grid.
/// Pixel (r, c) of tile (i, j) lands at row i * H + r, column j * W + c.
GreyImage render_grid(std::span<const Tensor> images, std::size_t rows, std::size_t cols);

/// Binary PGM (P5, maxval 255).
void write_pgm(const GreyImage& image, const std::filesystem::path& path);
GreyImage read_pgm(const std::filesystem::path& path);

struct SweepPoint {
  double epsilon_sq = 0.0;
  double initial_mse = 0.0;
  double final_mse = 0.0;
  double initial_eval_nll = 0.0;
  double final_eval_nll = 0.0;
  bool diverged = false;
};

/// Trains one model per epsilon^2 with otherwise identical config, data and seed, and reports
/// held-out reconstruction error before and after training.
std::vector<SweepPoint> sweep_epsilon(const train::TrainConfig& base, const data::Dataset& dataset,
                                      std::span<const double> epsilons);

}  // namespace pie::eval
