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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pie/tensor.hpp"

namespace pie::data {

enum class DatasetKind { ImageIdx, Csv2d, Synthetic2d };

std::string_view to_string(DatasetKind kind);

struct Dataset {
  DatasetKind kind = DatasetKind::Synthetic2d;
  Shape item_shape;
  std::vector<Tensor> items;
  /// Empty unless a label file was loaded.
  std::vector<std::uint8_t> labels;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t size() const { return items.size(); }
  /// Stacks the selected items into {n, item_shape...}.
  Tensor batch(std::span<const std::size_t> indices) const;
};

/// Reads IDX image (magic 0x00000803) and optional label (0x00000801) files.
/// Images become 1 x rows x cols tensors with bytes mapped to [0, 1] (byte / 255).
/// Everything lands in the training split; call `split_train_test` to hold data out.
Dataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels = {});

/// Writes an IDX image file from raw bytes (count * rows * cols of them).
void write_idx_images(const std::filesystem::path& path, std::size_t count, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Two float columns per line; a non-numeric first line is treated as a header.
Dataset load_csv_2d(const std::filesystem::path& path);

enum class SyntheticKind { TwoGaussians, TwoMoons, Ring };

/// Parses "two-gaussians", "two-moons" or "ring"; throws ConfigError otherwise.
SyntheticKind parse_synthetic_kind(std::string_view name);

/// Generators (all deterministic under `seed`):
///   two-gaussians: equal mixture of N((-1.5, -1.5), 0.3^2 I) and N((1.5, 1.5), 0.3^2 I).
///   two-moons:     upper arc (cos t, sin t) and lower arc (1 - cos t, 0.5 - sin t), t ~ U[0, pi],
///                  plus N(0, 0.1^2 I) noise.
///   ring:          radius 2 + 0.1 e with e ~ N(0, 1) truncated to [-3, 3], angle ~ U[0, 2 pi).
Dataset make_synthetic_2d(SyntheticKind kind, std::size_t n, std::uint64_t seed);
Dataset make_synthetic_2d(std::string_view kind, std::size_t n, std::uint64_t seed);

inline constexpr double kTwoGaussianOffset = 1.5;
inline constexpr double kTwoGaussianStd = 0.3;
inline constexpr double kRingRadius = 2.0;
inline constexpr double kRingStd = 0.1;

/// Seeded shuffle into disjoint, exhaustive train / test index sets.
void split_train_test(Dataset& dataset, double test_fraction, std::uint64_t seed);

/// Hex SHA-256 over the item shape and values.
std::string fingerprint(const Dataset& dataset);

/// Loads a data argument: "synthetic:<kind>:<n>[:<seed>]", a .csv file, or an IDX image file.
Dataset load_any(const std::string& spec, std::uint64_t default_seed);

}  // namespace pie::data
