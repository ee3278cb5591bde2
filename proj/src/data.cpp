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

#include "pie/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <numbers>
#include <random>
#include <sstream>

#include "pie/errors.hpp"
#include "pie/hash.hpp"
#include "pie/nn.hpp"

namespace pie::data {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, const std::filesystem::path& path) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
    throw FormatError(path.string() + ": IDX dimensions overflow");
  }
  return a * b;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_row(std::string_view line, double& a, double& b) {
  const auto comma = line.find(',');
  if (comma == std::string_view::npos) return false;
  if (line.find(',', comma + 1) != std::string_view::npos) return false;
  return parse_double(line.substr(0, comma), a) && parse_double(line.substr(comma + 1), b);
}

}  // namespace

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::ImageIdx: return "image-idx";
    case DatasetKind::Csv2d: return "csv-2d";
    case DatasetKind::Synthetic2d: return "synthetic-2d";
  }
  return "unknown";
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("empty batch");
  Shape shape = item_shape;
  shape.insert(shape.begin(), indices.size());
  Tensor out(std::move(shape));
  const std::size_t per = shape_size(item_shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& item = items.at(indices[i]);
    std::copy(item.data().begin(), item.data().end(), out.data().begin() + i * per);
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& labels) {
  const auto bytes = read_bytes(images);
  const std::uint32_t magic = read_be32(bytes, 0, images);
  if (magic != kIdxImages) {
    std::ostringstream os;
    os << images.string() << ": bad IDX image magic 0x" << std::hex << magic;
    throw FormatError(os.str());
  }
  const std::uint64_t count = read_be32(bytes, 4, images);
  const std::uint64_t rows = read_be32(bytes, 8, images);
  const std::uint64_t cols = read_be32(bytes, 12, images);
  if (rows == 0 || cols == 0) throw FormatError(images.string() + ": zero image dimension");
  const std::uint64_t per = checked_mul(rows, cols, images);
  const std::uint64_t total = checked_mul(count, per, images);
  if (total > bytes.size() - 16) {
    throw FormatError(images.string() + ": truncated, header promises " + std::to_string(total) + " pixel bytes");
  }

  Dataset d;
  d.kind = DatasetKind::ImageIdx;
  d.item_shape = {1, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
  d.items.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Tensor t(d.item_shape);
    const std::uint8_t* src = bytes.data() + 16 + i * per;
    for (std::uint64_t j = 0; j < per; ++j) t[j] = static_cast<double>(src[j]) / 255.0;
    d.items.push_back(std::move(t));
  }

  if (labels) {
    const auto lb = read_bytes(*labels);
    const std::uint32_t lmagic = read_be32(lb, 0, *labels);
    if (lmagic != kIdxLabels) throw FormatError(labels->string() + ": bad IDX label magic");
    const std::uint64_t lcount = read_be32(lb, 4, *labels);
    if (lcount != count) throw FormatError(labels->string() + ": label count differs from image count");
    if (lb.size() - 8 < lcount) throw FormatError(labels->string() + ": truncated label file");
    d.labels.assign(lb.begin() + 8, lb.begin() + 8 + static_cast<std::ptrdiff_t>(lcount));
  }
  d.train_indices.resize(d.items.size());
  std::iota(d.train_indices.begin(), d.train_indices.end(), std::size_t{0});
  return d;
}

void write_idx_images(const std::filesystem::path& path, std::size_t count, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (pixels.size() != count * rows * cols) throw ShapeError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  write_be32(out, kIdxImages);
  write_be32(out, static_cast<std::uint32_t>(count));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  write_be32(out, kIdxLabels);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset load_csv_2d(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  Dataset d;
  d.kind = DatasetKind::Csv2d;
  d.item_shape = {2};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    double a = 0.0, b = 0.0;
    if (!parse_row(view, a, b)) {
      if (d.items.empty() && line_no == 1) continue;  // header
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected two numeric columns");
    }
    d.items.push_back(Tensor::from({a, b}));
  }
  if (d.items.empty()) throw FormatError(path.string() + ": no data rows");
  d.train_indices.resize(d.items.size());
  std::iota(d.train_indices.begin(), d.train_indices.end(), std::size_t{0});
  return d;
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "two-gaussians") return SyntheticKind::TwoGaussians;
  if (name == "two-moons") return SyntheticKind::TwoMoons;
  if (name == "ring") return SyntheticKind::Ring;
  throw ConfigError("unknown synthetic dataset '" + std::string(name) + "'");
}

Dataset make_synthetic_2d(SyntheticKind kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("synthetic dataset needs n >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset d;
  d.kind = DatasetKind::Synthetic2d;
  d.item_shape = {2};
  d.items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = 0.0, y = 0.0;
    switch (kind) {
      case SyntheticKind::TwoGaussians: {
        const double c = unit(rng) < 0.5 ? -kTwoGaussianOffset : kTwoGaussianOffset;
        x = c + kTwoGaussianStd * normal(rng);
        y = c + kTwoGaussianStd * normal(rng);
        break;
      }
      case SyntheticKind::TwoMoons: {
        const bool upper = unit(rng) < 0.5;
        const double t = std::numbers::pi * unit(rng);
        x = upper ? std::cos(t) : 1.0 - std::cos(t);
        y = upper ? std::sin(t) : 0.5 - std::sin(t);
        x += 0.1 * normal(rng);
        y += 0.1 * normal(rng);
        break;
      }
      case SyntheticKind::Ring: {
        const double angle = 2.0 * std::numbers::pi * unit(rng);
        double e = normal(rng);
        while (std::abs(e) > 3.0) e = normal(rng);
        const double r = kRingRadius + kRingStd * e;
        x = r * std::cos(angle);
        y = r * std::sin(angle);
        break;
      }
    }
    d.items.push_back(Tensor::from({x, y}));
  }
  d.train_indices.resize(n);
  std::iota(d.train_indices.begin(), d.train_indices.end(), std::size_t{0});
  return d;
}

Dataset make_synthetic_2d(std::string_view kind, std::size_t n, std::uint64_t seed) {
  return make_synthetic_2d(parse_synthetic_kind(kind), n, seed);
}

void split_train_test(Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in [0, 1)");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(order.size())));
  dataset.test_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  dataset.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(dataset.test_indices.begin(), dataset.test_indices.end());
  std::sort(dataset.train_indices.begin(), dataset.train_indices.end());
  if (dataset.train_indices.empty()) throw ConfigError("train split is empty");
}

std::string fingerprint(const Dataset& dataset) {
  std::vector<unsigned char> bytes;
  const std::string header = shape_string(dataset.item_shape) + "#" + std::to_string(dataset.size());
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (const Tensor& item : dataset.items) {
    const auto* p = reinterpret_cast<const unsigned char*>(item.data().data());
    bytes.insert(bytes.end(), p, p + item.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

Dataset load_any(const std::string& spec, std::uint64_t default_seed) {
  constexpr std::string_view kPrefix = "synthetic:";
  if (spec.rfind(kPrefix, 0) == 0) {
    std::vector<std::string> parts;
    std::stringstream ss(spec.substr(kPrefix.size()));
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() < 2 || parts.size() > 3) {
      throw ConfigError("synthetic data spec must be synthetic:<kind>:<n>[:<seed>]");
    }
    std::size_t n = 0;
    std::uint64_t seed = default_seed;
    auto parse_uint = [&spec](const std::string& s, auto& out) {
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("bad number in data spec '" + spec + "'");
    };
    parse_uint(parts[1], n);
    if (parts.size() == 3) parse_uint(parts[2], seed);
    return make_synthetic_2d(parts[0], n, seed);
  }
  const std::filesystem::path path(spec);
  if (!std::filesystem::exists(path)) throw FormatError("data file not found: " + spec);
  if (path.extension() == ".csv") return load_csv_2d(path);
  return load_idx(path);
}

}  // namespace pie::data
