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

// Training configuration, checkpoints and the likelihood-maximisation loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "pie/adam.hpp"
#include "pie/data.hpp"
#include "pie/model.hpp"
#include "pie/nn.hpp"

namespace pie::train {

inline constexpr const char* kVersionTag = "pie-1.0.0";
inline constexpr int kCheckpointFormatVersion = 1;

/// JSON keys are the camelCase field names below; unknown keys are rejected.
struct TrainConfig {
  double epsilonSq = 0.01;
  double learningRate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsAdam = 1e-8;
  std::size_t batchSize = 128;
  std::size_t maxSteps = 1000;
  std::uint64_t seed = 0;
  /// Dimension kept by each splitting block, strictly decreasing. Required.
  std::vector<std::size_t> dimSchedule;
  std::size_t kRepeats = 3;
  /// The first `convBlocks` entries of dimSchedule are convolutional blocks on images.
  std::size_t convBlocks = 0;
  /// Append a non-splitting linear block after the last split.
  bool finalBlock = false;
  std::size_t householderCount = 3;
  std::size_t hiddenMin = 16;
  /// "zero" or "mlp".
  std::string residualMean = "zero";
  double initScale = 0.01;
  double gradClip = 100.0;
  /// Add U(0, 1/256) noise to training batches; evaluation adds the midpoint 0.5/256.
  bool dequantize = false;
  std::size_t evalEvery = 100;
  /// Held-out items used for evaluation (0 = all).
  std::size_t evalSize = 0;
  /// 0 = checkpoint only at the first and last step.
  std::size_t checkpointEvery = 0;
  double testFraction = 0.2;
  /// When false the wallClockMs column is written as 0 so logs are byte-reproducible.
  bool recordWallClock = false;

  /// Throws ConfigError on an invalid combination.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Throws ConfigError for unknown keys, wrong types or invalid values.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);

/// Maps the schedule onto blocks. A convolutional block i sees a (H / 2^(i+1)) x (W / 2^(i+1))
/// grid, so its scheduled dimension must be a multiple of that area.
model::ModelConfig model_config(const TrainConfig& config, const Shape& input_shape);

AdamConfig adam_config(const TrainConfig& config);

struct TrainingState {
  TrainConfig config;
  Shape input_shape;
  model::PieModel model;
  AdamState adam;
  Rng rng;
  std::uint64_t step = 0;
};

/// Seeds one engine with config.seed; it initialises the model and then drives minibatch sampling.
TrainingState init_training(const TrainConfig& config, const Shape& input_shape);

nlohmann::json checkpoint_json(const TrainingState& state);
TrainingState state_from_checkpoint(const nlohmann::json& j);
/// Written to a temporary sibling and renamed into place.
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
/// Throws FormatError for a malformed file or a format version mismatch.
TrainingState load_checkpoint(const std::filesystem::path& path);

/// Writes `text` atomically (temporary file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

struct LossRecord {
  std::uint64_t step = 0;
  double train_nll = 0.0;
  std::optional<double> eval_nll;
  double wall_ms = 0.0;
};

struct RunOptions {
  /// Directory for the loss log and checkpoints; empty keeps everything in memory.
  std::filesystem::path out_dir;
  bool write_loss_log = true;
};

struct RunReport {
  std::vector<LossRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> loss_log;
  bool diverged = false;
  std::string divergence_reason;
  std::uint64_t final_step = 0;
  double wall_ms = 0.0;
};

/// Mean negative log-likelihood of the given items (evaluation dequantisation applied when enabled).
/// Returns a non-finite value rather than throwing when the likelihood overflows.
double mean_nll(const model::PieModel& model, const data::Dataset& dataset, std::span<const std::size_t> indices,
                const TrainConfig& config);

/// Indices used for held-out evaluation.
std::vector<std::size_t> eval_indices(const data::Dataset& dataset, const TrainConfig& config);

/// Runs steps state.step + 1 .. config.maxSteps. A fresh state (step 0) logs a step-0 row with the
/// initial losses and writes an initial checkpoint. Each logged step t > 0 records the loss of the
/// minibatch used for that update. On a non-finite loss or gradient the run stops, the state is
/// restored to the last checkpointed parameters, and the report is marked diverged.
RunReport run_training(TrainingState& state, const data::Dataset& dataset, const RunOptions& options = {});

/// CSV text of the loss log, "step,trainNll,evalNll,wallClockMs" with %.17g numbers.
std::string format_loss_log(const std::vector<LossRecord>& log);

}  // namespace pie::train
