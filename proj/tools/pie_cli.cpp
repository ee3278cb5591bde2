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


// pie: train and evaluate pseudo-invertible encoders.
//
//   pie train --config <path> --data <path> --out <dir> [--resume <checkpoint>]
//   pie eval --checkpoint <path> --task {reconstruct|sample|interpolate|sharpness} --out <dir> [options]
//
// Exit codes: 0 success, 1 internal error, 2 usage or config error, 3 data or checkpoint error,
// 4 training diverged. stdout carries one JSON object; diagnostics go to stderr.
// PIE_NUM_THREADS sets the worker thread count.

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pie/data.hpp"
#include "pie/errors.hpp"
#include "pie/evaluation.hpp"
#include "pie/hash.hpp"
#include "pie/kernels.hpp"
#include "pie/model.hpp"
#include "pie/train.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct ExitError {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw ExitError{code, message}; }

pie::data::Dataset load_data(const std::string& spec, const pie::train::TrainConfig& config) {
  try {
    auto ds = pie::data::load_any(spec, config.seed);
    pie::data::split_train_test(ds, config.testFraction, config.seed);
    return ds;
  } catch (const pie::Error& e) {
    fail(kData, std::string("data: ") + e.what());
  }
}

pie::train::TrainingState load_state(const fs::path& path) {
  try {
    return pie::train::load_checkpoint(path);
  } catch (const pie::Error& e) {
    fail(kData, std::string("checkpoint: ") + e.what());
  }
}

json artifact_entries(const fs::path& out_dir, const std::vector<fs::path>& paths) {
  json list = json::array();
  for (const auto& p : paths) {
    list.push_back({{"path", fs::relative(p, out_dir).generic_string()}, {"sha256", pie::sha256_file(p)}});
  }
  return list;
}

void write_manifest(const fs::path& out_dir, json manifest, const std::vector<fs::path>& artifacts) {
  manifest["artifacts"] = artifact_entries(out_dir, artifacts);
  manifest["versionTag"] = pie::train::kVersionTag;
  pie::train::write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int cmd_train(const std::string& config_path, const std::string& data_spec, const fs::path& out_dir,
              const std::string& resume) {
  pie::train::TrainConfig config;
  try {
    config = pie::train::load_config(config_path);
  } catch (const pie::Error& e) {
    fail(kConfig, std::string("config: ") + e.what());
  }
  const auto dataset = load_data(data_spec, config);

  std::optional<pie::train::TrainingState> state;
  if (!resume.empty()) {
    state.emplace(load_state(resume));
    auto expected = pie::train::to_json(state->config);
    auto given = pie::train::to_json(config);
    expected.erase("maxSteps");
    given.erase("maxSteps");
    if (expected != given) fail(kConfig, "config differs from the checkpoint in more than maxSteps");
    state->config.maxSteps = config.maxSteps;
    if (state->input_shape != dataset.item_shape) fail(kData, "checkpoint input shape does not match the data");
  } else {
    try {
      state.emplace(pie::train::init_training(config, dataset.item_shape));
    } catch (const pie::ConfigError& e) {
      fail(kConfig, std::string("config: ") + e.what());
    }
  }

  fs::create_directories(out_dir);
  pie::train::RunOptions options;
  options.out_dir = out_dir;
  options.write_loss_log = config.maxSteps > 0;
  const auto report = pie::train::run_training(*state, dataset, options);

  std::vector<fs::path> artifacts = report.checkpoints;
  if (report.loss_log) artifacts.push_back(*report.loss_log);
  std::optional<double> initial_eval, final_eval;
  for (const auto& r : report.log) {
    if (!r.eval_nll) continue;
    if (!initial_eval) initial_eval = r.eval_nll;
    final_eval = r.eval_nll;
  }
  json manifest = {{"command", "train"},
                   {"configEcho", pie::train::to_json(config)},
                   {"seed", config.seed},
                   {"data", data_spec},
                   {"datasetFingerprint", pie::data::fingerprint(dataset)},
                   {"finalStep", report.final_step},
                   {"diverged", report.diverged}};
  if (!resume.empty()) manifest["resumedFrom"] = resume;
  write_manifest(out_dir, manifest, artifacts);

  json summary = {{"status", report.diverged ? "diverged" : "ok"},
                  {"finalStep", report.final_step},
                  {"initialEvalNll", nullable(initial_eval)},
                  {"finalEvalNll", nullable(final_eval)},
                  {"manifest", (out_dir / "manifest.json").string()}};
  if (report.diverged) {
    summary["reason"] = report.divergence_reason;
    summary["lastGoodCheckpoint"] = report.checkpoints.empty() ? json(nullptr) : json(report.checkpoints.back().string());
    std::cerr << "training diverged: " << report.divergence_reason << "\n";
  }
  std::cout << summary.dump() << std::endl;
  return report.diverged ? kDiverged : kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string task;
  fs::path out;
  double prior_std = 1.0;
  std::size_t steps = 8;
  std::optional<std::size_t> count;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::string source = "model-samples";
};

bool is_image(const pie::Shape& shape) { return shape.size() == 3 && shape[0] == 1; }

// rows x cols = n with cols the smallest divisor of n that is at least sqrt(n).
std::pair<std::size_t, std::size_t> grid_shape(std::size_t n) {
  std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (n % cols != 0) ++cols;
  return {n / cols, cols};
}

fs::path write_images(const std::vector<pie::Tensor>& images, std::size_t rows, std::size_t cols,
                      const fs::path& out_dir, const std::string& stem) {
  if (is_image(images.front().shape())) {
    const auto path = out_dir / (stem + ".pgm");
    pie::eval::write_pgm(pie::eval::render_grid(images, rows, cols), path);
    return path;
  }
  std::string text;
  for (const auto& t : images) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", t[i]);
      text += (i ? "," : "") + std::string(buf);
    }
    text += "\n";
  }
  const auto path = out_dir / (stem + ".csv");
  pie::train::write_file_atomic(path, text);
  return path;
}

int cmd_eval(const EvalArgs& args) {
  const auto state = load_state(args.checkpoint);
  const auto& model = state.model;
  const std::uint64_t seed = args.seed.value_or(state.config.seed);
  std::optional<pie::data::Dataset> dataset;
  if (!args.data.empty()) {
    dataset = load_data(args.data, state.config);
    if (dataset->item_shape != state.input_shape) fail(kData, "data shape does not match the checkpoint model");
  }
  auto need_data = [&] {
    if (!dataset) fail(kConfig, "task '" + args.task + "' needs --data");
    return *dataset;
  };
  fs::create_directories(args.out);

  json result = {{"task", args.task}, {"checkpoint", args.checkpoint}, {"step", state.step}};
  std::vector<fs::path> artifacts;
  pie::Rng rng(seed);

  if (args.task == "reconstruct") {
    const auto& ds = need_data();
    const auto rec = pie::eval::reconstruct_batch(model, ds, args.count.value_or(16));
    std::vector<pie::Tensor> tiles = rec.originals;
    tiles.insert(tiles.end(), rec.reconstructions.begin(), rec.reconstructions.end());
    artifacts.push_back(write_images(tiles, 2, rec.originals.size(), args.out, "reconstruct"));
    result["mse"] = rec.mse;
    result["count"] = rec.originals.size();
  } else if (args.task == "sample") {
    const std::size_t count = args.count.value_or(64);
    const auto samples = pie::model::sample(model, count, args.prior_std, rng);
    const auto [rows, cols] = grid_shape(count);
    artifacts.push_back(write_images(samples, rows, cols, args.out, "samples"));
    result["count"] = count;
    result["priorStd"] = args.prior_std;
  } else if (args.task == "interpolate") {
    const auto& ds = need_data();
    const auto& pool = ds.test_indices.size() >= 2 ? ds.test_indices : ds.train_indices;
    if (pool.size() < 2) fail(kData, "interpolation needs two items");
    const auto frames = pie::model::interpolate(model, ds.items[pool[0]], ds.items[pool[1]], args.steps);
    artifacts.push_back(write_images(frames, 1, frames.size(), args.out, "interpolate"));
    result["steps"] = frames.size();
  } else if (args.task == "sharpness") {
    std::vector<pie::Tensor> images;
    pie::eval::SharpnessSource source;
    if (args.source == "dataset") {
      const auto& ds = need_data();
      const std::size_t n = std::min(args.count.value_or(ds.size()), ds.size());
      images.assign(ds.items.begin(), ds.items.begin() + static_cast<std::ptrdiff_t>(n));
      source = pie::eval::SharpnessSource::Dataset;
    } else {
      images = pie::model::sample(model, args.count.value_or(64), args.prior_std, rng);
      source = pie::eval::SharpnessSource::ModelSamples;
      result["priorStd"] = args.prior_std;
    }
    if (!is_image(images.front().shape())) fail(kData, "sharpness needs grey-scale images");
    const auto report = pie::eval::laplace_sharpness(images, source);
    result["sharpness"] = pie::eval::to_json(report);
    const auto path = args.out / "sharpness.json";
    pie::train::write_file_atomic(path, pie::eval::to_json(report).dump(2) + "\n");
    artifacts.push_back(path);
  } else {
    fail(kConfig, "unknown task '" + args.task + "'");
  }

  const auto metrics = args.out / "metrics.json";
  pie::train::write_file_atomic(metrics, result.dump(2) + "\n");
  artifacts.push_back(metrics);
  json manifest = {{"command", "eval"}, {"configEcho", pie::train::to_json(state.config)}, {"seed", seed},
                   {"task", args.task}, {"checkpointSha256", pie::sha256_file(args.checkpoint)}};
  if (dataset) manifest["datasetFingerprint"] = pie::data::fingerprint(*dataset);
  write_manifest(args.out, manifest, artifacts);
  result["manifest"] = (args.out / "manifest.json").string();
  std::cout << result.dump() << std::endl;
  return kOk;
}

void apply_thread_env() {
  if (const char* env = std::getenv("PIE_NUM_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n < 1) throw std::invalid_argument("non-positive");
      pie::kernels::set_threads(n);
    } catch (const std::exception&) {
      fail(kConfig, std::string("PIE_NUM_THREADS must be a positive integer, got '") + env + "'");
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-invertible encoder: train and evaluate"};
  app.require_subcommand(1);

  std::string config_path, data_spec, out_dir, resume;
  auto* train = app.add_subcommand("train", "Maximise the likelihood of a dataset");
  train->add_option("--config", config_path, "JSON training config")->required();
  train->add_option("--data", data_spec, "IDX image file, 2-column CSV or synthetic:<kind>:<n>[:<seed>]")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint");

  EvalArgs eval_args;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required();
  eval->add_option("--task", eval_args.task, "reconstruct | sample | interpolate | sharpness")->required();
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--prior-std", eval_args.prior_std, "Standard deviation of sampled codes")->check(CLI::NonNegativeNumber);
  eval->add_option("--steps", eval_args.steps, "Interpolation frames")->check(CLI::Range(2, 1 << 20));
  eval->add_option("--count", eval_args.count, "Number of items or samples")->check(CLI::PositiveNumber);
  eval->add_option("--data", eval_args.data, "Dataset for reconstruct, interpolate and dataset sharpness");
  eval->add_option("--seed", eval_args.seed, "Sampling seed (defaults to the training seed)");
  eval->add_option("--source", eval_args.source, "Sharpness source")
      ->check(CLI::IsMember({"dataset", "model-samples"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kConfig;
  }

  try {
    apply_thread_env();
    if (*train) return cmd_train(config_path, data_spec, out_dir, resume);
    eval_args.out = eval_out;
    return cmd_eval(eval_args);
  } catch (const ExitError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const pie::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const pie::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const pie::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
