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


#include "pie/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "pie/errors.hpp"

namespace pie::train {

using nlohmann::json;

namespace {

constexpr std::size_t kEvalChunk = 256;
constexpr double kQuantum = 1.0 / 256.0;

template <typename T>
T get_field(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  } else {
    if (!v.is_number_unsigned()) throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<T>();
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_state(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw FormatError("checkpoint: corrupt random engine state");
  return rng;
}

json tensor_json(const std::string& name, const Tensor& t) {
  return json{{"name", name}, {"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const json& j) {
  auto shape = j.at("shape").get<Shape>();
  auto values = j.at("data").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(values));
}

json gradients_json(const ad::Gradients& g) {
  json out = json::array();
  for (const auto& [name, t] : g) out.push_back(tensor_json(name, t));
  return out;
}

ad::Gradients gradients_from_json(const json& j) {
  ad::Gradients out;
  for (const auto& e : j) out.emplace(e.at("name").get<std::string>(), tensor_from_json(e));
  return out;
}

Tensor prepare_batch(const data::Dataset& dataset, std::span<const std::size_t> indices, const TrainConfig& config,
                     Rng* noise) {
  Tensor x = dataset.batch(indices);
  if (config.dequantize) {
    if (noise) {
      std::uniform_real_distribution<double> u(0.0, kQuantum);
      for (double& v : x.data()) v += u(*noise);
    } else {
      for (double& v : x.data()) v += 0.5 * kQuantum;
    }
  }
  return x;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "step-%06llu.json", static_cast<unsigned long long>(step));
  return dir / "checkpoints" / buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(epsilonSq > 0.0) || !std::isfinite(epsilonSq)) throw ConfigError("epsilonSq must be positive");
  if (!(learningRate > 0.0)) throw ConfigError("learningRate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(epsAdam > 0.0)) throw ConfigError("epsAdam must be positive");
  if (batchSize < 1) throw ConfigError("batchSize must be at least 1");
  if (dimSchedule.empty()) throw ConfigError("dimSchedule must list at least one dimension");
  for (std::size_t i = 0; i < dimSchedule.size(); ++i) {
    if (dimSchedule[i] == 0) throw ConfigError("dimSchedule entries must be positive");
    if (i > 0 && !(dimSchedule[i] < dimSchedule[i - 1])) throw ConfigError("dimSchedule must strictly decrease");
  }
  if (convBlocks > dimSchedule.size()) throw ConfigError("convBlocks exceeds the dimSchedule length");
  if (kRepeats < 1) throw ConfigError("kRepeats must be at least 1");
  if (hiddenMin < 1) throw ConfigError("hiddenMin must be at least 1");
  if (residualMean != "zero" && residualMean != "mlp") throw ConfigError("residualMean must be \"zero\" or \"mlp\"");
  if (!(initScale >= 0.0)) throw ConfigError("initScale must be non-negative");
  if (!(gradClip > 0.0)) throw ConfigError("gradClip must be positive");
  if (evalEvery < 1) throw ConfigError("evalEvery must be at least 1");
  if (!(testFraction >= 0.0 && testFraction < 1.0)) throw ConfigError("testFraction must lie in [0, 1)");
}

json to_json(const TrainConfig& c) {
  return json{{"epsilonSq", c.epsilonSq},
              {"learningRate", c.learningRate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsAdam", c.epsAdam},
              {"batchSize", c.batchSize},
              {"maxSteps", c.maxSteps},
              {"seed", c.seed},
              {"dimSchedule", c.dimSchedule},
              {"kRepeats", c.kRepeats},
              {"convBlocks", c.convBlocks},
              {"finalBlock", c.finalBlock},
              {"householderCount", c.householderCount},
              {"hiddenMin", c.hiddenMin},
              {"residualMean", c.residualMean},
              {"initScale", c.initScale},
              {"gradClip", c.gradClip},
              {"dequantize", c.dequantize},
              {"evalEvery", c.evalEvery},
              {"evalSize", c.evalSize},
              {"checkpointEvery", c.checkpointEvery},
              {"testFraction", c.testFraction},
              {"recordWallClock", c.recordWallClock}};
}

TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  const json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = get_field<std::decay_t<decltype(field)>>(j, key);
  };
  opt("epsilonSq", c.epsilonSq);
  opt("learningRate", c.learningRate);
  opt("beta1", c.beta1);
  opt("beta2", c.beta2);
  opt("epsAdam", c.epsAdam);
  opt("batchSize", c.batchSize);
  opt("maxSteps", c.maxSteps);
  opt("seed", c.seed);
  opt("kRepeats", c.kRepeats);
  opt("convBlocks", c.convBlocks);
  opt("finalBlock", c.finalBlock);
  opt("householderCount", c.householderCount);
  opt("hiddenMin", c.hiddenMin);
  opt("residualMean", c.residualMean);
  opt("initScale", c.initScale);
  opt("gradClip", c.gradClip);
  opt("dequantize", c.dequantize);
  opt("evalEvery", c.evalEvery);
  opt("evalSize", c.evalSize);
  opt("checkpointEvery", c.checkpointEvery);
  opt("testFraction", c.testFraction);
  opt("recordWallClock", c.recordWallClock);
  if (!j.contains("dimSchedule")) throw ConfigError("config key 'dimSchedule' is required");
  const json& ds = j.at("dimSchedule");
  if (!ds.is_array()) throw ConfigError("config key 'dimSchedule' must be an array");
  for (const auto& v : ds) {
    if (!v.is_number_unsigned()) throw ConfigError("dimSchedule entries must be non-negative integers");
    c.dimSchedule.push_back(v.get<std::size_t>());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

model::ModelConfig model_config(const TrainConfig& config, const Shape& input_shape) {
  config.validate();
  model::ModelConfig m;
  m.input_shape = input_shape;
  m.k_repeats = config.kRepeats;
  m.householder_count = config.householderCount;
  m.hidden_min = config.hiddenMin;
  m.residual_mean = config.residualMean == "mlp" ? flow::ResidualMean::Network : flow::ResidualMean::Zero;
  m.epsilon_sq = config.epsilonSq;
  m.init_scale = config.initScale;
  if (config.convBlocks > 0 && input_shape.size() != 3) {
    throw ConfigError("convBlocks > 0 needs image input, got " + shape_string(input_shape));
  }
  std::size_t h = input_shape.size() == 3 ? input_shape[1] : 1;
  std::size_t w = input_shape.size() == 3 ? input_shape[2] : 1;
  for (std::size_t i = 0; i < config.dimSchedule.size(); ++i) {
    const std::size_t dim = config.dimSchedule[i];
    if (i < config.convBlocks) {
      if (h % 2 != 0 || w % 2 != 0) throw ConfigError("convolutional block " + std::to_string(i) + " needs an even grid");
      h /= 2;
      w /= 2;
      if (dim % (h * w) != 0) {
        throw ConfigError("dimSchedule entry " + std::to_string(dim) + " is not a multiple of the " +
                          std::to_string(h) + "x" + std::to_string(w) + " grid");
      }
      m.blocks.push_back({model::BlockKind::Convolutional, dim / (h * w)});
    } else {
      m.blocks.push_back({model::BlockKind::Linear, dim});
    }
  }
  if (config.finalBlock) m.blocks.push_back({model::BlockKind::Linear, 0});
  return m;
}

AdamConfig adam_config(const TrainConfig& config) {
  return AdamConfig{config.learningRate, config.beta1, config.beta2, config.epsAdam};
}

TrainingState init_training(const TrainConfig& config, const Shape& input_shape) {
  Rng rng(config.seed);
  model::PieModel model(model_config(config, input_shape), rng);
  return TrainingState{config, input_shape, std::move(model), AdamState{}, rng, 0};
}

json checkpoint_json(const TrainingState& state) {
  json params = json::array();
  for (const auto* p : state.model.parameters()) params.push_back(tensor_json(p->name, p->value));
  return json{{"format", "pie-checkpoint"},
              {"formatVersion", kCheckpointFormatVersion},
              {"versionTag", kVersionTag},
              {"config", to_json(state.config)},
              {"inputShape", state.input_shape},
              {"step", state.step},
              {"rng", rng_state(state.rng)},
              {"parameters", params},
              {"optimizer",
               {{"step", state.adam.step},
                {"first", gradients_json(state.adam.first)},
                {"second", gradients_json(state.adam.second)}}}};
}

TrainingState state_from_checkpoint(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "pie-checkpoint") throw FormatError("not a checkpoint file");
    const int version = j.at("formatVersion").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointFormatVersion) + ")");
    }
    const TrainConfig config = config_from_json(j.at("config"));
    TrainingState state = init_training(config, j.at("inputShape").get<Shape>());
    state.step = j.at("step").get<std::uint64_t>();
    state.rng = rng_from_state(j.at("rng").get<std::string>());

    std::map<std::string, Tensor> stored;
    for (const auto& e : j.at("parameters")) stored.emplace(e.at("name").get<std::string>(), tensor_from_json(e));
    auto params = state.model.parameters();
    if (stored.size() != params.size()) throw FormatError("checkpoint parameter count does not match the model");
    for (auto* p : params) {
      const auto it = stored.find(p->name);
      if (it == stored.end()) throw FormatError("checkpoint lacks parameter " + p->name);
      if (it->second.shape() != p->value.shape()) throw FormatError("checkpoint shape mismatch for " + p->name);
      p->value = it->second;
    }
    const json& opt = j.at("optimizer");
    state.adam.step = opt.at("step").get<std::uint64_t>();
    state.adam.first = gradients_from_json(opt.at("first"));
    state.adam.second = gradients_from_json(opt.at("second"));
    return state;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) {
  write_file_atomic(path, checkpoint_json(state).dump() + "\n");
}

TrainingState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return state_from_checkpoint(j);
}

double mean_nll(const model::PieModel& model, const data::Dataset& dataset, std::span<const std::size_t> indices,
                const TrainConfig& config) {
  if (indices.empty()) throw ConfigError("mean_nll needs at least one item");
  double total = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    ad::Tape tape(false);
    try {
      const auto tr = model.trace(tape, prepare_batch(dataset, chunk, config, nullptr));
      for (double v : tr.log_likelihood.value().data()) total -= v;
    } catch (const NonFiniteError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  }
  return total / static_cast<double>(indices.size());
}

std::vector<std::size_t> eval_indices(const data::Dataset& dataset, const TrainConfig& config) {
  std::vector<std::size_t> idx = dataset.test_indices;
  if (config.evalSize > 0 && idx.size() > config.evalSize) idx.resize(config.evalSize);
  return idx;
}

std::string format_loss_log(const std::vector<LossRecord>& log) {
  std::string out = "step,trainNll,evalNll,wallClockMs\n";
  for (const auto& r : log) {
    out += std::to_string(r.step) + "," + format_number(r.train_nll) + "," +
           (r.eval_nll ? format_number(*r.eval_nll) : std::string()) + "," + format_number(r.wall_ms) + "\n";
  }
  return out;
}

RunReport run_training(TrainingState& state, const data::Dataset& dataset, const RunOptions& options) {
  const TrainConfig& config = state.config;
  if (dataset.item_shape != state.input_shape) {
    throw ShapeError("dataset items " + shape_string(dataset.item_shape) + " do not match the model input " +
                     shape_string(state.input_shape));
  }
  if (dataset.train_indices.empty()) throw ConfigError("training split is empty");

  const auto started = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    if (!config.recordWallClock) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  };
  const bool to_disk = !options.out_dir.empty();
  const auto held_out = eval_indices(dataset, config);
  std::vector<std::size_t> train_probe = dataset.train_indices;
  if (config.evalSize > 0 && train_probe.size() > config.evalSize) train_probe.resize(config.evalSize);
  const AdamConfig adam = adam_config(config);

  RunReport report;
  TrainingState last_good = state;
  auto checkpoint = [&] {
    last_good = state;
    if (to_disk) {
      const auto path = checkpoint_path(options.out_dir, state.step);
      save_checkpoint(state, path);
      report.checkpoints.push_back(path);
    }
  };
  auto flush_log = [&] {
    if (to_disk && options.write_loss_log) {
      report.loss_log = options.out_dir / "loss_log.csv";
      write_file_atomic(*report.loss_log, format_loss_log(report.log));
    }
  };
  auto diverge = [&](const std::string& reason) {
    report.diverged = true;
    report.divergence_reason = reason;
    state = last_good;
  };

  if (state.step == 0) {
    LossRecord r;
    r.step = 0;
    r.train_nll = mean_nll(state.model, dataset, train_probe, config);
    if (!held_out.empty()) r.eval_nll = mean_nll(state.model, dataset, held_out, config);
    r.wall_ms = elapsed_ms();
    if (!std::isfinite(r.train_nll) || (r.eval_nll && !std::isfinite(*r.eval_nll))) {
      report.log.push_back(r);
      diverge("initial loss is not finite");
      flush_log();
      return report;
    }
    report.log.push_back(r);
    checkpoint();
  }

  std::uniform_int_distribution<std::size_t> pick(0, dataset.train_indices.size() - 1);
  std::vector<std::size_t> batch(config.batchSize);
  while (state.step < config.maxSteps) {
    const std::uint64_t step = state.step + 1;
    for (auto& b : batch) b = dataset.train_indices[pick(state.rng)];
    const Tensor x = prepare_batch(dataset, batch, config, &state.rng);

    double loss_value = 0.0;
    ad::Gradients grads;
    try {
      ad::Tape tape;
      const auto tr = state.model.trace(tape, x);
      const ad::Var loss = ad::scale(ad::sum(tr.log_likelihood), -1.0 / static_cast<double>(batch.size()));
      loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        diverge("loss is not finite at step " + std::to_string(step));
        break;
      }
      grads = tape.backward(loss);
    } catch (const NonFiniteError& e) {
      diverge(std::string("non-finite activation at step ") + std::to_string(step) + ": " + e.what());
      break;
    } catch (const SingularityError& e) {
      diverge(std::string("singular layer at step ") + std::to_string(step) + ": " + e.what());
      break;
    }
    clip_gradients(grads, config.gradClip);
    auto params = state.model.parameters();
    if (adam_step(params, grads, state.adam, adam) == StepStatus::RejectedNonFinite) {
      diverge("non-finite gradient at step " + std::to_string(step));
      break;
    }
    state.step = step;

    LossRecord r;
    r.step = step;
    r.train_nll = loss_value;
    if (!held_out.empty() && (step % config.evalEvery == 0 || step == config.maxSteps)) {
      r.eval_nll = mean_nll(state.model, dataset, held_out, config);
    }
    r.wall_ms = elapsed_ms();
    report.log.push_back(r);
    if (r.eval_nll && !std::isfinite(*r.eval_nll)) {
      diverge("held-out loss is not finite at step " + std::to_string(step));
      break;
    }
    if (step == config.maxSteps || (config.checkpointEvery > 0 && step % config.checkpointEvery == 0)) {
      checkpoint();
    }
  }

  report.final_step = state.step;
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  flush_log();
  return report;
}

}  // namespace pie::train
