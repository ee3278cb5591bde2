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


#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pie/evaluation.hpp"
#include "pie/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pie-cli-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Result run(const std::string& args, const fs::path& dir) {
  const std::string cmd = std::string("'") + PIE_CLI_PATH + "' " + args + " > '" + (dir / "stdout").string() +
                          "' 2> '" + (dir / "stderr").string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir / "stdout"), slurp(dir / "stderr")};
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

const std::string kToy = R"({"dimSchedule":[1],"maxSteps":15,"batchSize":16,"seed":3,"evalEvery":5})";
const std::string kImages = std::string(PIE_TEST_DATA_DIR) + "/mnist-subset-images.idx3-ubyte";

}  // namespace

TEST_CASE("cli: usage and config errors exit with 2") {
  const auto dir = temp_dir("usage");
  CHECK(run("", dir).code == 2);
  CHECK(run("train --data x --out y", dir).code == 2);
  const auto r = run("train --config /nonexistent.json --data synthetic:ring:10 --out " + (dir / "o").string(), dir);
  CHECK(r.code == 2);
  CHECK_FALSE(r.err.empty());
  CHECK(r.out.empty());
  const auto cfg = write_config(dir, R"({"dimSchedule":[1],"bogus":1})");
  CHECK(run("train --config " + cfg.string() + " --data synthetic:ring:10 --out " + (dir / "o").string(), dir).code == 2);
}

TEST_CASE("cli: data errors exit with 3") {
  const auto dir = temp_dir("data");
  const auto cfg = write_config(dir, kToy);
  CHECK(run("train --config " + cfg.string() + " --data /nonexistent.csv --out " + (dir / "o").string(), dir).code == 3);
  CHECK(run("train --config " + cfg.string() + " --data synthetic:spiral:10 --out " + (dir / "o").string(), dir).code == 3);
}

TEST_CASE("cli: divergence exits with 4") {
  const auto dir = temp_dir("diverge");
  const auto cfg = write_config(dir, kToy);
  std::ofstream(dir / "huge.csv") << "x,y\n1e200,1e200\n-1e200,1e200\n1e200,-1e200\n1e200,1e200\n1e200,1e200\n";
  const auto r = run("train --config " + cfg.string() + " --data " + (dir / "huge.csv").string() + " --out " +
                         (dir / "o").string(),
                     dir);
  CHECK(r.code == 4);
  CHECK(json::parse(r.out).at("status") == "diverged");
}

TEST_CASE("cli: maxSteps = 0 writes the manifest and the initial checkpoint only") {
  const auto dir = temp_dir("zero");
  const auto cfg = write_config(dir, R"({"dimSchedule":[1],"maxSteps":0})");
  const auto out = dir / "o";
  const auto r = run("train --config " + cfg.string() + " --data synthetic:two-gaussians:100 --out " + out.string(), dir);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "checkpoints" / "step-000000.json"));
  CHECK_FALSE(fs::exists(out / "loss_log.csv"));
  const auto manifest = json::parse(slurp(out / "manifest.json"));
  CHECK(manifest.at("artifacts").size() == 1);
}

TEST_CASE("cli: identical runs give byte-identical loss logs and a verifiable manifest") {
  const auto dir = temp_dir("twice");
  const auto cfg = write_config(dir, kToy);
  const auto a = dir / "a", b = dir / "b";
  const auto ra = run("train --config " + cfg.string() + " --data synthetic:two-gaussians:200 --out " + a.string(), dir);
  const auto rb = run("train --config " + cfg.string() + " --data synthetic:two-gaussians:200 --out " + b.string(), dir);
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(json::parse(ra.out).at("status") == "ok");
  CHECK(slurp(a / "loss_log.csv") == slurp(b / "loss_log.csv"));

  const auto manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest.at("seed") == 3);
  CHECK(manifest.at("configEcho").at("dimSchedule") == json::array({1}));
  CHECK(manifest.at("datasetFingerprint").get<std::string>().size() == 64);
  CHECK(manifest.contains("versionTag"));
  for (const auto& art : manifest.at("artifacts")) {
    const fs::path p = a / art.at("path").get<std::string>();
    REQUIRE(fs::exists(p));
    CHECK(pie::sha256_file(p) == art.at("sha256").get<std::string>());
  }
}

TEST_CASE("cli: resume continues the run") {
  const auto dir = temp_dir("resume");
  const auto cfg = write_config(dir, R"({"dimSchedule":[1],"maxSteps":20,"batchSize":16,"seed":3,"checkpointEvery":10})");
  const auto full = dir / "full", part = dir / "part";
  REQUIRE(run("train --config " + cfg.string() + " --data synthetic:two-gaussians:200 --out " + full.string(), dir).code == 0);
  const auto r = run("train --config " + cfg.string() + " --data synthetic:two-gaussians:200 --out " + part.string() +
                         " --resume " + (full / "checkpoints" / "step-000010.json").string(),
                     dir);
  REQUIRE(r.code == 0);
  CHECK(slurp(part / "checkpoints" / "step-000020.json") == slurp(full / "checkpoints" / "step-000020.json"));
}

TEST_CASE("cli: eval tasks on an image checkpoint") {
  const auto dir = temp_dir("eval");
  const auto cfg = write_config(dir, R"({"dimSchedule":[392,196,64,10],"convBlocks":2,"finalBlock":true,
      "dequantize":true,"maxSteps":0,"evalSize":8})");
  const auto train_out = dir / "train";
  REQUIRE(run("train --config " + cfg.string() + " --data " + kImages + " --out " + train_out.string(), dir).code == 0);
  const std::string ckpt = (train_out / "checkpoints" / "step-000000.json").string();

  auto r = run("eval --checkpoint " + ckpt + " --task sharpness --source dataset --count 50 --data " + kImages +
                   " --out " + (dir / "sharp").string(),
               dir);
  REQUIRE(r.code == 0);
  const auto report = json::parse(r.out).at("sharpness");
  CHECK(report.at("source") == "dataset");
  CHECK(report.at("sampleCount") == 50);
  CHECK(report.at("meanVariance").get<double>() > 0.0);

  r = run("eval --checkpoint " + ckpt + " --task interpolate --steps 2 --data " + kImages + " --out " +
              (dir / "interp").string(),
          dir);
  REQUIRE(r.code == 0);
  const auto frames = pie::eval::read_pgm(dir / "interp" / "interpolate.pgm");
  CHECK(frames.width == 2 * 28);
  CHECK(frames.height == 28);

  const std::string sample = "eval --checkpoint " + ckpt + " --task sample --count 4 --prior-std 0.5 --seed 9 --out ";
  REQUIRE(run(sample + (dir / "s1").string(), dir).code == 0);
  REQUIRE(run(sample + (dir / "s2").string(), dir).code == 0);
  CHECK(slurp(dir / "s1" / "samples.pgm") == slurp(dir / "s2" / "samples.pgm"));

  r = run("eval --checkpoint " + ckpt + " --task reconstruct --count 3 --data " + kImages + " --out " +
              (dir / "rec").string(),
          dir);
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out).at("mse").get<double>() >= 0.0);

  CHECK(run("eval --checkpoint " + ckpt + " --task dance --out " + (dir / "x").string(), dir).code == 2);
  CHECK(run("eval --checkpoint " + ckpt + " --task reconstruct --out " + (dir / "x").string(), dir).code == 2);

  auto j = json::parse(slurp(ckpt));
  j["formatVersion"] = 2;
  std::ofstream(dir / "old.json") << j.dump();
  r = run("eval --checkpoint " + (dir / "old.json").string() + " --task sample --out " + (dir / "x").string(), dir);
  CHECK(r.code == 3);
  CHECK(r.err.find("version") != std::string::npos);
}
