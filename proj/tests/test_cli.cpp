/* Copyright 2026 The dfmerge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "dfmerge/bayesopt.hpp"
#include "dfmerge/commands.hpp"
#include "dfmerge/config.hpp"
#include "dfmerge/params.hpp"

using namespace dfmerge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dfmerge_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path config_path() {
  const fs::path p = workdir() / "config.json";
  if (!fs::exists(p)) {
    const json cfg = {
        {"seed", 11},
        {"output_dir", (workdir() / "run").string()},
        {"model", {{"hidden_dim", 8}}},
        {"suite",
         {{"num_tasks", 2}, {"input_dim", 12}, {"num_classes", 3}, {"informative_dims", 4}, {"conflict", 0.0},
          {"separation", 3.0}, {"train_size", 150}, {"validation_size", 150}, {"test_size", 150}}},
        {"train", {{"steps", 150}}},
        {"multitask", {{"enabled", true}, {"steps", 150}}},
        {"bayesopt", {{"candidates", 512}}},
        {"eval", {{"fisher_samples", 10}}},
        {"landscape", {{"resolution", 4}}},
    };
    std::ofstream(p) << cfg.dump(2);
  }
  return p;
}

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const fs::path log = workdir() / "last.log";
  const std::string cmd = std::string(DFMERGE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string with_config(const std::string& sub, const std::string& flags = "") {
  return sub + " -c " + config_path().string() + (flags.empty() ? "" : " " + flags);
}

const fs::path& out_dir() {
  static const fs::path d = workdir() / "run";
  return d;
}

// Runs `train` once for every case that needs a workspace.
void ensure_trained() {
  static const bool done = [] {
    const Result r = run(with_config("train"));
    INFO(r.out);
    REQUIRE(r.code == 0);
    return true;
  }();
  (void)done;
}

}  // namespace

TEST_CASE("usage errors exit with the config code") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train").code == 2);  // --config is required
  CHECK(run("--help").code == 0);
}

TEST_CASE("train writes the pretrained, per-task and multitask checkpoints") {
  ensure_trained();
  CHECK(fs::exists(out_dir() / "models" / "pretrained.ckpt"));
  CHECK(fs::exists(out_dir() / "models" / "task0.ckpt"));
  CHECK(fs::exists(out_dir() / "models" / "task1.ckpt"));
  CHECK(fs::exists(out_dir() / "models" / "multitask.ckpt"));
  std::size_t ckpts = 0;
  for (const auto& e : fs::directory_iterator(out_dir() / "models")) ckpts += e.path().extension() == ".ckpt";
  CHECK(ckpts == 4);
  const RunManifest m = load_manifest(out_dir() / "manifests" / "train.json");
  CHECK(m.command == "train");
  CHECK(m.artifacts.contains("models/task0.ckpt"));
  CHECK(m.artifacts["models/task0.ckpt"] == file_crc32(out_dir() / "models" / "task0.ckpt"));
}

TEST_CASE("merge agrees with the library") {
  ensure_trained();
  const Result r = run(with_config("merge", "--method df --lambdas 0.6,0.4"));
  INFO(r.out);
  REQUIRE(r.code == 0);
  const Checkpoint merged = load_checkpoint(out_dir() / "merge" / "df.ckpt");

  ExperimentConfig cfg = apply_options(load_config(config_path()), "merge",
                                       {{"method", "df"}, {"lambdas", {0.6, 0.4}}});
  const Workspace ws = load_workspace(cfg);
  CHECK(merged.params == merge_with_method(ws, cfg, "df"));
  CHECK(fs::exists(out_dir() / "merge" / "df-test.csv"));

  for (const char* method : {"averaging", "ta", "ties", "dare", "fisher", "fisher_full"}) {
    CAPTURE(method);
    CHECK(run(with_config("merge", std::string("--method ") + method)).code == 0);
  }
}

TEST_CASE("merge input errors") {
  ensure_trained();
  const Result bad = run(with_config("merge", "--method magic"));
  CHECK(bad.code == 2);
  CHECK(bad.out.find("averaging") != std::string::npos);
  CHECK(bad.out.find("dare") != std::string::npos);
  CHECK(run(with_config("merge", "--method gta --lambdas 0.5")).code == 2);
  CHECK(run(with_config("merge", "--method gta --lambdas 1.5,0.2")).code == 2);
  CHECK(run(with_config("merge", "--method gta --lambdas 1.5,0.2 --allow-unbounded")).code == 0);
  CHECK(run(with_config("merge", "--lambdas a,b")).code == 2);
}

TEST_CASE("commands before train report a missing workspace") {
  const Result r = run(with_config("optimize", "-o " + (workdir() / "empty").string()));
  CHECK(r.code == 4);
  CHECK(r.out.find("train") != std::string::npos);
}

TEST_CASE("optimize writes the trajectory") {
  ensure_trained();
  SUBCASE("defaults") {
    REQUIRE(run(with_config("optimize")).code == 0);
    const auto traj = read_trajectory_jsonl(out_dir() / "optimize" / "trajectory.jsonl");
    CHECK(traj.size() == 60);
    for (std::size_t i = 1; i < traj.size(); ++i) CHECK(traj[i].best_so_far >= traj[i - 1].best_so_far);
    const json best = json::parse(std::ifstream(out_dir() / "optimize" / "best.json"));
    CHECK(best.at("lambdas").size() == 2);
    CHECK(fs::exists(out_dir() / "optimize" / "merged.ckpt"));
    CHECK(fs::exists(out_dir() / "optimize" / "test.csv"));
  }
  SUBCASE("init only") {
    REQUIRE(run(with_config("optimize", "--iterations 0 --init 5")).code == 0);
    CHECK(read_trajectory_jsonl(out_dir() / "optimize" / "trajectory.jsonl").size() == 5);
  }
  SUBCASE("bad flags") {
    CHECK(run(with_config("optimize", "--acq pi")).code == 2);
    CHECK(run(with_config("optimize", "--val-ratio 0")).code == 2);
    CHECK(run(with_config("optimize", "--init 0")).code == 2);
  }
}

TEST_CASE("eval, landscape, ablate and sweep") {
  ensure_trained();
  CHECK(run(with_config("eval", "--checkpoint models/task0.ckpt --split validation")).code == 0);
  CHECK(fs::exists(out_dir() / "eval" / "task0-validation.csv"));
  CHECK(run(with_config("eval", "--checkpoint models/absent.ckpt")).code == 4);
  CHECK(run(with_config("eval", "--checkpoint models/task0.ckpt --split dev")).code == 2);

  CHECK(run(with_config("landscape")).code == 0);
  CHECK(fs::exists(out_dir() / "landscape" / "gta.csv"));
  CHECK(fs::exists(out_dir() / "landscape" / "df.json"));

  REQUIRE(run(with_config("ablate", "--iterations 2 --init 3")).code == 0);
  std::ifstream abl(out_dir() / "ablate" / "ablation.csv");
  std::string line;
  int lines = 0;
  while (std::getline(abl, line)) ++lines;
  CHECK(lines == 6);

  CHECK(run(with_config("sweep", "--axis iterations --values 0,2 --init 3")).code == 0);
  CHECK(fs::exists(out_dir() / "sweep" / "iterations.csv"));
  CHECK(run(with_config("sweep", "--axis val_ratio --values 0.5 --init 3 --iterations 1")).code == 0);
  CHECK(run(with_config("sweep", "--values \"\"")).code == 2);
  CHECK(run(with_config("sweep", "--axis depth --values 1")).code == 2);
}

TEST_CASE("rerun reproduces every artifact") {
  ensure_trained();
  REQUIRE(run(with_config("optimize", "--iterations 3 --init 4")).code == 0);
  const fs::path manifest = out_dir() / "manifests" / "optimize.json";
  const json before = load_manifest(manifest).artifacts;
  const Result r = run("rerun --manifest " + manifest.string());
  INFO(r.out);
  CHECK(r.code == 0);
  CHECK(load_manifest(manifest).artifacts == before);

  const Result t = run("rerun --manifest " + (out_dir() / "manifests" / "train.json").string());
  INFO(t.out);
  CHECK(t.code == 0);

  // A modified input is caught before anything is recomputed.
  {
    std::ofstream f(out_dir() / "models" / "task1.ckpt", std::ios::app | std::ios::binary);
    f << "x";
  }
  CHECK(run("rerun --manifest " + manifest.string()).code == 4);
  CHECK(run("rerun --manifest " + (workdir() / "absent.json").string()).code == 4);
  // Restore the workspace for any later case.
  REQUIRE(run(with_config("train")).code == 0);
}
