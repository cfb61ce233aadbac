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

#pragma once

// Experiment configuration (JSON, strict keys) and run manifests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dfmerge/bayesopt.hpp"
#include "dfmerge/harness.hpp"
#include "dfmerge/toymodels.hpp"

#include "json.hpp"

namespace dfmerge {

inline constexpr const char* kToolVersion = "0.1.0";

/// Names accepted by merge.method and `merge --method`.
const std::vector<std::string>& merge_method_names();

struct MergeSection {
  std::string method = "df";  // averaging | ta | gta | fisher | fisher_full | df | ties | dare
  std::vector<double> lambdas;  // per model; empty means 1/M
  double lambda = 0.3;          // scalar coefficient for ta / ties / dare
  double keep_fraction = 0.2;
  double drop_rate = 0.5;
  bool allow_unbounded = false;
};

struct BayesoptSection {
  std::string objective = "df";  // df | gta
  std::size_t init_points = 10;
  std::size_t iterations = 50;
  std::string acquisition = "ei";
  double kappa = kDefaultKappa;
  std::string kernel = "matern52";
  std::size_t candidates = 4096;
};

struct EvalSection {
  double val_ratio = 1.0;
  std::size_t fisher_samples = kDefaultFisherSamples;
};

struct SweepSection {
  std::string axis = "iterations";  // iterations | val_ratio
  std::vector<double> values;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::size_t hidden_dim = 16;
  SuiteOptions suite;
  std::vector<std::string> task_names;  // optional; defaults to task0..task{M-1}
  PretrainOptions pretrain;
  TrainConfig train;
  bool multitask = true;
  TrainConfig multitask_train;
  MergeSection merge;
  BayesoptSection bayesopt;
  EvalSection eval;
  LandscapeOptions landscape;
  SweepSection sweep;

  ClassifierSpec spec() const;
  std::string task_name(std::size_t i) const;
  ObjectiveOptions objective_options() const;
  BOConfig bo_config() const;
  ObjectiveMethod objective_method() const;

  void validate() const;
};

/// Parses and validates; unknown keys and missing required sections raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Seed of a named stage, e.g. "train/task-0", "fisher-batch", "bo", "dare".
std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage);

/// CRC32 of a file's bytes as 8 lowercase hex digits.
std::string file_crc32(const std::filesystem::path& path);

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  nlohmann::json options = nlohmann::json::object();  // resolved command flags
  nlohmann::json config = nlohmann::json::object();   // resolved config snapshot
  nlohmann::json inputs = nlohmann::json::object();   // path relative to output_dir -> crc32
  nlohmann::json artifacts = nlohmann::json::object();
  std::string trajectory;            // relative path, empty when the command has none
  std::vector<std::string> reports;  // relative paths

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);

}  // namespace dfmerge
