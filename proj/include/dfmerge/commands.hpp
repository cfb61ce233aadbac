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

// Command implementations shared by the dfmerge tool and its tests. Every
// command reads its inputs from and writes its artifacts under
// config.output_dir, then records a RunManifest in manifests/<command>.json.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dfmerge/config.hpp"
#include "dfmerge/harness.hpp"
#include "dfmerge/merge.hpp"

#include "json.hpp"

namespace dfmerge {


/// Artifacts produced by `train`, loaded back from output_dir.
struct Workspace {
  std::shared_ptr<const Suite> suite;
  Checkpoint pretrained;
  std::vector<Checkpoint> finetuned;
  MergeInputs inputs;
  nlohmann::json checksums = nlohmann::json::object();  // relative path -> crc32
};

Workspace load_workspace(const ExperimentConfig& cfg);

/// Builds the suite datasets a config describes (no I/O).
std::vector<Dataset> build_datasets(const ExperimentConfig& cfg);

/// The merged model a `merge` invocation produces for resolved options.
ParamVector merge_with_method(const Workspace& ws, const ExperimentConfig& cfg, const std::string& method);

/// Applies command flags on top of the config; unknown option keys raise ConfigError.
ExperimentConfig apply_options(const ExperimentConfig& cfg, const std::string& command,
                               const nlohmann::json& options);

/// Runs `command` ("train", "merge", "optimize", "eval", "landscape",
/// "ablate", "sweep") and returns its manifest.
RunManifest run_command(const std::string& command, const ExperimentConfig& cfg, const nlohmann::json& options);

struct RerunCheck {
  RunManifest rerun;
  std::vector<std::string> mismatches;  // artifacts whose checksum changed or vanished
};

/// Re-executes the command recorded in a manifest and compares artifact checksums.
RerunCheck rerun_manifest(const std::filesystem::path& manifest_path);

}  // namespace dfmerge
