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

// dfmerge: train toy classifiers, merge them, and optimize merge coefficients.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dfmerge/commands.hpp"
#include "dfmerge/config.hpp"
#include "dfmerge/errors.hpp"
#include "dfmerge/parallel.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;
using dfmerge::ExitCode;

int code(ExitCode c) { return static_cast<int>(c); }

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw dfmerge::ConfigError(std::string(flag) + ": '" + item + "' is not a number");
    }
  }
  return out;
}

void print_summary(const dfmerge::RunManifest& m, const std::string& output_dir) {
  std::cout << m.command << ": wrote " << m.artifacts.size() << " artifact(s) under " << output_dir << "\n";
  for (const auto& [path, crc] : m.artifacts.items()) std::cout << "  " << path << "  crc32=" << crc.get<std::string>() << "\n";
  std::cout << "  manifest: " << (std::filesystem::path(output_dir) / "manifests" / (m.command + ".json")).string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfmerge: Fisher-weighted model merging with Bayesian-optimized coefficients"};
  app.require_subcommand(1);

  std::size_t threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (0 = hardware concurrency)");

  std::string config_path;
  std::string output_dir;
  json options = json::object();

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output-dir", output_dir, "Override config output_dir");
  };

  auto* train = app.add_subcommand("train", "Pretrain the shared init, fine-tune per task, train the multitask baseline");
  add_config(train);

  auto* merge = app.add_subcommand("merge", "Merge the fine-tuned models with one method");
  add_config(merge);
  std::string method;
  std::string lambdas;
  double lambda = 0.0, keep = 0.0, drop = 0.0;
  bool unbounded = false;
  merge->add_option("--method", method, "averaging|ta|gta|fisher|fisher_full|df|ties|dare");
  merge->add_option("--lambdas", lambdas, "Per-model coefficients, comma separated");
  auto* lambda_opt = merge->add_option("--lambda", lambda, "Scalar coefficient for ta/ties/dare");
  auto* keep_opt = merge->add_option("--keep-fraction", keep, "TIES keep fraction");
  auto* drop_opt = merge->add_option("--drop-rate", drop, "DARE drop rate");
  merge->add_flag("--allow-unbounded", unbounded, "Allow coefficients outside [0, 1]");

  std::size_t iterations = 0, init_points = 0, resolution = 0;
  std::string acq, objective, kernel, axis, values;
  double val_ratio = 0.0;
  auto add_bo = [&](CLI::App* sub) {
    sub->add_option("--iterations", iterations, "BO iterations after the initial design");
    sub->add_option("--init", init_points, "Initial random evaluations");
    sub->add_option("--acq", acq, "Acquisition: ei|ucb");
    sub->add_option("--objective", objective, "df|gta");
    sub->add_option("--kernel", kernel, "matern52|rbf");
    sub->add_option("--val-ratio", val_ratio, "Fraction of validation samples used by the objective");
  };

  auto* optimize = app.add_subcommand("optimize", "Optimize merge coefficients with Bayesian optimization");
  add_config(optimize);
  add_bo(optimize);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every task");
  add_config(eval);
  std::string checkpoint, split = "test";
  double ratio = 1.0;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path (relative paths resolve under output_dir)")->required();
  eval->add_option("--split", split, "train|validation|test");
  eval->add_option("--ratio", ratio, "Fraction of samples per task");

  auto* land = app.add_subcommand("landscape", "Accuracy grid on the plane of two task vectors (GTA and DF)");
  add_config(land);
  land->add_option("--resolution", resolution, "Cells per axis");

  auto* abl = app.add_subcommand("ablate", "DF-Merge (EI/UCB), w/o Fisher, w/o BO, and Averaging on shared seeds");
  add_config(abl);
  add_bo(abl);

  auto* sweep = app.add_subcommand("sweep", "Best accuracy as a function of iterations or validation ratio");
  add_config(sweep);
  add_bo(sweep);
  sweep->add_option("--axis", axis, "iterations|val_ratio");
  sweep->add_option("--values", values, "Comma-separated values along the axis");

  auto* rerun = app.add_subcommand("rerun", "Re-execute a recorded run and verify artifact checksums");
  std::string manifest_path;
  rerun->add_option("--manifest", manifest_path, "Manifest written by an earlier command")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::kConfig);
  }

  try {
    dfmerge::set_max_threads(threads);

    if (rerun->parsed()) {
      const auto check = dfmerge::rerun_manifest(manifest_path);
      if (!check.mismatches.empty()) {
        std::cerr << "rerun: " << check.mismatches.size() << " artifact(s) differ:\n";
        for (const auto& m : check.mismatches) std::cerr << "  " << m << "\n";
        return code(ExitCode::kIo);
      }
      std::cout << "rerun: all " << check.rerun.artifacts.size() << " artifact checksums match\n";
      return 0;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    auto given = [&](const char* flag) { return sub->count(flag) > 0; };

    if (command == "merge") {
      if (given("--method")) options["method"] = method;
      if (given("--lambdas")) options["lambdas"] = parse_list(lambdas, "--lambdas");
      if (lambda_opt->count()) options["lambda"] = lambda;
      if (keep_opt->count()) options["keep_fraction"] = keep;
      if (drop_opt->count()) options["drop_rate"] = drop;
      if (unbounded) options["allow_unbounded"] = true;
    } else if (command == "eval") {
      options["checkpoint"] = checkpoint;
      options["split"] = split;
      options["ratio"] = ratio;
    } else if (command != "train") {
      if (command == "landscape") {
        if (given("--resolution")) options["resolution"] = resolution;
      } else {
        if (given("--iterations")) options["iterations"] = iterations;
        if (given("--init")) options["init_points"] = init_points;
        if (given("--acq")) options["acquisition"] = acq;
        if (given("--objective")) options["objective"] = objective;
        if (given("--kernel")) options["kernel"] = kernel;
        if (given("--val-ratio")) options["val_ratio"] = val_ratio;
      }
      if (command == "sweep") {
        if (given("--axis")) options["axis"] = axis;
        if (given("--values")) {
          const auto list = parse_list(values, "--values");
          if (list.empty()) throw dfmerge::ConfigError("--values: at least one value is required");
          options["values"] = list;
        }
      }
    }

    dfmerge::ExperimentConfig cfg = dfmerge::load_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    const auto manifest = dfmerge::run_command(command, cfg, options);
    print_summary(manifest, cfg.output_dir);
    return 0;
  } catch (const dfmerge::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(ExitCode::kIo);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(ExitCode::kConfig);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
