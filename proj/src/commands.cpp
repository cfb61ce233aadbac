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

#include "dfmerge/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dfmerge/errors.hpp"
#include "dfmerge/fisher.hpp"

namespace dfmerge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kCommands = {"train", "merge", "optimize", "eval", "landscape", "ablate", "sweep"};

std::string data_path(const ExperimentConfig& cfg, std::size_t i) { return "data/" + cfg.task_name(i) + ".dfd"; }
std::string model_path(const ExperimentConfig& cfg, std::size_t i) { return "models/" + cfg.task_name(i) + ".ckpt"; }
const char* kPretrainedPath = "models/pretrained.ckpt";
const char* kMultitaskPath = "models/multitask.ckpt";

// Collects written artifacts and their checksums.
class Outputs {
 public:
  explicit Outputs(fs::path root) : root_(std::move(root)) {}

  fs::path prepare(const std::string& rel) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }
  void record(const std::string& rel) { artifacts_[rel] = file_crc32(root_ / rel); }

  void text(const std::string& rel, const std::string& body) {
    std::ofstream out(prepare(rel), std::ios::binary);
    if (!out) throw IoError("cannot write " + (root_ / rel).string());
    out << body;
    out.close();
    if (!out) throw IoError("write failed: " + (root_ / rel).string());
    record(rel);
  }
  void checkpoint(const std::string& rel, const Checkpoint& ckpt) {
    save_checkpoint(ckpt, prepare(rel));
    record(rel);
  }
  void dataset(const std::string& rel, const Dataset& data) {
    save_dataset(data, prepare(rel));
    record(rel);
  }

  const json& artifacts() const { return artifacts_; }

 private:
  fs::path root_;
  json artifacts_ = json::object();
};

void check_option_keys(const json& options, const std::string& command, std::initializer_list<const char*> allowed) {
  if (!options.is_object()) throw ConfigError(command + ": options must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : options.items()) {
    if (!keys.count(key)) throw ConfigError(command + ": unknown option '" + key + "'");
  }
}

template <typename T>
void take(const json& options, const char* key, T& out) {
  if (!options.contains(key)) return;
  try {
    out = options.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("option '") + key + "' has the wrong type");
  }
}

Checkpoint merged_checkpoint(const Workspace& ws, const ParamVector& params, const std::string& task,
                             const json& notes) {
  Checkpoint ckpt{params, ws.pretrained.meta, Provenance{task, 0, 0, notes.dump()}};
  return ckpt;
}

std::vector<double> resolved_lambdas(const ExperimentConfig& cfg) {
  if (!cfg.merge.lambdas.empty()) return cfg.merge.lambdas;
  return std::vector<double>(cfg.suite.num_tasks, 1.0 / static_cast<double>(cfg.suite.num_tasks));
}

EvalReport test_report(const Workspace& ws, const ParamVector& model) {
  return evaluate(model, ws.suite->spec, ws.suite->tasks, SplitKind::kTest);
}

void write_report(Outputs& out, RunManifest& manifest, const std::string& stem, const EvalReport& report) {
  out.text(stem + ".csv", report.to_csv());
  out.text(stem + ".json", report.to_json().dump(2) + "\n");
  manifest.reports.push_back(stem + ".csv");
  manifest.reports.push_back(stem + ".json");
}

// ---------------------------------------------------------------------------

void cmd_train(const ExperimentConfig& cfg, Outputs& out, RunManifest&) {
  const std::vector<Dataset> datasets = build_datasets(cfg);
  const ClassifierSpec spec = cfg.spec();
  for (std::size_t i = 0; i < datasets.size(); ++i) out.dataset(data_path(cfg, i), datasets[i]);

  const Checkpoint pre = pretrain_shared_init(spec, stage_seed(cfg, "pretrain"), datasets, cfg.pretrain);
  out.checkpoint(kPretrainedPath, pre);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    TrainConfig tc = cfg.train;
    tc.seed = stage_seed(cfg, "train/task-" + std::to_string(i));
    out.checkpoint(model_path(cfg, i), finetune(pre.params, spec, datasets[i], tc));
  }
  if (cfg.multitask) {
    TrainConfig tc = cfg.multitask_train;
    tc.seed = stage_seed(cfg, "train/multitask");
    out.checkpoint(kMultitaskPath, multitask_finetune(pre.params, spec, datasets, tc));
  }
}

void cmd_merge(const ExperimentConfig& cfg, Outputs& out, RunManifest& manifest) {
  const Workspace ws = load_workspace(cfg);
  manifest.inputs = ws.checksums;
  const std::string& method = cfg.merge.method;
  const ParamVector merged = merge_with_method(ws, cfg, method);
  json notes = {{"method", method}, {"fisher_batch_seed", cfg.objective_options().seed}};
  if (method == "gta" || method == "df") notes["lambdas"] = resolved_lambdas(cfg);
  if (method == "ta" || method == "ties" || method == "dare") notes["lambda"] = cfg.merge.lambda;
  if (method == "ties") notes["keep_fraction"] = cfg.merge.keep_fraction;
  if (method == "dare") notes["drop_rate"] = cfg.merge.drop_rate;
  out.checkpoint("merge/" + method + ".ckpt", merged_checkpoint(ws, merged, "merge:" + method, notes));
  write_report(out, manifest, "merge/" + method + "-test", test_report(ws, merged));
}

void cmd_optimize(const ExperimentConfig& cfg, Outputs& out, RunManifest& manifest) {
  const Workspace ws = load_workspace(cfg);
  manifest.inputs = ws.checksums;
  const MergeObjective objective(ws.inputs, ws.suite, cfg.objective_method(), cfg.objective_options());
  const OptimizationRun run = run_optimization(objective, cfg.bo_config());

  std::ostringstream traj;
  write_trajectory_jsonl(traj, run.bo.trajectory);
  out.text("optimize/trajectory.jsonl", traj.str());
  manifest.trajectory = "optimize/trajectory.jsonl";
  const json best = {{"objective", cfg.bayesopt.objective},
                     {"lambdas", run.bo.best.lambdas},
                     {"validation_best", run.bo.best.value},
                     {"test_average", run.test.average},
                     {"evaluations", run.bo.trajectory.size()}};
  out.text("optimize/best.json", best.dump(2) + "\n");
  manifest.reports.push_back("optimize/best.json");
  const json notes = {{"method", cfg.bayesopt.objective == "df" ? "df-merge" : "gta-bo"},
                      {"lambdas", run.bo.best.lambdas},
                      {"fisher_batch_seed", cfg.objective_options().seed},
                      {"bo_seed", cfg.bo_config().seed}};
  out.checkpoint("optimize/merged.ckpt", merged_checkpoint(ws, run.merged, "optimize", notes));
  write_report(out, manifest, "optimize/validation", run.validation);
  write_report(out, manifest, "optimize/test", run.test);
}

void cmd_eval(const ExperimentConfig& cfg, const json& options, Outputs& out, RunManifest& manifest) {
  std::string checkpoint;
  std::string split = "test";
  double ratio = 1.0;
  take(options, "checkpoint", checkpoint);
  take(options, "split", split);
  take(options, "ratio", ratio);
  if (checkpoint.empty()) throw ConfigError("eval: a checkpoint path is required");
  const fs::path root(cfg.output_dir);
  const fs::path ckpt_path = fs::path(checkpoint).is_absolute() ? fs::path(checkpoint) : root / checkpoint;
  const Workspace ws = load_workspace(cfg);
  manifest.inputs = ws.checksums;
  manifest.inputs[checkpoint] = file_crc32(ckpt_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  require_same_layout(ckpt.params.layout(), ws.suite->spec.layout(), "eval");
  const SplitKind kind = parse_split(split);
  const EvalReport report = evaluate(ckpt.params, ws.suite->spec, ws.suite->tasks, kind, ratio,
                                     stage_seed(cfg, "eval"));
  write_report(out, manifest, "eval/" + ckpt_path.stem().string() + "-" + split, report);
}

void cmd_landscape(const ExperimentConfig& cfg, Outputs& out, RunManifest& manifest) {
  const Workspace ws = load_workspace(cfg);
  manifest.inputs = ws.checksums;
  const MergeObjective objective(ws.inputs, ws.suite, ObjectiveMethod::kDf, cfg.objective_options());
  for (const LandscapeVariant variant : {LandscapeVariant::kGta, LandscapeVariant::kDf}) {
    const LandscapeGrid grid = landscape(objective, variant, cfg.landscape);
    const std::string stem = std::string("landscape/") + to_string(variant);
    out.text(stem + ".csv", grid.to_csv());
    out.text(stem + ".json", grid.to_json().dump(2) + "\n");
    manifest.reports.push_back(stem + ".csv");
    manifest.reports.push_back(stem + ".json");
  }
}

void cmd_ablate(const ExperimentConfig& cfg, Outputs& out, RunManifest& manifest) {
  const Workspace ws = load_workspace(cfg);
  manifest.inputs = ws.checksums;
  const std::vector<AblationRow> rows = ablate(ws.inputs, ws.suite, AblationConfig{cfg.bo_config(), cfg.objective_options()});
  out.text("ablate/ablation.csv", ablation_csv(rows));
  manifest.reports.push_back("ablate/ablation.csv");
}

void cmd_sweep(const ExperimentConfig& cfg, Outputs& out, RunManifest& manifest) {
  if (cfg.sweep.values.empty()) throw ConfigError("sweep: at least one value is required");
  const Workspace ws = load_workspace(cfg);
  manifest.inputs = ws.checksums;
  std::vector<SweepRow> rows;
  if (cfg.sweep.axis == "iterations") {
    std::vector<std::size_t> counts;
    for (double v : cfg.sweep.values) {
      if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError("sweep: iteration counts must be non-negative integers");
      counts.push_back(static_cast<std::size_t>(v));
    }
    const MergeObjective objective(ws.inputs, ws.suite, cfg.objective_method(), cfg.objective_options());
    rows = sweep_iterations(objective, cfg.bo_config(), counts);
  } else {
    rows = sweep_val_ratio(ws.inputs, ws.suite, cfg.objective_method(), cfg.objective_options(), cfg.bo_config(),
                           cfg.sweep.values);
  }
  const std::string rel = "sweep/" + cfg.sweep.axis + ".csv";
  out.text(rel, sweep_csv(cfg.sweep.axis, rows));
  manifest.reports.push_back(rel);
}

}  // namespace

std::vector<Dataset> build_datasets(const ExperimentConfig& cfg) {
  std::vector<SyntheticTask> tasks = make_suite(cfg.suite, stage_seed(cfg, "suite"));
  std::vector<Dataset> out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].task_id = cfg.task_name(i);
    out.push_back(generate_task(tasks[i]));
  }
  return out;
}

Workspace load_workspace(const ExperimentConfig& cfg) {
  const fs::path root(cfg.output_dir);
  if (!fs::exists(root / kPretrainedPath)) {
    throw IoError("no trained models under " + root.string() + "; run 'dfmerge train' first");
  }
  Workspace ws;
  auto suite = std::make_shared<Suite>();
  suite->spec = cfg.spec();
  ws.pretrained = load_checkpoint(root / kPretrainedPath);
  ws.checksums[kPretrainedPath] = file_crc32(root / kPretrainedPath);
  require_same_layout(ws.pretrained.params.layout(), suite->spec.layout(), "pretrained checkpoint");
  std::vector<ParamVector> thetas;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < cfg.suite.num_tasks; ++i) {
    suite->tasks.push_back(load_dataset(root / data_path(cfg, i)));
    ws.checksums[data_path(cfg, i)] = file_crc32(root / data_path(cfg, i));
    ws.finetuned.push_back(load_checkpoint(root / model_path(cfg, i)));
    ws.checksums[model_path(cfg, i)] = file_crc32(root / model_path(cfg, i));
    thetas.push_back(ws.finetuned.back().params);
    names.push_back(cfg.task_name(i));
  }
  ws.inputs = MergeInputs::from_models(ws.pretrained.params, thetas, names);
  ws.suite = std::move(suite);
  return ws;
}

ParamVector merge_with_method(const Workspace& ws, const ExperimentConfig& cfg, const std::string& method) {
  const MergeInputs& inputs = ws.inputs;
  const std::size_t m = inputs.num_models();
  if (method == "averaging") return merge_averaging(inputs);
  if (method == "ta") {
    check_coefficients(std::vector<double>(m, cfg.merge.lambda), m, cfg.merge.allow_unbounded);
    return merge_task_arithmetic(inputs, cfg.merge.lambda);
  }
  if (method == "gta") {
    const auto lambdas = resolved_lambdas(cfg);
    check_coefficients(lambdas, m, cfg.merge.allow_unbounded);
    return merge_gta(inputs, lambdas);
  }
  if (method == "ties") return merge_ties(inputs, cfg.merge.keep_fraction, cfg.merge.lambda);
  if (method == "dare") return merge_dare(inputs, cfg.merge.drop_rate, cfg.merge.lambda, stage_seed(cfg, "dare"));
  if (method == "fisher" || method == "fisher_full" || method == "df") {
    const MergeObjective objective(inputs, ws.suite, ObjectiveMethod::kDf, cfg.objective_options());
    if (method == "df") return objective.merge(resolved_lambdas(cfg), cfg.merge.allow_unbounded);
    if (method == "fisher") {
      std::vector<FisherDiagonal> fishers;
      for (std::size_t i = 0; i < m; ++i) fishers.push_back(objective.fisher(i, 1.0));
      return merge_fisher(inputs, fishers);
    }
    std::vector<FisherFull> fishers;
    for (std::size_t i = 0; i < m; ++i) {
      fishers.push_back(empirical_fisher_full(ws.finetuned[i].params, ws.suite->spec, objective.fisher_inputs(i)));
    }
    return merge_fisher_full(inputs, fishers);
  }
  std::string valid;
  for (const auto& n : merge_method_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown merge method '" + method + "' (valid: " + valid + ")");
}

ExperimentConfig apply_options(const ExperimentConfig& base, const std::string& command, const json& options) {
  ExperimentConfig cfg = base;
  if (command == "train" || command == "ablate" || command == "landscape" || command == "optimize" ||
      command == "sweep") {
    check_option_keys(options, command,
                      {"iterations", "init_points", "acquisition", "objective", "val_ratio", "kernel", "resolution",
                       "axis", "values"});
    if (command == "train" && !options.empty()) throw ConfigError("train takes no options");
    take(options, "iterations", cfg.bayesopt.iterations);
    take(options, "init_points", cfg.bayesopt.init_points);
    take(options, "acquisition", cfg.bayesopt.acquisition);
    take(options, "objective", cfg.bayesopt.objective);
    take(options, "val_ratio", cfg.eval.val_ratio);
    take(options, "kernel", cfg.bayesopt.kernel);
    take(options, "resolution", cfg.landscape.resolution);
    take(options, "axis", cfg.sweep.axis);
    take(options, "values", cfg.sweep.values);
  } else if (command == "merge") {
    check_option_keys(options, command, {"method", "lambdas", "lambda", "keep_fraction", "drop_rate", "allow_unbounded"});
    take(options, "method", cfg.merge.method);
    take(options, "lambdas", cfg.merge.lambdas);
    take(options, "lambda", cfg.merge.lambda);
    take(options, "keep_fraction", cfg.merge.keep_fraction);
    take(options, "drop_rate", cfg.merge.drop_rate);
    take(options, "allow_unbounded", cfg.merge.allow_unbounded);
    const auto& names = merge_method_names();
    if (std::find(names.begin(), names.end(), cfg.merge.method) == names.end()) {
      std::string valid;
      for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
      throw ConfigError("unknown merge method '" + cfg.merge.method + "' (valid: " + valid + ")");
    }
  } else if (command == "eval") {
    check_option_keys(options, command, {"checkpoint", "split", "ratio"});
  } else {
    std::string valid;
    for (const auto& n : kCommands) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown command '" + command + "' (valid: " + valid + ")");
  }
  cfg.validate();
  return cfg;
}

RunManifest run_command(const std::string& command, const ExperimentConfig& base, const json& options) {
  const ExperimentConfig cfg = apply_options(base, command, options);
  RunManifest manifest;
  manifest.command = command;
  manifest.options = options;
  manifest.config = config_to_json(cfg);
  Outputs out{fs::path(cfg.output_dir)};
  try {
    fs::create_directories(cfg.output_dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create output directory: ") + e.what());
  }
  if (command == "train") cmd_train(cfg, out, manifest);
  else if (command == "merge") cmd_merge(cfg, out, manifest);
  else if (command == "optimize") cmd_optimize(cfg, out, manifest);
  else if (command == "eval") cmd_eval(cfg, options, out, manifest);
  else if (command == "landscape") cmd_landscape(cfg, out, manifest);
  else if (command == "ablate") cmd_ablate(cfg, out, manifest);
  else cmd_sweep(cfg, out, manifest);
  manifest.artifacts = out.artifacts();
  save_manifest(manifest, fs::path(cfg.output_dir) / "manifests" / (command + ".json"));
  return manifest;
}

RerunCheck rerun_manifest(const fs::path& manifest_path) {
  const RunManifest recorded = load_manifest(manifest_path);
  const ExperimentConfig cfg = config_from_json(recorded.config);
  const fs::path root(cfg.output_dir);
  RerunCheck check;
  for (const auto& [rel, crc] : recorded.inputs.items()) {
    const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : root / rel;
    if (!fs::exists(p) || file_crc32(p) != crc.get<std::string>()) {
      throw ChecksumError("input " + rel + " differs from the one recorded in " + manifest_path.string());
    }
  }
  check.rerun = run_command(recorded.command, cfg, recorded.options);
  for (const auto& [rel, crc] : recorded.artifacts.items()) {
    if (!check.rerun.artifacts.contains(rel) || check.rerun.artifacts.at(rel) != crc) check.mismatches.push_back(rel);
  }
  for (const auto& [rel, crc] : check.rerun.artifacts.items()) {
    if (!recorded.artifacts.contains(rel)) check.mismatches.push_back(rel);
  }
  return check;
}

}  // namespace dfmerge
