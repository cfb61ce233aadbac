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

#include "dfmerge/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <set>

#include <zlib.h>

#include "dfmerge/errors.hpp"
#include "dfmerge/rng.hpp"

namespace dfmerge {
namespace {

using nlohmann::json;

// Reads keys of one config object, rejecting anything not in `allowed`.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<const char*> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
      if (!keys.count(key)) {
        std::string list;
        for (const auto& k : keys) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("config: unknown key '" + path_ + "." + key + "' (allowed: " + list + ")");
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }

  template <typename T>
  void read(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  void read_train(TrainConfig& cfg) const {
    read("learning_rate", cfg.learning_rate);
    read("steps", cfg.steps);
    read("batch_size", cfg.batch_size);
    read("weight_decay", cfg.weight_decay);
  }

 private:
  const json& j_;
  std::string path_;
};

json train_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"steps", c.steps}, {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay}};
}

}  // namespace

ClassifierSpec ExperimentConfig::spec() const {
  ClassifierSpec s{suite.input_dim, hidden_dim, suite.num_classes};
  s.validate();
  return s;
}

std::string ExperimentConfig::task_name(std::size_t i) const {
  return task_names.empty() ? "task" + std::to_string(i) : task_names.at(i);
}

ObjectiveOptions ExperimentConfig::objective_options() const {
  return ObjectiveOptions{eval.val_ratio, stage_seed(*this, "objective"), eval.fisher_samples};
}

BOConfig ExperimentConfig::bo_config() const {
  BOConfig c;
  c.dims = suite.num_tasks;
  c.init_points = bayesopt.init_points;
  c.iterations = bayesopt.iterations;
  c.seed = stage_seed(*this, "bo");
  c.acquisition = parse_acquisition(bayesopt.acquisition);
  c.kappa = bayesopt.kappa;
  c.kernel = parse_kernel_family(bayesopt.kernel);
  c.propose.candidates = bayesopt.candidates;
  return c;
}

ObjectiveMethod ExperimentConfig::objective_method() const {
  if (bayesopt.objective == "df") return ObjectiveMethod::kDf;
  if (bayesopt.objective == "gta") return ObjectiveMethod::kGta;
  throw ConfigError("config: bayesopt.objective must be 'df' or 'gta', got '" + bayesopt.objective + "'");
}

const std::vector<std::string>& merge_method_names() {
  static const std::vector<std::string> names = {"averaging", "ta", "gta", "fisher", "fisher_full", "df", "ties", "dare"};
  return names;
}

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  if (suite.num_tasks == 0) throw ConfigError("config: suite.num_tasks must be >= 1");
  if (suite.informative_dims == 0 || suite.informative_dims > suite.input_dim) {
    throw ConfigError("config: suite.informative_dims must lie in [1, input_dim]");
  }
  if (!(suite.conflict >= 0.0 && suite.conflict <= 1.0)) throw ConfigError("config: suite.conflict must lie in [0, 1]");
  if (!(suite.separation > 0.0)) throw ConfigError("config: suite.separation must be > 0");
  if (!(suite.cov_scale > 0.0)) throw ConfigError("config: suite.cov_scale must be > 0");
  if (suite.sizes.train == 0 || suite.sizes.validation == 0 || suite.sizes.test == 0) {
    throw ConfigError("config: suite split sizes must be >= 1");
  }
  if (!task_names.empty() && task_names.size() != suite.num_tasks) {
    throw ConfigError("config: task_names needs one entry per task");
  }
  (void)spec();
  train.validate();
  if (pretrain.mixture.steps > 0) pretrain.mixture.validate();
  if (!(pretrain.init_scale > 0.0)) throw ConfigError("config: pretrain.init_scale must be > 0");
  if (multitask) multitask_train.validate();
  const auto& methods = merge_method_names();
  if (std::find(methods.begin(), methods.end(), merge.method) == methods.end()) {
    std::string valid;
    for (const auto& n : methods) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown merge method '" + merge.method + "' (valid: " + valid + ")");
  }
  if (!merge.lambdas.empty()) check_coefficients(merge.lambdas, suite.num_tasks, merge.allow_unbounded);
  bo_config().validate();
  (void)objective_method();
  if (!(eval.val_ratio > 0.0 && eval.val_ratio <= 1.0)) throw ConfigError("config: eval.val_ratio must lie in (0, 1]");
  if (eval.fisher_samples == 0) throw ConfigError("config: eval.fisher_samples must be >= 1");
  if (landscape.resolution < 2) throw ConfigError("config: landscape.resolution must be >= 2");
  if (sweep.axis != "iterations" && sweep.axis != "val_ratio") {
    throw ConfigError("config: sweep.axis must be 'iterations' or 'val_ratio'");
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  const Section root(j, "config",
                     {"seed", "output_dir", "model", "suite", "pretrain", "train", "multitask", "merge", "bayesopt",
                      "eval", "landscape", "sweep"});
  if (!root.has("suite")) throw ConfigError("config: missing required section 'suite' (task specs)");
  root.read("seed", cfg.seed);
  root.read("output_dir", cfg.output_dir);
  if (root.has("model")) {
    const Section s(root.at("model"), "model", {"hidden_dim"});
    s.read("hidden_dim", cfg.hidden_dim);
  }
  {
    const Section s(root.at("suite"), "suite",
                    {"num_tasks", "input_dim", "num_classes", "informative_dims", "conflict", "separation",
                     "cov_scale", "train_size", "validation_size", "test_size", "task_names"});
    s.read("num_tasks", cfg.suite.num_tasks);
    s.read("input_dim", cfg.suite.input_dim);
    s.read("num_classes", cfg.suite.num_classes);
    s.read("informative_dims", cfg.suite.informative_dims);
    s.read("conflict", cfg.suite.conflict);
    s.read("separation", cfg.suite.separation);
    s.read("cov_scale", cfg.suite.cov_scale);
    s.read("train_size", cfg.suite.sizes.train);
    s.read("validation_size", cfg.suite.sizes.validation);
    s.read("test_size", cfg.suite.sizes.test);
    s.read("task_names", cfg.task_names);
  }
  if (root.has("pretrain")) {
    const Section s(root.at("pretrain"), "pretrain",
                    {"init_scale", "learning_rate", "steps", "batch_size", "weight_decay"});
    s.read("init_scale", cfg.pretrain.init_scale);
    s.read_train(cfg.pretrain.mixture);
  }
  if (root.has("train")) {
    const Section s(root.at("train"), "train", {"learning_rate", "steps", "batch_size", "weight_decay"});
    s.read_train(cfg.train);
  }
  if (root.has("multitask")) {
    const Section s(root.at("multitask"), "multitask",
                    {"enabled", "learning_rate", "steps", "batch_size", "weight_decay"});
    s.read("enabled", cfg.multitask);
    s.read_train(cfg.multitask_train);
  }
  if (root.has("merge")) {
    const Section s(root.at("merge"), "merge",
                    {"method", "lambdas", "lambda", "keep_fraction", "drop_rate", "allow_unbounded"});
    s.read("method", cfg.merge.method);
    s.read("lambdas", cfg.merge.lambdas);
    s.read("lambda", cfg.merge.lambda);
    s.read("keep_fraction", cfg.merge.keep_fraction);
    s.read("drop_rate", cfg.merge.drop_rate);
    s.read("allow_unbounded", cfg.merge.allow_unbounded);
  }
  if (root.has("bayesopt")) {
    const Section s(root.at("bayesopt"), "bayesopt",
                    {"objective", "init_points", "iterations", "acquisition", "kappa", "kernel", "candidates"});
    s.read("objective", cfg.bayesopt.objective);
    s.read("init_points", cfg.bayesopt.init_points);
    s.read("iterations", cfg.bayesopt.iterations);
    s.read("acquisition", cfg.bayesopt.acquisition);
    s.read("kappa", cfg.bayesopt.kappa);
    s.read("kernel", cfg.bayesopt.kernel);
    s.read("candidates", cfg.bayesopt.candidates);
  }
  if (root.has("eval")) {
    const Section s(root.at("eval"), "eval", {"val_ratio", "fisher_samples"});
    s.read("val_ratio", cfg.eval.val_ratio);
    s.read("fisher_samples", cfg.eval.fisher_samples);
  }
  if (root.has("landscape")) {
    const Section s(root.at("landscape"), "landscape", {"resolution", "c1_lo", "c1_hi", "c2_lo", "c2_hi"});
    s.read("resolution", cfg.landscape.resolution);
    s.read("c1_lo", cfg.landscape.c1_lo);
    s.read("c1_hi", cfg.landscape.c1_hi);
    s.read("c2_lo", cfg.landscape.c2_lo);
    s.read("c2_hi", cfg.landscape.c2_hi);
  }
  if (root.has("sweep")) {
    const Section s(root.at("sweep"), "sweep", {"axis", "values"});
    s.read("axis", cfg.sweep.axis);
    s.read("values", cfg.sweep.values);
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["model"] = {{"hidden_dim", cfg.hidden_dim}};
  j["suite"] = {{"num_tasks", cfg.suite.num_tasks},
                {"input_dim", cfg.suite.input_dim},
                {"num_classes", cfg.suite.num_classes},
                {"informative_dims", cfg.suite.informative_dims},
                {"conflict", cfg.suite.conflict},
                {"separation", cfg.suite.separation},
                {"cov_scale", cfg.suite.cov_scale},
                {"train_size", cfg.suite.sizes.train},
                {"validation_size", cfg.suite.sizes.validation},
                {"test_size", cfg.suite.sizes.test}};
  if (!cfg.task_names.empty()) j["suite"]["task_names"] = cfg.task_names;
  j["pretrain"] = train_to_json(cfg.pretrain.mixture);
  j["pretrain"]["init_scale"] = cfg.pretrain.init_scale;
  j["train"] = train_to_json(cfg.train);
  j["multitask"] = train_to_json(cfg.multitask_train);
  j["multitask"]["enabled"] = cfg.multitask;
  j["merge"] = {{"method", cfg.merge.method},       {"lambdas", cfg.merge.lambdas},
                {"lambda", cfg.merge.lambda},       {"keep_fraction", cfg.merge.keep_fraction},
                {"drop_rate", cfg.merge.drop_rate}, {"allow_unbounded", cfg.merge.allow_unbounded}};
  j["bayesopt"] = {{"objective", cfg.bayesopt.objective},   {"init_points", cfg.bayesopt.init_points},
                   {"iterations", cfg.bayesopt.iterations}, {"acquisition", cfg.bayesopt.acquisition},
                   {"kappa", cfg.bayesopt.kappa},           {"kernel", cfg.bayesopt.kernel},
                   {"candidates", cfg.bayesopt.candidates}};
  j["eval"] = {{"val_ratio", cfg.eval.val_ratio}, {"fisher_samples", cfg.eval.fisher_samples}};
  j["landscape"] = {{"resolution", cfg.landscape.resolution}, {"c1_lo", cfg.landscape.c1_lo},
                    {"c1_hi", cfg.landscape.c1_hi},           {"c2_lo", cfg.landscape.c2_lo},
                    {"c2_hi", cfg.landscape.c2_hi}};
  j["sweep"] = {{"axis", cfg.sweep.axis}, {"values", cfg.sweep.values}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage) { return derive_seed(cfg.seed, stage); }

std::string file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

json RunManifest::to_json() const {
  return {{"tool", "dfmerge"},  {"tool_version", tool_version}, {"command", command},
          {"options", options}, {"config", config},             {"inputs", inputs},
          {"artifacts", artifacts}, {"trajectory", trajectory}, {"reports", reports}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.tool_version = j.at("tool_version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.options = j.at("options");
    m.config = j.at("config");
    m.inputs = j.at("inputs");
    m.artifacts = j.at("artifacts");
    m.trajectory = j.value("trajectory", std::string());
    m.reports = j.value("reports", std::vector<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  try {
    return RunManifest::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace dfmerge
