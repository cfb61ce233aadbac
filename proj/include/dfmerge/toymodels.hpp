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

// Synthetic Gaussian-mixture classification tasks and small softmax
// classifiers with hand-written gradients. These produce the pretrained and
// fine-tuned models that the merge routines combine.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dfmerge/params.hpp"

namespace dfmerge {

/// A linear softmax classifier (hidden_dim == 0) or a one-hidden-layer tanh MLP.
///
/// Layout, in order:
///   linear: "out.weight" [C x D], "out.bias" [C]
///   mlp:    "hidden.weight" [H x D], "hidden.bias" [H], "out.weight" [C x H], "out.bias" [C]
/// Weight matrices are row-major with one row per output unit.
struct ClassifierSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;

  std::size_t param_count() const;
  SegmentLayout layout() const;
  ModelMeta meta() const;
  void validate() const;

  bool operator==(const ClassifierSpec&) const = default;
};

ClassifierSpec spec_from_meta(const ModelMeta& meta);

/// Per-sample forward/backward evaluator over a flat parameter array.
///
/// Holds scratch buffers, so one instance should not be shared across threads.
class Classifier {
 public:
  Classifier(const ClassifierSpec& spec, std::span<const double> params);

  // Fills hidden activations, logits and class probabilities for `x`.
  void forward(std::span<const double> x);

  std::span<const double> probabilities() const { return probs_; }
  std::span<const double> logits() const { return logits_; }
  // -log p(label | x) for the most recent forward(), via log-sum-exp.
  double nll(std::size_t label) const;

  // grad += scale * d(dlogits . logits)/d(theta), for the most recent forward().
  void backward(std::span<const double> dlogits, double scale, std::span<double> grad);

  // Same as backward() but into a zeroed `grad`.
  void gradient(std::span<const double> dlogits, std::span<double> grad);

  const ClassifierSpec& spec() const { return spec_; }

 private:
  ClassifierSpec spec_;
  std::span<const double> params_;
  std::span<const double> x_;
  std::vector<double> hidden_;
  std::vector<double> logits_;
  std::vector<double> probs_;
  std::vector<double> dhidden_;
};

/// Argmax class; ties go to the lowest class index.
std::size_t argmax_class(std::span<const double> probs);

enum class SplitKind { kTrain, kValidation, kTest };

const char* to_string(SplitKind kind);
SplitKind parse_split(const std::string& name);

struct Split {
  std::size_t dim = 0;
  std::vector<double> features;  // row-major, size() x dim
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }

  bool operator==(const Split&) const = default;
};

struct Dataset {
  std::string task_id;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  Split train;
  Split validation;
  Split test;

  const Split& split(SplitKind kind) const;
  Split& split(SplitKind kind);

  bool operator==(const Dataset&) const = default;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

/// Gaussian-mixture task: x ~ N(class_means[y], cov_scale * I), labels balanced.
struct SyntheticTask {
  std::string task_id;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<double>> class_means;  // num_classes x input_dim
  double cov_scale = 1.0;
  SplitSizes sizes;
  std::uint64_t seed = 0;
};

Dataset generate_task(const SyntheticTask& task);

/// Parameters for a family of tasks with controllable overlap.
///
/// Every task gets `informative_dims` input dimensions that carry its class
/// signal. A `conflict` fraction of them is drawn from a pool shared by all
/// tasks (so their class patterns collide there); the remainder are private
/// to the task. Class means on informative dimensions are random directions
/// scaled to `separation`; elsewhere they are zero.
struct SuiteOptions {
  std::size_t num_tasks = 3;
  std::size_t input_dim = 24;
  std::size_t num_classes = 4;
  std::size_t informative_dims = 6;
  double conflict = 0.0;
  double separation = 2.0;
  double cov_scale = 1.0;
  SplitSizes sizes{400, 400, 400};
};

std::vector<SyntheticTask> make_suite(const SuiteOptions& options, std::uint64_t seed);

/// Indices of the dimensions where a task's class means are nonzero.
std::vector<std::size_t> informative_dimensions(const SyntheticTask& task);

struct BatchView {
  std::span<const double> features;
  std::span<const std::uint32_t> labels;
  std::size_t dim = 0;

  std::size_t size() const { return labels.size(); }
};

BatchView view_of(const Split& split);

/// Class probabilities for one input.
std::vector<double> forward(const ParamVector& params, const ClassifierSpec& spec, std::span<const double> x);

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean negative log-likelihood over the batch and its gradient.
LossAndGrad nll_and_grad(const ParamVector& params, const ClassifierSpec& spec, const BatchView& batch);

/// Fraction of correctly classified rows of `split`, restricted to `indices` when given.
double accuracy(const ParamVector& params, const ClassifierSpec& spec, const Split& split,
                std::span<const std::size_t> indices = {});

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;

  void validate() const;
};

// A step whose mean batch loss exceeds this (or is non-finite) aborts training.
inline constexpr double kDivergenceLoss = 1e4;

/// Plain minibatch SGD with optional decoupled weight decay. Throws
/// DivergenceError when the loss blows up. `steps == 0` returns `pretrained`.
Checkpoint finetune(const ParamVector& pretrained, const ClassifierSpec& spec, const Dataset& task,
                    const TrainConfig& cfg);

/// Like finetune but cycles through the tasks round-robin, one batch per step.
Checkpoint multitask_finetune(const ParamVector& pretrained, const ClassifierSpec& spec,
                              std::span<const Dataset> tasks, const TrainConfig& cfg);

struct PretrainOptions {
  double init_scale = 1.0;  // weights ~ N(0, init_scale^2 / fan_in), biases 0
  TrainConfig mixture;      // mixture.steps == 0 skips mixture training
};

/// Shared initialization, optionally trained briefly on a mixture of tasks.
Checkpoint pretrain_shared_init(const ClassifierSpec& spec, std::uint64_t seed,
                                std::span<const Dataset> mixture_tasks, const PretrainOptions& options);

void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dfmerge
