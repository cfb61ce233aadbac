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

#include "dfmerge/toymodels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dfmerge/container.hpp"
#include "dfmerge/errors.hpp"
#include "dfmerge/kernels.hpp"
#include "dfmerge/rng.hpp"

namespace dfmerge {

// ---------------------------------------------------------------------------
// ClassifierSpec

std::size_t ClassifierSpec::param_count() const {
  if (hidden_dim == 0) return num_classes * input_dim + num_classes;
  return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
}

SegmentLayout ClassifierSpec::layout() const {
  if (hidden_dim == 0) {
    return SegmentLayout::from_lengths({{"out.weight", num_classes * input_dim}, {"out.bias", num_classes}});
  }
  return SegmentLayout::from_lengths({{"hidden.weight", hidden_dim * input_dim},
                                      {"hidden.bias", hidden_dim},
                                      {"out.weight", num_classes * hidden_dim},
                                      {"out.bias", num_classes}});
}

ModelMeta ClassifierSpec::meta() const {
  return ModelMeta{hidden_dim == 0 ? "linear" : "mlp", input_dim, hidden_dim, num_classes, param_count()};
}

void ClassifierSpec::validate() const {
  if (input_dim == 0) throw ConfigError("classifier input_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("classifier num_classes must be >= 2");
}

ClassifierSpec spec_from_meta(const ModelMeta& meta) {
  ClassifierSpec spec{meta.input_dim, meta.hidden_dim, meta.num_classes};
  spec.validate();
  if (spec.param_count() != meta.param_count) {
    throw StructuralError("model_meta parameter count " + std::to_string(meta.param_count) +
                          " disagrees with architecture (" + std::to_string(spec.param_count()) + ")");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(const ClassifierSpec& spec, std::span<const double> params)
    : spec_(spec),
      params_(params),
      hidden_(spec.hidden_dim),
      logits_(spec.num_classes),
      probs_(spec.num_classes),
      dhidden_(spec.hidden_dim) {
  if (params.size() != spec.param_count()) {
    throw StructuralError("classifier expects " + std::to_string(spec.param_count()) + " parameters, got " +
                          std::to_string(params.size()));
  }
}

void Classifier::forward(std::span<const double> x) {
  if (x.size() != spec_.input_dim) {
    throw StructuralError("input has " + std::to_string(x.size()) + " features, classifier expects " +
                          std::to_string(spec_.input_dim));
  }
  x_ = x;
  const auto& k = kernels::active();
  const std::size_t d = spec_.input_dim;
  const std::size_t h = spec_.hidden_dim;
  const std::size_t c = spec_.num_classes;
  const double* p = params_.data();

  std::span<const double> features = x;
  std::size_t width = d;
  if (h > 0) {
    const double* w1 = p;
    const double* b1 = p + h * d;
    for (std::size_t j = 0; j < h; ++j) hidden_[j] = std::tanh(k.dot(w1 + j * d, x.data(), d) + b1[j]);
    p += h * d + h;
    features = hidden_;
    width = h;
  }
  const double* w2 = p;
  const double* b2 = p + c * width;
  for (std::size_t i = 0; i < c; ++i) logits_[i] = k.dot(w2 + i * width, features.data(), width) + b2[i];

  const double top = *std::max_element(logits_.begin(), logits_.end());
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    probs_[i] = std::exp(logits_[i] - top);
    total += probs_[i];
  }
  for (double& v : probs_) v /= total;
}

double Classifier::nll(std::size_t label) const {
  const double top = *std::max_element(logits_.begin(), logits_.end());
  double total = 0.0;
  for (double l : logits_) total += std::exp(l - top);
  return top + std::log(total) - logits_[label];
}

void Classifier::backward(std::span<const double> dlogits, double scale, std::span<double> grad) {
  const auto& k = kernels::active();
  const std::size_t d = spec_.input_dim;
  const std::size_t h = spec_.hidden_dim;
  const std::size_t c = spec_.num_classes;

  const std::size_t out_offset = h > 0 ? h * d + h : 0;
  const std::size_t width = h > 0 ? h : d;
  std::span<const double> features = h > 0 ? std::span<const double>(hidden_) : x_;
  double* gw2 = grad.data() + out_offset;
  double* gb2 = gw2 + c * width;
  for (std::size_t i = 0; i < c; ++i) {
    const double delta = scale * dlogits[i];
    k.axpy(delta, features.data(), gw2 + i * width, width);
    gb2[i] += delta;
  }
  if (h == 0) return;

  const double* w2 = params_.data() + out_offset;
  std::fill(dhidden_.begin(), dhidden_.end(), 0.0);
  for (std::size_t i = 0; i < c; ++i) k.axpy(dlogits[i], w2 + i * h, dhidden_.data(), h);
  double* gw1 = grad.data();
  double* gb1 = gw1 + h * d;
  for (std::size_t j = 0; j < h; ++j) {
    const double dz = scale * dhidden_[j] * (1.0 - hidden_[j] * hidden_[j]);
    k.axpy(dz, x_.data(), gw1 + j * d, d);
    gb1[j] += dz;
  }
}

void Classifier::gradient(std::span<const double> dlogits, std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  backward(dlogits, 1.0, grad);
}

std::size_t argmax_class(std::span<const double> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Data

const char* to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kValidation: return "validation";
    case SplitKind::kTest: return "test";
  }
  return "?";
}

SplitKind parse_split(const std::string& name) {
  if (name == "train") return SplitKind::kTrain;
  if (name == "validation" || name == "val") return SplitKind::kValidation;
  if (name == "test") return SplitKind::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, validation, or test)");
}

const Split& Dataset::split(SplitKind kind) const {
  switch (kind) {
    case SplitKind::kTrain: return train;
    case SplitKind::kValidation: return validation;
    case SplitKind::kTest: return test;
  }
  return test;
}

Split& Dataset::split(SplitKind kind) {
  return const_cast<Split&>(static_cast<const Dataset&>(*this).split(kind));
}

namespace {

Split sample_split(const SyntheticTask& task, std::size_t n, Rng& rng) {
  Split split;
  split.dim = task.input_dim;
  split.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) split.labels[i] = static_cast<std::uint32_t>(i % task.num_classes);
  rng.shuffle(std::span<std::uint32_t>(split.labels));
  split.features.resize(n * task.input_dim);
  const double sd = std::sqrt(task.cov_scale);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& mean = task.class_means[split.labels[i]];
    for (std::size_t j = 0; j < task.input_dim; ++j) split.features[i * task.input_dim + j] = mean[j] + sd * rng.normal();
  }
  return split;
}

}  // namespace

Dataset generate_task(const SyntheticTask& task) {
  if (!(task.cov_scale > 0.0) || !std::isfinite(task.cov_scale)) {
    throw ConfigError("task '" + task.task_id + "': covariance scale must be positive");
  }
  if (task.num_classes < 2) throw ConfigError("task '" + task.task_id + "': num_classes must be >= 2");
  if (task.input_dim == 0) throw ConfigError("task '" + task.task_id + "': input_dim must be >= 1");
  if (task.sizes.train == 0 || task.sizes.validation == 0 || task.sizes.test == 0) {
    throw ConfigError("task '" + task.task_id + "': every split needs at least one sample");
  }
  if (task.class_means.size() != task.num_classes) {
    throw ConfigError("task '" + task.task_id + "': expected one mean per class");
  }
  for (const auto& mean : task.class_means) {
    if (mean.size() != task.input_dim) throw ConfigError("task '" + task.task_id + "': class mean has wrong dimension");
  }

  Dataset data;
  data.task_id = task.task_id;
  data.input_dim = task.input_dim;
  data.num_classes = task.num_classes;
  Rng train_rng(derive_seed(task.seed, "data/train"));
  Rng val_rng(derive_seed(task.seed, "data/validation"));
  Rng test_rng(derive_seed(task.seed, "data/test"));
  data.train = sample_split(task, task.sizes.train, train_rng);
  data.validation = sample_split(task, task.sizes.validation, val_rng);
  data.test = sample_split(task, task.sizes.test, test_rng);
  return data;
}

std::vector<SyntheticTask> make_suite(const SuiteOptions& options, std::uint64_t seed) {
  if (options.num_tasks == 0) throw ConfigError("suite needs at least one task");
  if (options.informative_dims == 0) throw ConfigError("suite informative_dims must be >= 1");
  if (options.conflict < 0.0 || options.conflict > 1.0) throw ConfigError("suite conflict must lie in [0, 1]");
  const auto shared = static_cast<std::size_t>(std::lround(options.conflict * static_cast<double>(options.informative_dims)));
  const std::size_t own = options.informative_dims - shared;
  if (shared + own * options.num_tasks > options.input_dim) {
    throw ConfigError("suite needs " + std::to_string(shared + own * options.num_tasks) +
                      " input dimensions, only " + std::to_string(options.input_dim) + " available");
  }

  Rng layout_rng(derive_seed(seed, "suite/dims"));
  std::vector<std::size_t> dims(options.input_dim);
  std::iota(dims.begin(), dims.end(), 0);
  layout_rng.shuffle(std::span<std::size_t>(dims));

  std::vector<SyntheticTask> tasks;
  for (std::size_t t = 0; t < options.num_tasks; ++t) {
    SyntheticTask task;
    task.task_id = "task" + std::to_string(t);
    task.input_dim = options.input_dim;
    task.num_classes = options.num_classes;
    task.cov_scale = options.cov_scale;
    task.sizes = options.sizes;
    task.seed = derive_seed(seed, "suite/" + task.task_id);

    std::vector<std::size_t> informative(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(shared));
    const auto first_own = static_cast<std::ptrdiff_t>(shared + t * own);
    informative.insert(informative.end(), dims.begin() + first_own, dims.begin() + first_own + static_cast<std::ptrdiff_t>(own));

    Rng mean_rng(derive_seed(task.seed, "means"));
    task.class_means.assign(options.num_classes, std::vector<double>(options.input_dim, 0.0));
    for (auto& mean : task.class_means) {
      std::vector<double> direction(informative.size());
      double norm = 0.0;
      for (double& v : direction) {
        v = mean_rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < informative.size(); ++j) mean[informative[j]] = options.separation * direction[j] / norm;
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::vector<std::size_t> informative_dimensions(const SyntheticTask& task) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < task.input_dim; ++j) {
    for (const auto& mean : task.class_means) {
      if (mean[j] != 0.0) {
        out.push_back(j);
        break;
      }
    }
  }
  return out;
}

BatchView view_of(const Split& split) { return BatchView{split.features, split.labels, split.dim}; }

// ---------------------------------------------------------------------------
// Forward, loss, gradient

std::vector<double> forward(const ParamVector& params, const ClassifierSpec& spec, std::span<const double> x) {
  Classifier model(spec, params.values());
  model.forward(x);
  return {model.probabilities().begin(), model.probabilities().end()};
}

namespace {

// Mean NLL and gradient over rows `rows` of a batch; writes into `grad`.
double batch_loss_grad(Classifier& model, const BatchView& batch, std::span<const std::size_t> rows,
                       std::span<double> grad, std::vector<double>& dlogits) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t classes = model.spec().num_classes;
  const double scale = 1.0 / static_cast<double>(rows.size());
  double loss = 0.0;
  for (std::size_t r : rows) {
    const std::uint32_t label = batch.labels[r];
    if (label >= classes) throw ConfigError("label " + std::to_string(label) + " out of range");
    model.forward(batch.features.subspan(r * batch.dim, batch.dim));
    loss += model.nll(label);
    const auto probs = model.probabilities();
    for (std::size_t i = 0; i < classes; ++i) dlogits[i] = probs[i] - (i == label ? 1.0 : 0.0);
    model.backward(dlogits, scale, grad);
  }
  return loss * scale;
}

}  // namespace

LossAndGrad nll_and_grad(const ParamVector& params, const ClassifierSpec& spec, const BatchView& batch) {
  require_same_layout(params.layout(), spec.layout(), "nll_and_grad");
  if (batch.size() == 0) throw ConfigError("nll_and_grad: empty batch");
  if (batch.dim != spec.input_dim || batch.features.size() != batch.size() * batch.dim) {
    throw StructuralError("nll_and_grad: batch feature dimension does not match classifier");
  }
  Classifier model(spec, params.values());
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<double> grad(params.size());
  std::vector<double> dlogits(spec.num_classes);
  const double loss = batch_loss_grad(model, batch, rows, grad, dlogits);
  return {loss, ParamVector(params.layout(), std::move(grad))};
}

double accuracy(const ParamVector& params, const ClassifierSpec& spec, const Split& split,
                std::span<const std::size_t> indices) {
  Classifier model(spec, params.values());
  std::size_t correct = 0;
  std::size_t total = 0;
  auto score = [&](std::size_t i) {
    model.forward(split.row(i));
    if (argmax_class(model.probabilities()) == split.labels[i]) ++correct;
    ++total;
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < split.size(); ++i) score(i);
  } else {
    for (std::size_t i : indices) score(i);
  }
  if (total == 0) throw ConfigError("accuracy over an empty sample set");
  return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (weight_decay < 0.0 || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
}

namespace {

// SGD over batches supplied by `next_batch(step, rng, rows) -> const Split&`.
template <typename NextBatch>
std::vector<double> run_sgd(std::vector<double> theta, const ClassifierSpec& spec, const TrainConfig& cfg,
                            NextBatch&& next_batch) {
  Rng rng(cfg.seed);
  std::vector<double> grad(theta.size());
  std::vector<double> dlogits(spec.num_classes);
  std::vector<std::size_t> rows(cfg.batch_size);
  const auto& k = kernels::active();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Split& split = next_batch(step, rng, rows);
    Classifier model(spec, theta);
    const double loss = batch_loss_grad(model, view_of(split), rows, grad, dlogits);
    if (!std::isfinite(loss) || loss > kDivergenceLoss) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + " (batch loss " +
                            std::to_string(loss) + ")");
    }
    if (cfg.weight_decay > 0.0) {
      const double shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
      for (double& v : theta) v *= shrink;
    }
    k.axpy(-cfg.learning_rate, grad.data(), theta.data(), theta.size());
  }
  for (double v : theta) {
    if (!std::isfinite(v)) throw DivergenceError("training produced non-finite parameters");
  }
  return theta;
}

void check_task(const ClassifierSpec& spec, const Dataset& task) {
  if (task.input_dim != spec.input_dim || task.num_classes != spec.num_classes) {
    throw StructuralError("task '" + task.task_id + "' does not match classifier dimensions");
  }
  if (task.train.size() == 0) throw ConfigError("task '" + task.task_id + "' has no training data");
}

}  // namespace

Checkpoint finetune(const ParamVector& pretrained, const ClassifierSpec& spec, const Dataset& task,
                    const TrainConfig& cfg) {
  cfg.validate();
  require_same_layout(pretrained.layout(), spec.layout(), "finetune");
  check_task(spec, task);
  std::vector<double> theta(pretrained.values().begin(), pretrained.values().end());
  theta = run_sgd(std::move(theta), spec, cfg, [&](std::size_t, Rng& rng, std::vector<std::size_t>& rows) -> const Split& {
    for (auto& r : rows) r = static_cast<std::size_t>(rng.index(task.train.size()));
    return task.train;
  });
  return Checkpoint{ParamVector(pretrained.layout(), std::move(theta)), spec.meta(),
                    Provenance{task.task_id, cfg.seed, cfg.steps, "{}"}};
}

Checkpoint multitask_finetune(const ParamVector& pretrained, const ClassifierSpec& spec,
                              std::span<const Dataset> tasks, const TrainConfig& cfg) {
  cfg.validate();
  if (tasks.empty()) throw ConfigError("multitask_finetune needs at least one task");
  require_same_layout(pretrained.layout(), spec.layout(), "multitask_finetune");
  for (const Dataset& t : tasks) check_task(spec, t);
  std::vector<double> theta(pretrained.values().begin(), pretrained.values().end());
  theta = run_sgd(std::move(theta), spec, cfg, [&](std::size_t step, Rng& rng, std::vector<std::size_t>& rows) -> const Split& {
    const Dataset& task = tasks[step % tasks.size()];
    for (auto& r : rows) r = static_cast<std::size_t>(rng.index(task.train.size()));
    return task.train;
  });
  std::string name = tasks.size() == 1 ? tasks[0].task_id : "multitask";
  return Checkpoint{ParamVector(pretrained.layout(), std::move(theta)), spec.meta(),
                    Provenance{name, cfg.seed, cfg.steps, "{}"}};
}

Checkpoint pretrain_shared_init(const ClassifierSpec& spec, std::uint64_t seed,
                                std::span<const Dataset> mixture_tasks, const PretrainOptions& options) {
  spec.validate();
  const SegmentLayout layout = spec.layout();
  std::vector<double> theta(layout.total_size(), 0.0);
  Rng rng(derive_seed(seed, "pretrain/init"));
  auto fill = [&](const std::string& name, std::size_t fan_in) {
    const Segment& s = layout.segment(name);
    const double sd = options.init_scale / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < s.length; ++i) theta[s.offset + i] = sd * rng.normal();
  };
  if (spec.hidden_dim > 0) {
    fill("hidden.weight", spec.input_dim);
    fill("out.weight", spec.hidden_dim);
  } else {
    fill("out.weight", spec.input_dim);
  }
  ParamVector init(layout, std::move(theta));
  if (options.mixture.steps == 0 || mixture_tasks.empty()) {
    return Checkpoint{std::move(init), spec.meta(), Provenance{"pretrained", seed, 0, "{}"}};
  }
  TrainConfig cfg = options.mixture;
  cfg.seed = derive_seed(seed, "pretrain/mixture");
  Checkpoint ckpt = multitask_finetune(init, spec, mixture_tasks, cfg);
  ckpt.provenance = Provenance{"pretrained", seed, cfg.steps, "{}"};
  return ckpt;
}

// ---------------------------------------------------------------------------
// Persistence

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::vector<double> payload;
  nlohmann::json fields;
  fields["task_id"] = data.task_id;
  fields["input_dim"] = data.input_dim;
  fields["num_classes"] = data.num_classes;
  nlohmann::json splits = nlohmann::json::array();
  for (SplitKind kind : {SplitKind::kTrain, SplitKind::kValidation, SplitKind::kTest}) {
    const Split& s = data.split(kind);
    splits.push_back({{"name", to_string(kind)}, {"rows", s.size()}});
    payload.insert(payload.end(), s.features.begin(), s.features.end());
    for (std::uint32_t label : s.labels) payload.push_back(static_cast<double>(label));
  }
  fields["splits"] = splits;
  write_container(path, "dataset", std::move(fields), payload);
}

Dataset load_dataset(const std::filesystem::path& path) {
  Container c = read_container(path, "dataset");
  Dataset data;
  try {
    data.task_id = c.header.at("task_id").get<std::string>();
    data.input_dim = c.header.at("input_dim").get<std::size_t>();
    data.num_classes = c.header.at("num_classes").get<std::size_t>();
    std::size_t pos = 0;
    for (const auto& entry : c.header.at("splits")) {
      Split& s = data.split(parse_split(entry.at("name").get<std::string>()));
      const std::size_t rows = entry.at("rows").get<std::size_t>();
      const std::size_t need = rows * (data.input_dim + 1);
      if (pos + need > c.payload.size()) throw LengthMismatchError(path.string() + ": dataset payload too short");
      s.dim = data.input_dim;
      s.features.assign(c.payload.begin() + static_cast<std::ptrdiff_t>(pos),
                        c.payload.begin() + static_cast<std::ptrdiff_t>(pos + rows * data.input_dim));
      pos += rows * data.input_dim;
      s.labels.resize(rows);
      for (std::size_t i = 0; i < rows; ++i) s.labels[i] = static_cast<std::uint32_t>(c.payload[pos + i]);
      pos += rows;
    }
    if (pos != c.payload.size()) throw LengthMismatchError(path.string() + ": dataset payload has trailing values");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed dataset header: " + e.what());
  }
  return data;
}

}  // namespace dfmerge
