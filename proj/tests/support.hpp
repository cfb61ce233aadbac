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

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dfmerge/harness.hpp"
#include "dfmerge/merge.hpp"
#include "dfmerge/params.hpp"
#include "dfmerge/rng.hpp"
#include "dfmerge/toymodels.hpp"

namespace testing {

inline dfmerge::SegmentLayout flat_layout(std::size_t n) { return dfmerge::SegmentLayout::from_lengths({{"w", n}}); }

inline dfmerge::ParamVector random_vector(const dfmerge::SegmentLayout& layout, dfmerge::Rng& rng, double scale = 1.0) {
  std::vector<double> v(layout.total_size());
  for (double& x : v) x = scale * rng.normal();
  return dfmerge::ParamVector(layout, std::move(v));
}

inline dfmerge::ParamVector random_vector(std::size_t n, dfmerge::Rng& rng, double scale = 1.0) {
  return random_vector(flat_layout(n), rng, scale);
}

// Non-negative with a sprinkling of exact zeros.
inline dfmerge::FisherDiagonal random_fisher(const dfmerge::SegmentLayout& layout, dfmerge::Rng& rng) {
  std::vector<double> v(layout.total_size());
  for (double& x : v) x = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.01, 3.0);
  return dfmerge::FisherDiagonal(layout, std::move(v));
}

// The toy experiment used across harness and acceptance tests: a shared
// random initialization, one fine-tuned classifier per task.
struct ToyEnv {
  std::shared_ptr<dfmerge::Suite> suite;
  dfmerge::ParamVector pretrained;
  std::vector<dfmerge::ParamVector> finetuned;
  dfmerge::MergeInputs inputs;
};

struct ToyOptions {
  std::size_t num_tasks = 3;
  double conflict = 0.5;
  std::size_t hidden_dim = 16;
  dfmerge::SplitSizes sizes{600, 1500, 1000};
  std::size_t train_steps = 600;
};

inline ToyEnv make_toy(const ToyOptions& opt, std::uint64_t seed) {
  using namespace dfmerge;
  ToyEnv env;
  env.suite = std::make_shared<Suite>();
  SuiteOptions so;
  so.num_tasks = opt.num_tasks;
  so.input_dim = 24;
  so.num_classes = 4;
  so.informative_dims = 6;
  so.conflict = opt.conflict;
  so.separation = 3.0;
  so.sizes = opt.sizes;
  env.suite->spec = ClassifierSpec{so.input_dim, opt.hidden_dim, so.num_classes};
  for (const SyntheticTask& t : make_suite(so, derive_seed(seed, "suite"))) env.suite->tasks.push_back(generate_task(t));
  PretrainOptions po;
  po.mixture.steps = 0;
  env.pretrained = pretrain_shared_init(env.suite->spec, derive_seed(seed, "pretrain"), env.suite->tasks, po).params;
  for (std::size_t i = 0; i < env.suite->tasks.size(); ++i) {
    TrainConfig tc;
    tc.steps = opt.train_steps;
    tc.seed = derive_seed(seed, "train/task-" + std::to_string(i));
    env.finetuned.push_back(finetune(env.pretrained, env.suite->spec, env.suite->tasks[i], tc).params);
  }
  env.inputs = MergeInputs::from_models(env.pretrained, env.finetuned, {});
  return env;
}

}  // namespace testing
