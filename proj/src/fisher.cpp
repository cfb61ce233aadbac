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

#include "dfmerge/fisher.hpp"

#include <cmath>

#include "dfmerge/container.hpp"
#include "dfmerge/errors.hpp"
#include "dfmerge/kernels.hpp"

namespace dfmerge {

FisherDiagonal::FisherDiagonal(SegmentLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total_size()) throw StructuralError("Fisher diagonal length does not match layout");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] < 0.0) {
      throw NumericalError("Fisher entry " + std::to_string(i) + " is negative or non-finite");
    }
  }
}

double FisherDiagonal::segment_mean(const std::string& name) const {
  const Segment& s = layout_.segment(name);
  if (s.length == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < s.length; ++i) total += values_[s.offset + i];
  return total / static_cast<double>(s.length);
}

namespace {

void check_inputs(const ParamVector& params, const ClassifierSpec& spec, const InputBatch& inputs, const char* who) {
  require_same_layout(params.layout(), spec.layout(), who);
  if (inputs.size() == 0) throw ConfigError(std::string(who) + ": empty input batch");
  if (inputs.dim != spec.input_dim || inputs.features.size() % inputs.dim != 0) {
    throw StructuralError(std::string(who) + ": input dimension does not match classifier");
  }
}

// Calls visit(p_y, grad_y) for every (sample, label) pair.
template <typename Visit>
void for_each_label_gradient(const ParamVector& params, const ClassifierSpec& spec, const InputBatch& inputs,
                             Visit&& visit) {
  Classifier model(spec, params.values());
  std::vector<double> grad(params.size());
  std::vector<double> dlogits(spec.num_classes);
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    model.forward(inputs.row(j));
    const std::vector<double> probs(model.probabilities().begin(), model.probabilities().end());
    for (std::size_t y = 0; y < spec.num_classes; ++y) {
      // d(-log p_y)/d(logits) = p - e_y
      for (std::size_t i = 0; i < spec.num_classes; ++i) dlogits[i] = probs[i] - (i == y ? 1.0 : 0.0);
      model.gradient(dlogits, grad);
      for (double g : grad) {
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient while estimating Fisher information");
      }
      visit(probs[y], std::span<const double>(grad));
    }
  }
}

}  // namespace

FisherDiagonal empirical_fisher_diag(const ParamVector& params, const ClassifierSpec& spec, const InputBatch& inputs) {
  check_inputs(params, spec, inputs, "empirical_fisher_diag");
  const auto& k = kernels::active();
  std::vector<double> acc(params.size(), 0.0);
  for_each_label_gradient(params, spec, inputs, [&](double p, std::span<const double> g) {
    k.add_weighted_square(p, g.data(), acc.data(), acc.size());
  });
  const double inv_n = 1.0 / static_cast<double>(inputs.size());
  for (double& v : acc) v *= inv_n;
  return FisherDiagonal(params.layout(), std::move(acc));
}

FisherFull empirical_fisher_full(const ParamVector& params, const ClassifierSpec& spec, const InputBatch& inputs,
                                 std::size_t cap) {
  check_inputs(params, spec, inputs, "empirical_fisher_full");
  if (params.size() > cap) {
    throw ConfigError("full Fisher requested for " + std::to_string(params.size()) +
                      " parameters, above the cap of " + std::to_string(cap));
  }
  const auto d = static_cast<Eigen::Index>(params.size());
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(d, d);
  for_each_label_gradient(params, spec, inputs, [&](double p, std::span<const double> g) {
    const Eigen::Map<const Eigen::VectorXd> gv(g.data(), d);
    f.selfadjointView<Eigen::Lower>().rankUpdate(gv, p);
  });
  f = f.selfadjointView<Eigen::Lower>();
  f /= static_cast<double>(inputs.size());
  return FisherFull{std::move(f)};
}

FisherDiagonal fisher_at_scaled(const ParamVector& pretrained, const ParamVector& tau, double lambda,
                                const ClassifierSpec& spec, const InputBatch& inputs) {
  const ScaledVector scaled[] = {{lambda, &tau}};
  return empirical_fisher_diag(axpy_into_pretrained(pretrained, scaled), spec, inputs);
}

void save_fisher(const FisherDiagonal& fisher, const std::filesystem::path& path) {
  nlohmann::json fields;
  fields["layout"] = layout_to_json(fisher.layout());
  write_container(path, "fisher", std::move(fields), fisher.values());
}

FisherDiagonal load_fisher(const std::filesystem::path& path) {
  Container c = read_container(path, "fisher");
  try {
    return FisherDiagonal(layout_from_json(c.header.at("layout")), std::move(c.payload));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed Fisher header: " + e.what());
  }
}

}  // namespace dfmerge
