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

#include "dfmerge/params.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "dfmerge/container.hpp"
#include "dfmerge/errors.hpp"
#include "dfmerge/kernels.hpp"

namespace dfmerge {

SegmentLayout SegmentLayout::from_lengths(const std::vector<std::pair<std::string, std::size_t>>& parts) {
  std::vector<Segment> segments;
  std::size_t offset = 0;
  for (const auto& [name, length] : parts) {
    segments.push_back({name, offset, length});
    offset += length;
  }
  return from_segments(std::move(segments));
}

SegmentLayout SegmentLayout::from_segments(std::vector<Segment> segments) {
  std::set<std::string> names;
  std::size_t expected = 0;
  for (const Segment& s : segments) {
    if (s.name.empty()) throw StructuralError("segment name must be non-empty");
    if (!names.insert(s.name).second) throw StructuralError("duplicate segment name '" + s.name + "'");
    if (s.offset != expected) {
      throw StructuralError("segment '" + s.name + "' starts at " + std::to_string(s.offset) +
                            ", expected " + std::to_string(expected));
    }
    expected += s.length;
  }
  SegmentLayout layout;
  layout.segments_ = std::move(segments);
  layout.total_ = expected;
  return layout;
}

const Segment& SegmentLayout::segment(const std::string& name) const {
  for (const Segment& s : segments_) {
    if (s.name == name) return s;
  }
  throw StructuralError("no segment named '" + name + "'");
}

bool SegmentLayout::has_segment(const std::string& name) const {
  for (const Segment& s : segments_) {
    if (s.name == name) return true;
  }
  return false;
}

std::optional<std::string> SegmentLayout::first_difference(const SegmentLayout& other) const {
  const std::size_t common = std::min(segments_.size(), other.segments_.size());
  for (std::size_t i = 0; i < common; ++i) {
    const Segment& a = segments_[i];
    const Segment& b = other.segments_[i];
    if (a == b) continue;
    std::ostringstream os;
    os << "segment #" << i << ": '" << a.name << "' [" << a.offset << "+" << a.length << "] vs '"
       << b.name << "' [" << b.offset << "+" << b.length << "]";
    return os.str();
  }
  if (segments_.size() != other.segments_.size()) {
    const auto& longer = segments_.size() > other.segments_.size() ? segments_ : other.segments_;
    return "segment #" + std::to_string(common) + ": '" + longer[common].name + "' present on one side only";
  }
  return std::nullopt;
}

void require_same_layout(const SegmentLayout& a, const SegmentLayout& b, const char* context) {
  if (auto diff = a.first_difference(b)) {
    throw StructuralError(std::string(context) + ": layout mismatch at " + *diff);
  }
}

ParamVector::ParamVector(SegmentLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total_size()) {
    throw StructuralError("parameter vector has " + std::to_string(values_.size()) +
                          " values but layout covers " + std::to_string(layout_.total_size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericalError("non-finite parameter at index " + std::to_string(i));
    }
  }
}

ParamVector ParamVector::zeros(const SegmentLayout& layout) {
  return ParamVector(layout, std::vector<double>(layout.total_size(), 0.0));
}

std::span<const double> ParamVector::segment(const std::string& name) const {
  const Segment& s = layout_.segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

ParamVector task_vector(const ParamVector& fine_tuned, const ParamVector& pretrained) {
  require_same_layout(fine_tuned.layout(), pretrained.layout(), "task_vector");
  std::vector<double> out(fine_tuned.size());
  kernels::active().sub(fine_tuned.values().data(), pretrained.values().data(), out.data(), out.size());
  return ParamVector(fine_tuned.layout(), std::move(out));
}

ParamVector axpy_into_pretrained(const ParamVector& pretrained, std::span<const ScaledVector> scaled) {
  for (const ScaledVector& s : scaled) {
    require_same_layout(pretrained.layout(), s.vector->layout(), "axpy_into_pretrained");
    if (!std::isfinite(s.coefficient)) throw ConfigError("axpy_into_pretrained: non-finite coefficient");
  }
  std::vector<double> out(pretrained.values().begin(), pretrained.values().end());
  const auto& k = kernels::active();
  for (const ScaledVector& s : scaled) k.axpy(s.coefficient, s.vector->values().data(), out.data(), out.size());
  return ParamVector(pretrained.layout(), std::move(out));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.meta.param_count != ckpt.params.size()) {
    throw StructuralError("checkpoint meta declares " + std::to_string(ckpt.meta.param_count) +
                          " parameters but vector has " + std::to_string(ckpt.params.size()));
  }
  nlohmann::json fields;
  fields["layout"] = layout_to_json(ckpt.params.layout());
  fields["model_meta"] = {{"architecture", ckpt.meta.architecture},
                          {"input_dim", ckpt.meta.input_dim},
                          {"hidden_dim", ckpt.meta.hidden_dim},
                          {"num_classes", ckpt.meta.num_classes},
                          {"param_count", ckpt.meta.param_count}};
  fields["provenance"] = {{"task", ckpt.provenance.task},
                          {"seed", ckpt.provenance.seed},
                          {"steps", ckpt.provenance.steps},
                          {"notes", nlohmann::json::parse(ckpt.provenance.notes_json)}};
  write_container(path, "checkpoint", std::move(fields), ckpt.params.values());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path, "checkpoint");
  try {
    Checkpoint ckpt;
    const auto& meta = c.header.at("model_meta");
    ckpt.meta.architecture = meta.at("architecture").get<std::string>();
    ckpt.meta.input_dim = meta.at("input_dim").get<std::size_t>();
    ckpt.meta.hidden_dim = meta.at("hidden_dim").get<std::size_t>();
    ckpt.meta.num_classes = meta.at("num_classes").get<std::size_t>();
    ckpt.meta.param_count = meta.at("param_count").get<std::size_t>();
    const auto& prov = c.header.at("provenance");
    ckpt.provenance.task = prov.at("task").get<std::string>();
    ckpt.provenance.seed = prov.at("seed").get<std::uint64_t>();
    ckpt.provenance.steps = prov.at("steps").get<std::uint64_t>();
    ckpt.provenance.notes_json = prov.at("notes").dump();
    SegmentLayout layout = layout_from_json(c.header.at("layout"));
    if (ckpt.meta.param_count != c.payload.size()) {
      throw LengthMismatchError(path.string() + ": model_meta declares " + std::to_string(ckpt.meta.param_count) +
                                " parameters, payload holds " + std::to_string(c.payload.size()));
    }
    ckpt.params = ParamVector(std::move(layout), std::move(c.payload));
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  } catch (const StructuralError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace dfmerge
