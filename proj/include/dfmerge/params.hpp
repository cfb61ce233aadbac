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

// Flat parameter vectors with a named-segment layout, task vectors, and
// checkpoint persistence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dfmerge {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

/// Ordered, contiguous, non-overlapping segments covering [0, total_size()).
class SegmentLayout {
 public:
  SegmentLayout() = default;

  /// Build from (name, length) pairs; offsets are assigned contiguously.
  static SegmentLayout from_lengths(const std::vector<std::pair<std::string, std::size_t>>& parts);

  /// Build from explicit segments, validating contiguity, coverage and unique names.
  static SegmentLayout from_segments(std::vector<Segment> segments);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total_size() const { return total_; }
  const Segment& segment(const std::string& name) const;
  bool has_segment(const std::string& name) const;

  bool operator==(const SegmentLayout& other) const { return segments_ == other.segments_; }

  /// Describes the first segment that differs from `other`, or nullopt if equal.
  std::optional<std::string> first_difference(const SegmentLayout& other) const;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Throws StructuralError naming the first differing segment.
void require_same_layout(const SegmentLayout& a, const SegmentLayout& b, const char* context);

/// Immutable real vector tagged with its layout. All entries are finite.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(SegmentLayout layout, std::vector<double> values);

  static ParamVector zeros(const SegmentLayout& layout);

  const SegmentLayout& layout() const { return layout_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> segment(const std::string& name) const;
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Releases the storage, e.g. for in-place updates before re-wrapping.
  std::vector<double> take_values() && { return std::move(values_); }

  bool operator==(const ParamVector& other) const = default;

 private:
  SegmentLayout layout_;
  std::vector<double> values_;
};

/// tau = fine_tuned - pretrained.
ParamVector task_vector(const ParamVector& fine_tuned, const ParamVector& pretrained);

struct ScaledVector {
  double coefficient;
  const ParamVector* vector;
};

/// pretrained + sum_i coefficient_i * tau_i, accumulated in list order.
ParamVector axpy_into_pretrained(const ParamVector& pretrained, std::span<const ScaledVector> scaled);

struct ModelMeta {
  std::string architecture = "mlp";
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  std::size_t param_count = 0;

  bool operator==(const ModelMeta&) const = default;
};

struct Provenance {
  std::string task;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  // Free-form record of how the vector was produced (merge method, coefficients, ...).
  std::string notes_json = "{}";

  bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
  ParamVector params;
  ModelMeta meta;
  Provenance provenance;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dfmerge
