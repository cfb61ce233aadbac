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

// On-disk container shared by checkpoints, Fisher diagonals, and datasets.
//
//   <UTF-8 JSON header on one line>\n<count little-endian f64 values>
//
// Header keys written for every kind:
//   "format": "dfmerge-container", "version": 1, "kind": <string>,
//   "count": <number of f64 values>, "crc32": <lowercase hex CRC-32 of payload>
// Kind-specific keys are stored alongside them.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dfmerge/params.hpp"
#include "json.hpp"

namespace dfmerge {

struct Container {
  std::string kind;
  nlohmann::json header;
  std::vector<double> payload;
};

std::uint32_t crc32_of(std::span<const double> values);

// `fields` must not contain the reserved keys listed above.
void write_container(const std::filesystem::path& path, const std::string& kind,
                     nlohmann::json fields, std::span<const double> payload);

// Throws FormatError, LengthMismatchError, ChecksumError, or IoError.
Container read_container(const std::filesystem::path& path);

// Same as read_container but also requires header "kind" to equal `kind`.
Container read_container(const std::filesystem::path& path, const std::string& kind);

nlohmann::json layout_to_json(const SegmentLayout& layout);
SegmentLayout layout_from_json(const nlohmann::json& j);

}  // namespace dfmerge
