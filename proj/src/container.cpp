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

#include "dfmerge/container.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dfmerge/errors.hpp"

namespace dfmerge {
namespace {

constexpr const char* kFormat = "dfmerge-container";
constexpr int kVersion = 1;

std::vector<unsigned char> to_le_bytes(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * sizeof(double));
  if (!bytes.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 8) std::reverse(bytes.begin() + i, bytes.begin() + i + 8);
  }
  return bytes;
}

std::uint32_t crc32_bytes(const std::vector<unsigned char>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, bytes.data() + done, static_cast<uInt>(chunk));
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

}  // namespace

std::uint32_t crc32_of(std::span<const double> values) { return crc32_bytes(to_le_bytes(values)); }

void write_container(const std::filesystem::path& path, const std::string& kind, nlohmann::json fields,
                     std::span<const double> payload) {
  const std::vector<unsigned char> bytes = to_le_bytes(payload);
  fields["format"] = kFormat;
  fields["version"] = kVersion;
  fields["kind"] = kind;
  fields["count"] = payload.size();
  fields["crc32"] = hex32(crc32_bytes(bytes));

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string header = fields.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header line");

  Container c;
  try {
    c.header = nlohmann::json::parse(line);
    if (c.header.at("format").get<std::string>() != kFormat) throw FormatError(path.string() + ": not a container file");
    if (c.header.at("version").get<int>() != kVersion) throw FormatError(path.string() + ": unsupported version");
    c.kind = c.header.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }

  std::uint64_t count = 0;
  std::string crc_hex;
  try {
    count = c.header.at("count").get<std::uint64_t>();
    crc_hex = c.header.at("crc32").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }

  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string body = rest.str();
  if (body.size() != count * sizeof(double)) {
    throw LengthMismatchError(path.string() + ": header declares " + std::to_string(count) + " values (" +
                              std::to_string(count * sizeof(double)) + " bytes), payload has " +
                              std::to_string(body.size()) + " bytes");
  }
  std::vector<unsigned char> bytes(body.begin(), body.end());
  if (hex32(crc32_bytes(bytes)) != crc_hex) {
    throw ChecksumError(path.string() + ": payload CRC-32 does not match header (" + crc_hex + ")");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += 8) std::reverse(bytes.begin() + i, bytes.begin() + i + 8);
  }
  c.payload.resize(count);
  if (count > 0) std::memcpy(c.payload.data(), bytes.data(), bytes.size());
  return c;
}

Container read_container(const std::filesystem::path& path, const std::string& kind) {
  Container c = read_container(path);
  if (c.kind != kind) throw FormatError(path.string() + ": expected a '" + kind + "' container, found '" + c.kind + "'");
  return c;
}

nlohmann::json layout_to_json(const SegmentLayout& layout) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Segment& s : layout.segments()) arr.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
  return arr;
}

SegmentLayout layout_from_json(const nlohmann::json& j) {
  std::vector<Segment> segments;
  for (const auto& s : j) {
    segments.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(), s.at("length").get<std::size_t>()});
  }
  return SegmentLayout::from_segments(std::move(segments));
}

}  // namespace dfmerge
