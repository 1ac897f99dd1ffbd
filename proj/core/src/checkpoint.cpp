// Copyright 2026 The TACR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tacr/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>

#include "tacr/error.hpp"

namespace tacr {
namespace {

void put_f32_le(std::string& buf, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

struct RawCheckpoint {
  std::vector<CheckpointEntry> entries;
  std::string payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string magic, manifest_line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw ParseError(path.string() + ": bad checkpoint header '" + magic + "'");
  std::getline(in, manifest_line);
  RawCheckpoint raw;
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(manifest_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": manifest: " + e.what());
  }
  for (const auto& [name, meta] : manifest.items()) {
    CheckpointEntry e;
    e.name = name;
    try {
      e.shape = meta.at("shape").get<Shape>();
      e.dtype = meta.at("dtype").get<std::string>();
      e.offset = meta.at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(path.string() + ": manifest entry '" + name + "': " + ex.what());
    }
    if (e.dtype != "float32") throw ParseError(path.string() + ": entry '" + name + "' has dtype " + e.dtype);
    raw.entries.push_back(std::move(e));
  }
  raw.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return raw;
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  std::string payload;
  for (const auto& p : store.all()) {
    manifest[p.name] = {{"shape", p.value.shape()}, {"dtype", "float32"}, {"offset", payload.size()}};
    for (double v : p.value.data()) put_f32_le(payload, static_cast<float>(v));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n' << manifest.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint_manifest(const std::filesystem::path& path) {
  return read_raw(path).entries;
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  if (raw.entries.size() != store.size()) {
    throw ParseError(path.string() + ": checkpoint has " + std::to_string(raw.entries.size()) +
                     " tensors, model expects " + std::to_string(store.size()));
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.payload.data());
  for (const auto& e : raw.entries) {
    if (!store.contains(e.name)) throw ParseError(path.string() + ": unknown tensor '" + e.name + "'");
    Parameter& p = store.get(e.name);
    if (p.value.shape() != e.shape) {
      throw ParseError(path.string() + ": tensor '" + e.name + "' has shape " + shape_string(e.shape) +
                       ", model expects " + shape_string(p.value.shape()));
    }
    const std::size_t need = e.offset + 4 * p.value.size();
    if (need > raw.payload.size()) throw ParseError(path.string() + ": payload truncated at '" + e.name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = get_f32_le(bytes + e.offset + 4 * i);
  }
}

void round_to_float32(ParameterStore& store) {
  for (auto& p : store.all()) {
    for (double& v : p.value.data()) v = static_cast<float>(v);
  }
}

}  // namespace tacr
