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

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tacr/autodiff.hpp"

namespace tacr {

// Checkpoint layout:
//   line 1: "TACR-CKPT v1"
//   line 2: JSON manifest {name: {"shape": [...], "dtype": "float32", "offset": bytes}}
//   then little-endian float32 payloads in manifest order; offsets are
//   relative to the first payload byte.
inline constexpr const char* kCheckpointMagic = "TACR-CKPT v1";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::string dtype;
  std::size_t offset = 0;
};

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);

// Overwrites every parameter of `store` from the file. Names and shapes must
// match exactly; ParseError otherwise.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& path);

std::vector<CheckpointEntry> read_checkpoint_manifest(const std::filesystem::path& path);

// Rounds every parameter to float32 precision in place, which is what a
// save/load round trip does.
void round_to_float32(ParameterStore& store);

}  // namespace tacr
