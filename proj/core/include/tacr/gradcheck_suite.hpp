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

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacr/gradcheck.hpp"

namespace tacr {

// Finite-difference checks of every primitive and composed module at micro
// size (32x32 input, at most 16 channels).
struct SuiteOptions {
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  int max_coords_per_tensor = 0;  // 0 checks every coordinate
};

struct SuiteEntry {
  std::string module;
  std::string name;
  GradCheckResult result;
  double seconds = 0.0;
  bool passed = false;
};

// "primitives", "ca", "dyrelu", "head", "backbone", "neck", "loss".
const std::vector<std::string>& gradcheck_modules();

// `module` is one of gradcheck_modules() or "all". ConfigError otherwise.
std::vector<SuiteEntry> run_gradcheck_suite(const std::string& module, const SuiteOptions& options = {});

nlohmann::json suite_to_json(const std::vector<SuiteEntry>& entries, double tolerance);

}  // namespace tacr
