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
#include <functional>
#include <span>
#include <string>

#include "tacr/autodiff.hpp"
#include "tacr/rng.hpp"

namespace tacr {

// Central finite-difference check of reverse-mode gradients.
//
// The error per coordinate is |analytic - numeric| / max(|analytic|,
// |numeric|, denominator_floor). A coordinate whose +/- step changes the
// tape's branch signature straddles a relu/max kink; the inputs are then
// resampled through `resample` and checking resumes at that coordinate.
struct GradCheckOptions {
  double step = 1e-5;
  // Scaled by max(1, |loss|) so the error is invariant to rescaling the loss.
  double denominator_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per tensor.
  int max_coords_per_tensor = 0;
  int max_resamples = 200;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  int resamples = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

using LossBuilder = std::function<Var(Tape&)>;
using Resampler = std::function<void(Rng&)>;

// `loss` must read every tensor in `params` through Tape::param.
GradCheckResult check_gradients(std::span<Parameter* const> params, const LossBuilder& loss,
                                const GradCheckOptions& options = {}, const Resampler& resample = {});

}  // namespace tacr
