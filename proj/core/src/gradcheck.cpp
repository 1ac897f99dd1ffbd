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

#include "tacr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tacr/error.hpp"

namespace tacr {
namespace {

struct Probe {
  double loss;
  std::uint64_t signature;
};

Probe evaluate(const LossBuilder& build) {
  Tape tape;
  Var loss = build(tape);
  return {loss.value().item(), tape.branch_signature()};
}

std::vector<std::size_t> pick_coords(std::size_t n, int limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit <= 0 || n <= static_cast<std::size_t>(limit)) return idx;
  for (std::size_t i = 0; i < static_cast<std::size_t>(limit); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(limit));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult check_gradients(std::span<Parameter* const> params, const LossBuilder& loss,
                                const GradCheckOptions& options, const Resampler& resample) {
  Rng rng(options.seed);
  std::vector<std::vector<std::size_t>> coords;
  for (Parameter* p : params) coords.push_back(pick_coords(p->value.size(), options.max_coords_per_tensor, rng));

  GradCheckResult result;
  std::uint64_t base_signature = 0;
  double floor = options.denominator_floor;
  std::vector<Tensor> analytic(params.size());
  // Analytic gradients at the current inputs.
  auto linearize = [&] {
    for (Parameter* p : params) p->grad.fill(0.0);
    Tape tape;
    Var l = loss(tape);
    base_signature = tape.branch_signature();
    floor = options.denominator_floor * std::max(1.0, std::abs(l.value().item()));
    tape.backward(l);
    for (std::size_t k = 0; k < params.size(); ++k) analytic[k] = params[k]->grad;
  };
  linearize();

  // A coordinate whose probes leave the current smooth piece is retried at
  // resampled inputs; coordinates already checked keep their verdicts.
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    for (std::size_t c = 0; c < coords[k].size();) {
      const std::size_t i = coords[k][c];
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const Probe plus = evaluate(loss);
      p->value[i] = saved - options.step;
      const Probe minus = evaluate(loss);
      p->value[i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        if (!resample || result.resamples >= options.max_resamples) {
          throw NumericError("gradient check: finite-difference step crosses a kink at " + p->name + "[" +
                             std::to_string(i) + "] after " + std::to_string(result.resamples) + " resamples");
        }
        resample(rng);
        ++result.resamples;
        linearize();
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p->name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
      ++c;
    }
  }
  return result;
}

}  // namespace tacr
