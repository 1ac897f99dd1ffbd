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

#include <cmath>
#include <string>

#include "tacr/autodiff.hpp"
#include "tacr/ops.hpp"
#include "tacr/rng.hpp"

namespace tacr {

// He-normal init; fan-in is the product of every axis but the first.
inline Tensor kaiming_normal(const Shape& shape, Rng& rng, double gain = 1.0) {
  Tensor t(shape);
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<std::size_t>(shape[i]);
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

inline Tensor normal_tensor(const Shape& shape, Rng& rng, double stddev) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

inline ops::BatchNormStats add_batchnorm_stats(ParameterStore& store, const std::string& prefix, int channels) {
  ops::BatchNormStats s;
  s.mean = &store.add(prefix + ".running_mean", Tensor({channels}, 0.0), false);
  s.var = &store.add(prefix + ".running_var", Tensor({channels}, 1.0), false);
  s.batches = &store.add(prefix + ".batches", Tensor({1}, 0.0), false);
  return s;
}

}  // namespace tacr
