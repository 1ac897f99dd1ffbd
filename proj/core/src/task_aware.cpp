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

#include "tacr/task_aware.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tacr/error.hpp"
#include "tacr/init.hpp"

namespace tacr {

void TaskAwareConfig::validate() const {
  if (channels < 1) throw ConfigError("task-aware: channels must be >= 1");
  if (hidden < 1) throw ConfigError("task-aware: hidden width must be >= 1");
  if (!(lambda_a > 0.0) || !(lambda_b > 0.0)) throw ConfigError("task-aware: lambda_a and lambda_b must be > 0");
}

Var dyrelu_apply(const Var& features, const DyReluParams& params) {
  return ops::dynamic_relu(features, params.a1, params.b1, params.a2, params.b2);
}

DynamicRelu::DynamicRelu(ParameterStore& store, const std::string& prefix, const TaskAwareConfig& config, Rng& init)
    : config_(config) {
  config_.validate();
  const int c = config_.channels;
  const int h = config_.hidden;
  fc1_w_ = &store.add(prefix + ".fc1.weight", kaiming_normal({h, c}, init));
  fc1_b_ = &store.add(prefix + ".fc1.bias", Tensor({h}, 0.0));
  fc2_w_ = &store.add(prefix + ".fc2.weight", normal_tensor({4 * c, h}, init, 0.01));
  fc2_b_ = &store.add(prefix + ".fc2.bias", Tensor({4 * c}, 0.0));
}

DyReluParams DynamicRelu::encode_context(const Var& features) const {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[1] != config_.channels) {
    throw DimensionError("dynamic relu: features " + shape_string(s) + " do not have C=" +
                         std::to_string(config_.channels) + " on axis 1");
  }
  Tape& tape = *features.tape();
  const int c = config_.channels;
  Var z = ops::global_avg_pool(features);
  z = ops::relu(ops::linear(z, tape.param(*fc1_w_), tape.param(*fc1_b_)));
  z = ops::linear(z, tape.param(*fc2_w_), tape.param(*fc2_b_));
  // 2*sigmoid(z) - 1 lies in (-1, 1); scale by lambda and shift by the base.
  const Var unit = ops::sigmoid(z);
  auto part = [&](int k, double lambda, double base) {
    return ops::affine(ops::slice(unit, 1, k * c, c), 2.0 * lambda, base - lambda);
  };
  return {part(0, config_.lambda_a, config_.base_a1), part(1, config_.lambda_b, config_.base_b1),
          part(2, config_.lambda_a, config_.base_a2), part(3, config_.lambda_b, config_.base_b2)};
}

Var DynamicRelu::forward(const Var& features, DyReluParams* coefficients) const {
  DyReluParams p = encode_context(features);
  if (coefficients) *coefficients = p;
  return dyrelu_apply(features, p);
}

void DynamicRelu::zero_coefficient_head() {
  for (Parameter* p : {fc1_w_, fc1_b_, fc2_w_, fc2_b_}) p->value.fill(0.0);
}

void HeadConfig::validate() const {
  if (in_channels < 1 || hidden_channels < 1) throw ConfigError("head: channel counts must be >= 1");
  if (anchors < 1) throw ConfigError("head: at least one anchor per scale is required");
  if (classes < 1) throw ConfigError("head: at least one class is required");
}

TaskAwareHead::TaskAwareHead(ParameterStore& store, const std::string& prefix, const HeadConfig& config, Rng& init)
    : config_(config) {
  config_.validate();
  const int ci = config_.in_channels, ch = config_.hidden_channels;
  const int a = config_.anchors, k = config_.classes;
  conv_w_ = &store.add(prefix + ".conv.weight", kaiming_normal({ch, ci, 3, 3}, init));
  conv_b_ = &store.add(prefix + ".conv.bias", Tensor({ch}, 0.0));
  if (config_.use_taskaware) {
    TaskAwareConfig tc;
    tc.channels = ch;
    tc.hidden = config_.coefficient_hidden;
    tc.lambda_a = config_.lambda_a;
    tc.lambda_b = config_.lambda_b;
    dyrelu_.emplace(store, prefix + ".dyrelu", tc, init);
  }
  cls_w_ = &store.add(prefix + ".cls.weight", normal_tensor({a * k, ch, 1, 1}, init, 0.01));
  // Class logits start at a low prior; most anchors are background.
  cls_b_ = &store.add(prefix + ".cls.bias", Tensor({a * k}, -2.0));
  reg_w_ = &store.add(prefix + ".reg.weight", normal_tensor({5 * a, ch, 1, 1}, init, 0.01));
  Tensor reg_b({5 * a}, 0.0);
  for (int i = 4 * a; i < 5 * a; ++i) reg_b[i] = -4.0;
  reg_b_ = &store.add(prefix + ".reg.bias", std::move(reg_b));
}

HeadOutput TaskAwareHead::forward(std::span<const Var> inputs) const {
  if (inputs.empty()) throw ConfigError("head: no input features");
  const Var x = inputs.size() == 1 ? inputs[0] : ops::concat(inputs, 1);
  if (x.shape().size() != 4 || x.shape()[1] != config_.in_channels) {
    throw ConfigError("head: concatenated features " + shape_string(x.shape()) + " do not have the configured " +
                      std::to_string(config_.in_channels) + " channels");
  }
  Tape& tape = *x.tape();
  Var h = ops::conv2d(x, tape.param(*conv_w_), tape.param(*conv_b_), 1, 1);
  HeadOutput out;
  if (dyrelu_) {
    DyReluParams p;
    h = dyrelu_->forward(h, &p);
    out.coefficients = p;
  } else {
    h = ops::relu(h);
  }
  const int a = config_.anchors;
  out.cls_logits = ops::conv2d(h, tape.param(*cls_w_), tape.param(*cls_b_), 1, 0);
  const Var reg = ops::conv2d(h, tape.param(*reg_w_), tape.param(*reg_b_), 1, 0);
  out.box_deltas = ops::slice(reg, 1, 0, 4 * a);
  out.objectness = ops::slice(reg, 1, 4 * a, a);
  return out;
}

nlohmann::json dyrelu_stats_json(const DyReluParams& params) {
  // Per channel, over the images of the batch.
  auto stats = [](const Tensor& t) {
    const int N = t.dim(0), C = t.dim(1);
    std::vector<double> lo(C, std::numeric_limits<double>::infinity()), hi(C, -lo[0]), mean(C, 0.0);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double v = t.at(n, c);
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
        mean[c] += v / N;
      }
    return nlohmann::json{{"min", lo}, {"mean", mean}, {"max", hi}};
  };
  return {{"channels", params.a1.value().dim(1)},
          {"alpha1", stats(params.a1.value())},
          {"beta1", stats(params.b1.value())},
          {"alpha2", stats(params.a2.value())},
          {"beta2", stats(params.b2.value())}};
}

}  // namespace tacr
