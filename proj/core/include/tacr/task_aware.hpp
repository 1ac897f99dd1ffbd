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

#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "tacr/autodiff.hpp"
#include "tacr/ops.hpp"
#include "tacr/rng.hpp"

namespace tacr {

struct TaskAwareConfig {
  int channels = 0;
  int hidden = 8;
  double lambda_a = 1.0;  // range of the alpha deltas
  double lambda_b = 0.5;  // range of the beta deltas
  double base_a1 = 1.0;
  double base_b1 = 0.0;
  double base_a2 = 0.0;
  double base_b2 = 0.0;

  void validate() const;
};

// Per-(image, channel) coefficients, each [N,C].
struct DyReluParams {
  Var a1;
  Var b1;
  Var a2;
  Var b2;
};

// out = max(a1*x + b1, a2*x + b2) channel-wise.
Var dyrelu_apply(const Var& features, const DyReluParams& params);

// Dynamic ReLU whose coefficients come from the global context of the input:
// average pool -> FC -> relu -> FC -> 2*sigmoid-1 -> scaled deltas added to
// the base coefficients.
class DynamicRelu {
 public:
  DynamicRelu(ParameterStore& store, const std::string& prefix, const TaskAwareConfig& config, Rng& init);

  DyReluParams encode_context(const Var& features) const;
  Var forward(const Var& features, DyReluParams* coefficients = nullptr) const;

  // Zeroes the coefficient head so the activation degenerates to the base
  // coefficients (plain relu for the defaults).
  void zero_coefficient_head();

  const TaskAwareConfig& config() const { return config_; }
  Parameter& fc1_weight() const { return *fc1_w_; }
  Parameter& fc1_bias() const { return *fc1_b_; }
  Parameter& fc2_weight() const { return *fc2_w_; }
  Parameter& fc2_bias() const { return *fc2_b_; }

 private:
  TaskAwareConfig config_;
  Parameter* fc1_w_;
  Parameter* fc1_b_;
  Parameter* fc2_w_;
  Parameter* fc2_b_;
};

struct HeadConfig {
  int in_channels = 0;
  int hidden_channels = 32;
  int anchors = 3;
  int classes = 4;
  bool use_taskaware = true;
  int coefficient_hidden = 8;
  double lambda_a = 1.0;
  double lambda_b = 0.5;

  void validate() const;
};

struct HeadOutput {
  Var cls_logits;  // [N, A*K, H, W]
  Var box_deltas;  // [N, A*4, H, W]
  Var objectness;  // [N, A, H, W]
  std::optional<DyReluParams> coefficients;
};

// Detection head: concat inputs -> 3x3 conv -> dynamic relu (or plain relu)
// -> sibling 1x1 projections for classes and for box+objectness.
class TaskAwareHead {
 public:
  TaskAwareHead(ParameterStore& store, const std::string& prefix, const HeadConfig& config, Rng& init);

  HeadOutput forward(std::span<const Var> inputs) const;

  const HeadConfig& config() const { return config_; }
  DynamicRelu* dynamic_relu() { return dyrelu_ ? &*dyrelu_ : nullptr; }

 private:
  HeadConfig config_;
  Parameter* conv_w_;
  Parameter* conv_b_;
  std::optional<DynamicRelu> dyrelu_;
  Parameter* cls_w_;
  Parameter* cls_b_;
  Parameter* reg_w_;
  Parameter* reg_b_;
};

// {"alpha1": {"min": [C], "mean": [C], "max": [C]}, ...} per channel over the batch.
nlohmann::json dyrelu_stats_json(const DyReluParams& params);

}  // namespace tacr
