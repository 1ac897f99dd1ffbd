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

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "tacr/autodiff.hpp"
#include "tacr/ops.hpp"
#include "tacr/rng.hpp"

namespace tacr {

struct CAConfig {
  int channels = 0;
  int reduction = 16;

  int squeezed() const { return channels / reduction; }
  // Throws ConfigError unless channels % reduction == 0 and the squeeze
  // width is at least 1.
  void validate() const;
};

// Height and width profiles of a feature map: zh [N,C,H,1] is the mean over
// each row, zw [N,C,W,1] the mean over each column.
struct DirectionalPool {
  Var zh;
  Var zw;
};

DirectionalPool directional_pool(const Var& input);

// Coordinate attention. The row profile and the (transposed) column profile
// are stacked along the spatial axis, squeezed to C/r channels by a 1x1 conv
// with batchnorm and relu, split back, and turned into two sigmoid gates
// that rescale the input per (channel, row) and (channel, column).
class CoordAttention {
 public:
  struct Output {
    Var output;
    Var gate_h;  // [N,C,H,1]
    Var gate_w;  // [N,C,W,1]
  };

  CoordAttention(ParameterStore& store, const std::string& prefix, const CAConfig& config, Rng& init);

  Output forward(const Var& input, ops::Mode mode) const;
  // Gates forced to 1; output equals input.
  Output forward_unit_gates(const Var& input) const;

  const CAConfig& config() const { return config_; }

  Parameter& squeeze_weight() const { return *squeeze_w_; }
  Parameter& bn_gamma() const { return *bn_gamma_; }
  Parameter& bn_beta() const { return *bn_beta_; }
  Parameter& gate_h_weight() const { return *fh_w_; }
  Parameter& gate_h_bias() const { return *fh_b_; }
  Parameter& gate_w_weight() const { return *fw_w_; }
  Parameter& gate_w_bias() const { return *fw_b_; }

 private:
  CAConfig config_;
  Parameter* squeeze_w_;
  Parameter* bn_gamma_;
  Parameter* bn_beta_;
  ops::BatchNormStats bn_stats_;
  Parameter* fh_w_;
  Parameter* fh_b_;
  Parameter* fw_w_;
  Parameter* fw_b_;
};

// {"gate_h": [[...per channel per row...]], "gate_w": [...]} per image.
nlohmann::json gates_to_json(const Tensor& gate_h, const Tensor& gate_w);

}  // namespace tacr
