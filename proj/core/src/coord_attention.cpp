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

#include "tacr/coord_attention.hpp"

#include <cmath>

#include "tacr/error.hpp"
#include "tacr/init.hpp"

namespace tacr {

void CAConfig::validate() const {
  if (channels < 1 || reduction < 1) throw ConfigError("coordinate attention: channels and reduction must be >= 1");
  if (channels % reduction != 0) {
    throw ConfigError("coordinate attention: channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
}

DirectionalPool directional_pool(const Var& input) {
  return {ops::mean_over_width(input), ops::mean_over_height(input)};
}

CoordAttention::CoordAttention(ParameterStore& store, const std::string& prefix, const CAConfig& config, Rng& init)
    : config_(config) {
  config_.validate();
  const int c = config_.channels;
  const int m = config_.squeezed();
  squeeze_w_ = &store.add(prefix + ".squeeze.weight", kaiming_normal({m, c, 1, 1}, init));
  bn_gamma_ = &store.add(prefix + ".squeeze.bn.gamma", Tensor({m}, 1.0));
  bn_beta_ = &store.add(prefix + ".squeeze.bn.beta", Tensor({m}, 0.0));
  bn_stats_ = add_batchnorm_stats(store, prefix + ".squeeze.bn", m);
  fh_w_ = &store.add(prefix + ".gate_h.weight", kaiming_normal({c, m, 1, 1}, init));
  fh_b_ = &store.add(prefix + ".gate_h.bias", Tensor({c}, 0.0));
  fw_w_ = &store.add(prefix + ".gate_w.weight", kaiming_normal({c, m, 1, 1}, init));
  fw_b_ = &store.add(prefix + ".gate_w.bias", Tensor({c}, 0.0));
}

CoordAttention::Output CoordAttention::forward(const Var& input, ops::Mode mode) const {
  const Shape& s = input.shape();
  if (s.size() != 4 || s[1] != config_.channels) {
    throw DimensionError("coordinate attention: input " + shape_string(s) + " does not have C=" +
                         std::to_string(config_.channels) + " on axis 1");
  }
  Tape& tape = *input.tape();
  const int H = s[2], W = s[3];
  const DirectionalPool pooled = directional_pool(input);
  const Var stacked = ops::concat(std::vector<Var>{pooled.zh, pooled.zw}, 2);  // [N,C,H+W,1]
  Var f = ops::conv2d(stacked, tape.param(*squeeze_w_), Var(), 1, 0);
  f = ops::batchnorm2d(f, tape.param(*bn_gamma_), tape.param(*bn_beta_), bn_stats_, mode);
  f = ops::relu(f);
  const Var fh = ops::slice(f, 2, 0, H);
  const Var fw = ops::slice(f, 2, H, W);
  const Var gh = ops::sigmoid(ops::conv2d(fh, tape.param(*fh_w_), tape.param(*fh_b_), 1, 0));
  const Var gw = ops::sigmoid(ops::conv2d(fw, tape.param(*fw_w_), tape.param(*fw_b_), 1, 0));
  return {ops::coordinate_gate(input, gh, gw), gh, gw};
}

CoordAttention::Output CoordAttention::forward_unit_gates(const Var& input) const {
  const Shape& s = input.shape();
  Tape& tape = *input.tape();
  const Var gh = tape.constant(Tensor({s[0], s[1], s[2], 1}, 1.0));
  const Var gw = tape.constant(Tensor({s[0], s[1], s[3], 1}, 1.0));
  return {ops::coordinate_gate(input, gh, gw), gh, gw};
}

nlohmann::json gates_to_json(const Tensor& gate_h, const Tensor& gate_w) {
  nlohmann::json images = nlohmann::json::array();
  for (int n = 0; n < gate_h.dim(0); ++n) {
    nlohmann::json gh = nlohmann::json::array(), gw = nlohmann::json::array();
    for (int c = 0; c < gate_h.dim(1); ++c) {
      std::vector<double> row, col;
      for (int h = 0; h < gate_h.dim(2); ++h) row.push_back(gate_h.at(n, c, h, 0));
      for (int w = 0; w < gate_w.dim(2); ++w) col.push_back(gate_w.at(n, c, w, 0));
      gh.push_back(row);
      gw.push_back(col);
    }
    images.push_back({{"gate_h", gh}, {"gate_w", gw}});
  }
  return images;
}

}  // namespace tacr
