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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacr/anchors.hpp"
#include "tacr/autodiff.hpp"
#include "tacr/coord_attention.hpp"
#include "tacr/detection_types.hpp"
#include "tacr/ops.hpp"
#include "tacr/task_aware.hpp"

namespace tacr {

enum class BoxLoss { kIou, kDiou };

std::string to_string(BoxLoss l);
BoxLoss parse_box_loss(const std::string& name);

struct DetectorConfig {
  int input_size = 64;
  int num_classes = 4;
  std::vector<std::string> class_names;  // optional; size num_classes when set
  AnchorSet anchors = default_anchors();
  std::vector<int> strides{8, 16};
  bool use_ca = true;
  bool use_taskaware = true;
  bool strengthen_neck = true;
  BoxLoss loss = BoxLoss::kDiou;

  int base_width = 8;      // first backbone stage; doubles every stage
  int neck_channels = 32;
  int head_hidden = 32;
  int ca_reduction = 4;
  int dyrelu_hidden = 8;

  int num_scales() const { return static_cast<int>(strides.size()); }
  int grid_size(int scale) const { return input_size / strides[static_cast<std::size_t>(scale)]; }
  std::vector<std::vector<BoxDims>> anchors_per_scale() const { return anchors.partition(num_scales()); }

  // ConfigError on any violated constraint.
  void validate() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
  // Config with every toggle off and the default anchors.
  static DetectorConfig baseline();
};

// Per-scale raw head output.
struct ScalePrediction {
  Var box_deltas;  // [N, A*4, H, W], channel a*4 + {tx, ty, tw, th}
  Var objectness;  // [N, A, H, W]
  Var cls_logits;  // [N, A*K, H, W], channel a*K + k
  int stride = 0;
  std::vector<BoxDims> anchors;
};

struct ForwardTrace {
  std::vector<Tensor> gate_h;  // per tap, when CA is enabled
  std::vector<Tensor> gate_w;
  std::vector<DyReluParams> dyrelu;  // per scale, when the task-aware head is enabled
};

struct RawPrediction {
  std::vector<ScalePrediction> scales;
  ForwardTrace trace;
};

// conv -> batchnorm -> swish.
class ConvBlock {
 public:
  ConvBlock(ParameterStore& store, const std::string& prefix, int in, int out, int kernel, int stride, Rng& init);
  Var forward(const Var& x, ops::Mode mode) const;
  int out_channels() const { return out_; }

 private:
  Parameter* weight_;
  Parameter* gamma_;
  Parameter* beta_;
  ops::BatchNormStats stats_;
  int out_;
  int stride_;
  int pad_;
};

class Detector {
 public:
  Detector(const DetectorConfig& config, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  // Backbone taps, finest first, after coordinate attention when enabled.
  std::vector<Var> backbone_forward(const Var& images, ops::Mode mode, ForwardTrace* trace = nullptr) const;
  // Fused per-scale head inputs, finest first.
  std::vector<std::vector<Var>> neck_forward(std::span<const Var> taps, ops::Mode mode) const;
  RawPrediction forward(const Var& images, ops::Mode mode) const;
  RawPrediction forward(Tape& tape, const Tensor& images, ops::Mode mode) const;

  const DetectorConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::vector<int> tap_channels() const;

 private:
  DetectorConfig config_;
  ParameterStore store_;
  std::vector<std::vector<ConvBlock>> stages_;
  std::vector<int> tap_stage_;
  std::vector<CoordAttention> attention_;
  std::vector<std::vector<ConvBlock>> stems_;
  std::vector<ConvBlock> fuse_;  // one per non-coarsest scale
  std::vector<TaskAwareHead> heads_;
};

// Log-space upper bound on tw/th: a box is at most 4x its anchor per axis.
inline constexpr double kMaxLogScale = 1.3862943611198906;

// Box of one anchor slot from its four deltas.
Box decode_box(std::span<const double, 4> deltas, const BoxDims& anchor, int stride, int row, int col);
// Inverse of decode_box for a box centred strictly inside the cell at most
// 4x its anchor.
std::array<double, 4> encode_box(const Box& box, const BoxDims& anchor, int stride, int row, int col);

struct DecodeOptions {
  double conf_floor = kDefaultConfidenceFloor;
  double nms_iou = kDefaultNmsIou;
  bool apply_nms = true;
  int max_detections = 100;
};

// Per image: boxes clipped to [0, S]^2, score = sigmoid(obj) * max sigmoid(cls),
// filtered by the floor and class-aware NMS.
std::vector<std::vector<Detection>> decode(const RawPrediction& pred, int input_size,
                                           const DecodeOptions& options = {});

// One positive anchor slot.
struct AssignedTarget {
  int image = 0;
  int scale = 0;
  int anchor = 0;
  int row = 0;
  int col = 0;
  int gt_index = 0;
  bool primary = false;
  double iou = 0.0;  // shape IoU between gt and anchor
  Box box;
  int class_id = 0;
  bool operator==(const AssignedTarget&) const = default;
};

struct TargetSet {
  // Sorted by (image, scale, anchor, row, col).
  std::vector<AssignedTarget> positives;
  int images = 0;
  std::vector<int> grid;             // per scale
  std::vector<int> anchors_per_scale;
  // 1 at positive slots; shapes [N, A, H, W] per scale.
  std::vector<Tensor> objectness() const;
};

inline constexpr double kDefaultPositiveIou = 0.5;

// Shape IoU of (w, h) pairs aligned at a common corner.
double shape_iou(const BoxDims& a, const BoxDims& b);

// Each gt's best anchor over all scales is the primary positive at its
// centre cell; every other anchor above `iou_pos_threshold` is an auxiliary
// positive. On slot conflicts a primary beats an auxiliary, then the higher
// IoU wins, then the earlier gt. ValidationError for a gt outside the image.
TargetSet assign_targets(std::span<const std::vector<GroundTruth>> gts, const DetectorConfig& config,
                         double iou_pos_threshold = kDefaultPositiveIou);

}  // namespace tacr
