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
#include <cstddef>
#include <span>
#include <vector>

namespace tacr {

// Axis-aligned box in corner form. Zero-area boxes are valid; negative
// extents are not.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const;
  // Throws ValidationError on a negative extent or non-finite coordinate.
  void validate() const;

  bool operator==(const Box&) const = default;
};

struct CenterBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

CenterBox to_center(const Box& b);
Box to_corners(const CenterBox& c);

// Guard on the squared enclosing diagonal for near-point boxes.
inline constexpr double kDiagonalFloor = 1e-12;

// Intersection over union; 0 when disjoint or when both areas are 0.
double iou(const Box& a, const Box& b);
// IoU minus squared center distance over squared enclosing diagonal.
double diou(const Box& a, const Box& b);
double diou_loss(const Box& pred, const Box& target);
double iou_loss(const Box& pred, const Box& target);

// d(loss)/d(pred.x1, pred.y1, pred.x2, pred.y2). On exact coordinate ties
// the min/max terms average their one-sided derivatives.
using BoxGradient = std::array<double, 4>;
// Throws NumericError when the enclosing box is degenerate.
BoxGradient diou_loss_grad(const Box& pred, const Box& target);
BoxGradient iou_loss_grad(const Box& pred, const Box& target);

// Comparison outcomes of the piecewise terms above, packed as bits; equal
// patterns mean both evaluations lie on the same smooth piece.
unsigned box_pair_branches(const Box& pred, const Box& target);

struct ScoredBox {
  Box box;
  double score = 0.0;
  int class_id = 0;
};

// Greedy non-maximum suppression. Returns kept indices in descending score
// order; equal scores keep the lower index first.
std::vector<std::size_t> nms_indices(std::span<const ScoredBox> boxes, double iou_threshold, bool class_aware);
std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_threshold, bool class_aware);

inline constexpr double kDefaultNmsIou = 0.5;
inline constexpr double kDefaultConfidenceFloor = 0.05;

}  // namespace tacr
