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

#include "tacr/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "tacr/error.hpp"

namespace tacr {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 >= x1 && y2 >= y1;
}

void Box::validate() const {
  if (!valid()) {
    throw ValidationError("invalid box (" + std::to_string(x1) + ", " + std::to_string(y1) + ", " +
                          std::to_string(x2) + ", " + std::to_string(y2) + ")");
  }
}

CenterBox to_center(const Box& b) { return {b.center_x(), b.center_y(), b.width(), b.height()}; }

Box to_corners(const CenterBox& c) { return {c.cx - 0.5 * c.w, c.cy - 0.5 * c.h, c.cx + 0.5 * c.w, c.cy + 0.5 * c.h}; }

namespace {

double intersection(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou_unchecked(const Box& a, const Box& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// 1 when u > v, 0 when u < v, 0.5 on a tie.
double side(double u, double v) { return u > v ? 1.0 : (u < v ? 0.0 : 0.5); }

// Derivatives of IoU with respect to the first box's corners.
BoxGradient iou_grad_wrt_first(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  BoxGradient g{0.0, 0.0, 0.0, 0.0};
  if (!overlap || uni <= 0.0) return g;
  // IoU = I / (Aa + Ab - I).
  const double d_inter = (uni + inter) / (uni * uni);
  const double d_area = -inter / (uni * uni);
  const double aw = a.width(), ah = a.height();
  // Coincident edges take the mean of the one-sided derivatives.
  const BoxGradient di{-ih * side(a.x1, b.x1), -iw * side(a.y1, b.y1), ih * side(b.x2, a.x2),
                       iw * side(b.y2, a.y2)};
  const BoxGradient da{-ah, -aw, ah, aw};
  for (int i = 0; i < 4; ++i) g[i] = d_inter * di[i] + d_area * da[i];
  return g;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  a.validate();
  b.validate();
  return iou_unchecked(a, b);
}

double diou(const Box& a, const Box& b) {
  a.validate();
  b.validate();
  const double dx = a.center_x() - b.center_x();
  const double dy = a.center_y() - b.center_y();
  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double c2 = std::max(cw * cw + ch * ch, kDiagonalFloor);
  return iou_unchecked(a, b) - (dx * dx + dy * dy) / c2;
}

double diou_loss(const Box& pred, const Box& target) { return 1.0 - diou(pred, target); }

double iou_loss(const Box& pred, const Box& target) { return 1.0 - iou(pred, target); }

BoxGradient diou_loss_grad(const Box& pred, const Box& target) {
  pred.validate();
  target.validate();
  const double cw = std::max(pred.x2, target.x2) - std::min(pred.x1, target.x1);
  const double ch = std::max(pred.y2, target.y2) - std::min(pred.y1, target.y1);
  const double c2 = cw * cw + ch * ch;
  if (c2 < kDiagonalFloor) throw NumericError("diou gradient: degenerate enclosing box");
  const double dx = pred.center_x() - target.center_x();
  const double dy = pred.center_y() - target.center_y();
  const double rho2 = dx * dx + dy * dy;

  // d(rho^2): each corner moves the center by half its displacement.
  const BoxGradient drho{dx, dy, dx, dy};
  // d(c^2) = 2 cw d(cw) + 2 ch d(ch).
  const BoxGradient dc{-2.0 * cw * side(target.x1, pred.x1), -2.0 * ch * side(target.y1, pred.y1),
                       2.0 * cw * side(pred.x2, target.x2), 2.0 * ch * side(pred.y2, target.y2)};
  const BoxGradient diou_g = iou_grad_wrt_first(pred, target);
  BoxGradient g;
  for (int i = 0; i < 4; ++i) g[i] = -diou_g[i] + drho[i] / c2 - rho2 * dc[i] / (c2 * c2);
  return g;
}

BoxGradient iou_loss_grad(const Box& pred, const Box& target) {
  pred.validate();
  target.validate();
  BoxGradient g = iou_grad_wrt_first(pred, target);
  for (double& v : g) v = -v;
  return g;
}

unsigned box_pair_branches(const Box& p, const Box& t) {
  const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
  const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
  unsigned bits = 0;
  bits |= (p.x1 >= t.x1) << 0;
  bits |= (p.y1 >= t.y1) << 1;
  bits |= (p.x2 <= t.x2) << 2;
  bits |= (p.y2 <= t.y2) << 3;
  bits |= (iw > 0.0) << 4;
  bits |= (ih > 0.0) << 5;
  bits |= (p.x1 <= t.x1) << 6;
  bits |= (p.y1 <= t.y1) << 7;
  bits |= (p.x2 >= t.x2) << 8;
  bits |= (p.y2 >= t.y2) << 9;
  return bits;
}

std::vector<std::size_t> nms_indices(std::span<const ScoredBox> boxes, double iou_threshold, bool class_aware) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw ValidationError("nms: iou threshold must be in (0, 1)");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& b : boxes) {
    if (!std::isfinite(b.score)) throw ValidationError("nms: non-finite score");
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    if (suppressed[a]) continue;
    kept.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t b = order[j];
      if (suppressed[b]) continue;
      if (class_aware && boxes[a].class_id != boxes[b].class_id) continue;
      if (iou(boxes[a].box, boxes[b].box) > iou_threshold) suppressed[b] = true;
    }
  }
  return kept;
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> boxes, double iou_threshold, bool class_aware) {
  std::vector<ScoredBox> out;
  for (std::size_t i : nms_indices(boxes, iou_threshold, class_aware)) out.push_back(boxes[i]);
  return out;
}

}  // namespace tacr
