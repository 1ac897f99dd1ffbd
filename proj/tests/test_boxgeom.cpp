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

#include <algorithm>
#include <limits>

#include "plateau.hpp"
#include "tacr/box.hpp"
#include "tacr/error.hpp"
#include "test_util.hpp"

namespace tacr {
namespace {

Box random_box(Rng& rng) {
  const double x = rng.uniform(-20, 20), y = rng.uniform(-20, 20);
  return {x, y, x + rng.uniform(0.0, 15.0), y + rng.uniform(0.0, 15.0)};
}

TEST(Iou, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-15);
  EXPECT_EQ(iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
  EXPECT_EQ(iou(Box{0, 0, 2, 2}, Box{2, 0, 4, 2}), 0.0);
}

TEST(Iou, InvalidBoxIsValidationError) {
  EXPECT_THROW(iou(Box{0, 0, -1, 1}, Box{0, 0, 1, 1}), ValidationError);
  EXPECT_THROW(diou(Box{0, 0, 1, 1}, Box{0, 2, 1, 1}), ValidationError);
  EXPECT_THROW(iou(Box{0, 0, std::numeric_limits<double>::quiet_NaN(), 1}, Box{0, 0, 1, 1}), ValidationError);
}

TEST(Diou, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_EQ(diou(a, a), 1.0);
  EXPECT_NEAR(diou(a, b), 1.0 / 7.0 - 1.0 / 9.0, 1e-15);
  const Box outer{-3, -1, 5, 3}, inner{0, 0, 2, 2};
  EXPECT_EQ(diou(outer, inner), iou(outer, inner));
  EXPECT_EQ(diou_loss(a, a), 0.0);
  // Both boxes collapse to the same point: the diagonal floor keeps it finite.
  EXPECT_EQ(diou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
}

TEST(Diou, PropertiesOnRandomPairs) {
  Rng rng(101);
  for (int i = 0; i < 20000; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    const double u = iou(a, b), d = diou(a, b);
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
    EXPECT_GT(d, -1.0);
    EXPECT_LE(d, 1.0);
    EXPECT_LE(d, u);
    EXPECT_EQ(u, iou(b, a));
    EXPECT_EQ(d, diou(b, a));
    const double tx = rng.uniform(-50, 50), ty = rng.uniform(-50, 50);
    const Box at{a.x1 + tx, a.y1 + ty, a.x2 + tx, a.y2 + ty}, bt{b.x1 + tx, b.y1 + ty, b.x2 + tx, b.y2 + ty};
    EXPECT_NEAR(iou(at, bt), u, 1e-12);
    EXPECT_NEAR(diou(at, bt), d, 1e-12);
    const bool same_center = a.center_x() == b.center_x() && a.center_y() == b.center_y();
    EXPECT_EQ(same_center, d == u);
  }
}

TEST(Codec, CornerCenterConversionIsExact) {
  const Box b{1.5, -2.25, 7.75, 3.0};
  EXPECT_EQ(to_corners(to_center(b)), b);
  const CenterBox c = to_center(b);
  EXPECT_EQ(c.cx, 4.625);
  EXPECT_EQ(c.w, 6.25);
}

// Extended-precision reimplementation of both losses; finite differences of
// these keep the roundoff far below the tolerance.
using Q = long double;
struct QBox {
  Q x1, y1, x2, y2;
};

Q q_iou(const QBox& a, const QBox& b) {
  const Q iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Q ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const Q inter = iw > 0 && ih > 0 ? iw * ih : 0;
  const Q uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0;
}

Q q_iou_loss(const QBox& a, const QBox& b) { return 1 - q_iou(a, b); }

Q q_diou_loss(const QBox& a, const QBox& b) {
  const Q dx = (a.x1 + a.x2) / 2 - (b.x1 + b.x2) / 2, dy = (a.y1 + a.y2) / 2 - (b.y1 + b.y2) / 2;
  const Q cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1), ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  return 1 - q_iou(a, b) + (dx * dx + dy * dy) / (cw * cw + ch * ch);
}

double fd_component(const Box& p, const Box& t, int k, double h, Q (*loss)(const QBox&, const QBox&)) {
  QBox plus{p.x1, p.y1, p.x2, p.y2}, minus = plus;
  (&plus.x1)[k] += h;
  (&minus.x1)[k] -= h;
  const QBox qt{t.x1, t.y1, t.x2, t.y2};
  return static_cast<double>((loss(plus, qt) - loss(minus, qt)) / (2 * static_cast<Q>(h)));
}

bool same_piece(const Box& p, const Box& t, double h) {
  const unsigned base = box_pair_branches(p, t);
  for (int k = 0; k < 4; ++k) {
    for (double s : {h, -h}) {
      Box q = p;
      (&q.x1)[k] += s;
      if (!q.valid() || box_pair_branches(q, t) != base) return false;
    }
  }
  return true;
}

TEST(DiouGrad, MatchesFiniteDifferences) {
  Rng rng(202);
  const double h = 1e-6;
  int checked = 0;
  for (int i = 0; i < 3000; ++i) {
    const Box p = random_box(rng), t = random_box(rng);
    if (p.width() < 1e-3 || p.height() < 1e-3 || !same_piece(p, t, h)) continue;
    const BoxGradient g = diou_loss_grad(p, t);
    const BoxGradient gi = iou_loss_grad(p, t);
    for (int k = 0; k < 4; ++k) {
      const double n = fd_component(p, t, k, h, q_diou_loss);
      EXPECT_LT(std::abs(g[k] - n) / std::max({std::abs(g[k]), std::abs(n), 1e-6}), 1e-6) << i << " " << k;
      const double ni = fd_component(p, t, k, h, q_iou_loss);
      EXPECT_LT(std::abs(gi[k] - ni) / std::max({std::abs(gi[k]), std::abs(ni), 1e-6}), 1e-6) << i << " " << k;
    }
    ++checked;
  }
  EXPECT_GT(checked, 1000);
}

TEST(DiouGrad, DisjointBoxesEscapeIouPlateau) {
  const Box p{0, 0, 2, 2}, t{10, 10, 12, 12};
  const BoxGradient g = diou_loss_grad(p, t);
  const BoxGradient gi = iou_loss_grad(p, t);
  double mag = 0.0;
  for (int k = 0; k < 4; ++k) {
    mag += std::abs(g[k]);
    EXPECT_EQ(gi[k], 0.0);
  }
  EXPECT_GT(mag, 0.0);
  // The descent direction moves the center toward the target.
  EXPECT_LT(g[0] + g[2], 0.0);
  EXPECT_LT(g[1] + g[3], 0.0);
}

TEST(DiouGrad, ZeroAtOptimum) {
  const Box b{1, 2, 5, 9};
  for (double v : diou_loss_grad(b, b)) EXPECT_EQ(v, 0.0);
}

TEST(DiouGrad, DegenerateEnclosingBoxIsSignaled) {
  EXPECT_THROW(diou_loss_grad(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), NumericError);
}

TEST(DiouGrad, DescentConvergesFromDisjointStarts) {
  Rng rng(303);
  for (int i = 0; i < 25; ++i) {
    const auto pair = testing::disjoint_pair(rng, 64.0);
    const auto d = testing::corner_descent(pair, diou_loss_grad, 1e-3, 10000);
    EXPECT_LT(d.center_distance, 1e-3) << i;
    const auto u = testing::corner_descent(pair, iou_loss_grad, 1e-3, 10000);
    EXPECT_EQ(u.parameter_change, 0.0);
    EXPECT_EQ(u.final_box, pair.start);
  }
}

TEST(Nms, Examples) {
  const std::vector<ScoredBox> same{{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 10, 10}, 0.8, 0}};
  const auto kept = nms(same, 0.5, true);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, 0.9);
  const std::vector<ScoredBox> disjoint{{{0, 0, 1, 1}, 0.3, 0}, {{5, 5, 6, 6}, 0.9, 0}, {{9, 0, 10, 1}, 0.5, 1}};
  EXPECT_EQ(nms(disjoint, 0.5, false).size(), 3u);
  // Different classes survive under class-aware suppression only.
  const std::vector<ScoredBox> cross{{{0, 0, 10, 10}, 0.9, 0}, {{0, 0, 10, 10}, 0.8, 1}};
  EXPECT_EQ(nms(cross, 0.5, true).size(), 2u);
  EXPECT_EQ(nms(cross, 0.5, false).size(), 1u);
  EXPECT_THROW(nms(cross, 1.0, true), ValidationError);
}

TEST(Nms, EqualScoresKeepLowerIndex) {
  const std::vector<ScoredBox> b{{{0, 0, 10, 10}, 0.5, 0}, {{1, 0, 10, 10}, 0.5, 0}};
  EXPECT_EQ(nms_indices(b, 0.5, true), (std::vector<std::size_t>{0}));
}

// Repeatedly take the best remaining box and drop everything it suppresses.
std::vector<std::size_t> nms_oracle(const std::vector<ScoredBox>& boxes, double thr, bool class_aware) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> kept;
  for (;;) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
    }
    if (best == boxes.size()) return kept;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (!alive[i] || (class_aware && boxes[i].class_id != boxes[best].class_id)) continue;
      if (iou(boxes[i].box, boxes[best].box) > thr) alive[i] = false;
    }
  }
}

TEST(Nms, MatchesBruteForceOracle) {
  Rng rng(404);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<ScoredBox> boxes;
    for (int i = 0; i < 10; ++i) {
      const double x = rng.uniform(0, 20), y = rng.uniform(0, 20);
      boxes.push_back({{x, y, x + rng.uniform(2, 10), y + rng.uniform(2, 10)}, rng.uniform(), rng.uniform_int(0, 1)});
    }
    const double thr = rng.uniform(0.2, 0.8);
    const bool aware = trial % 2 == 0;
    EXPECT_EQ(nms_indices(boxes, thr, aware), nms_oracle(boxes, thr, aware));
  }
}

}  // namespace
}  // namespace tacr
