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

#include "tacr/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "tacr/error.hpp"

namespace tacr {

std::string to_string(ApMode m) { return m == ApMode::kAllPoints ? "all-points" : "101-point"; }

ApMode parse_ap_mode(const std::string& name) {
  if (name == "all-points") return ApMode::kAllPoints;
  if (name == "101-point") return ApMode::k101Point;
  throw ConfigError("unknown AP mode '" + name + "' (expected all-points or 101-point)");
}

std::vector<std::size_t> score_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             double iou_threshold) {
  MatchResult r;
  r.true_positive.assign(dets.size(), false);
  r.matched_gt.assign(dets.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : score_order(dets)) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      taken[static_cast<std::size_t>(best)] = true;
      r.true_positive[d] = true;
      r.matched_gt[d] = best;
    }
  }
  r.false_negatives = static_cast<int>(std::count(taken.begin(), taken.end(), false));
  return r;
}

PrCurve pr_curve(const std::vector<bool>& flags, int n_gt) {
  PrCurve c;
  if (n_gt <= 0) return c;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) ++tp;
    c.recall.push_back(static_cast<double>(tp) / n_gt);
    c.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  return c;
}

std::vector<double> precision_envelope(std::span<const double> precision) {
  std::vector<double> env(precision.begin(), precision.end());
  for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  return env;
}

std::optional<double> average_precision(const std::vector<bool>& flags, int n_gt, ApMode mode) {
  if (n_gt < 0) throw ValidationError("average_precision: n_gt must be >= 0");
  if (n_gt == 0) {
    if (flags.empty()) return std::nullopt;
    return 0.0;
  }
  const PrCurve c = pr_curve(flags, n_gt);
  const std::vector<double> env = precision_envelope(c.precision);
  if (mode == ApMode::kAllPoints) {
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < env.size(); ++i) {
      ap += (c.recall[i] - prev_recall) * env[i];
      prev_recall = c.recall[i];
    }
    return ap;
  }
  double ap = 0.0;
  std::size_t at = 0;
  for (int t = 0; t <= 100; ++t) {
    const double r = t / 100.0;
    while (at < c.recall.size() && c.recall[at] < r - 1e-12) ++at;
    if (at < env.size()) ap += env[at];
  }
  return ap / 101.0;
}

double mean_average_precision(std::span<const double> aps) {
  if (aps.empty()) throw ValidationError("mAP needs at least one evaluated class");
  double sum = 0.0;
  for (double a : aps) sum += a;
  return sum / static_cast<double>(aps.size());
}

EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets,
                               std::span<const std::vector<GroundTruth>> gts, int num_classes,
                               const EvalOptions& options) {
  if (dets.size() != gts.size()) {
    throw ValidationError("evaluate: " + std::to_string(dets.size()) + " detection lists for " +
                          std::to_string(gts.size()) + " images");
  }
  if (!options.class_names.empty() && static_cast<int>(options.class_names.size()) != num_classes) {
    throw ValidationError("evaluate: class name count does not match the class count");
  }
  EvalReport rep;
  rep.iou_threshold = options.iou_threshold;
  rep.operating_score = options.operating_score;
  rep.mode = options.mode;

  struct Ranked {
    double score;
    bool tp;
  };
  std::vector<std::vector<Ranked>> ranked(static_cast<std::size_t>(num_classes));
  std::vector<int> n_gt(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t img = 0; img < dets.size(); ++img) {
    for (const auto& g : gts[img]) {
      if (g.class_id < 0 || g.class_id >= num_classes) throw ValidationError("evaluate: gt class id out of range");
      ++n_gt[static_cast<std::size_t>(g.class_id)];
    }
    for (const auto& d : dets[img]) {
      if (d.class_id < 0 || d.class_id >= num_classes) {
        throw ValidationError("evaluate: detection class id out of range");
      }
      if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError("evaluate: detection score outside [0, 1]");
    }
    const MatchResult m = match_detections(dets[img], gts[img], options.iou_threshold);
    for (std::size_t d = 0; d < dets[img].size(); ++d) {
      ranked[static_cast<std::size_t>(dets[img][d].class_id)].push_back({dets[img][d].score, m.true_positive[d]});
    }
  }

  std::vector<double> aps;
  for (int k = 0; k < num_classes; ++k) {
    auto& list = ranked[static_cast<std::size_t>(k)];
    // Stable: equal scores keep image order, then detection order.
    std::stable_sort(list.begin(), list.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    std::vector<bool> flags;
    ClassReport cr;
    cr.class_id = k;
    cr.name = options.class_names.empty() ? "class" + std::to_string(k)
                                          : options.class_names[static_cast<std::size_t>(k)];
    cr.n_gt = n_gt[static_cast<std::size_t>(k)];
    cr.n_det = static_cast<int>(list.size());
    for (const auto& r : list) {
      flags.push_back(r.tp);
      if (r.score >= options.operating_score) (r.tp ? cr.tp : cr.fp)++;
    }
    cr.fn = cr.n_gt - cr.tp;
    cr.ap = average_precision(flags, cr.n_gt, options.mode);
    cr.curve = pr_curve(flags, cr.n_gt);
    if (cr.ap) aps.push_back(*cr.ap);
    rep.tp += cr.tp;
    rep.fp += cr.fp;
    rep.fn += cr.fn;
    rep.classes.push_back(std::move(cr));
  }
  rep.evaluated_classes = static_cast<int>(aps.size());
  rep.map = mean_average_precision(aps);
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) {
    const double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    const double r = c.n_gt > 0 ? static_cast<double>(c.tp) / c.n_gt : 0.0;
    cls.push_back({{"class_id", c.class_id},
                   {"name", c.name},
                   {"ap", c.ap ? nlohmann::json(*c.ap) : nlohmann::json(nullptr)},
                   {"n_gt", c.n_gt},
                   {"n_det", c.n_det},
                   {"tp", c.tp},
                   {"fp", c.fp},
                   {"fn", c.fn},
                   {"precision", p},
                   {"recall", r},
                   {"pr_curve", {{"recall", c.curve.recall}, {"precision", c.curve.precision}}}});
  }
  return {{"map", map},
          {"evaluated_classes", evaluated_classes},
          {"iou_threshold", iou_threshold},
          {"operating_score", operating_score},
          {"ap_mode", tacr::to_string(mode)},
          {"counts", {{"tp", tp}, {"fp", fp}, {"fn", fn}}},
          {"classes", cls}};
}

std::string EvalReport::pr_csv(int class_id) const {
  const auto it = std::find_if(classes.begin(), classes.end(), [&](const ClassReport& c) {
    return c.class_id == class_id;
  });
  if (it == classes.end()) throw ValidationError("no report for class " + std::to_string(class_id));
  std::ostringstream out;
  out.precision(17);
  out << "recall,precision\n";
  for (std::size_t i = 0; i < it->curve.recall.size(); ++i) {
    out << it->curve.recall[i] << ',' << it->curve.precision[i] << '\n';
  }
  return out.str();
}

}  // namespace tacr
