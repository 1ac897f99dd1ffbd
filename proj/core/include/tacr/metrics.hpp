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
#include <vector>

#include <nlohmann/json.hpp>

#include "tacr/detection_types.hpp"

namespace tacr {

enum class ApMode { kAllPoints, k101Point };

std::string to_string(ApMode m);
ApMode parse_ap_mode(const std::string& name);

inline constexpr double kDefaultMatchIou = 0.5;
inline constexpr double kDefaultOperatingScore = 0.5;

// Processing order for greedy matching: descending score, ties by index.
std::vector<std::size_t> score_order(std::span<const Detection> dets);

struct MatchResult {
  std::vector<bool> true_positive;  // per detection, input order
  std::vector<int> matched_gt;      // gt index or -1
  int false_negatives = 0;
};

// Single image. Each detection in score order claims the highest-IoU
// unmatched gt of its own class when that IoU reaches the threshold.
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             double iou_threshold = kDefaultMatchIou);

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
};

// Raw staircase over ranked flags; empty when n_gt == 0.
PrCurve pr_curve(const std::vector<bool>& flags, int n_gt);
// Precision made non-increasing in recall from the right.
std::vector<double> precision_envelope(std::span<const double> precision);

// Flags ranked by descending score. nullopt when the class has neither gts
// nor detections; 0 when it has detections but no gts.
std::optional<double> average_precision(const std::vector<bool>& flags, int n_gt, ApMode mode = ApMode::kAllPoints);

// ValidationError when `aps` is empty.
double mean_average_precision(std::span<const double> aps);

struct ClassReport {
  int class_id = 0;
  std::string name;
  std::optional<double> ap;
  int n_gt = 0;
  int n_det = 0;
  int tp = 0;  // at the operating score
  int fp = 0;
  int fn = 0;
  PrCurve curve;
};

struct EvalOptions {
  double iou_threshold = kDefaultMatchIou;
  ApMode mode = ApMode::kAllPoints;
  double operating_score = kDefaultOperatingScore;
  std::vector<std::string> class_names;
};

struct EvalReport {
  std::vector<ClassReport> classes;
  double map = 0.0;
  int evaluated_classes = 0;
  double iou_threshold = kDefaultMatchIou;
  double operating_score = kDefaultOperatingScore;
  ApMode mode = ApMode::kAllPoints;
  int tp = 0;
  int fp = 0;
  int fn = 0;

  nlohmann::json to_json() const;
  // "recall,precision" rows with a header.
  std::string pr_csv(int class_id) const;
};

// Per image lists, aligned by index.
EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets,
                               std::span<const std::vector<GroundTruth>> gts, int num_classes,
                               const EvalOptions& options = {});

}  // namespace tacr
