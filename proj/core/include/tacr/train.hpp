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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacr/detector.hpp"
#include "tacr/synth.hpp"

namespace tacr {

struct LossWeights {
  double box = 5.0;
  double obj = 1.0;
  double cls = 1.0;
};

struct LossResult {
  Var total;          // scalar on the prediction's tape
  double value = 0.0;  // weighted total
  double box = 0.0;   // unweighted components
  double obj = 0.0;
  double cls = 0.0;
  int positives = 0;
};

// Box term: mean over positives of 1 - DIoU (or 1 - IoU) between the decoded
// prediction and the assigned gt. Objectness: BCE over every anchor slot.
// Classification: BCE over the K logits of every positive. Both box and
// class terms are 0 without positives.
LossResult total_loss(const RawPrediction& pred, const TargetSet& targets, BoxLoss box_loss,
                      const LossWeights& weights = {});

double cosine_lr(int step, int total_steps, double base_lr, double min_lr);
// Multiplies by `gamma` at 70% and at 90% of training.
double step_lr(int step, int total_steps, double base_lr, double gamma = 0.1);

// SGD with momentum and decoupled weight decay:
//   w -= lr * decay * w;  v = momentum * v + grad;  w -= lr * v
class Sgd {
 public:
  Sgd(ParameterStore& store, double momentum, double weight_decay);
  void step(double lr);
  const Tensor& velocity(const std::string& name) const;

 private:
  ParameterStore& store_;
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;  // parallel to store_.all()
};

enum class Schedule { kCosine, kStep };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double base_lr = 0.01;
  double min_lr_ratio = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  Schedule schedule = Schedule::kCosine;
  LossWeights loss_weights;
  std::uint64_t seed = 42;
  std::string augment = "hflip";
  int threads = 1;  // validation sharding
  double val_conf_floor = kDefaultConfidenceFloor;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// FNV-1a of the combined config JSON, as 16 hex digits.
std::string config_fingerprint(const DetectorConfig& model, const TrainConfig& train);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;  // at the last step of the epoch
  double loss = 0.0;
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  double val_map = 0.0;
  double seconds = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  double best_map = 0.0;
  int best_epoch = 0;
  double final_map = 0.0;
  double wall_seconds = 0.0;
  std::string fingerprint;
  nlohmann::json model_config;
  nlohmann::json train_config;

  // Without timing fields two runs of one config compare equal.
  nlohmann::json to_json(bool include_timing = true) const;
};

using ProgressFn = std::function<void(const std::string& line)>;

struct TrainResult {
  RunRecord record;
  std::unique_ptr<Detector> last;
  std::unique_ptr<Detector> best;
};

// Writes best.ckpt, last.ckpt and run_record.json when `out_dir` is set.
// A non-finite loss raises NumericError naming lr, step and component.
TrainResult train(const DetectorConfig& model, const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const std::optional<std::filesystem::path>& out_dir = {},
                  const ProgressFn& progress = {});

struct LadderRung {
  std::string name;
  std::string change;
  DetectorConfig model;
  RunRecord record;
};

// The six rungs in order: baseline, +kmeans, +taskaware, +ca,
// +strengthen-neck, +diou. Each adds one change to the previous rung.
std::vector<std::pair<std::string, DetectorConfig>> ladder_configs(const DetectorConfig& base,
                                                                   const AnchorSet& kmeans_anchors);

std::vector<LadderRung> ablation_ladder(const DetectorConfig& base, const AnchorSet& kmeans_anchors,
                                        const TrainConfig& config, const std::vector<Sample>& train_set,
                                        const std::vector<Sample>& val_set,
                                        const std::optional<std::filesystem::path>& out_dir = {},
                                        const ProgressFn& progress = {});

std::string ladder_csv(const std::vector<LadderRung>& rungs);
std::string ladder_markdown(const std::vector<LadderRung>& rungs);

}  // namespace tacr
