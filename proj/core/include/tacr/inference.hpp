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

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacr/detector.hpp"
#include "tacr/metrics.hpp"
#include "tacr/synth.hpp"

namespace tacr {

struct PredictOptions {
  DecodeOptions decode;
  int batch_size = 16;
  int threads = 1;  // images are sharded in contiguous blocks
};

// Eval-mode forward and decode; Detection::image_id is the sample index.
// Results do not depend on batch size or thread count.
std::vector<std::vector<Detection>> predict(const Detector& model, std::span<const Sample> samples,
                                            const PredictOptions& options = {});

EvalReport evaluate_model(const Detector& model, std::span<const Sample> samples, const EvalOptions& eval = {},
                          const PredictOptions& options = {});

struct BenchResult {
  int images = 0;
  std::vector<double> per_image_seconds;
  double mean_seconds = 0.0;
  double fps = 0.0;
  std::size_t parameters = 0;

  nlohmann::json to_json() const;
};

// Times single-image forward + decode over each sample after `warmup` runs.
BenchResult bench(const Detector& model, std::span<const Sample> samples, int warmup = 1);

// One train-mode forward pass without gradients so batchnorm layers have
// running statistics.
void calibrate_batchnorm(Detector& model, std::span<const Sample> samples);

}  // namespace tacr
