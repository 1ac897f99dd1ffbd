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

#include "tacr/inference.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include "tacr/error.hpp"

namespace tacr {

namespace {

std::vector<std::vector<Detection>> predict_range(const Detector& model, std::span<const Sample> samples,
                                                  std::size_t begin, std::size_t end, const PredictOptions& opt) {
  std::vector<std::vector<Detection>> out;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  for (std::size_t at = begin; at < end; at += bs) {
    const std::size_t stop = std::min(end, at + bs);
    std::vector<const Image*> imgs;
    for (std::size_t i = at; i < stop; ++i) imgs.push_back(&samples[i].image);
    Tape tape(false);
    const RawPrediction pred = model.forward(tape, images_to_tensor(imgs), ops::Mode::kEval);
    auto dets = decode(pred, model.config().input_size, opt.decode);
    for (std::size_t k = 0; k < dets.size(); ++k) {
      for (auto& d : dets[k]) d.image_id = static_cast<int>(at + k);
      out.push_back(std::move(dets[k]));
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<Detection>> predict(const Detector& model, std::span<const Sample> samples,
                                            const PredictOptions& options) {
  const std::size_t n = samples.size();
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, options.threads)), 1,
                                                      std::max<std::size_t>(1, n));
  std::vector<std::vector<std::vector<Detection>>> parts(workers);
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      const std::size_t begin = n * w / workers, end = n * (w + 1) / workers;
      parts[w] = predict_range(model, samples, begin, end, options);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<std::vector<Detection>> out;
  out.reserve(n);
  for (auto& p : parts)
    for (auto& d : p) out.push_back(std::move(d));
  return out;
}

EvalReport evaluate_model(const Detector& model, std::span<const Sample> samples, const EvalOptions& eval,
                          const PredictOptions& options) {
  const auto dets = predict(model, samples, options);
  std::vector<std::vector<GroundTruth>> gts;
  for (const auto& s : samples) gts.push_back(s.objects);
  EvalOptions e = eval;
  if (e.class_names.empty()) e.class_names = model.config().class_names;
  return evaluate_detections(dets, gts, model.config().num_classes, e);
}

nlohmann::json BenchResult::to_json() const {
  return {{"images", images},
          {"per_image_seconds", per_image_seconds},
          {"detection_time_per_image_s", mean_seconds},
          {"fps", fps},
          {"parameters", parameters}};
}

BenchResult bench(const Detector& model, std::span<const Sample> samples, int warmup) {
  if (samples.empty()) throw ValidationError("bench: no images");
  using Clock = std::chrono::steady_clock;
  auto once = [&](const Sample& s) {
    const Image* img = &s.image;
    Tape tape(false);
    const RawPrediction pred = model.forward(tape, images_to_tensor(std::span<const Image* const>(&img, 1)),
                                             ops::Mode::kEval);
    return decode(pred, model.config().input_size).front().size();
  };
  for (int i = 0; i < warmup; ++i) once(samples[0]);
  BenchResult r;
  r.images = static_cast<int>(samples.size());
  r.parameters = model.parameters().scalar_count();
  double total = 0.0;
  for (const auto& s : samples) {
    const auto t0 = Clock::now();
    once(s);
    const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
    r.per_image_seconds.push_back(dt);
    total += dt;
  }
  r.mean_seconds = total / r.images;
  r.fps = r.mean_seconds > 0.0 ? 1.0 / r.mean_seconds : 0.0;
  return r;
}

void calibrate_batchnorm(Detector& model, std::span<const Sample> samples) {
  if (samples.empty()) throw ValidationError("calibration needs at least one image");
  std::vector<const Image*> imgs;
  for (const auto& s : samples) imgs.push_back(&s.image);
  Tape tape(false);
  model.forward(tape, images_to_tensor(imgs), ops::Mode::kTrain);
}

}  // namespace tacr
