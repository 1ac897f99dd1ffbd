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

#include <vector>

#include <benchmark/benchmark.h>

#include "tacr/anchors.hpp"
#include "tacr/autodiff.hpp"
#include "tacr/box.hpp"
#include "tacr/detector.hpp"
#include "tacr/inference.hpp"
#include "tacr/metrics.hpp"
#include "tacr/ops.hpp"
#include "tacr/rng.hpp"
#include "tacr/synth.hpp"

namespace tacr {
namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  Rng rng(1);
  const Tensor x = random_tensor({1, c, s, s}, rng), w = random_tensor({c, c, 3, 3}, rng), b = random_tensor({c}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1).value()[0]);
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * s * s);
}
BENCHMARK(BM_Conv2dForward)->Args({8, 32})->Args({16, 32})->Args({32, 16});

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  Rng rng(2);
  const Tensor x = random_tensor({1, c, s, s}, rng), w = random_tensor({c, c, 3, 3}, rng), b = random_tensor({c}, rng);
  for (auto _ : state) {
    Tape tape;
    const Var y = ops::sum(ops::conv2d(tape.input(x), tape.input(w), tape.input(b), 1, 1));
    tape.backward(y);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({8, 32})->Args({16, 32});

void BM_DetectorForward(benchmark::State& state) {
  DetectorConfig cfg;
  cfg.use_ca = state.range(0) != 0;
  cfg.use_taskaware = state.range(0) != 0;
  cfg.strengthen_neck = state.range(0) != 0;
  const Detector model(cfg, 3);
  Rng rng(3);
  const Tensor x = random_tensor({1, 3, cfg.input_size, cfg.input_size}, rng);
  for (auto _ : state) {
    Tape tape(false);
    benchmark::DoNotOptimize(model.forward(tape, x, ops::Mode::kEval).scales.size());
  }
}
BENCHMARK(BM_DetectorForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_DetectorTrainStep(benchmark::State& state) {
  const Detector model(DetectorConfig{}, 4);
  Rng rng(4);
  const Tensor x = random_tensor({8, 3, 64, 64}, rng);
  for (auto _ : state) {
    Tape tape;
    const RawPrediction p = model.forward(tape, x, ops::Mode::kTrain);
    Var total = ops::sum(p.scales[0].objectness);
    tape.backward(total);
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_DetectorTrainStep)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  Rng rng(5);
  std::vector<BoxDims> d;
  for (int i = 0; i < state.range(0); ++i) d.push_back({rng.uniform(4.0, 60.0), rng.uniform(4.0, 60.0)});
  KMeansOptions o;
  for (auto _ : state) benchmark::DoNotOptimize(kmeans_anchors(d, o).anchors.inertia);
}
BENCHMARK(BM_KMeans)->Arg(1000)->Arg(10000);

void BM_EvaluateDetections(benchmark::State& state) {
  Rng rng(6);
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  for (int img = 0; img < state.range(0); ++img) {
    dets.emplace_back();
    gts.emplace_back();
    for (int k = 0; k < 3; ++k) {
      const double x = rng.uniform(0, 48), y = rng.uniform(0, 48);
      gts.back().push_back({Box{x, y, x + 12, y + 12}, rng.uniform_int(0, 3)});
    }
    for (int k = 0; k < 30; ++k) {
      const double x = rng.uniform(0, 48), y = rng.uniform(0, 48);
      dets.back().push_back({Box{x, y, x + 12, y + 12}, rng.uniform_int(0, 3), rng.uniform(), img});
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_detections(dets, gts, 4).map);
}
BENCHMARK(BM_EvaluateDetections)->Arg(100)->Arg(1000);

void BM_Nms(benchmark::State& state) {
  Rng rng(7);
  std::vector<ScoredBox> boxes;
  for (int i = 0; i < state.range(0); ++i) {
    const double x = rng.uniform(0, 56), y = rng.uniform(0, 56);
    boxes.push_back({Box{x, y, x + rng.uniform(4, 16), y + rng.uniform(4, 16)}, rng.uniform(), rng.uniform_int(0, 3)});
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, kDefaultNmsIou, true).size());
}
BENCHMARK(BM_Nms)->Arg(384)->Arg(3000);

}  // namespace
}  // namespace tacr

BENCHMARK_MAIN();
