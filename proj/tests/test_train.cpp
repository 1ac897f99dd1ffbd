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

#include <fstream>
#include <sstream>

#include "tacr/checkpoint.hpp"
#include "tacr/error.hpp"
#include "tacr/inference.hpp"
#include "tacr/train.hpp"
#include "test_util.hpp"

namespace tacr {
namespace {

using testing::random_tensor;

std::vector<Sample> scenes(std::uint64_t seed, int n, std::uint64_t first = 0) {
  const SceneSpec spec = SceneSpec::standard(seed);
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(render_scene(spec, first + static_cast<std::uint64_t>(i)).sample);
  return out;
}

std::vector<std::vector<GroundTruth>> gts_of(const std::vector<Sample>& s) {
  std::vector<std::vector<GroundTruth>> out;
  for (const auto& x : s) out.push_back(x.objects);
  return out;
}

Tensor batch_tensor(const std::vector<Sample>& s) {
  std::vector<const Image*> imgs;
  for (const auto& x : s) imgs.push_back(&x.image);
  return images_to_tensor(imgs);
}

TEST(Schedule, CosineExamples) {
  EXPECT_EQ(cosine_lr(0, 100, 0.01, 1e-4), 0.01);
  EXPECT_NEAR(cosine_lr(100, 100, 0.01, 1e-4), 1e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 0.01, 1e-4), (0.01 + 1e-4) / 2, 1e-18);
  for (int s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(s, 100, 0.01, 1e-4), cosine_lr(s - 1, 100, 0.01, 1e-4));
  EXPECT_THROW(cosine_lr(101, 100, 0.01, 0.0), ValidationError);
  EXPECT_EQ(step_lr(69, 100, 1.0), 1.0);
  EXPECT_NEAR(step_lr(70, 100, 1.0), 0.1, 1e-15);
  EXPECT_NEAR(step_lr(95, 100, 1.0), 0.01, 1e-15);
  EXPECT_THROW(parse_schedule("linear"), ConfigError);
}

TEST(Sgd, DecoupledWeightDecayWithZeroGradient) {
  ParameterStore store;
  Parameter& p = store.add("w", Tensor({3}, {2.0, -1.0, 0.5}));
  store.add("frozen", Tensor({1}, 3.0), false);
  Sgd sgd(store, 0.9, 5e-4);
  store.zero_grad();
  sgd.step(0.01);
  for (std::size_t i = 0; i < 3; ++i) {
    const double w0 = std::array{2.0, -1.0, 0.5}[i];
    EXPECT_EQ(p.value[i], w0 - 0.01 * 5e-4 * w0);
  }
  EXPECT_EQ(store.get("frozen").value[0], 3.0);
}

TEST(Sgd, MomentumMatchesTwoStepExpansion) {
  // f(w) = a w^2 / 2, so g = a w.
  const double a = 3.0, w0 = 1.5, lr = 0.05, m = 0.9;
  ParameterStore store;
  Parameter& p = store.add("w", Tensor({1}, w0));
  Sgd sgd(store, m, 0.0);
  for (int k = 0; k < 2; ++k) {
    p.grad = Tensor({1}, a * p.value[0]);
    sgd.step(lr);
  }
  const double w1 = w0 - lr * a * w0;
  const double w2 = w1 - lr * (m * a * w0 + a * w1);
  EXPECT_DOUBLE_EQ(p.value[0], w2);
  EXPECT_DOUBLE_EQ(sgd.velocity("w")[0], m * a * w0 + a * w1);
  EXPECT_THROW(sgd.velocity("nope"), ConfigError);
}

TEST(Loss, TotalIsWeightedSumOfComponents) {
  const DetectorConfig c;
  Detector d(c, 3);
  const auto s = scenes(3, 4);
  for (BoxLoss bl : {BoxLoss::kIou, BoxLoss::kDiou}) {
    Tape tape;
    const RawPrediction p = d.forward(tape, batch_tensor(s), ops::Mode::kTrain);
    const LossWeights w{2.5, 0.7, 1.3};
    const LossResult r = total_loss(p, assign_targets(gts_of(s), c), bl, w);
    EXPECT_GT(r.positives, 0);
    EXPECT_NEAR(r.value, w.box * r.box + w.obj * r.obj + w.cls * r.cls, 1e-12);
    EXPECT_EQ(r.total.value()[0], r.value);
    EXPECT_GT(r.box, 0.0);
    EXPECT_GT(r.obj, 0.0);
    EXPECT_GT(r.cls, 0.0);
  }
}

TEST(Loss, EmptySceneIsObjectnessAlone) {
  const DetectorConfig c;
  Detector d(c, 4);
  Rng rng(5);
  Tape tape;
  const RawPrediction p = d.forward(tape, random_tensor({2, 3, 64, 64}, rng, 0.0, 1.0), ops::Mode::kTrain);
  const std::vector<std::vector<GroundTruth>> empty(2);
  const LossResult r = total_loss(p, assign_targets(empty, c), BoxLoss::kDiou);
  EXPECT_EQ(r.positives, 0);
  EXPECT_EQ(r.box, 0.0);
  EXPECT_EQ(r.cls, 0.0);
  EXPECT_EQ(r.value, LossWeights{}.obj * r.obj);
  // Hand BCE over every slot, per image.
  double obj = 0.0;
  for (const auto& sp : p.scales)
    for (double z : sp.objectness.value().data()) obj += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  EXPECT_NEAR(r.obj, obj / 2.0, 1e-12);
  d.parameters().zero_grad();
  tape.backward(r.total);
  for (const auto& sp : p.scales) {
    const Tensor gb = sp.box_deltas.grad(), gc = sp.cls_logits.grad();
    EXPECT_EQ(testing::max_abs_diff(gb, Tensor::zeros_like(gb)), 0.0);
    EXPECT_EQ(testing::max_abs_diff(gc, Tensor::zeros_like(gc)), 0.0);
  }
}

// Predictions that decode exactly onto their targets with saturated logits.
RawPrediction oracle_prediction(Tape& tape, const TargetSet& t, const DetectorConfig& c, double logit) {
  const auto anchors = c.anchors_per_scale();
  std::vector<Tensor> box, obj, cls;
  for (int s = 0; s < c.num_scales(); ++s) {
    const int A = static_cast<int>(anchors[s].size()), G = c.grid_size(s);
    box.emplace_back(Shape{t.images, 4 * A, G, G}, 0.0);
    obj.emplace_back(Shape{t.images, A, G, G}, -logit);
    cls.emplace_back(Shape{t.images, A * c.num_classes, G, G}, -logit);
  }
  for (const auto& p : t.positives) {
    const auto d = encode_box(p.box, anchors[p.scale][p.anchor], c.strides[p.scale], p.row, p.col);
    for (int k = 0; k < 4; ++k) box[p.scale].at(p.image, p.anchor * 4 + k, p.row, p.col) = d[k];
    obj[p.scale].at(p.image, p.anchor, p.row, p.col) = logit;
    cls[p.scale].at(p.image, p.anchor * c.num_classes + p.class_id, p.row, p.col) = logit;
  }
  RawPrediction pred;
  for (int s = 0; s < c.num_scales(); ++s) {
    pred.scales.push_back({tape.constant(box[s]), tape.constant(obj[s]), tape.constant(cls[s]), c.strides[s],
                           anchors[s]});
  }
  return pred;
}

TEST(Loss, SaturatedOptimumIsNearZero) {
  const DetectorConfig c;
  Rng rng(6);
  std::vector<std::vector<GroundTruth>> gts(4);
  const auto anchors = c.anchors.anchors;
  for (auto& img : gts)
    for (int k = 0; k < 3; ++k) {
      const BoxDims& a = anchors[static_cast<std::size_t>(rng.uniform_int(0, 6))];
      const double w = a.w * rng.uniform(0.8, 1.5), h = a.h * rng.uniform(0.8, 1.5);
      const double cx = std::floor(rng.uniform(w, 64 - w)) + 0.37, cy = std::floor(rng.uniform(h, 64 - h)) + 0.61;
      img.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, rng.uniform_int(0, 3)});
    }
  const TargetSet t = assign_targets(gts, c);
  for (BoxLoss bl : {BoxLoss::kIou, BoxLoss::kDiou}) {
    Tape tape;
    const LossResult r = total_loss(oracle_prediction(tape, t, c, 30.0), t, bl);
    EXPECT_LT(r.value, 1e-3);
    EXPECT_LT(r.box, 1e-9);
  }
}

// Disjoint-start fixture: one gt per image in cell (0, 0) of stride 8, the
// smallest default anchor as its exact shape, and box deltas that place the
// prediction in the far corner of the same cell.
struct DisjointFixture {
  DetectorConfig config;
  ParameterStore store;
  std::vector<Parameter*> deltas;
  std::vector<std::vector<GroundTruth>> gts;
  TargetSet targets;

  DisjointFixture() {
    const auto anchors = config.anchors_per_scale();
    const BoxDims a = anchors[0][0];
    for (int n = 0; n < 6; ++n) {
      const double cx = 1.6 + 0.1 * n, cy = 2.2 - 0.1 * n;
      gts.push_back({{{cx - a.w / 2, cy - a.h / 2, cx + a.w / 2, cy + a.h / 2}, n % 4}});
    }
    targets = assign_targets(gts, config);
    for (int s = 0; s < config.num_scales(); ++s) {
      const int A = static_cast<int>(anchors[s].size()), G = config.grid_size(s);
      Tensor d({6, 4 * A, G, G}, 0.0);
      for (int n = 0; n < 6; ++n)
        for (int k = 0; k < A; ++k) {
          d.at(n, 4 * k, 0, 0) = 1.5;
          d.at(n, 4 * k + 1, 0, 0) = 1.2;
        }
      deltas.push_back(&store.add("deltas" + std::to_string(s), d));
    }
  }

  LossResult loss(Tape& tape, BoxLoss bl) {
    const auto anchors = config.anchors_per_scale();
    RawPrediction p;
    for (int s = 0; s < config.num_scales(); ++s) {
      const int A = static_cast<int>(anchors[s].size()), G = config.grid_size(s);
      p.scales.push_back({tape.param(*deltas[s]), tape.constant(Tensor({6, A, G, G}, 0.0)),
                          tape.constant(Tensor({6, A * config.num_classes, G, G}, 0.0)), config.strides[s],
                          anchors[s]});
    }
    return total_loss(p, targets, bl);
  }

  Box predicted(const AssignedTarget& t) const {
    const Tensor& d = deltas[t.scale]->value;
    const std::array<double, 4> v{d.at(t.image, 4 * t.anchor, t.row, t.col), d.at(t.image, 4 * t.anchor + 1, t.row, t.col),
                                  d.at(t.image, 4 * t.anchor + 2, t.row, t.col),
                                  d.at(t.image, 4 * t.anchor + 3, t.row, t.col)};
    return decode_box(v, config.anchors_per_scale()[t.scale][t.anchor], config.strides[t.scale], t.row, t.col);
  }

  double mean_center_distance() const {
    double sum = 0.0;
    for (const auto& t : targets.positives) {
      const Box p = predicted(t);
      sum += std::hypot(p.center_x() - t.box.center_x(), p.center_y() - t.box.center_y());
    }
    return sum / static_cast<double>(targets.positives.size());
  }
};

TEST(Loss, IouPlateauVersusDiouOnDisjointStarts) {
  DisjointFixture iou_run, diou_run;
  ASSERT_EQ(iou_run.targets.positives.size(), 6u);
  for (const auto& t : iou_run.targets.positives) {
    EXPECT_TRUE(t.primary);
    EXPECT_EQ(iou(iou_run.predicted(t), t.box), 0.0);
  }
  const double start = diou_run.mean_center_distance();
  const std::vector<Tensor> before{iou_run.deltas[0]->value, iou_run.deltas[1]->value};

  Sgd iou_sgd(iou_run.store, 0.0, 0.0), diou_sgd(diou_run.store, 0.0, 0.0);
  double previous = start;
  for (int step = 0; step < 10; ++step) {
    for (auto* f : {&iou_run, &diou_run}) {
      Tape tape;
      const LossResult r = f->loss(tape, f == &iou_run ? BoxLoss::kIou : BoxLoss::kDiou);
      f->store.zero_grad();
      tape.backward(r.total);
    }
    if (step == 0) {
      for (const Parameter* p : iou_run.deltas)
        for (double g : p->grad.data()) EXPECT_EQ(g, 0.0);
      double norm = 0.0;
      for (const Parameter* p : diou_run.deltas)
        for (double g : p->grad.data()) norm += std::abs(g);
      EXPECT_GT(norm, 0.0);
    }
    iou_sgd.step(5.0);
    diou_sgd.step(5.0);
    const double now = diou_run.mean_center_distance();
    EXPECT_LT(now, previous) << step;
    previous = now;
  }
  EXPECT_EQ(iou_run.deltas[0]->value, before[0]);
  EXPECT_EQ(iou_run.deltas[1]->value, before[1]);
  EXPECT_LT(diou_run.mean_center_distance(), 0.5 * start);
}

TEST(TrainConfig, ValidationJsonAndFingerprint) {
  TrainConfig t;
  EXPECT_EQ(t.epochs, 100);
  EXPECT_EQ(t.base_lr, 0.01);
  EXPECT_EQ(t.weight_decay, 5e-4);
  EXPECT_EQ(t.momentum, 0.9);
  EXPECT_EQ(TrainConfig::from_json(t.to_json()).to_json(), t.to_json());
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& c) { c.epochs = 0; }, [](TrainConfig& c) { c.base_lr = 0.0; },
           [](TrainConfig& c) { c.loss_weights.cls = -1.0; }, [](TrainConfig& c) { c.momentum = 1.0; },
           [](TrainConfig& c) { c.augment = "spin"; }}) {
    TrainConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
  const DetectorConfig m;
  const std::string f = config_fingerprint(m, t);
  EXPECT_EQ(f.size(), 16u);
  EXPECT_EQ(f, config_fingerprint(m, t));
  t.seed = 43;
  EXPECT_NE(f, config_fingerprint(m, t));
}

TrainConfig quick(int epochs, int batch) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.augment = "";
  return t;
}

TEST(Train, SmokeLossDecreases) {
  const auto data = scenes(8, 8);
  std::vector<std::string> lines;
  const TrainResult r = train(DetectorConfig{}, quick(8, 8), data, scenes(8, 4, 100), std::nullopt,
                              [&](const std::string& l) { lines.push_back(l); });
  ASSERT_EQ(r.record.step_losses.size(), 8u);
  EXPECT_LT(r.record.step_losses.back(), r.record.step_losses.front());
  ASSERT_EQ(r.record.epochs.size(), 8u);
  ASSERT_EQ(lines.size(), 8u);
  EXPECT_EQ(lines[0].rfind("epoch=1 lr=0.01 loss=", 0), 0u) << lines[0];
  EXPECT_NE(lines[0].find(" val_map="), std::string::npos);
}

TEST(Train, IdenticalConfigsGiveIdenticalRecords) {
  const auto data = scenes(9, 12), val = scenes(9, 6, 50);
  TrainConfig t = quick(2, 4);
  t.augment = "hflip,noise";
  const TrainResult a = train(DetectorConfig{}, t, data, val), b = train(DetectorConfig{}, t, data, val);
  EXPECT_EQ(a.record.to_json(false), b.record.to_json(false));
  EXPECT_EQ(a.record.epochs.size(), 2u);
  EXPECT_EQ(a.record.step_losses.size(), 6u);
  for (std::size_t i = 0; i < a.last->parameters().size(); ++i) {
    EXPECT_EQ(a.last->parameters().all()[i].value, b.last->parameters().all()[i].value);
  }
}

TEST(Train, CheckpointReloadReproducesMap) {
  testing::TempDir dir("ckpt");
  const auto data = scenes(10, 16), val = scenes(10, 8, 60);
  const DetectorConfig c;
  const TrainResult r = train(c, quick(3, 8), data, val, dir.path());
  for (const char* f : {"best.ckpt", "last.ckpt", "run_record.json"}) EXPECT_TRUE(std::filesystem::exists(dir.path() / f));
  Detector best(c, 999), last(c, 999);
  load_checkpoint(best.parameters(), dir.path() / "best.ckpt");
  load_checkpoint(last.parameters(), dir.path() / "last.ckpt");
  EXPECT_EQ(evaluate_model(best, val).map, r.record.best_map);
  EXPECT_EQ(evaluate_model(last, val).map, r.record.final_map);
  std::ifstream in(dir.path() / "run_record.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["best_map"].get<double>(), r.record.best_map);
  EXPECT_EQ(j["epochs"].size(), 3u);
}

TEST(Train, RejectsBadInputs) {
  const auto data = scenes(11, 2);
  EXPECT_THROW(train(DetectorConfig{}, quick(1, 2), {}, data), ValidationError);
  EXPECT_THROW(train(DetectorConfig{}, quick(1, 2), data, {}), ValidationError);
  DetectorConfig big;
  big.input_size = 128;
  EXPECT_THROW(train(big, quick(1, 2), data, data), ValidationError);
}

TEST(Train, DivergenceRaisesNumericErrorWithDiagnostics) {
  const auto data = scenes(12, 4);
  TrainConfig t = quick(20, 4);
  t.base_lr = 1e12;
  try {
    train(DetectorConfig{}, t, data, data);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lr="), std::string::npos) << msg;
    EXPECT_NE(msg.find("step="), std::string::npos) << msg;
  }
}

TEST(Ladder, SixRungsEachChangingOneThing) {
  AnchorSet km = default_anchors();
  for (auto& a : km.anchors) a = {a.w * 1.1, a.h * 0.9};
  const auto cfgs = ladder_configs(DetectorConfig{}, km);
  const std::vector<std::string> names{"baseline", "+kmeans", "+taskaware", "+ca", "+strengthen-neck", "+diou"};
  ASSERT_EQ(cfgs.size(), names.size());
  for (std::size_t i = 0; i < cfgs.size(); ++i) EXPECT_EQ(cfgs[i].first, names[i]);
  EXPECT_EQ(cfgs[0].second.to_json(), DetectorConfig::baseline().to_json());
  for (std::size_t i = 1; i < cfgs.size(); ++i) {
    const auto a = cfgs[i - 1].second.to_json(), b = cfgs[i].second.to_json();
    int changed = 0;
    for (const auto& [k, v] : a.items()) changed += b.at(k) != v ? 1 : 0;
    EXPECT_EQ(changed, 1) << names[i];
    EXPECT_NE(config_fingerprint(cfgs[i - 1].second, TrainConfig{}), config_fingerprint(cfgs[i].second, TrainConfig{}));
  }
  const auto& last = cfgs.back().second;
  EXPECT_TRUE(last.use_ca && last.use_taskaware && last.strengthen_neck);
  EXPECT_EQ(last.loss, BoxLoss::kDiou);
}

TEST(Ladder, RunsAndEmitsTables) {
  testing::TempDir dir("ladder");
  const auto data = scenes(13, 8), val = scenes(13, 4, 40);
  std::vector<std::string> lines;
  const auto rungs = ablation_ladder(DetectorConfig{}, default_anchors(), quick(1, 8), data, val, dir.path(),
                                     [&](const std::string& l) { lines.push_back(l); });
  ASSERT_EQ(rungs.size(), 6u);
  EXPECT_EQ(lines.front(), "rung=1 name=baseline");
  for (int i = 1; i <= 6; ++i) EXPECT_TRUE(std::filesystem::exists(dir.path() / ("rung" + std::to_string(i)) / "best.ckpt"));
  std::istringstream csv(ladder_csv(rungs)), md(ladder_markdown(rungs));
  std::vector<std::string> csv_lines, md_lines;
  for (std::string l; std::getline(csv, l);) csv_lines.push_back(l);
  for (std::string l; std::getline(md, l);) md_lines.push_back(l);
  ASSERT_EQ(csv_lines.size(), 7u);
  ASSERT_EQ(md_lines.size(), 8u);
  EXPECT_EQ(csv_lines[0], "rung,name,change,val_map,final_map,best_epoch,fingerprint");
  EXPECT_EQ(csv_lines[1].rfind("1,baseline,", 0), 0u);
  EXPECT_EQ(csv_lines[6].rfind("6,+diou,", 0), 0u);
  EXPECT_NE(md_lines[7].find("+diou"), std::string::npos);
}

}  // namespace
}  // namespace tacr
