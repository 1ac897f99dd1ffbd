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

#include "tacr/gradcheck_suite.hpp"

#include <chrono>
#include <functional>
#include <memory>

#include "tacr/coord_attention.hpp"
#include "tacr/detector.hpp"
#include "tacr/error.hpp"
#include "tacr/init.hpp"
#include "tacr/ops.hpp"
#include "tacr/task_aware.hpp"
#include "tacr/train.hpp"

namespace tacr {

namespace {

using Clock = std::chrono::steady_clock;
using Body = std::function<Var(Tape&, std::span<const Var>)>;

// Scalarizes any output with a fixed random projection so every output
// element contributes a distinct weight.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : rng_(seed) {}
  Var operator()(Tape& t, std::span<const Var> outs) {
    if (weights_.empty()) {
      for (const auto& o : outs) weights_.push_back(normal_tensor(o.shape(), rng_, 1.0));
    }
    Var total;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const Var term = ops::sum(ops::mul(outs[i], t.constant(weights_[i])));
      total = total.valid() ? ops::add(total, term) : term;
    }
    return total;
  }

 private:
  Rng rng_;
  std::vector<Tensor> weights_;
};

SuiteEntry finish(std::string module, std::string name, const GradCheckResult& r, Clock::time_point t0,
                  double tol) {
  SuiteEntry e;
  e.module = std::move(module);
  e.name = std::move(name);
  e.result = r;
  e.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  e.passed = r.passed(tol) && r.coords_checked > 0;
  return e;
}

GradCheckOptions check_options(const SuiteOptions& o) {
  GradCheckOptions g;
  g.seed = o.seed;
  g.max_coords_per_tensor = o.max_coords_per_tensor;
  return g;
}

// Random inputs for a single primitive; all of them are checked.
SuiteEntry primitive(const std::string& name, const std::vector<Shape>& shapes, const Body& body,
                     const SuiteOptions& o, double stddev = 1.0) {
  const auto t0 = Clock::now();
  ParameterStore store;
  Rng rng = Rng::substream(o.seed, name);
  std::vector<Parameter*> ps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    ps.push_back(&store.add(name + ".in" + std::to_string(i), normal_tensor(shapes[i], rng, stddev)));
  }
  Projector project(o.seed ^ fnv1a64(name));
  const LossBuilder build = [&](Tape& t) {
    std::vector<Var> vs;
    for (Parameter* p : ps) vs.push_back(t.param(*p));
    const Var out = body(t, vs);
    return project(t, std::span<const Var>(&out, 1));
  };
  const Resampler resample = [&](Rng& r) {
    for (Parameter* p : ps) p->value = normal_tensor(p->value.shape(), r, stddev);
  };
  return finish("primitives", name, check_gradients(ps, build, check_options(o), resample), t0, o.tolerance);
}

std::vector<SuiteEntry> primitives(const SuiteOptions& o) {
  using ops::Mode;
  std::vector<SuiteEntry> out;
  out.push_back(primitive("conv2d", {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}},
                          [](Tape&, std::span<const Var> v) { return ops::conv2d(v[0], v[1], v[2], 1, 1); }, o));
  out.push_back(primitive("conv2d_stride2", {{2, 3, 7, 7}, {2, 3, 3, 3}},
                          [](Tape&, std::span<const Var> v) { return ops::conv2d(v[0], v[1], Var(), 2, 1); }, o));
  out.push_back(primitive("conv2d_1x1", {{1, 4, 3, 5}, {3, 4, 1, 1}, {3}},
                          [](Tape&, std::span<const Var> v) { return ops::conv2d(v[0], v[1], v[2], 1, 0); }, o));
  {
    auto stats_store = std::make_shared<ParameterStore>();
    const ops::BatchNormStats train_stats = add_batchnorm_stats(*stats_store, "bn_train", 4);
    out.push_back(primitive("batchnorm2d_train", {{3, 4, 3, 3}, {4}, {4}},
                            [stats_store, train_stats](Tape&, std::span<const Var> v) {
                              return ops::batchnorm2d(v[0], v[1], v[2], train_stats, Mode::kTrain);
                            },
                            o));
    const ops::BatchNormStats eval_stats = add_batchnorm_stats(*stats_store, "bn_eval", 4);
    for (int c = 0; c < 4; ++c) {
      eval_stats.mean->value[c] = 0.1 * c;
      eval_stats.var->value[c] = 0.5 + 0.25 * c;
    }
    eval_stats.batches->value[0] = 1.0;
    out.push_back(primitive("batchnorm2d_eval", {{2, 4, 3, 3}, {4}, {4}},
                            [stats_store, eval_stats](Tape&, std::span<const Var> v) {
                              return ops::batchnorm2d(v[0], v[1], v[2], eval_stats, Mode::kEval);
                            },
                            o));
  }
  out.push_back(primitive("relu", {{2, 3, 4, 4}}, [](Tape&, std::span<const Var> v) { return ops::relu(v[0]); }, o));
  out.push_back(primitive("sigmoid", {{2, 3, 4, 4}},
                          [](Tape&, std::span<const Var> v) { return ops::sigmoid(v[0]); }, o, 2.0));
  out.push_back(primitive("swish", {{2, 3, 4, 4}},
                          [](Tape&, std::span<const Var> v) { return ops::swish(v[0]); }, o, 2.0));
  out.push_back(primitive("global_avg_pool", {{2, 5, 7, 3}},
                          [](Tape&, std::span<const Var> v) { return ops::global_avg_pool(v[0]); }, o));
  out.push_back(primitive("mean_over_width", {{2, 3, 4, 5}},
                          [](Tape&, std::span<const Var> v) { return ops::mean_over_width(v[0]); }, o));
  out.push_back(primitive("mean_over_height", {{2, 3, 4, 5}},
                          [](Tape&, std::span<const Var> v) { return ops::mean_over_height(v[0]); }, o));
  out.push_back(primitive("concat_channels", {{2, 3, 4, 4}, {2, 2, 4, 4}},
                          [](Tape&, std::span<const Var> v) { return ops::concat(v, 1); }, o));
  out.push_back(primitive("concat_spatial", {{2, 3, 4, 1}, {2, 3, 5, 1}},
                          [](Tape&, std::span<const Var> v) { return ops::concat(v, 2); }, o));
  out.push_back(primitive("slice", {{2, 6, 3, 3}},
                          [](Tape&, std::span<const Var> v) { return ops::slice(v[0], 1, 2, 3); }, o));
  out.push_back(primitive("reshape", {{2, 6, 3, 1}},
                          [](Tape&, std::span<const Var> v) { return ops::reshape(v[0], {2, 18}); }, o));
  out.push_back(primitive("linear", {{3, 5}, {4, 5}, {4}},
                          [](Tape&, std::span<const Var> v) { return ops::linear(v[0], v[1], v[2]); }, o));
  out.push_back(primitive("upsample_nearest2x", {{2, 3, 3, 4}},
                          [](Tape&, std::span<const Var> v) { return ops::upsample_nearest2x(v[0]); }, o));
  out.push_back(primitive("coordinate_gate", {{2, 3, 4, 5}, {2, 3, 4, 1}, {2, 3, 5, 1}},
                          [](Tape&, std::span<const Var> v) { return ops::coordinate_gate(v[0], v[1], v[2]); }, o));
  out.push_back(primitive("dynamic_relu", {{2, 3, 4, 4}, {2, 3}, {2, 3}, {2, 3}, {2, 3}},
                          [](Tape&, std::span<const Var> v) { return ops::dynamic_relu(v[0], v[1], v[2], v[3], v[4]); },
                          o));
  out.push_back(primitive("add", {{2, 3, 2, 2}, {2, 3, 2, 2}},
                          [](Tape&, std::span<const Var> v) { return ops::add(v[0], v[1]); }, o));
  out.push_back(primitive("mul", {{2, 3, 2, 2}, {2, 3, 2, 2}},
                          [](Tape&, std::span<const Var> v) { return ops::mul(v[0], v[1]); }, o));
  out.push_back(primitive("affine", {{2, 3, 2, 2}},
                          [](Tape&, std::span<const Var> v) { return ops::affine(v[0], -1.5, 0.25); }, o));
  out.push_back(primitive("sum", {{2, 3, 2, 2}}, [](Tape&, std::span<const Var> v) { return ops::sum(v[0]); }, o));
  return out;
}

// Trainable parameters of `store` whose names start with one of `prefixes`
// (all when empty).
std::vector<Parameter*> trainable(ParameterStore& store, const std::vector<std::string>& prefixes = {}) {
  std::vector<Parameter*> out;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    bool keep = prefixes.empty();
    for (const auto& pre : prefixes) keep = keep || p.name.rfind(pre, 0) == 0;
    if (keep) out.push_back(&p);
  }
  return out;
}

SuiteEntry coordinate_attention(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  ParameterStore store;
  Rng rng = Rng::substream(o.seed, "ca");
  const CoordAttention ca(store, "ca", CAConfig{8, 4}, rng);
  Parameter& x = store.add("input", normal_tensor({2, 8, 5, 6}, rng, 1.0));
  Projector project(o.seed ^ 0xca);
  const LossBuilder build = [&](Tape& t) {
    const Var out = ca.forward(t.param(x), ops::Mode::kTrain).output;
    return project(t, std::span<const Var>(&out, 1));
  };
  const Resampler resample = [&](Rng& r) { x.value = normal_tensor(x.value.shape(), r, 1.0); };
  const auto ps = trainable(store);
  return finish("ca", "coordinate_attention", check_gradients(ps, build, check_options(o), resample), t0,
                o.tolerance);
}

SuiteEntry dynamic_relu_module(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  ParameterStore store;
  Rng rng = Rng::substream(o.seed, "dyrelu");
  TaskAwareConfig cfg;
  cfg.channels = 6;
  cfg.hidden = 4;
  const DynamicRelu dy(store, "dyrelu", cfg, rng);
  // A wider coefficient head than the 0.01 init so the coefficients vary.
  dy.fc2_weight().value = normal_tensor(dy.fc2_weight().value.shape(), rng, 0.5);
  Parameter& x = store.add("input", normal_tensor({2, 6, 4, 4}, rng, 1.0));
  Projector project(o.seed ^ 0xd1);
  const LossBuilder build = [&](Tape& t) {
    const Var out = dy.forward(t.param(x));
    return project(t, std::span<const Var>(&out, 1));
  };
  const Resampler resample = [&](Rng& r) { x.value = normal_tensor(x.value.shape(), r, 1.0); };
  const auto ps = trainable(store);
  return finish("dyrelu", "dyrelu_a", check_gradients(ps, build, check_options(o), resample), t0, o.tolerance);
}

SuiteEntry head_module(const SuiteOptions& o, bool taskaware) {
  const auto t0 = Clock::now();
  ParameterStore store;
  Rng rng = Rng::substream(o.seed, taskaware ? "head" : "head_relu");
  HeadConfig cfg;
  cfg.in_channels = 8;
  cfg.hidden_channels = 8;
  cfg.anchors = 2;
  cfg.classes = 3;
  cfg.use_taskaware = taskaware;
  cfg.coefficient_hidden = 4;
  TaskAwareHead head(store, "head", cfg, rng);
  if (taskaware) {
    Parameter& w = head.dynamic_relu()->fc2_weight();
    w.value = normal_tensor(w.value.shape(), rng, 0.5);
  }
  Parameter& a = store.add("input_a", normal_tensor({2, 4, 4, 4}, rng, 1.0));
  Parameter& b = store.add("input_b", normal_tensor({2, 4, 4, 4}, rng, 1.0));
  Projector project(o.seed ^ 0x4ead);
  const LossBuilder build = [&](Tape& t) {
    const std::vector<Var> in{t.param(a), t.param(b)};
    const HeadOutput h = head.forward(in);
    const std::vector<Var> outs{h.cls_logits, h.box_deltas, h.objectness};
    return project(t, outs);
  };
  const Resampler resample = [&](Rng& r) {
    a.value = normal_tensor(a.value.shape(), r, 1.0);
    b.value = normal_tensor(b.value.shape(), r, 1.0);
  };
  const auto ps = trainable(store);
  return finish("head", taskaware ? "task_aware_head" : "relu_head",
                check_gradients(ps, build, check_options(o), resample), t0, o.tolerance);
}

DetectorConfig micro_config() {
  DetectorConfig c;
  c.input_size = 32;
  c.num_classes = 3;
  c.anchors.anchors = {{2, 3}, {4, 4}, {5, 8}, {8, 5}, {8, 8}, {10, 14}, {14, 10}, {16, 16}, {20, 24}};
  c.strides = {8, 16};
  c.base_width = 2;
  c.neck_channels = 8;
  c.head_hidden = 8;
  c.ca_reduction = 4;
  c.dyrelu_hidden = 4;
  return c;
}

Tensor random_images(Rng& rng, int n, int size) {
  Tensor t({n, 3, size, size});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

SuiteEntry backbone_module(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  const DetectorConfig cfg = micro_config();
  Detector model(cfg, o.seed);
  Rng rng = Rng::substream(o.seed, "backbone.images");
  Tensor images = random_images(rng, 2, cfg.input_size);
  Projector project(o.seed ^ 0xbb);
  const LossBuilder build = [&](Tape& t) {
    const auto taps = model.backbone_forward(t.constant(images), ops::Mode::kTrain);
    return project(t, taps);
  };
  const Resampler resample = [&](Rng& r) { images = random_images(r, 2, cfg.input_size); };
  const auto ps = trainable(model.parameters(), {"backbone.", "ca"});
  return finish("backbone", "backbone_with_ca", check_gradients(ps, build, check_options(o), resample), t0,
                o.tolerance);
}

SuiteEntry neck_module(const SuiteOptions& o, bool strengthen) {
  const auto t0 = Clock::now();
  DetectorConfig cfg = micro_config();
  cfg.strengthen_neck = strengthen;
  Detector model(cfg, o.seed);
  Rng rng = Rng::substream(o.seed, "neck.taps");
  const auto ch = model.tap_channels();
  ParameterStore inputs;
  std::vector<Parameter*> taps;
  for (int s = 0; s < cfg.num_scales(); ++s) {
    const int g = cfg.grid_size(s);
    taps.push_back(&inputs.add("tap" + std::to_string(s), normal_tensor({2, ch[static_cast<std::size_t>(s)], g, g},
                                                                       rng, 1.0)));
  }
  Projector project(o.seed ^ 0x9e);
  const LossBuilder build = [&](Tape& t) {
    std::vector<Var> vs;
    for (Parameter* p : taps) vs.push_back(t.param(*p));
    std::vector<Var> outs;
    for (auto& scale : model.neck_forward(vs, ops::Mode::kTrain))
      for (auto& v : scale) outs.push_back(v);
    return project(t, outs);
  };
  const Resampler resample = [&](Rng& r) {
    for (Parameter* p : taps) p->value = normal_tensor(p->value.shape(), r, 1.0);
  };
  auto ps = trainable(model.parameters(), {"neck."});
  ps.insert(ps.end(), taps.begin(), taps.end());
  return finish("neck", strengthen ? "strengthened_neck" : "single_conv_neck",
                check_gradients(ps, build, check_options(o), resample), t0, o.tolerance);
}

SuiteEntry loss_module(const SuiteOptions& o, BoxLoss box_loss) {
  const auto t0 = Clock::now();
  DetectorConfig cfg = micro_config();
  cfg.loss = box_loss;
  Detector model(cfg, o.seed);
  // Wider dynamic-relu coefficient heads so the activation is not static.
  for (auto& p : model.parameters().all()) {
    if (p.name.find("dyrelu.fc2.weight") != std::string::npos) {
      Rng r = Rng::substream(o.seed, p.name);
      p.value = normal_tensor(p.value.shape(), r, 0.5);
    }
  }
  Rng rng = Rng::substream(o.seed, "loss.images");
  Tensor images = random_images(rng, 2, cfg.input_size);
  const std::vector<std::vector<GroundTruth>> gts{
      {{{4, 6, 14, 18}, 0}, {{18, 16, 30, 28}, 2}},
      {{{10, 10, 20, 16}, 1}, {{2, 20, 8, 31}, 0}},
  };
  const TargetSet targets = assign_targets(gts, cfg);
  const LossBuilder build = [&](Tape& t) {
    const RawPrediction pred = model.forward(t, images, ops::Mode::kTrain);
    return total_loss(pred, targets, box_loss).total;
  };
  const Resampler resample = [&](Rng& r) { images = random_images(r, 2, cfg.input_size); };
  const auto ps = trainable(model.parameters());
  return finish("loss", "total_loss_" + to_string(box_loss), check_gradients(ps, build, check_options(o), resample),
                t0, o.tolerance);
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> kModules{"primitives", "ca", "dyrelu", "head", "backbone", "neck", "loss"};
  return kModules;
}

std::vector<SuiteEntry> run_gradcheck_suite(const std::string& module, const SuiteOptions& options) {
  const auto& all = gradcheck_modules();
  if (module != "all" && std::find(all.begin(), all.end(), module) == all.end()) {
    throw ConfigError("unknown gradcheck module '" + module + "'");
  }
  auto want = [&](const char* m) { return module == "all" || module == m; };
  std::vector<SuiteEntry> out;
  if (want("primitives")) {
    auto p = primitives(options);
    out.insert(out.end(), p.begin(), p.end());
  }
  if (want("ca")) out.push_back(coordinate_attention(options));
  if (want("dyrelu")) out.push_back(dynamic_relu_module(options));
  if (want("head")) {
    out.push_back(head_module(options, true));
    out.push_back(head_module(options, false));
  }
  if (want("backbone")) out.push_back(backbone_module(options));
  if (want("neck")) {
    out.push_back(neck_module(options, true));
    out.push_back(neck_module(options, false));
  }
  if (want("loss")) {
    out.push_back(loss_module(options, BoxLoss::kDiou));
    out.push_back(loss_module(options, BoxLoss::kIou));
  }
  return out;
}

nlohmann::json suite_to_json(const std::vector<SuiteEntry>& entries, double tolerance) {
  nlohmann::json rows = nlohmann::json::array();
  bool all = true;
  double worst = 0.0;
  for (const auto& e : entries) {
    all = all && e.passed;
    worst = std::max(worst, e.result.max_rel_error);
    rows.push_back({{"module", e.module},
                    {"name", e.name},
                    {"passed", e.passed},
                    {"max_rel_error", e.result.max_rel_error},
                    {"worst_param", e.result.worst_param},
                    {"worst_index", e.result.worst_index},
                    {"analytic", e.result.worst_analytic},
                    {"numeric", e.result.worst_numeric},
                    {"coords_checked", e.result.coords_checked},
                    {"resamples", e.result.resamples},
                    {"seconds", e.seconds}});
  }
  return {{"tolerance", tolerance}, {"passed", all}, {"max_rel_error", worst}, {"checks", rows}};
}

}  // namespace tacr
