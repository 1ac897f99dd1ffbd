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

#include "tacr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "tacr/checkpoint.hpp"
#include "tacr/error.hpp"
#include "tacr/inference.hpp"
#include "tacr/rng.hpp"

namespace tacr {

namespace {

// Binary cross-entropy with logits and its derivative.
double bce(double x, double t) { return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))); }

struct PositiveCache {
  std::size_t scale;
  int image, anchor, row, col;
  Box pred;
  double sx, sy;     // sigmoid of tx, ty
  bool clamp_w, clamp_h;
  double w, h;
};

}  // namespace

LossResult total_loss(const RawPrediction& pred, const TargetSet& targets, BoxLoss box_loss,
                      const LossWeights& weights) {
  if (pred.scales.empty()) throw ConfigError("loss: prediction has no scales");
  if (pred.scales.size() != targets.grid.size()) throw DimensionError("loss: scale count differs from targets");
  Tape& tape = *pred.scales[0].objectness.tape();
  const std::vector<Tensor> obj_t = targets.objectness();

  std::vector<Var> parents;
  double obj_sum = 0.0;
  for (std::size_t s = 0; s < pred.scales.size(); ++s) {
    const ScalePrediction& sp = pred.scales[s];
    if (sp.objectness.shape() != obj_t[s].shape()) {
      throw DimensionError("loss: objectness " + shape_string(sp.objectness.shape()) + " vs targets " +
                           shape_string(obj_t[s].shape()) + " at scale " + std::to_string(s));
    }
    parents.push_back(sp.box_deltas);
    parents.push_back(sp.objectness);
    parents.push_back(sp.cls_logits);
    const Tensor& o = sp.objectness.value();
    for (std::size_t i = 0; i < o.size(); ++i) obj_sum += bce(o[i], obj_t[s][i]);
  }
  const double obj_count = static_cast<double>(std::max(targets.images, 1));

  const std::size_t P = targets.positives.size();
  std::vector<PositiveCache> cache;
  cache.reserve(P);
  double box_sum = 0.0, cls_sum = 0.0;
  int K = 0;
  for (const auto& t : targets.positives) {
    const ScalePrediction& sp = pred.scales[static_cast<std::size_t>(t.scale)];
    const Tensor& d = sp.box_deltas.value();
    const Tensor& c = sp.cls_logits.value();
    K = c.dim(1) / sp.objectness.shape()[1];
    const BoxDims& anchor = sp.anchors[static_cast<std::size_t>(t.anchor)];
    const double tx = d.at(t.image, t.anchor * 4, t.row, t.col);
    const double ty = d.at(t.image, t.anchor * 4 + 1, t.row, t.col);
    const double tw = d.at(t.image, t.anchor * 4 + 2, t.row, t.col);
    const double th = d.at(t.image, t.anchor * 4 + 3, t.row, t.col);
    PositiveCache pc{static_cast<std::size_t>(t.scale), t.image, t.anchor, t.row, t.col, {}, ops::sigmoid(tx),
                     ops::sigmoid(ty), tw > kMaxLogScale, th > kMaxLogScale, 0.0, 0.0};
    const std::array<double, 4> deltas{tx, ty, tw, th};
    pc.pred = decode_box(deltas, anchor, sp.stride, t.row, t.col);
    pc.w = pc.pred.width();
    pc.h = pc.pred.height();
    box_sum += box_loss == BoxLoss::kDiou ? diou_loss(pc.pred, t.box) : iou_loss(pc.pred, t.box);
    tape.note_branch((static_cast<std::uint64_t>(box_pair_branches(pc.pred, t.box)) << 2) |
                     (pc.clamp_w ? 2u : 0u) | (pc.clamp_h ? 1u : 0u));
    for (int k = 0; k < K; ++k) {
      cls_sum += bce(c.at(t.image, t.anchor * K + k, t.row, t.col), k == t.class_id ? 1.0 : 0.0);
    }
    cache.push_back(pc);
  }

  LossResult r;
  r.positives = static_cast<int>(P);
  r.obj = obj_sum / obj_count;
  r.box = P > 0 ? box_sum / static_cast<double>(P) : 0.0;
  const double cls_den = static_cast<double>(P);
  r.cls = P > 0 ? cls_sum / cls_den : 0.0;
  for (auto [name, v] : {std::pair{"box", r.box}, std::pair{"obj", r.obj}, std::pair{"cls", r.cls}}) {
    if (!std::isfinite(v)) throw NumericError(std::string("loss: non-finite ") + name + " term");
  }
  const double total = weights.box * r.box + weights.obj * r.obj + weights.cls * r.cls;
  r.value = total;

  const std::vector<AssignedTarget> positives = targets.positives;
  std::vector<int> strides;
  for (const auto& sp : pred.scales) strides.push_back(sp.stride);
  r.total = tape.record(
      Tensor({1}, total), parents,
      [parents, positives, strides, weights, box_loss, obj_count, K, cls_den, obj_t = std::move(obj_t),
       cache = std::move(cache)](const Tensor& g, Tape& tp) {
        const double up = g[0];
        const std::size_t S = obj_t.size();
        for (std::size_t s = 0; s < S; ++s) {
          const Var& ov = parents[3 * s + 1];
          if (!tp.needs_grad(ov)) continue;
          const Tensor& o = ov.value();
          Tensor& go = tp.grad_buffer(ov);
          const double scale = up * weights.obj / obj_count;
          for (std::size_t i = 0; i < o.size(); ++i) go[i] += scale * (ops::sigmoid(o[i]) - obj_t[s][i]);
        }
        if (positives.empty()) return;
        const double Pd = static_cast<double>(positives.size());
        for (std::size_t p = 0; p < positives.size(); ++p) {
          const AssignedTarget& t = positives[p];
          const PositiveCache& pc = cache[p];
          const Var& dv = parents[3 * pc.scale];
          const Var& cv = parents[3 * pc.scale + 2];
          if (tp.needs_grad(cv)) {
            const Tensor& c = cv.value();
            Tensor& gc = tp.grad_buffer(cv);
            const double scale = up * weights.cls / cls_den;
            for (int k = 0; k < K; ++k) {
              const int ch = pc.anchor * K + k;
              gc.at(pc.image, ch, pc.row, pc.col) +=
                  scale * (ops::sigmoid(c.at(pc.image, ch, pc.row, pc.col)) - (k == t.class_id ? 1.0 : 0.0));
            }
          }
          if (tp.needs_grad(dv)) {
            const BoxGradient bg = box_loss == BoxLoss::kDiou ? diou_loss_grad(pc.pred, t.box)
                                                               : iou_loss_grad(pc.pred, t.box);
            const double scale = up * weights.box / Pd;
            const int stride = strides[pc.scale];
            const double gcx = bg[0] + bg[2], gcy = bg[1] + bg[3];
            const double gw = 0.5 * (bg[2] - bg[0]), gh = 0.5 * (bg[3] - bg[1]);
            Tensor& gd = tp.grad_buffer(dv);
            const int a4 = pc.anchor * 4;
            gd.at(pc.image, a4, pc.row, pc.col) += scale * gcx * stride * pc.sx * (1.0 - pc.sx);
            gd.at(pc.image, a4 + 1, pc.row, pc.col) += scale * gcy * stride * pc.sy * (1.0 - pc.sy);
            if (!pc.clamp_w) gd.at(pc.image, a4 + 2, pc.row, pc.col) += scale * gw * pc.w;
            if (!pc.clamp_h) gd.at(pc.image, a4 + 3, pc.row, pc.col) += scale * gh * pc.h;
          }
        }
      });
  return r;
}

double cosine_lr(int step, int total_steps, double base_lr, double min_lr) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw ValidationError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                          "]");
  }
  return min_lr + 0.5 * (base_lr - min_lr) *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
}

double step_lr(int step, int total_steps, double base_lr, double gamma) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw ValidationError("step_lr: step outside [0, total_steps]");
  }
  double lr = base_lr;
  if (step >= 0.7 * total_steps) lr *= gamma;
  if (step >= 0.9 * total_steps) lr *= gamma;
  return lr;
}

Sgd::Sgd(ParameterStore& store, double momentum, double weight_decay)
    : store_(store), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : store_.all()) velocity_.push_back(Tensor::zeros_like(p.value));
}

void Sgd::step(double lr) {
  auto& params = store_.all();
  if (params.size() != velocity_.size()) throw StateError("sgd: parameter store changed after construction");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    Tensor& v = velocity_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      p.value[j] -= lr * weight_decay_ * p.value[j];
      v[j] = momentum_ * v[j] + p.grad[j];
      p.value[j] -= lr * v[j];
    }
  }
}

const Tensor& Sgd::velocity(const std::string& name) const {
  const auto& params = store_.all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return velocity_[i];
  }
  throw ConfigError("sgd: unknown parameter '" + name + "'");
}

std::string to_string(Schedule s) { return s == Schedule::kCosine ? "cosine" : "step"; }

Schedule parse_schedule(const std::string& name) {
  if (name == "cosine") return Schedule::kCosine;
  if (name == "step") return Schedule::kStep;
  throw ConfigError("unknown schedule '" + name + "' (expected cosine or step)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train: min_lr_ratio must lie in [0, 1]");
  if (weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
  if (loss_weights.box < 0.0 || loss_weights.obj < 0.0 || loss_weights.cls < 0.0) {
    throw ConfigError("train: loss weights must be >= 0");
  }
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
  parse_augment_ops(augment);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"base_lr", base_lr},
          {"min_lr_ratio", min_lr_ratio},
          {"weight_decay", weight_decay},
          {"momentum", momentum},
          {"schedule", tacr::to_string(schedule)},
          {"loss_weights", {{"box", loss_weights.box}, {"obj", loss_weights.obj}, {"cls", loss_weights.cls}}},
          {"seed", seed},
          {"augment", augment},
          {"val_conf_floor", val_conf_floor}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.min_lr_ratio = j.value("min_lr_ratio", c.min_lr_ratio);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.momentum = j.value("momentum", c.momentum);
    if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      c.loss_weights.box = w.value("box", c.loss_weights.box);
      c.loss_weights.obj = w.value("obj", c.loss_weights.obj);
      c.loss_weights.cls = w.value("cls", c.loss_weights.cls);
    }
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.threads = j.value("threads", c.threads);
    c.val_conf_floor = j.value("val_conf_floor", c.val_conf_floor);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_fingerprint(const DetectorConfig& model, const TrainConfig& train) {
  const nlohmann::json j{{"model", model.to_json()}, {"train", train.to_json()}};
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return out.str();
}

nlohmann::json RunRecord::to_json(bool include_timing) const {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r{{"epoch", e.epoch}, {"lr", e.lr},   {"loss", e.loss},       {"box", e.box},
                     {"obj", e.obj},     {"cls", e.cls}, {"val_map", e.val_map}};
    if (include_timing) r["seconds"] = e.seconds;
    eps.push_back(r);
  }
  nlohmann::json j{{"fingerprint", fingerprint},   {"epochs", eps},           {"best_map", best_map},
                   {"best_epoch", best_epoch},     {"final_map", final_map},  {"step_losses", step_losses},
                   {"model_config", model_config}, {"train_config", train_config}};
  if (include_timing) j["wall_seconds"] = wall_seconds;
  return j;
}

namespace {

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

void copy_parameters(const ParameterStore& from, ParameterStore& to) {
  auto& dst = to.all();
  const auto& src = from.all();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].value = src[i].value;
}

}  // namespace

TrainResult train(const DetectorConfig& model_cfg, const TrainConfig& config, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const std::optional<std::filesystem::path>& out_dir,
                  const ProgressFn& progress) {
  model_cfg.validate();
  config.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (val_set.empty()) throw ValidationError("train: empty validation set");
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& s : *set) {
      if (s.image.width != model_cfg.input_size || s.image.height != model_cfg.input_size) {
        throw ValidationError("train: image " + s.id + " is " + std::to_string(s.image.width) + "x" +
                              std::to_string(s.image.height) + ", model input is " +
                              std::to_string(model_cfg.input_size));
      }
    }
  }
  if (out_dir) std::filesystem::create_directories(*out_dir);
  const auto say = [&](const std::string& line) {
    if (progress) progress(line);
  };

  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  TrainResult result;
  result.last = std::make_unique<Detector>(model_cfg, config.seed);
  result.best = std::make_unique<Detector>(model_cfg, config.seed);
  Detector& model = *result.last;
  Sgd sgd(model.parameters(), config.momentum, config.weight_decay);

  RunRecord& rec = result.record;
  rec.fingerprint = config_fingerprint(model_cfg, config);
  rec.model_config = model_cfg.to_json();
  rec.train_config = config.to_json();
  rec.best_epoch = 0;
  rec.best_map = -1.0;

  const unsigned aug_ops = parse_augment_ops(config.augment);
  const int n = static_cast<int>(train_set.size());
  const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const int total_steps = steps_per_epoch * config.epochs;
  const double min_lr = config.base_lr * config.min_lr_ratio;
  Rng shuffle_rng = Rng::substream(config.seed, "shuffle");
  Rng aug_rng = Rng::substream(config.seed, "augment");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  PredictOptions popt;
  popt.threads = config.threads;
  popt.decode.conf_floor = config.val_conf_floor;
  EvalOptions eopt;
  eopt.class_names = model_cfg.class_names;

  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)],
                                              order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i))]);
    EpochRecord er;
    er.epoch = epoch;
    double sum_loss = 0.0, sum_box = 0.0, sum_obj = 0.0, sum_cls = 0.0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      const int begin = b * config.batch_size, end = std::min(n, begin + config.batch_size);
      std::vector<Augmented> batch;
      for (int k = begin; k < end; ++k) {
        const Sample& s = train_set[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        unsigned ops = 0;
        for (unsigned bit : {kAugHFlip, kAugVFlip, kAugColorJitter, kAugNoise}) {
          if ((aug_ops & bit) && aug_rng.uniform() < 0.5) ops |= bit;
        }
        batch.push_back(augment(s.image, s.objects, ops, aug_rng.next()));
      }
      std::vector<const Image*> imgs;
      std::vector<std::vector<GroundTruth>> gts;
      for (const auto& a : batch) {
        imgs.push_back(&a.image);
        gts.push_back(a.objects);
      }
      const double lr = config.schedule == Schedule::kCosine ? cosine_lr(step, total_steps, config.base_lr, min_lr)
                                                             : step_lr(step, total_steps, config.base_lr);
      LossResult loss;
      try {
        Tape tape;
        const RawPrediction pred = model.forward(tape, images_to_tensor(imgs), ops::Mode::kTrain);
        loss = total_loss(pred, assign_targets(gts, model_cfg), model_cfg.loss, config.loss_weights);
        model.parameters().zero_grad();
        tape.backward(loss.total);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (lr=" + fmt(lr) + " step=" + std::to_string(step) +
                           " epoch=" + std::to_string(epoch) + ")");
      }
      for (const auto& p : model.parameters().all()) {
        if (p.trainable && !p.grad.all_finite()) {
          throw NumericError("non-finite gradient in " + p.name + " (lr=" + fmt(lr) + " step=" +
                             std::to_string(step) + ")");
        }
      }
      sgd.step(lr);
      const double total = loss.value;
      rec.step_losses.push_back(total);
      sum_loss += total;
      sum_box += loss.box;
      sum_obj += loss.obj;
      sum_cls += loss.cls;
      er.lr = lr;
      ++step;
    }
    er.loss = sum_loss / steps_per_epoch;
    er.box = sum_box / steps_per_epoch;
    er.obj = sum_obj / steps_per_epoch;
    er.cls = sum_cls / steps_per_epoch;
    // Validate the weights a checkpoint would hold.
    round_to_float32(model.parameters());
    try {
      er.val_map = evaluate_model(model, val_set, eopt, popt).map;
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " during validation (lr=" + fmt(er.lr) +
                         " step=" + std::to_string(step) + " epoch=" + std::to_string(epoch) + ")");
    }
    er.seconds = std::chrono::duration<double>(Clock::now() - t_epoch).count();
    if (er.val_map > rec.best_map) {
      rec.best_map = er.val_map;
      rec.best_epoch = epoch;
      copy_parameters(model.parameters(), result.best->parameters());
    }
    rec.epochs.push_back(er);
    say("epoch=" + std::to_string(epoch) + " lr=" + fmt(er.lr) + " loss=" + fmt(er.loss) + " box=" + fmt(er.box) +
        " obj=" + fmt(er.obj) + " cls=" + fmt(er.cls) + " val_map=" + fmt(er.val_map) +
        " seconds=" + fmt(er.seconds));
  }
  rec.final_map = rec.epochs.back().val_map;
  rec.wall_seconds = std::chrono::duration<double>(Clock::now() - t_start).count();

  if (out_dir) {
    save_checkpoint(result.best->parameters(), *out_dir / "best.ckpt");
    save_checkpoint(model.parameters(), *out_dir / "last.ckpt");
    std::ofstream out(*out_dir / "run_record.json");
    if (!out) throw IoError("cannot write run_record.json in " + out_dir->string());
    out << rec.to_json().dump(2) << '\n';
  }
  return result;
}

std::vector<std::pair<std::string, DetectorConfig>> ladder_configs(const DetectorConfig& base,
                                                                   const AnchorSet& kmeans_anchors) {
  DetectorConfig c = base;
  c.anchors = default_anchors();
  c.use_ca = false;
  c.use_taskaware = false;
  c.strengthen_neck = false;
  c.loss = BoxLoss::kIou;
  std::vector<std::pair<std::string, DetectorConfig>> out;
  out.emplace_back("baseline", c);
  c.anchors = kmeans_anchors;
  out.emplace_back("+kmeans", c);
  c.use_taskaware = true;
  out.emplace_back("+taskaware", c);
  c.use_ca = true;
  out.emplace_back("+ca", c);
  c.strengthen_neck = true;
  out.emplace_back("+strengthen-neck", c);
  c.loss = BoxLoss::kDiou;
  out.emplace_back("+diou", c);
  for (auto& [_, cfg] : out) cfg.validate();
  return out;
}

std::vector<LadderRung> ablation_ladder(const DetectorConfig& base, const AnchorSet& kmeans_anchors,
                                        const TrainConfig& config, const std::vector<Sample>& train_set,
                                        const std::vector<Sample>& val_set,
                                        const std::optional<std::filesystem::path>& out_dir,
                                        const ProgressFn& progress) {
  static const char* kChanges[] = {"default anchors, IoU loss, no modules", "K-means anchors",
                                   "task-aware head",                       "coordinate attention",
                                   "strengthened neck",                     "DIoU loss"};
  std::vector<LadderRung> rungs;
  const auto configs = ladder_configs(base, kmeans_anchors);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& [name, cfg] = configs[i];
    if (progress) progress("rung=" + std::to_string(i + 1) + " name=" + name);
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = *out_dir / ("rung" + std::to_string(i + 1));
    TrainResult r = train(cfg, config, train_set, val_set, dir, progress);
    rungs.push_back({name, kChanges[i], cfg, std::move(r.record)});
  }
  return rungs;
}

std::string ladder_csv(const std::vector<LadderRung>& rungs) {
  std::ostringstream out;
  out << "rung,name,change,val_map,final_map,best_epoch,fingerprint\n";
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    const auto& r = rungs[i];
    out << i + 1 << ',' << r.name << ",\"" << r.change << "\"," << std::setprecision(6) << r.record.best_map << ','
        << r.record.final_map << ',' << r.record.best_epoch << ',' << r.record.fingerprint << '\n';
  }
  return out.str();
}

std::string ladder_markdown(const std::vector<LadderRung>& rungs) {
  std::ostringstream out;
  out << "| Rung | Model | Change | val mAP@0.5 | final mAP@0.5 |\n";
  out << "|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    const auto& r = rungs[i];
    out << "| " << i + 1 << " | " << r.name << " | " << r.change << " | " << std::fixed << std::setprecision(4)
        << r.record.best_map << " | " << r.record.final_map << " |\n";
  }
  return out.str();
}

}  // namespace tacr
