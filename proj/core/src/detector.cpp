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

#include "tacr/detector.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "tacr/error.hpp"
#include "tacr/init.hpp"

namespace tacr {

std::string to_string(BoxLoss l) { return l == BoxLoss::kIou ? "iou" : "diou"; }

BoxLoss parse_box_loss(const std::string& name) {
  if (name == "iou") return BoxLoss::kIou;
  if (name == "diou") return BoxLoss::kDiou;
  throw ConfigError("unknown box loss '" + name + "' (expected iou or diou)");
}

void DetectorConfig::validate() const {
  if (strides != std::vector<int>{8, 16} && strides != std::vector<int>{8, 16, 32}) {
    throw ConfigError("detector: strides must be [8,16] or [8,16,32]");
  }
  if (input_size < strides.back() || input_size % strides.back() != 0) {
    throw ConfigError("detector: input size " + std::to_string(input_size) + " is not divisible by stride " +
                      std::to_string(strides.back()));
  }
  if (num_classes < 1) throw ConfigError("detector: num_classes must be >= 1");
  if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes) {
    throw ConfigError("detector: class_names has " + std::to_string(class_names.size()) + " entries for " +
                      std::to_string(num_classes) + " classes");
  }
  anchors.validate();
  if (anchors.k() < num_scales()) throw ConfigError("detector: fewer anchors than scales");
  if (base_width < 1 || neck_channels < 1 || head_hidden < 1 || dyrelu_hidden < 1 || ca_reduction < 1) {
    throw ConfigError("detector: widths must be >= 1");
  }
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"input_size", input_size},
          {"num_classes", num_classes},
          {"class_names", class_names},
          {"anchors", anchors.to_json()},
          {"strides", strides},
          {"use_ca", use_ca},
          {"use_taskaware", use_taskaware},
          {"strengthen_neck", strengthen_neck},
          {"loss", tacr::to_string(loss)},
          {"base_width", base_width},
          {"neck_channels", neck_channels},
          {"head_hidden", head_hidden},
          {"ca_reduction", ca_reduction},
          {"dyrelu_hidden", dyrelu_hidden}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  try {
    c.input_size = j.value("input_size", c.input_size);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.class_names = j.value("class_names", c.class_names);
    if (j.contains("anchors")) c.anchors = AnchorSet::from_json(j.at("anchors"));
    c.strides = j.value("strides", c.strides);
    c.use_ca = j.value("use_ca", c.use_ca);
    c.use_taskaware = j.value("use_taskaware", c.use_taskaware);
    c.strengthen_neck = j.value("strengthen_neck", c.strengthen_neck);
    if (j.contains("loss")) c.loss = parse_box_loss(j.at("loss").get<std::string>());
    c.base_width = j.value("base_width", c.base_width);
    c.neck_channels = j.value("neck_channels", c.neck_channels);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.ca_reduction = j.value("ca_reduction", c.ca_reduction);
    c.dyrelu_hidden = j.value("dyrelu_hidden", c.dyrelu_hidden);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("detector config: ") + e.what());
  }
  c.validate();
  return c;
}

DetectorConfig DetectorConfig::baseline() {
  DetectorConfig c;
  c.use_ca = false;
  c.use_taskaware = false;
  c.strengthen_neck = false;
  c.loss = BoxLoss::kIou;
  return c;
}

ConvBlock::ConvBlock(ParameterStore& store, const std::string& prefix, int in, int out, int kernel, int stride,
                     Rng& init)
    : out_(out), stride_(stride), pad_(kernel / 2) {
  weight_ = &store.add(prefix + ".conv.weight", kaiming_normal({out, in, kernel, kernel}, init));
  gamma_ = &store.add(prefix + ".bn.gamma", Tensor({out}, 1.0));
  beta_ = &store.add(prefix + ".bn.beta", Tensor({out}, 0.0));
  stats_ = add_batchnorm_stats(store, prefix + ".bn", out);
}

Var ConvBlock::forward(const Var& x, ops::Mode mode) const {
  Tape& tape = *x.tape();
  Var y = ops::conv2d(x, tape.param(*weight_), Var(), stride_, pad_);
  y = ops::batchnorm2d(y, tape.param(*gamma_), tape.param(*beta_), stats_, mode);
  return ops::swish(y);
}

namespace {

int log2_int(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

}  // namespace

Detector::Detector(const DetectorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  // Every module draws from its own stream, so toggling one module leaves
  // the initial weights of the others untouched.
  auto stream = [seed](const std::string& name) { return Rng::substream(seed, name); };

  const int n_stages = log2_int(config_.strides.back());
  int in = 3;
  for (int s = 0; s < n_stages; ++s) {
    const int width = config_.base_width << s;
    const std::string p = "backbone.stage" + std::to_string(s);
    Rng rng = stream(p);
    std::vector<ConvBlock> blocks;
    blocks.emplace_back(store_, p + ".0", in, width, 3, 2, rng);
    if (s > 0) blocks.emplace_back(store_, p + ".1", width, width, 3, 1, rng);
    stages_.push_back(std::move(blocks));
    in = width;
  }
  for (int stride : config_.strides) tap_stage_.push_back(log2_int(stride) - 1);

  const std::vector<int> taps = tap_channels();
  const int cn = config_.neck_channels;
  const auto anchors = config_.anchors_per_scale();
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const std::string ts = std::to_string(t);
    if (config_.use_ca) {
      Rng rng = stream("ca" + ts);
      attention_.emplace_back(store_, "ca" + ts, CAConfig{taps[t], config_.ca_reduction}, rng);
    }
    Rng srng = stream("neck.stem" + ts);
    std::vector<ConvBlock> stem;
    stem.emplace_back(store_, "neck.stem" + ts + ".0", taps[t], cn, 1, 1, srng);
    if (config_.strengthen_neck) {
      stem.emplace_back(store_, "neck.stem" + ts + ".1", cn, cn, 3, 1, srng);
      stem.emplace_back(store_, "neck.stem" + ts + ".2", cn, cn, 1, 1, srng);
    }
    stems_.push_back(std::move(stem));
    if (t + 1 < taps.size()) {
      Rng frng = stream("neck.fuse" + ts);
      fuse_.emplace_back(store_, "neck.fuse" + ts, 2 * cn, cn, 3, 1, frng);
    }
    HeadConfig hc;
    hc.in_channels = t + 1 < taps.size() ? 2 * cn : cn;
    hc.hidden_channels = config_.head_hidden;
    hc.anchors = static_cast<int>(anchors[t].size());
    hc.classes = config_.num_classes;
    hc.use_taskaware = config_.use_taskaware;
    hc.coefficient_hidden = config_.dyrelu_hidden;
    Rng hrng = stream("head" + ts);
    heads_.emplace_back(store_, "head" + ts, hc, hrng);
  }
}

std::vector<int> Detector::tap_channels() const {
  std::vector<int> out;
  for (int s : tap_stage_) out.push_back(config_.base_width << s);
  return out;
}

std::vector<Var> Detector::backbone_forward(const Var& images, ops::Mode mode, ForwardTrace* trace) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3) throw DimensionError("detector: images must be [N,3,S,S], got " + shape_string(s));
  if (s[2] % config_.strides.back() != 0 || s[3] % config_.strides.back() != 0) {
    throw DimensionError("detector: image size " + shape_string(s) + " is not divisible by the largest stride");
  }
  std::vector<Var> taps;
  Var x = images;
  std::size_t next_tap = 0;
  for (std::size_t st = 0; st < stages_.size(); ++st) {
    for (const auto& b : stages_[st]) x = b.forward(x, mode);
    if (next_tap < tap_stage_.size() && tap_stage_[next_tap] == static_cast<int>(st)) {
      Var tap = x;
      if (config_.use_ca) {
        const auto out = attention_[next_tap].forward(x, mode);
        tap = out.output;
        if (trace) {
          trace->gate_h.push_back(out.gate_h.value());
          trace->gate_w.push_back(out.gate_w.value());
        }
      }
      taps.push_back(tap);
      ++next_tap;
    }
  }
  return taps;
}

std::vector<std::vector<Var>> Detector::neck_forward(std::span<const Var> taps, ops::Mode mode) const {
  if (taps.size() != stems_.size()) {
    throw ConfigError("neck: expected " + std::to_string(stems_.size()) + " taps, got " + std::to_string(taps.size()));
  }
  const std::vector<int> channels = tap_channels();
  std::vector<Var> stemmed;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    if (taps[t].shape().size() != 4 || taps[t].shape()[1] != channels[t]) {
      throw ConfigError("neck: tap " + std::to_string(t) + " has shape " + shape_string(taps[t].shape()) +
                        ", expected " + std::to_string(channels[t]) + " channels");
    }
    Var x = taps[t];
    for (const auto& b : stems_[t]) x = b.forward(x, mode);
    stemmed.push_back(x);
  }
  const std::size_t n = taps.size();
  std::vector<Var> fused(n);
  fused[n - 1] = stemmed[n - 1];
  for (std::size_t t = n - 1; t-- > 0;) {
    const Var up = ops::upsample_nearest2x(fused[t + 1]);
    fused[t] = fuse_[t].forward(ops::concat(std::vector<Var>{stemmed[t], up}, 1), mode);
  }
  std::vector<std::vector<Var>> heads(n);
  for (std::size_t t = 0; t < n; ++t) {
    heads[t].push_back(fused[t]);
    if (t + 1 < n) heads[t].push_back(ops::upsample_nearest2x(fused[t + 1]));
  }
  return heads;
}

RawPrediction Detector::forward(const Var& images, ops::Mode mode) const {
  RawPrediction pred;
  const std::vector<Var> taps = backbone_forward(images, mode, &pred.trace);
  const auto inputs = neck_forward(taps, mode);
  const auto anchors = config_.anchors_per_scale();
  for (std::size_t s = 0; s < heads_.size(); ++s) {
    HeadOutput h = heads_[s].forward(inputs[s]);
    if (h.coefficients) pred.trace.dyrelu.push_back(*h.coefficients);
    pred.scales.push_back({h.box_deltas, h.objectness, h.cls_logits, config_.strides[s], anchors[s]});
  }
  return pred;
}

RawPrediction Detector::forward(Tape& tape, const Tensor& images, ops::Mode mode) const {
  return forward(tape.constant(images), mode);
}

Box decode_box(std::span<const double, 4> d, const BoxDims& anchor, int stride, int row, int col) {
  const double cx = (col + ops::sigmoid(d[0])) * stride;
  const double cy = (row + ops::sigmoid(d[1])) * stride;
  const double w = anchor.w * std::exp(std::min(d[2], kMaxLogScale));
  const double h = anchor.h * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::array<double, 4> encode_box(const Box& box, const BoxDims& anchor, int stride, int row, int col) {
  auto logit = [](double p) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(p / (1.0 - p));
  };
  return {logit(box.center_x() / stride - col), logit(box.center_y() / stride - row),
          std::log(box.width() / anchor.w), std::log(box.height() / anchor.h)};
}

std::vector<std::vector<Detection>> decode(const RawPrediction& pred, int input_size, const DecodeOptions& options) {
  if (pred.scales.empty()) return {};
  const int N = pred.scales[0].objectness.shape()[0];
  const double S = input_size;
  std::vector<std::vector<Detection>> out(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    std::vector<ScoredBox> cands;
    for (const auto& sp : pred.scales) {
      const Tensor& box = sp.box_deltas.value();
      const Tensor& obj = sp.objectness.value();
      const Tensor& cls = sp.cls_logits.value();
      const int A = obj.dim(1), H = obj.dim(2), W = obj.dim(3);
      const int K = cls.dim(1) / A;
      for (int a = 0; a < A; ++a)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            int best = 0;
            for (int k = 1; k < K; ++k) {
              if (cls.at(n, a * K + k, i, j) > cls.at(n, a * K + best, i, j)) best = k;
            }
            const double score = ops::sigmoid(obj.at(n, a, i, j)) * ops::sigmoid(cls.at(n, a * K + best, i, j));
            if (score < options.conf_floor) continue;
            const std::array<double, 4> d{box.at(n, a * 4, i, j), box.at(n, a * 4 + 1, i, j),
                                          box.at(n, a * 4 + 2, i, j), box.at(n, a * 4 + 3, i, j)};
            Box b = decode_box(d, sp.anchors[static_cast<std::size_t>(a)], sp.stride, i, j);
            b = {std::clamp(b.x1, 0.0, S), std::clamp(b.y1, 0.0, S), std::clamp(b.x2, 0.0, S),
                 std::clamp(b.y2, 0.0, S)};
            cands.push_back({b, score, best});
          }
    }
    std::vector<ScoredBox> kept;
    if (options.apply_nms) {
      kept = nms(cands, options.nms_iou, true);
    } else {
      std::vector<std::size_t> order(cands.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return cands[x].score > cands[y].score; });
      for (std::size_t i : order) kept.push_back(cands[i]);
    }
    if (options.max_detections > 0 && static_cast<int>(kept.size()) > options.max_detections) {
      kept.resize(static_cast<std::size_t>(options.max_detections));
    }
    for (const auto& k : kept) out[static_cast<std::size_t>(n)].push_back({k.box, k.class_id, k.score, n});
  }
  return out;
}

std::vector<Tensor> TargetSet::objectness() const {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < grid.size(); ++s) out.emplace_back(Shape{images, anchors_per_scale[s], grid[s], grid[s]});
  for (const auto& p : positives) out[static_cast<std::size_t>(p.scale)].at(p.image, p.anchor, p.row, p.col) = 1.0;
  return out;
}

double shape_iou(const BoxDims& a, const BoxDims& b) {
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

TargetSet assign_targets(std::span<const std::vector<GroundTruth>> gts, const DetectorConfig& config,
                         double iou_pos_threshold) {
  const auto anchors = config.anchors_per_scale();
  const double S = config.input_size;
  TargetSet ts;
  ts.images = static_cast<int>(gts.size());
  for (int s = 0; s < config.num_scales(); ++s) {
    ts.grid.push_back(config.grid_size(s));
    ts.anchors_per_scale.push_back(static_cast<int>(anchors[static_cast<std::size_t>(s)].size()));
  }
  using Key = std::tuple<int, int, int, int, int>;
  std::map<Key, AssignedTarget> slots;
  auto better = [](const AssignedTarget& a, const AssignedTarget& b) {
    if (a.primary != b.primary) return a.primary;
    if (a.iou != b.iou) return a.iou > b.iou;
    return a.gt_index < b.gt_index;
  };
  for (int n = 0; n < ts.images; ++n) {
    const auto& list = gts[static_cast<std::size_t>(n)];
    for (int g = 0; g < static_cast<int>(list.size()); ++g) {
      const GroundTruth& gt = list[static_cast<std::size_t>(g)];
      const Box& b = gt.box;
      if (!b.valid() || b.width() <= 0.0 || b.height() <= 0.0 || b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > S || b.y2 > S) {
        throw ValidationError("ground truth " + std::to_string(g) + " of image " + std::to_string(n) +
                              " lies outside the " + std::to_string(config.input_size) + "px image or is empty");
      }
      if (gt.class_id < 0 || gt.class_id >= config.num_classes) {
        throw ValidationError("ground truth " + std::to_string(g) + " of image " + std::to_string(n) +
                              " has class id " + std::to_string(gt.class_id) + " outside [0, " +
                              std::to_string(config.num_classes) + ")");
      }
      const BoxDims dims{b.width(), b.height()};
      std::vector<AssignedTarget> cands;
      int best = -1;
      for (int s = 0; s < config.num_scales(); ++s) {
        const int stride = config.strides[static_cast<std::size_t>(s)];
        const int G = ts.grid[static_cast<std::size_t>(s)];
        const int row = std::min(static_cast<int>(std::floor(b.center_y() / stride)), G - 1);
        const int col = std::min(static_cast<int>(std::floor(b.center_x() / stride)), G - 1);
        const auto& as = anchors[static_cast<std::size_t>(s)];
        for (int a = 0; a < static_cast<int>(as.size()); ++a) {
          AssignedTarget t{n, s, a, row, col, g, false, shape_iou(dims, as[static_cast<std::size_t>(a)]), b,
                           gt.class_id};
          if (best < 0 || t.iou > cands[static_cast<std::size_t>(best)].iou) best = static_cast<int>(cands.size());
          cands.push_back(t);
        }
      }
      cands[static_cast<std::size_t>(best)].primary = true;
      for (const auto& t : cands) {
        if (!t.primary && !(t.iou > iou_pos_threshold)) continue;
        const Key key{t.image, t.scale, t.anchor, t.row, t.col};
        auto it = slots.find(key);
        if (it == slots.end()) {
          slots.emplace(key, t);
        } else if (better(t, it->second)) {
          it->second = t;
        }
      }
    }
  }
  for (auto& [_, t] : slots) ts.positives.push_back(t);
  return ts;
}

}  // namespace tacr
