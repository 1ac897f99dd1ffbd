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

#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tacr/anchors.hpp"
#include "tacr/checkpoint.hpp"
#include "tacr/detector.hpp"
#include "tacr/error.hpp"
#include "tacr/gradcheck_suite.hpp"
#include "tacr/inference.hpp"
#include "tacr/metrics.hpp"
#include "tacr/synth.hpp"
#include "tacr/train.hpp"

namespace tacr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// JSON config files: top-level keys are global options, nested objects are
// subcommand sections. Unknown keys are ignored.
std::string env_name(const std::string& long_name);

class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, "", {}, items);
    return items;
  }

 private:
  static void collect(const json& j, const std::string& name, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    if (j.is_object()) {
      if (!name.empty()) parents.push_back(name);
      for (auto it = j.begin(); it != j.end(); ++it) collect(*it, it.key(), parents, items);
      return;
    }
    if (const char* env = std::getenv(env_name(name).c_str()); env != nullptr && *env != '\0') return;
    CLI::ConfigItem item;
    item.parents = parents;
    item.name = name;
    if (j.is_array()) {
      for (const auto& v : j) item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    } else if (j.is_string()) {
      item.inputs = {j.get<std::string>()};
    } else if (!j.is_null()) {
      item.inputs = {j.dump()};
    }
    items.push_back(std::move(item));
  }
};

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

struct Globals {
  std::uint64_t seed = 42;
  std::string out_dir = "tacr_out";
  std::string log_level = "info";
  int threads = 1;
};

class Logger {
 public:
  Logger(std::ostream& out, std::ostream& err, Level level) : out_(out), err_(err), level_(level) {}
  // Machine-parsable progress line on standard output.
  void progress(const std::string& line) const {
    if (level_ >= Level::kInfo) out_ << line << std::endl;
  }
  void debug(const std::string& line) const {
    if (level_ >= Level::kDebug) out_ << line << std::endl;
  }
  void warn(const std::string& msg) const {
    if (level_ >= Level::kWarn) err_ << "warning: " << msg << std::endl;
  }
  std::ostream& out() const { return out_; }

 private:
  std::ostream& out_;
  std::ostream& err_;
  Level level_;
};

std::string env_name(const std::string& long_name) {
  std::string e = "TACR_";
  for (char c : long_name) e += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

void attach_env(CLI::App& app) {
  for (CLI::Option* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help" || names[0] == "config") continue;
    opt->envname(env_name(names[0]));
  }
}

json scalar(const std::string& s) {
  if (s.empty()) return s;
  try {
    json v = json::parse(s);
    if (v.is_number() || v.is_boolean()) return v;
  } catch (const json::exception&) {
  }
  return s;
}

json options_json(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help" || names[0] == "config") continue;
    std::string v;
    try {
      v = opt->as<std::string>();
    } catch (const CLI::Error&) {
      v = opt->get_default_str();
    }
    j[names[0]] = scalar(v);
  }
  return j;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& s) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << s;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string num(double v) {
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

std::array<double, 3> parse_split(const std::string& s) {
  std::array<double, 3> f{};
  std::stringstream ss(s);
  std::string tok;
  int i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 3) throw ValidationError("--split needs exactly three fractions");
    try {
      f[static_cast<std::size_t>(i++)] = std::stod(tok);
    } catch (const std::exception&) {
      throw ValidationError("--split: '" + tok + "' is not a number");
    }
  }
  if (i != 3) throw ValidationError("--split needs exactly three fractions");
  return f;
}

struct Dataset {
  std::vector<std::string> class_names;
  int image_size = 0;
};

Dataset dataset_info(const fs::path& data) {
  const json m = read_manifest(data);
  Dataset d;
  try {
    d.class_names = m.at("classes").get<std::vector<std::string>>();
    d.image_size = m.at("scene_spec").at("image_size").get<int>();
  } catch (const json::exception& e) {
    throw ParseError((data / "manifest.json").string() + ": " + e.what());
  }
  return d;
}

AnchorSet load_anchors(const fs::path& path) { return AnchorSet::from_json(read_json(path)); }

// Everything a subcommand needs after parsing.
struct Context {
  Globals g;
  CLI::App* app = nullptr;
  CLI::App* sub = nullptr;
  const Logger* log = nullptr;

  fs::path out() const { return g.out_dir; }
  void write_resolved(const fs::path& dir, const json& extra = json::object()) const {
    json j = options_json(*app);
    j.erase("config");
    j[sub->get_name()] = options_json(*sub);
    if (!extra.empty()) j["resolved"] = extra;
    write_json(dir / "resolved_config.json", j);
  }
};

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  int n = 800;
  int image_size = 64;
  std::string split = "0.81,0.09,0.10";
  int min_objects = 1;
  int max_objects = 3;
  double noise = 16.0;
  std::string scene;
  std::string data;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  app.add_option("--n", a.n, "Number of images")->check(CLI::PositiveNumber);
  app.add_option("--image-size", a.image_size, "Square image size in pixels")->check(CLI::Range(8, 4096));
  app.add_option("--split", a.split, "train,val,test fractions summing to 1");
  app.add_option("--min-objects", a.min_objects, "Minimum objects per image")->check(CLI::NonNegativeNumber);
  app.add_option("--max-objects", a.max_objects, "Maximum objects per image")->check(CLI::NonNegativeNumber);
  app.add_option("--noise", a.noise, "Background noise amplitude (+/- per channel)")->check(CLI::NonNegativeNumber);
  app.add_option("--scene", a.scene, "Scene spec JSON replacing the standard four-class palette");
  app.add_option("--data", a.data, "Dataset directory (default: <out-dir>/data)");
}

int run_synth(const Context& ctx, const SynthArgs& a) {
  SceneSpec spec = a.scene.empty() ? SceneSpec::standard(ctx.g.seed) : SceneSpec::from_json(read_json(a.scene));
  spec.seed = ctx.g.seed;
  if (a.scene.empty()) {
    spec.image_size = a.image_size;
    spec.min_objects = a.min_objects;
    spec.max_objects = a.max_objects;
    spec.noise_amplitude = a.noise;
    for (auto& c : spec.classes) {
      c.max_w = std::min(c.max_w, spec.image_size);
      c.max_h = std::min(c.max_h, spec.image_size);
      c.min_w = std::min(c.min_w, c.max_w);
      c.min_h = std::min(c.min_h, c.max_h);
    }
  }
  spec.validate();
  const fs::path data = a.data.empty() ? ctx.out() / "data" : fs::path(a.data);
  const auto fractions = parse_split(a.split);
  const SplitCounts counts = split_counts(a.n, fractions);
  const GenerateReport rep = generate_dataset(spec, a.n, fractions, data, ctx.g.threads);
  if (rep.dropped_objects > 0) {
    ctx.log->warn(std::to_string(rep.dropped_objects) + " objects could not be placed without overlap");
  }
  ctx.write_resolved(data, {{"scene", spec.to_json()}});
  ctx.log->progress("event=synth images=" + std::to_string(a.n) + " train=" + std::to_string(counts.train) +
                    " val=" + std::to_string(counts.val) + " test=" + std::to_string(counts.test) +
                    " dropped=" + std::to_string(rep.dropped_objects) + " dir=" + data.string());
  return kExitOk;
}

// ---- anchors --------------------------------------------------------------

struct AnchorArgs {
  std::string data;
  std::string split = "train";
  std::string annotations;
  std::string format = "json";
  int target_size = -1;
  int k = kDefaultAnchorCount;
  std::string distance = "euclidean";
  int max_iters = 300;
  double tol = 1e-6;
  std::string output;
};

void add_anchors(CLI::App& app, AnchorArgs& a) {
  app.add_option("--data", a.data, "Dataset directory (default: <out-dir>/data)");
  app.add_option("--split", a.split, "Split whose annotations are clustered")
      ->check(CLI::IsMember({"train", "val", "test"}));
  app.add_option("--annotations", a.annotations, "Annotation file or directory instead of a dataset split");
  app.add_option("--format", a.format, "Annotation format")->check(CLI::IsMember({"json", "voc-xml", "voc"}));
  app.add_option("--target-size", a.target_size,
                 "Rescale boxes to this square training size (-1: 64 for --annotations, native for dataset splits; "
                 "0: native)");
  app.add_option("--k", a.k, "Number of anchors")->check(CLI::PositiveNumber);
  app.add_option("--distance", a.distance, "Cluster distance")->check(CLI::IsMember({"euclidean", "iou"}));
  app.add_option("--max-iters", a.max_iters, "Lloyd iteration cap")->check(CLI::PositiveNumber);
  app.add_option("--tol", a.tol, "Relative objective improvement that stops iteration");
  app.add_option("--output,--out", a.output, "Anchors JSON path (default: <out-dir>/anchors.json)");
}

int run_anchors(const Context& ctx, const AnchorArgs& a) {
  fs::path source;
  AnnotationFormat format = parse_annotation_format(a.format);
  if (!a.annotations.empty()) {
    source = a.annotations;
  } else {
    source = (a.data.empty() ? ctx.out() / "data" : fs::path(a.data)) / a.split / "annotations";
    format = AnnotationFormat::kJson;
  }
  int size = a.target_size;
  if (size < 0) size = a.annotations.empty() ? 0 : DetectorConfig().input_size;
  std::optional<std::pair<int, int>> target;
  if (size > 0) target = std::make_pair(size, size);
  const LoadedDims dims = load_box_dims(source, format, target);
  if (dims.skipped > 0) ctx.log->warn(std::to_string(dims.skipped) + " degenerate boxes skipped");
  KMeansOptions opt;
  opt.k = a.k;
  opt.seed = ctx.g.seed;
  opt.max_iters = a.max_iters;
  opt.tol = a.tol;
  opt.distance = parse_anchor_distance(a.distance);
  const KMeansResult km = kmeans_anchors(dims.dims, opt);
  const fs::path output = a.output.empty() ? ctx.out() / "anchors.json" : fs::path(a.output);
  write_json(output, km.anchors.to_json());
  ctx.write_resolved(output.has_parent_path() ? output.parent_path() : fs::path("."),
                     {{"boxes", dims.dims.size()}, {"files", dims.files}, {"history", km.history}});
  ctx.log->progress("event=anchors boxes=" + std::to_string(dims.dims.size()) + " k=" + std::to_string(a.k) +
                    " iterations=" + std::to_string(km.iterations) + " inertia=" + num(km.anchors.inertia) +
                    " file=" + output.string());
  return kExitOk;
}

// ---- shared model options -------------------------------------------------

struct ModelArgs {
  std::string model_config;
  std::string anchors;
  bool ca = true;
  bool taskaware = true;
  bool strengthen_neck = true;
  std::string loss = "diou";
};

void add_model(CLI::App& app, ModelArgs& m) {
  app.add_option("--model-config", m.model_config, "Detector config JSON used as the base");
  app.add_option("--anchors", m.anchors, "Anchors JSON (default: <out-dir>/anchors.json when present)");
  app.add_option("--ca", m.ca, "Coordinate attention on the backbone taps");
  app.add_option("--taskaware", m.taskaware, "Task-aware (dynamic relu) head");
  app.add_option("--strengthen-neck", m.strengthen_neck, "Three-conv neck stems instead of one");
  app.add_option("--loss", m.loss, "Box loss")->check(CLI::IsMember({"iou", "diou"}));
}

DetectorConfig build_model(const Context& ctx, const ModelArgs& m, const Dataset& data) {
  DetectorConfig cfg = m.model_config.empty() ? DetectorConfig() : DetectorConfig::from_json(read_json(m.model_config));
  cfg.num_classes = static_cast<int>(data.class_names.size());
  cfg.class_names = data.class_names;
  cfg.input_size = data.image_size;
  const fs::path anchors = m.anchors.empty() ? ctx.out() / "anchors.json" : fs::path(m.anchors);
  if (!m.anchors.empty() || fs::exists(anchors)) {
    cfg.anchors = load_anchors(anchors);
  } else if (m.model_config.empty()) {
    ctx.log->warn("no anchors file at " + anchors.string() + "; using the default anchors");
  }
  cfg.use_ca = m.ca;
  cfg.use_taskaware = m.taskaware;
  cfg.strengthen_neck = m.strengthen_neck;
  cfg.loss = parse_box_loss(m.loss);
  cfg.validate();
  return cfg;
}

struct TrainArgs {
  std::string data;
  ModelArgs model;
  int epochs = 100;
  int batch_size = 8;
  double lr = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::string schedule = "cosine";
  double box_weight = 5.0;
  double obj_weight = 1.0;
  double cls_weight = 1.0;
  std::string augment = "hflip";
};

void add_train_options(CLI::App& app, TrainArgs& a, int default_epochs) {
  a.epochs = default_epochs;
  app.add_option("--data", a.data, "Dataset directory (default: <out-dir>/data)");
  app.add_option("--epochs", a.epochs, "Training epochs")->check(CLI::PositiveNumber);
  app.add_option("--batch-size", a.batch_size, "Images per SGD step")->check(CLI::PositiveNumber);
  app.add_option("--lr", a.lr, "Base learning rate")->check(CLI::PositiveNumber);
  app.add_option("--weight-decay", a.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber);
  app.add_option("--momentum", a.momentum, "SGD momentum")->check(CLI::Range(0.0, 0.999999));
  app.add_option("--schedule", a.schedule, "Learning-rate schedule")->check(CLI::IsMember({"cosine", "step"}));
  app.add_option("--box-weight", a.box_weight, "Box loss weight")->check(CLI::NonNegativeNumber);
  app.add_option("--obj-weight", a.obj_weight, "Objectness loss weight")->check(CLI::NonNegativeNumber);
  app.add_option("--cls-weight", a.cls_weight, "Classification loss weight")->check(CLI::NonNegativeNumber);
  app.add_option("--augment", a.augment, "Comma list of hflip, vflip, color-jitter, noise (empty for none)");
  add_model(app, a.model);
}

TrainConfig build_train(const Context& ctx, const TrainArgs& a) {
  TrainConfig t;
  t.epochs = a.epochs;
  t.batch_size = a.batch_size;
  t.base_lr = a.lr;
  t.weight_decay = a.weight_decay;
  t.momentum = a.momentum;
  t.schedule = parse_schedule(a.schedule);
  t.loss_weights = {a.box_weight, a.obj_weight, a.cls_weight};
  t.seed = ctx.g.seed;
  t.augment = a.augment;
  t.threads = ctx.g.threads;
  t.validate();
  return t;
}

int run_train(const Context& ctx, const TrainArgs& a) {
  const fs::path data = a.data.empty() ? ctx.out() / "data" : fs::path(a.data);
  const Dataset info = dataset_info(data);
  const DetectorConfig model = build_model(ctx, a.model, info);
  const TrainConfig tc = build_train(ctx, a);
  const auto train_set = load_split(data, "train");
  const auto val_set = load_split(data, "val");
  const fs::path dir = ctx.out() / "train";
  fs::create_directories(dir);
  write_json(dir / "model_config.json", model.to_json());
  ctx.write_resolved(dir, {{"model", model.to_json()}, {"train", tc.to_json()}, {"data", data.string()}});
  ctx.log->progress("event=train_start images=" + std::to_string(train_set.size()) +
                    " val_images=" + std::to_string(val_set.size()) + " epochs=" + std::to_string(tc.epochs) +
                    " fingerprint=" + config_fingerprint(model, tc));
  const TrainResult r = train(model, tc, train_set, val_set, dir, [&](const std::string& l) { ctx.log->progress(l); });
  ctx.log->progress("event=train_done best_map=" + num(r.record.best_map) +
                    " best_epoch=" + std::to_string(r.record.best_epoch) + " final_map=" + num(r.record.final_map) +
                    " wall_seconds=" + num(r.record.wall_seconds) + " checkpoint=" + (dir / "best.ckpt").string());
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string split = "test";
  std::string checkpoint;
  std::string model_config;
  double iou = kDefaultMatchIou;
  std::string ap_mode = "all-points";
  double conf_floor = kDefaultConfidenceFloor;
  double nms_iou = kDefaultNmsIou;
  double operating_score = kDefaultOperatingScore;
  bool dump_gates = false;
  bool dump_dyrelu = false;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--data", a.data, "Dataset directory (default: <out-dir>/data)");
  app.add_option("--split", a.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  app.add_option("--checkpoint", a.checkpoint, "Checkpoint (default: <out-dir>/train/best.ckpt)");
  app.add_option("--model-config", a.model_config, "Detector config JSON (default: next to the checkpoint)");
  app.add_option("--iou", a.iou, "Match IoU threshold")->check(CLI::Range(0.0, 1.0));
  app.add_option("--ap-mode", a.ap_mode, "AP interpolation")->check(CLI::IsMember({"all-points", "101-point"}));
  app.add_option("--conf-floor", a.conf_floor, "Minimum detection score")->check(CLI::Range(0.0, 1.0));
  app.add_option("--nms-iou", a.nms_iou, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  app.add_option("--operating-score", a.operating_score, "Score at which TP/FP/FN are counted")
      ->check(CLI::Range(0.0, 1.0));
  app.add_flag("--dump-gates", a.dump_gates, "Write coordinate attention gates to gates.json");
  app.add_flag("--dump-dyrelu", a.dump_dyrelu, "Write dynamic relu coefficient statistics to dyrelu.json");
}

std::unique_ptr<Detector> load_model(const fs::path& checkpoint, const fs::path& model_config) {
  auto model = std::make_unique<Detector>(DetectorConfig::from_json(read_json(model_config)), 0);
  load_checkpoint(model->parameters(), checkpoint);
  return model;
}

std::string file_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

int run_eval(const Context& ctx, const EvalArgs& a) {
  const fs::path data = a.data.empty() ? ctx.out() / "data" : fs::path(a.data);
  const fs::path ckpt = a.checkpoint.empty() ? ctx.out() / "train" / "best.ckpt" : fs::path(a.checkpoint);
  const fs::path mcfg = a.model_config.empty() ? ckpt.parent_path() / "model_config.json" : fs::path(a.model_config);
  const auto model = load_model(ckpt, mcfg);
  const auto samples = load_split(data, a.split);
  if (samples.empty()) throw ValidationError("split '" + a.split + "' of " + data.string() + " has no images");

  PredictOptions popt;
  popt.threads = ctx.g.threads;
  popt.decode.conf_floor = a.conf_floor;
  popt.decode.nms_iou = a.nms_iou;
  EvalOptions eopt;
  eopt.iou_threshold = a.iou;
  eopt.mode = parse_ap_mode(a.ap_mode);
  eopt.operating_score = a.operating_score;
  const auto dets = predict(*model, samples, popt);
  std::vector<std::vector<GroundTruth>> gts;
  for (const auto& s : samples) gts.push_back(s.objects);
  eopt.class_names = model->config().class_names;
  const EvalReport rep = evaluate_detections(dets, gts, model->config().num_classes, eopt);

  const fs::path dir = ctx.out() / "eval";
  write_json(dir / "eval_report.json", rep.to_json());
  for (const auto& c : rep.classes) write_text(dir / ("pr_" + file_safe(c.name) + ".csv"), rep.pr_csv(c.class_id));
  json dj = json::array();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    json list = json::array();
    for (const auto& d : dets[i]) {
      list.push_back({{"class_id", d.class_id},
                      {"score", d.score},
                      {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}});
    }
    dj.push_back({{"image", samples[i].id}, {"detections", list}});
  }
  write_json(dir / "detections.json", dj);

  if (a.dump_gates || a.dump_dyrelu) {
    std::vector<const Image*> imgs;
    for (const auto& s : samples) imgs.push_back(&s.image);
    Tape tape(false);
    const RawPrediction pred = model->forward(tape, images_to_tensor(imgs), ops::Mode::kEval);
    if (a.dump_gates) {
      if (!model->config().use_ca) ctx.log->warn("--dump-gates: model has no coordinate attention");
      json taps = json::array();
      for (std::size_t t = 0; t < pred.trace.gate_h.size(); ++t) {
        taps.push_back({{"stride", model->config().strides[t]},
                        {"images", gates_to_json(pred.trace.gate_h[t], pred.trace.gate_w[t])}});
      }
      json ids = json::array();
      for (const auto& s : samples) ids.push_back(s.id);
      write_json(dir / "gates.json", {{"image_ids", ids}, {"taps", taps}});
    }
    if (a.dump_dyrelu) {
      if (!model->config().use_taskaware) ctx.log->warn("--dump-dyrelu: model has no task-aware head");
      json scales = json::array();
      for (std::size_t s = 0; s < pred.trace.dyrelu.size(); ++s) {
        scales.push_back({{"stride", model->config().strides[s]}, {"coefficients", dyrelu_stats_json(pred.trace.dyrelu[s])}});
      }
      write_json(dir / "dyrelu.json", {{"images", samples.size()}, {"scales", scales}});
    }
  }
  ctx.write_resolved(dir, {{"checkpoint", ckpt.string()}, {"model", model->config().to_json()}});
  for (const auto& c : rep.classes) {
    ctx.log->progress("event=eval_class class=" + c.name + " ap=" + (c.ap ? num(*c.ap) : std::string("none")) +
                      " n_gt=" + std::to_string(c.n_gt) + " tp=" + std::to_string(c.tp) +
                      " fp=" + std::to_string(c.fp) + " fn=" + std::to_string(c.fn));
  }
  ctx.log->progress("event=eval map=" + num(rep.map) + " images=" + std::to_string(samples.size()) +
                    " split=" + a.split + " report=" + (dir / "eval_report.json").string());
  return kExitOk;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  int images = 5;
  std::string data;
  std::string checkpoint;
  std::string model_config;
  int warmup = 1;
};

void add_bench(CLI::App& app, BenchArgs& a) {
  app.add_option("--images", a.images, "Number of timed test images")->check(CLI::PositiveNumber);
  app.add_option("--data", a.data, "Dataset directory; synthetic scenes are rendered when absent");
  app.add_option("--checkpoint", a.checkpoint, "Checkpoint (default: <out-dir>/train/best.ckpt when present)");
  app.add_option("--model-config", a.model_config, "Detector config JSON (default: next to the checkpoint)");
  app.add_option("--warmup", a.warmup, "Untimed warm-up runs")->check(CLI::NonNegativeNumber);
}

int run_bench(const Context& ctx, const BenchArgs& a) {
  const fs::path ckpt = a.checkpoint.empty() ? ctx.out() / "train" / "best.ckpt" : fs::path(a.checkpoint);
  std::unique_ptr<Detector> model;
  std::string source;
  if (fs::exists(ckpt)) {
    const fs::path mcfg = a.model_config.empty() ? ckpt.parent_path() / "model_config.json" : fs::path(a.model_config);
    model = load_model(ckpt, mcfg);
    source = ckpt.string();
  } else if (!a.checkpoint.empty()) {
    throw IoError("checkpoint " + ckpt.string() + " does not exist");
  }

  const fs::path data = a.data.empty() ? ctx.out() / "data" : fs::path(a.data);
  std::vector<Sample> samples;
  if (fs::exists(data / "manifest.json")) {
    samples = load_split(data, "test");
    if (static_cast<int>(samples.size()) > a.images) samples.resize(static_cast<std::size_t>(a.images));
  }
  if (samples.empty()) {
    SceneSpec spec = SceneSpec::standard(ctx.g.seed);
    if (model) spec.image_size = model->config().input_size;
    for (int i = 0; i < a.images; ++i) samples.push_back(render_scene(spec, static_cast<std::uint64_t>(i)).sample);
  }
  if (static_cast<int>(samples.size()) < a.images) {
    ctx.log->warn("only " + std::to_string(samples.size()) + " test images available");
  }
  if (!model) {
    DetectorConfig cfg;
    cfg.input_size = samples.front().image.width;
    model = std::make_unique<Detector>(cfg, ctx.g.seed);
    calibrate_batchnorm(*model, samples);
    source = "random-init";
  }
  const BenchResult r = bench(*model, samples, a.warmup);
  const fs::path dir = ctx.out() / "bench";
  json j = r.to_json();
  j["model"] = source;
  write_json(dir / "bench.json", j);
  ctx.write_resolved(dir, {{"model", model->config().to_json()}});
  for (std::size_t i = 0; i < r.per_image_seconds.size(); ++i) {
    ctx.log->progress("event=bench_image index=" + std::to_string(i) + " seconds=" + num(r.per_image_seconds[i]));
  }
  ctx.log->progress("event=bench images=" + std::to_string(r.images) +
                    " detection_time_per_image_s=" + num(r.mean_seconds) + " fps=" + num(r.fps) +
                    " parameters=" + std::to_string(r.parameters) + " model=" + source);
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

struct GradArgs {
  std::string module = "all";
  double tol = 1e-4;
  int max_coords = 0;
};

void add_gradcheck(CLI::App& app, GradArgs& a) {
  std::vector<std::string> modules = gradcheck_modules();
  modules.push_back("all");
  app.add_option("--module", a.module, "Module to check")->check(CLI::IsMember(modules));
  app.add_option("--tol", a.tol, "Maximum relative error")->check(CLI::PositiveNumber);
  app.add_option("--max-coords", a.max_coords, "Coordinates per tensor (0 checks all)")
      ->check(CLI::NonNegativeNumber);
}

int run_gradcheck(const Context& ctx, const GradArgs& a) {
  SuiteOptions opt;
  opt.tolerance = a.tol;
  opt.seed = ctx.g.seed;
  opt.max_coords_per_tensor = a.max_coords;
  const auto entries = run_gradcheck_suite(a.module, opt);
  bool ok = true;
  for (const auto& e : entries) {
    ok = ok && e.passed;
    ctx.log->progress("event=gradcheck module=" + e.module + " check=" + e.name +
                      " max_rel_error=" + num(e.result.max_rel_error) +
                      " coords=" + std::to_string(e.result.coords_checked) +
                      " resamples=" + std::to_string(e.result.resamples) + " passed=" + (e.passed ? "1" : "0"));
  }
  const fs::path dir = ctx.out() / "gradcheck";
  write_json(dir / "gradcheck.json", suite_to_json(entries, a.tol));
  ctx.write_resolved(dir);
  ctx.log->progress(std::string("event=gradcheck_done passed=") + (ok ? "1" : "0") +
                    " checks=" + std::to_string(entries.size()));
  return ok ? kExitOk : kExitRuntime;
}

// ---- ablation -------------------------------------------------------------

int run_ablation(const Context& ctx, const TrainArgs& a) {
  const fs::path data = a.data.empty() ? ctx.out() / "data" : fs::path(a.data);
  const Dataset info = dataset_info(data);
  const DetectorConfig base = build_model(ctx, a.model, info);
  const TrainConfig tc = build_train(ctx, a);
  const auto train_set = load_split(data, "train");
  const auto val_set = load_split(data, "val");
  const fs::path anchors_file = a.model.anchors.empty() ? ctx.out() / "anchors.json" : fs::path(a.model.anchors);
  AnchorSet kmeans;
  if (fs::exists(anchors_file)) {
    kmeans = load_anchors(anchors_file);
  } else {
    std::vector<BoxDims> dims;
    for (const auto& s : train_set)
      for (const auto& o : s.objects) dims.push_back({o.box.width(), o.box.height()});
    KMeansOptions ko;
    ko.seed = ctx.g.seed;
    kmeans = kmeans_anchors(dims, ko).anchors;
    ctx.log->warn("no anchors file; clustered " + std::to_string(dims.size()) + " training boxes");
  }
  const fs::path dir = ctx.out() / "ablation";
  fs::create_directories(dir);
  ctx.write_resolved(dir, {{"base_model", base.to_json()}, {"train", tc.to_json()}, {"kmeans_anchors", kmeans.to_json()}});
  const auto rungs = ablation_ladder(base, kmeans, tc, train_set, val_set, dir,
                                     [&](const std::string& l) { ctx.log->progress(l); });
  write_text(dir / "ladder.csv", ladder_csv(rungs));
  write_text(dir / "ladder.md", ladder_markdown(rungs));
  json records = json::array();
  for (const auto& r : rungs) records.push_back({{"name", r.name}, {"record", r.record.to_json()}});
  write_json(dir / "ladder.json", records);
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    ctx.log->progress("event=rung index=" + std::to_string(i + 1) + " name=" + rungs[i].name +
                      " val_map=" + num(rungs[i].record.best_map) + " final_map=" + num(rungs[i].record.final_map));
  }
  ctx.log->progress("event=ablation_done rungs=" + std::to_string(rungs.size()) +
                    " table=" + (dir / "ladder.md").string());
  return kExitOk;
}

Level parse_level(const std::string& s) {
  if (s == "error") return Level::kError;
  if (s == "warn") return Level::kWarn;
  if (s == "debug") return Level::kDebug;
  return Level::kInfo;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Coordinate-attention and task-aware micro detector toolkit", "tacr");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values (command line and TACR_* variables win)");

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs and resolved configs");
  app.add_option("--log-level", g.log_level, "Verbosity")->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app.add_option("--threads", g.threads, "Worker thread cap")->check(CLI::PositiveNumber);

  SynthArgs synth;
  AnchorArgs anchors;
  TrainArgs train_args;
  EvalArgs eval;
  BenchArgs bench_args;
  GradArgs grad;
  TrainArgs ablation;

  std::vector<CLI::App*> subs;
  subs.push_back(app.add_subcommand("synth", "Generate a synthetic detection dataset"));
  add_synth(*subs.back(), synth);
  subs.push_back(app.add_subcommand("anchors", "Cluster box sizes into anchors with K-means"));
  add_anchors(*subs.back(), anchors);
  subs.push_back(app.add_subcommand("train", "Train the detector"));
  add_train_options(*subs.back(), train_args, 100);
  subs.push_back(app.add_subcommand("eval", "Evaluate a checkpoint (AP, mAP, PR curves)"));
  add_eval(*subs.back(), eval);
  subs.push_back(app.add_subcommand("bench", "Time single-image inference"));
  add_bench(*subs.back(), bench_args);
  subs.push_back(app.add_subcommand("gradcheck", "Finite-difference gradient checks"));
  add_gradcheck(*subs.back(), grad);
  subs.push_back(app.add_subcommand("ablation", "Train the six-rung ablation ladder"));
  add_train_options(*subs.back(), ablation, 30);

  attach_env(app);
  for (CLI::App* s : subs) {
    s->fallthrough();
    attach_env(*s);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }

  const Logger log(out, err, parse_level(g.log_level));
  Context ctx;
  ctx.g = g;
  ctx.app = &app;
  ctx.log = &log;
  try {
    for (CLI::App* s : subs) {
      if (!s->parsed()) continue;
      ctx.sub = s;
      const std::string name = s->get_name();
      log.debug("event=start command=" + name + " seed=" + std::to_string(g.seed));
      if (name == "synth") return run_synth(ctx, synth);
      if (name == "anchors") return run_anchors(ctx, anchors);
      if (name == "train") return run_train(ctx, train_args);
      if (name == "eval") return run_eval(ctx, eval);
      if (name == "bench") return run_bench(ctx, bench_args);
      if (name == "gradcheck") return run_gradcheck(ctx, grad);
      if (name == "ablation") return run_ablation(ctx, ablation);
    }
    err << "error: no subcommand\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace tacr::cli
