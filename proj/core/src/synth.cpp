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

#include "tacr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "tacr/error.hpp"
#include "tacr/rng.hpp"

namespace tacr {

namespace fs = std::filesystem;

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kRectangle:
      return "rectangle";
    case ShapeKind::kEllipse:
      return "ellipse";
    case ShapeKind::kCross:
      return "cross";
    case ShapeKind::kRing:
      return "ring";
  }
  return "rectangle";
}

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "rectangle") return ShapeKind::kRectangle;
  if (name == "ellipse") return ShapeKind::kEllipse;
  if (name == "cross") return ShapeKind::kCross;
  if (name == "ring") return ShapeKind::kRing;
  throw ConfigError("unknown shape '" + name + "'");
}

SceneSpec SceneSpec::standard(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  s.classes = {
      {"drink", ShapeKind::kRing, {220, 60, 60}, 10, 20, 10, 20, 1.0},
      {"face", ShapeKind::kEllipse, {235, 200, 150}, 14, 26, 16, 28, 1.0},
      {"phone", ShapeKind::kRectangle, {40, 70, 220}, 6, 12, 10, 20, 1.0},
      {"smoke", ShapeKind::kCross, {60, 200, 80}, 8, 18, 8, 18, 1.0},
  };
  return s;
}

void SceneSpec::validate() const {
  if (image_size < 8) throw ConfigError("scene: image size must be >= 8");
  if (classes.size() < 2) throw ConfigError("scene: at least two classes are required");
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("scene: invalid objects-per-image range");
  if (noise_amplitude < 0.0 || color_jitter < 0) throw ConfigError("scene: noise and jitter must be >= 0");
  for (const auto& c : classes) {
    if (c.min_w < 4 || c.min_h < 4 || c.max_w < c.min_w || c.max_h < c.min_h) {
      throw ConfigError("scene: class '" + c.name + "' has an invalid size range (minimum extent is 4 px)");
    }
    if (c.max_w > image_size || c.max_h > image_size) {
      throw ConfigError("scene: class '" + c.name + "' does not fit in the image");
    }
    if (!(c.weight > 0.0)) throw ConfigError("scene: class '" + c.name + "' needs a positive weight");
  }
}

std::vector<std::string> SceneSpec::class_names() const {
  std::vector<std::string> names;
  for (const auto& c : classes) names.push_back(c.name);
  return names;
}

nlohmann::json SceneSpec::to_json() const {
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) {
    cls.push_back({{"name", c.name},
                   {"shape", tacr::to_string(c.shape)},
                   {"color", {c.color.r, c.color.g, c.color.b}},
                   {"width_range", {c.min_w, c.max_w}},
                   {"height_range", {c.min_h, c.max_h}},
                   {"weight", c.weight}});
  }
  return {{"image_size", image_size},
          {"classes", cls},
          {"objects_per_image", {min_objects, max_objects}},
          {"overlap", overlap == OverlapPolicy::kNoOverlap ? "none" : "allow"},
          {"noise_amplitude", noise_amplitude},
          {"color_jitter", color_jitter},
          {"max_placement_retries", max_placement_retries},
          {"seed", seed}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.image_size = j.at("image_size").get<int>();
    for (const auto& c : j.at("classes")) {
      ClassStyle st;
      st.name = c.at("name").get<std::string>();
      st.shape = parse_shape_kind(c.at("shape").get<std::string>());
      st.color = {c.at("color").at(0).get<std::uint8_t>(), c.at("color").at(1).get<std::uint8_t>(),
                  c.at("color").at(2).get<std::uint8_t>()};
      st.min_w = c.at("width_range").at(0).get<int>();
      st.max_w = c.at("width_range").at(1).get<int>();
      st.min_h = c.at("height_range").at(0).get<int>();
      st.max_h = c.at("height_range").at(1).get<int>();
      st.weight = c.value("weight", 1.0);
      s.classes.push_back(st);
    }
    s.min_objects = j.at("objects_per_image").at(0).get<int>();
    s.max_objects = j.at("objects_per_image").at(1).get<int>();
    s.overlap = j.value("overlap", std::string("none")) == "none" ? OverlapPolicy::kNoOverlap
                                                                  : OverlapPolicy::kAllowOverlap;
    s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
    s.color_jitter = j.value("color_jitter", s.color_jitter);
    s.max_placement_retries = j.value("max_placement_retries", s.max_placement_retries);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

// Pixel (px, py) of an object occupying [x1, x1+w) x [y1, y1+h), in local
// coordinates (lx, ly).
bool shape_covers(ShapeKind kind, int lx, int ly, int w, int h) {
  const double u = 2.0 * (lx + 0.5) / w - 1.0;
  const double v = 2.0 * (ly + 0.5) / h - 1.0;
  switch (kind) {
    case ShapeKind::kRectangle:
      return true;
    case ShapeKind::kEllipse:
      return u * u + v * v <= 1.0;
    case ShapeKind::kRing: {
      if (u * u + v * v > 1.0) return false;
      const double t = std::max(2, std::min(w, h) / 4);
      const double iw = w - 2.0 * t, ih = h - 2.0 * t;
      if (iw <= 0.0 || ih <= 0.0) return true;
      const double iu = (lx + 0.5 - t) / iw * 2.0 - 1.0;
      const double iv = (ly + 0.5 - t) / ih * 2.0 - 1.0;
      return iu * iu + iv * iv > 1.0;
    }
    case ShapeKind::kCross: {
      const int tw = std::max(2, w / 3), th = std::max(2, h / 3);
      const int x0 = (w - tw) / 2, y0 = (h - th) / 2;
      return (lx >= x0 && lx < x0 + tw) || (ly >= y0 && ly < y0 + th);
    }
  }
  return false;
}

int pick_class(const SceneSpec& spec, Rng& rng) {
  double total = 0.0;
  for (const auto& c : spec.classes) total += c.weight;
  double r = rng.uniform() * total;
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    if (r < spec.classes[i].weight) return static_cast<int>(i);
    r -= spec.classes[i].weight;
  }
  return static_cast<int>(spec.classes.size()) - 1;
}

bool intersects(const Box& a, const Box& b) {
  return std::min(a.x2, b.x2) > std::max(a.x1, b.x1) && std::min(a.y2, b.y2) > std::max(a.y1, b.y1);
}

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::string image_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

}  // namespace

RenderedScene render_scene(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng = Rng::substream(spec.seed, index);
  const int S = spec.image_size;
  RenderedScene out;
  out.sample.id = image_name(static_cast<int>(index));
  out.sample.image = Image(S, S);
  out.instance_mask.assign(static_cast<std::size_t>(S) * S, -1);

  const int n_objects = rng.uniform_int(spec.min_objects, spec.max_objects);
  std::vector<Rgb> colors;
  for (int k = 0; k < n_objects; ++k) {
    const int cls = pick_class(spec, rng);
    const ClassStyle& style = spec.classes[static_cast<std::size_t>(cls)];
    bool placed = false;
    for (int attempt = 0; attempt <= spec.max_placement_retries && !placed; ++attempt) {
      const int w = rng.uniform_int(style.min_w, style.max_w);
      const int h = rng.uniform_int(style.min_h, style.max_h);
      const int x1 = rng.uniform_int(0, S - w);
      const int y1 = rng.uniform_int(0, S - h);
      const Box box{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x1 + w),
                    static_cast<double>(y1 + h)};
      if (spec.overlap == OverlapPolicy::kNoOverlap) {
        bool clash = false;
        for (const auto& o : out.sample.objects) clash = clash || intersects(o.box, box);
        if (clash) continue;
      }
      out.sample.objects.push_back({box, cls});
      placed = true;
    }
    if (!placed) {
      ++out.dropped_objects;
      continue;
    }
    auto jitter = [&](std::uint8_t c) { return clamp_u8(c + rng.uniform_int(-spec.color_jitter, spec.color_jitter)); };
    colors.push_back({jitter(style.color.r), jitter(style.color.g), jitter(style.color.b)});
  }

  const double base = rng.uniform(70.0, 150.0);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-15.0, 15.0);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < 3; ++c) out.sample.image.at(x, y, c) = clamp_u8(base + tint[c]);

  for (std::size_t k = 0; k < out.sample.objects.size(); ++k) {
    const GroundTruth& g = out.sample.objects[k];
    const ShapeKind kind = spec.classes[static_cast<std::size_t>(g.class_id)].shape;
    const int x1 = static_cast<int>(g.box.x1), y1 = static_cast<int>(g.box.y1);
    const int w = static_cast<int>(g.box.width()), h = static_cast<int>(g.box.height());
    for (int ly = 0; ly < h; ++ly)
      for (int lx = 0; lx < w; ++lx) {
        if (!shape_covers(kind, lx, ly, w, h)) continue;
        const int x = x1 + lx, y = y1 + ly;
        out.instance_mask[static_cast<std::size_t>(y) * S + x] = static_cast<int>(k);
        out.sample.image.at(x, y, 0) = colors[k].r;
        out.sample.image.at(x, y, 1) = colors[k].g;
        out.sample.image.at(x, y, 2) = colors[k].b;
      }
  }

  if (spec.noise_amplitude > 0.0) {
    for (auto& v : out.sample.image.rgb) v = clamp_u8(v + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude));
  }
  return out;
}

SplitCounts split_counts(int n, const std::array<double, 3>& fractions) {
  if (n < 0) throw ValidationError("split: image count must be >= 0");
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ValidationError("split: fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split: fractions must sum to 1");
  std::array<int, 3> counts{};
  std::array<double, 3> rest{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double share = n * fractions[i];
    counts[i] = static_cast<int>(std::floor(share + 1e-9));
    rest[i] = share - counts[i];
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (rest[i] > rest[best]) best = i;
    }
    ++counts[best];
    rest[best] = -1.0;
    ++assigned;
  }
  return {counts[0], counts[1], counts[2]};
}

GenerateReport generate_dataset(const SceneSpec& spec, int n_images, const std::array<double, 3>& fractions,
                                const fs::path& root, int threads) {
  spec.validate();
  const SplitCounts counts = split_counts(n_images, fractions);
  const std::array<std::pair<std::string, int>, 3> splits{
      {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}};
  const std::vector<std::string> names = spec.class_names();
  try {
    for (const auto& [split, _] : splits) {
      fs::create_directories(root / split / "images");
      fs::create_directories(root / split / "annotations");
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create dataset directories: ") + e.what());
  }

  std::vector<std::string> split_of(static_cast<std::size_t>(n_images));
  {
    int i = 0;
    for (const auto& [split, count] : splits)
      for (int k = 0; k < count; ++k) split_of[static_cast<std::size_t>(i++)] = split;
  }

  std::vector<RenderedScene> scenes(static_cast<std::size_t>(n_images));
  auto work = [&](int shard, int shards) {
    for (int i = shard; i < n_images; i += shards) {
      scenes[static_cast<std::size_t>(i)] = render_scene(spec, static_cast<std::uint64_t>(i));
    }
  };
  const int workers = std::max(1, std::min(threads, n_images));
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t) pool.emplace_back(work, t, workers);
  work(0, workers);
  for (auto& t : pool) t.join();

  GenerateReport report;
  std::map<std::string, std::vector<int>> per_class;
  std::map<std::string, int> per_split_images;
  for (const auto& [split, _] : splits) {
    per_class[split].assign(names.size(), 0);
    per_split_images[split] = 0;
  }
  for (int i = 0; i < n_images; ++i) {
    const RenderedScene& sc = scenes[static_cast<std::size_t>(i)];
    const std::string& split = split_of[static_cast<std::size_t>(i)];
    const std::string file = sc.sample.id + ".ppm";
    write_ppm(root / split / "images" / file, sc.sample.image);
    std::ofstream ann(root / split / "annotations" / (sc.sample.id + ".json"));
    if (!ann) throw IoError("cannot write annotation for image " + sc.sample.id);
    ann << annotation_to_json(sc.sample, file, names).dump(2) << '\n';
    for (const auto& o : sc.sample.objects) ++per_class[split][static_cast<std::size_t>(o.class_id)];
    ++per_split_images[split];
    report.dropped_objects += sc.dropped_objects;
  }

  nlohmann::json m;
  m["n_images"] = n_images;
  m["classes"] = names;
  m["fractions"] = fractions;
  m["image_format"] = "ppm";
  m["dropped_objects"] = report.dropped_objects;
  for (const auto& [split, _] : splits) {
    nlohmann::json inst;
    for (std::size_t c = 0; c < names.size(); ++c) inst[names[c]] = per_class[split][c];
    m["splits"][split] = {{"images", per_split_images[split]}, {"instances", inst}};
  }
  m["scene_spec"] = spec.to_json();
  std::ofstream mf(root / "manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + root.string());
  mf << m.dump(2) << '\n';
  report.manifest = m;
  return report;
}

nlohmann::json read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + root.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((root / "manifest.json").string() + ": " + e.what());
  }
}

std::vector<Sample> load_split(const fs::path& root, const std::string& split) {
  const nlohmann::json manifest = read_manifest(root);
  const auto names = manifest.at("classes").get<std::vector<std::string>>();
  const fs::path ann_dir = root / split / "annotations";
  if (!fs::is_directory(ann_dir)) throw IoError("missing split directory " + ann_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ann_dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Sample> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
    Sample s;
    s.id = f.stem().string();
    s.image = read_ppm(root / split / "images" / j.at("image").get<std::string>());
    s.objects = objects_from_json(j, names);
    out.push_back(std::move(s));
  }
  return out;
}

void write_ppm(const fs::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw ParseError(path.string() + ": not an 8-bit P6 PPM");
  in.get();
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw ParseError(path.string() + ": truncated pixel data");
  return img;
}

nlohmann::json annotation_to_json(const Sample& sample, const std::string& image_file,
                                  std::span<const std::string> class_names) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : sample.objects) {
    objs.push_back({{"class", class_names[static_cast<std::size_t>(o.class_id)]},
                    {"x1", o.box.x1},
                    {"y1", o.box.y1},
                    {"x2", o.box.x2},
                    {"y2", o.box.y2}});
  }
  return {{"image", image_file}, {"width", sample.image.width}, {"height", sample.image.height}, {"objects", objs}};
}

std::vector<GroundTruth> objects_from_json(const nlohmann::json& j, std::span<const std::string> class_names) {
  std::vector<GroundTruth> out;
  try {
    for (const auto& o : j.at("objects")) {
      GroundTruth g;
      const auto& c = o.at("class");
      if (c.is_number_integer()) {
        g.class_id = c.get<int>();
      } else {
        const auto name = c.get<std::string>();
        auto it = std::find(class_names.begin(), class_names.end(), name);
        if (it == class_names.end()) throw ParseError("annotation: unknown class '" + name + "'");
        g.class_id = static_cast<int>(it - class_names.begin());
      }
      if (g.class_id < 0 || g.class_id >= static_cast<int>(class_names.size())) {
        throw ParseError("annotation: class id out of range");
      }
      g.box = {o.at("x1").get<double>(), o.at("y1").get<double>(), o.at("x2").get<double>(),
               o.at("y2").get<double>()};
      out.push_back(g);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotation: ") + e.what());
  }
  return out;
}

Tensor images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw DimensionError("images_to_tensor: empty batch");
  const int W = images[0]->width, H = images[0]->height;
  Tensor t({static_cast<int>(images.size()), 3, H, W});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.width != W || img.height != H) throw DimensionError("images_to_tensor: mixed image sizes in batch");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) t.at(static_cast<int>(n), c, y, x) = img.at(x, y, c) / 255.0;
  }
  return t;
}

unsigned parse_augment_ops(const std::string& csv) {
  unsigned ops = 0;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    if (tok == "hflip") {
      ops |= kAugHFlip;
    } else if (tok == "vflip") {
      ops |= kAugVFlip;
    } else if (tok == "color-jitter") {
      ops |= kAugColorJitter;
    } else if (tok == "noise") {
      ops |= kAugNoise;
    } else {
      throw ConfigError("unknown augmentation '" + tok + "'");
    }
  }
  return ops;
}

Box hflip_box(const Box& b, double width) { return {width - b.x2, b.y1, width - b.x1, b.y2}; }

Box vflip_box(const Box& b, double height) { return {b.x1, height - b.y2, b.x2, height - b.y1}; }

Augmented augment(const Image& image, std::span<const GroundTruth> objects, unsigned ops, std::uint64_t seed) {
  Rng rng = Rng::substream(seed, "augment");
  Augmented out{image, std::vector<GroundTruth>(objects.begin(), objects.end())};
  const int W = image.width, H = image.height;
  if (ops & kAugHFlip) {
    Image f(W, H);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) f.at(W - 1 - x, y, c) = out.image.at(x, y, c);
    out.image = std::move(f);
    for (auto& o : out.objects) o.box = hflip_box(o.box, W);
  }
  if (ops & kAugVFlip) {
    Image f(W, H);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) f.at(x, H - 1 - y, c) = out.image.at(x, y, c);
    out.image = std::move(f);
    for (auto& o : out.objects) o.box = vflip_box(o.box, H);
  }
  if (ops & kAugColorJitter) {
    const double gain = rng.uniform(0.8, 1.2);
    const double bias = rng.uniform(-20.0, 20.0);
    for (auto& v : out.image.rgb) v = clamp_u8(gain * v + bias);
  }
  if (ops & kAugNoise) {
    for (auto& v : out.image.rgb) v = clamp_u8(v + rng.uniform(-12.0, 12.0));
  }
  return out;
}

}  // namespace tacr
