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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacr/detection_types.hpp"
#include "tacr/tensor.hpp"

namespace tacr {

enum class ShapeKind { kRectangle, kEllipse, kCross, kRing };

std::string to_string(ShapeKind k);
ShapeKind parse_shape_kind(const std::string& name);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// One object class: a shape family, a base color and a size range.
struct ClassStyle {
  std::string name;
  ShapeKind shape = ShapeKind::kRectangle;
  Rgb color;
  int min_w = 8, max_w = 16;
  int min_h = 8, max_h = 16;
  double weight = 1.0;  // relative sampling frequency
};

enum class OverlapPolicy { kNoOverlap, kAllowOverlap };

struct SceneSpec {
  int image_size = 64;
  std::vector<ClassStyle> classes;
  int min_objects = 1;
  int max_objects = 3;
  OverlapPolicy overlap = OverlapPolicy::kNoOverlap;
  double noise_amplitude = 16.0;  // uniform +/- per channel
  int color_jitter = 20;          // per-object base color jitter
  int max_placement_retries = 50;
  std::uint64_t seed = 42;

  // Four classes named after the behaviour categories drink, face, phone
  // and smoke, each with its own shape family and color.
  static SceneSpec standard(std::uint64_t seed = 42);

  void validate() const;
  std::vector<std::string> class_names() const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

struct Sample {
  std::string id;
  Image image;
  std::vector<GroundTruth> objects;
};

struct RenderedScene {
  Sample sample;
  // Object index per pixel, -1 for background.
  std::vector<int> instance_mask;
  int dropped_objects = 0;
};

// Deterministic in (spec.seed, index).
RenderedScene render_scene(const SceneSpec& spec, std::uint64_t index);

struct SplitCounts {
  int train = 0, val = 0, test = 0;
};

// Floor each share, then hand the remainder to the largest fractional parts
// (earlier split on ties). Fractions must sum to 1 within 1e-9.
SplitCounts split_counts(int n, const std::array<double, 3>& fractions);

inline constexpr std::array<double, 3> kDefaultSplit{0.81, 0.09, 0.10};

struct GenerateReport {
  nlohmann::json manifest;
  int dropped_objects = 0;
};

// Writes {split}/images/*.ppm, {split}/annotations/*.json and manifest.json.
GenerateReport generate_dataset(const SceneSpec& spec, int n_images, const std::array<double, 3>& fractions,
                                const std::filesystem::path& root, int threads = 1);

// Loads one split, sorted by annotation file name.
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split);
nlohmann::json read_manifest(const std::filesystem::path& root);

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// {image, width, height, objects: [{class, x1, y1, x2, y2}]}, class by name.
nlohmann::json annotation_to_json(const Sample& sample, const std::string& image_file,
                                  std::span<const std::string> class_names);
std::vector<GroundTruth> objects_from_json(const nlohmann::json& j, std::span<const std::string> class_names);

// [N,3,H,W] with values scaled to [0, 1].
Tensor images_to_tensor(std::span<const Image* const> images);

enum AugmentOp : unsigned {
  kAugHFlip = 1u << 0,
  kAugVFlip = 1u << 1,
  kAugColorJitter = 1u << 2,
  kAugNoise = 1u << 3,
};

unsigned parse_augment_ops(const std::string& csv);

struct Augmented {
  Image image;
  std::vector<GroundTruth> objects;
};

// Geometric ops move the boxes with the pixels; color and noise ops leave
// them untouched.
Augmented augment(const Image& image, std::span<const GroundTruth> objects, unsigned ops, std::uint64_t seed);

Box hflip_box(const Box& b, double width);
Box vflip_box(const Box& b, double height);

}  // namespace tacr
