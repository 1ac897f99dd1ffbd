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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tacr {

struct BoxDims {
  double w = 0.0;
  double h = 0.0;
  bool operator==(const BoxDims&) const = default;
};

enum class AnchorDistance { kEuclidean, kIou };

std::string to_string(AnchorDistance d);
AnchorDistance parse_anchor_distance(const std::string& name);

// K (w, h) priors sorted by area ascending.
struct AnchorSet {
  std::vector<BoxDims> anchors;
  double inertia = 0.0;
  AnchorDistance distance = AnchorDistance::kEuclidean;

  int k() const { return static_cast<int>(anchors.size()); }
  void validate() const;

  // Contiguous split of the area-sorted anchors over `scales` detection
  // scales, finest scale first; earlier scales take the remainder.
  std::vector<std::vector<BoxDims>> partition(int scales) const;

  nlohmann::json to_json() const;
  static AnchorSet from_json(const nlohmann::json& j);
};

inline constexpr int kDefaultAnchorCount = 9;

struct KMeansOptions {
  int k = kDefaultAnchorCount;
  std::uint64_t seed = 42;
  int max_iters = 300;
  double tol = 1e-6;  // relative improvement of J
  AnchorDistance distance = AnchorDistance::kEuclidean;
};

struct KMeansResult {
  AnchorSet anchors;
  // Cluster of each input point w.r.t. the returned anchors (nearest).
  std::vector<int> labels;
  // Objective after every Lloyd iteration.
  std::vector<double> history;
  int iterations = 0;
};

// Sum of squared Euclidean distances from each point to its nearest centroid.
double kmeans_objective(std::span<const BoxDims> points, std::span<const BoxDims> centroids);

// Lloyd iterations from k-means++ seeding. ValidationError on empty input,
// non-positive dims, k < 1 or k larger than the number of distinct points.
KMeansResult kmeans_anchors(std::span<const BoxDims> dims, const KMeansOptions& options);

// Lloyd iterations from the given centroids.
KMeansResult kmeans_refine(std::span<const BoxDims> dims, std::span<const BoxDims> centroids,
                           const KMeansOptions& options);

enum class AnnotationFormat { kVocXml, kJson };
AnnotationFormat parse_annotation_format(const std::string& name);

struct LoadedDims {
  std::vector<BoxDims> dims;
  int skipped = 0;  // zero or negative extent boxes
  int files = 0;
};

// Reads box sizes from one annotation file or every matching file of a
// directory (sorted by name). With `target_size`, sizes are rescaled from each
// image's own size to (W, H).
LoadedDims load_box_dims(const std::filesystem::path& annotations, AnnotationFormat format,
                         std::optional<std::pair<int, int>> target_size = std::nullopt);

// COCO-lineage anchors divided by 10 (640 -> 64 input).
AnchorSet default_anchors();

}  // namespace tacr
