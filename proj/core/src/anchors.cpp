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

#include "tacr/anchors.hpp"

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "tacr/error.hpp"
#include "tacr/rng.hpp"

namespace tacr {

std::string to_string(AnchorDistance d) { return d == AnchorDistance::kIou ? "iou" : "euclidean"; }

AnchorDistance parse_anchor_distance(const std::string& name) {
  if (name == "euclidean") return AnchorDistance::kEuclidean;
  if (name == "iou") return AnchorDistance::kIou;
  throw ConfigError("unknown anchor distance '" + name + "' (expected euclidean or iou)");
}

void AnchorSet::validate() const {
  if (anchors.empty()) throw ConfigError("anchor set is empty");
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (!(anchors[i].w > 0.0) || !(anchors[i].h > 0.0)) throw ConfigError("anchor with non-positive size");
    if (i > 0 && anchors[i].w * anchors[i].h < anchors[i - 1].w * anchors[i - 1].h) {
      throw ConfigError("anchors must be sorted by area ascending");
    }
  }
}

std::vector<std::vector<BoxDims>> AnchorSet::partition(int scales) const {
  if (scales < 1 || scales > k()) {
    throw ConfigError("cannot split " + std::to_string(k()) + " anchors over " + std::to_string(scales) + " scales");
  }
  std::vector<std::vector<BoxDims>> out(static_cast<std::size_t>(scales));
  const int base = k() / scales, extra = k() % scales;
  int at = 0;
  for (int s = 0; s < scales; ++s) {
    const int n = base + (s < extra ? 1 : 0);
    out[s].assign(anchors.begin() + at, anchors.begin() + at + n);
    at += n;
  }
  return out;
}

nlohmann::json AnchorSet::to_json() const {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& d : anchors) a.push_back({d.w, d.h});
  return {{"k", k()}, {"distance", tacr::to_string(distance)}, {"inertia", inertia}, {"anchors", a}};
}

AnchorSet AnchorSet::from_json(const nlohmann::json& j) {
  AnchorSet s;
  try {
    for (const auto& a : j.at("anchors")) s.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    s.inertia = j.value("inertia", 0.0);
    s.distance = parse_anchor_distance(j.value("distance", std::string("euclidean")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("anchor set: ") + e.what());
  }
  if (j.contains("k") && j.at("k").get<int>() != s.k()) throw ParseError("anchor set: k does not match anchor count");
  s.validate();
  return s;
}

namespace {

double sq_dist(const BoxDims& a, const BoxDims& b) {
  const double dw = a.w - b.w, dh = a.h - b.h;
  return dw * dw + dh * dh;
}

double shape_iou(const BoxDims& a, const BoxDims& b) {
  const double inter = std::min(a.w, b.w) * std::min(a.h, b.h);
  return inter / (a.w * a.h + b.w * b.h - inter);
}

double distance(const BoxDims& p, const BoxDims& c, AnchorDistance d) {
  return d == AnchorDistance::kEuclidean ? sq_dist(p, c) : 1.0 - shape_iou(p, c);
}

int nearest(const BoxDims& p, std::span<const BoxDims> centroids, AnchorDistance d) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    const double v = distance(p, centroids[i], d);
    if (v < best_d) {
      best_d = v;
      best = static_cast<int>(i);
    }
  }
  return best;
}

void validate_points(std::span<const BoxDims> dims, int k) {
  if (dims.empty()) throw ValidationError("k-means: no box dimensions given");
  if (k < 1) throw ValidationError("k-means: k must be >= 1");
  std::set<std::pair<double, double>> distinct;
  for (const auto& d : dims) {
    if (!(d.w > 0.0) || !(d.h > 0.0)) throw ValidationError("k-means: box dimensions must be positive");
    distinct.emplace(d.w, d.h);
  }
  if (static_cast<std::size_t>(k) > distinct.size()) {
    throw ValidationError("k-means: k=" + std::to_string(k) + " exceeds the " + std::to_string(distinct.size()) +
                          " distinct box sizes; reduce k to at most " + std::to_string(distinct.size()));
  }
}

std::vector<BoxDims> kmeans_pp_init(std::span<const BoxDims> dims, int k, Rng& rng) {
  std::vector<BoxDims> centroids;
  centroids.push_back(dims[rng.next() % dims.size()]);
  std::vector<double> d2(dims.size());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(dims[i], c));
      d2[i] = best;
      total += best;
    }
    // Validation guarantees an unused distinct point, so total > 0.
    double r = rng.uniform() * total;
    std::size_t pick = 0;
    for (; pick + 1 < dims.size(); ++pick) {
      if (d2[pick] > 0.0 && r < d2[pick]) break;
      r -= d2[pick];
    }
    while (d2[pick] <= 0.0) pick = (pick + 1) % dims.size();
    centroids.push_back(dims[pick]);
  }
  return centroids;
}

double assignment_cost(std::span<const BoxDims> dims, std::span<const BoxDims> centroids,
                       std::span<const int> labels, AnchorDistance d) {
  double j = 0.0;
  for (std::size_t i = 0; i < dims.size(); ++i) j += distance(dims[i], centroids[labels[i]], d);
  return j;
}

KMeansResult lloyd(std::span<const BoxDims> dims, std::vector<BoxDims> centroids, const KMeansOptions& options) {
  const int k = static_cast<int>(centroids.size());
  KMeansResult result;
  std::vector<int> labels(dims.size(), -1);
  double previous = std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const int l = nearest(dims[i], centroids, options.distance);
      changed = changed || l != labels[i];
      labels[i] = l;
    }
    // Update in a fixed order so the result is independent of scheduling.
    std::vector<double> sw(k, 0.0), sh(k, 0.0);
    std::vector<int> count(k, 0);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      sw[labels[i]] += dims[i].w;
      sh[labels[i]] += dims[i].h;
      ++count[labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) centroids[c] = {sw[c] / count[c], sh[c] / count[c]};
    }
    const double j = assignment_cost(dims, centroids, labels, options.distance);
    // Empty clusters move to the point farthest from its own centroid. The
    // move does not change J for the current assignment.
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < dims.size(); ++i) {
        const double v = distance(dims[i], centroids[labels[i]], options.distance);
        if (v > far_d) {
          far_d = v;
          far = i;
        }
      }
      centroids[c] = dims[far];
      changed = true;
    }
    result.history.push_back(j);
    result.iterations = it + 1;
    if (!changed) break;
    if (j == 0.0 || (std::isfinite(previous) && (previous - j) < options.tol * previous)) break;
    previous = j;
  }

  std::sort(centroids.begin(), centroids.end(),
            [](const BoxDims& a, const BoxDims& b) { return a.w * a.h < b.w * b.h; });
  result.labels.resize(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) result.labels[i] = nearest(dims[i], centroids, options.distance);
  result.anchors.anchors = centroids;
  result.anchors.distance = options.distance;
  result.anchors.inertia = assignment_cost(dims, centroids, result.labels, options.distance);
  return result;
}

}  // namespace

double kmeans_objective(std::span<const BoxDims> points, std::span<const BoxDims> centroids) {
  double j = 0.0;
  for (const auto& p : points) j += sq_dist(p, centroids[nearest(p, centroids, AnchorDistance::kEuclidean)]);
  return j;
}

KMeansResult kmeans_anchors(std::span<const BoxDims> dims, const KMeansOptions& options) {
  validate_points(dims, options.k);
  Rng rng = Rng::substream(options.seed, "kmeans");
  return lloyd(dims, kmeans_pp_init(dims, options.k, rng), options);
}

KMeansResult kmeans_refine(std::span<const BoxDims> dims, std::span<const BoxDims> centroids,
                           const KMeansOptions& options) {
  validate_points(dims, static_cast<int>(centroids.size()));
  return lloyd(dims, std::vector<BoxDims>(centroids.begin(), centroids.end()), options);
}

AnnotationFormat parse_annotation_format(const std::string& name) {
  if (name == "voc-xml" || name == "voc") return AnnotationFormat::kVocXml;
  if (name == "json") return AnnotationFormat::kJson;
  throw ConfigError("unknown annotation format '" + name + "' (expected voc-xml or json)");
}

namespace {

struct RawBox {
  double x1, y1, x2, y2;
};

struct FileBoxes {
  double width = 0.0, height = 0.0;
  std::vector<RawBox> boxes;
};

FileBoxes read_voc(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(path.string(), tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(path.string() + ": malformed XML: " + e.message());
  }
  FileBoxes out;
  auto field = [&](const pt::ptree& node, const std::string& key) {
    try {
      return node.get<double>(key);
    } catch (const pt::ptree_error&) {
      throw ParseError(path.string() + ": missing or non-numeric field '" + key + "'");
    }
  };
  const auto root = tree.get_child_optional("annotation");
  if (!root) throw ParseError(path.string() + ": missing field 'annotation'");
  if (root->get_child_optional("size")) {
    out.width = field(*root, "size.width");
    out.height = field(*root, "size.height");
  }
  for (const auto& [key, node] : *root) {
    if (key != "object") continue;
    out.boxes.push_back({field(node, "bndbox.xmin"), field(node, "bndbox.ymin"), field(node, "bndbox.xmax"),
                         field(node, "bndbox.ymax")});
  }
  return out;
}

FileBoxes read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": malformed JSON: " + e.what());
  }
  FileBoxes out;
  auto num = [&](const nlohmann::json& node, const char* key) {
    if (!node.contains(key) || !node.at(key).is_number()) {
      throw ParseError(path.string() + ": missing or non-numeric field '" + key + "'");
    }
    return node.at(key).get<double>();
  };
  out.width = j.contains("width") ? num(j, "width") : 0.0;
  out.height = j.contains("height") ? num(j, "height") : 0.0;
  if (!j.contains("objects") || !j.at("objects").is_array()) {
    throw ParseError(path.string() + ": missing field 'objects'");
  }
  for (const auto& o : j.at("objects")) out.boxes.push_back({num(o, "x1"), num(o, "y1"), num(o, "x2"), num(o, "y2")});
  return out;
}

}  // namespace

LoadedDims load_box_dims(const std::filesystem::path& annotations, AnnotationFormat format,
                         std::optional<std::pair<int, int>> target_size) {
  namespace fs = std::filesystem;
  const std::string ext = format == AnnotationFormat::kVocXml ? ".xml" : ".json";
  std::vector<fs::path> files;
  if (fs::is_directory(annotations)) {
    for (const auto& e : fs::directory_iterator(annotations)) {
      if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(annotations)) {
    files.push_back(annotations);
  } else {
    throw IoError("annotation path does not exist: " + annotations.string());
  }

  LoadedDims out;
  for (const auto& f : files) {
    const FileBoxes fb = format == AnnotationFormat::kVocXml ? read_voc(f) : read_json(f);
    ++out.files;
    if (target_size && (fb.width <= 0.0 || fb.height <= 0.0)) {
      throw ParseError(f.string() + ": image size required for rescaling");
    }
    for (const auto& b : fb.boxes) {
      double w = b.x2 - b.x1, h = b.y2 - b.y1;
      if (!(w > 0.0) || !(h > 0.0)) {
        ++out.skipped;
        continue;
      }
      if (target_size) {
        w *= target_size->first / fb.width;
        h *= target_size->second / fb.height;
      }
      out.dims.push_back({w, h});
    }
  }
  return out;
}

AnchorSet default_anchors() {
  AnchorSet s;
  s.anchors = {{1.0, 1.3}, {1.6, 3.0}, {3.3, 2.3}, {3.0, 6.1}, {6.2, 4.5},
               {5.9, 11.9}, {11.6, 9.0}, {15.6, 19.8}, {37.3, 32.6}};
  return s;
}

}  // namespace tacr
