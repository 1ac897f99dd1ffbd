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

#include "tacr/anchors.hpp"
#include "tacr/error.hpp"
#include "tacr/rng.hpp"
#include "test_util.hpp"

namespace tacr {
namespace {

std::vector<BoxDims> random_dims(Rng& rng, int n) {
  std::vector<BoxDims> d;
  for (int i = 0; i < n; ++i) d.push_back({rng.uniform(1.0, 60.0), rng.uniform(1.0, 60.0)});
  return d;
}

std::vector<BoxDims> two_clusters(Rng& rng, int per_cluster) {
  std::vector<BoxDims> d;
  for (int i = 0; i < per_cluster; ++i) {
    d.push_back({rng.normal(10.0, 0.5), rng.normal(20.0, 0.5)});
    d.push_back({rng.normal(100.0, 0.5), rng.normal(80.0, 0.5)});
  }
  return d;
}

TEST(KMeans, SingleClusterIsTheMean) {
  const std::vector<BoxDims> d{{10, 10}, {20, 20}};
  KMeansOptions o;
  o.k = 1;
  const auto r = kmeans_anchors(d, o);
  ASSERT_EQ(r.anchors.k(), 1);
  EXPECT_EQ(r.anchors.anchors[0], (BoxDims{15, 15}));
  // Each point sits at squared distance 5^2 + 5^2 from the centroid.
  EXPECT_EQ(r.anchors.inertia, 100.0);
}

TEST(KMeans, SingleClusterMeanOnRandomData) {
  Rng rng(3);
  const auto d = random_dims(rng, 37);
  double sw = 0.0, sh = 0.0;
  for (const auto& p : d) {
    sw += p.w;
    sh += p.h;
  }
  KMeansOptions o;
  o.k = 1;
  const auto r = kmeans_anchors(d, o);
  EXPECT_NEAR(r.anchors.anchors[0].w, sw / 37.0, 1e-12);
  EXPECT_NEAR(r.anchors.anchors[0].h, sh / 37.0, 1e-12);
}

TEST(KMeans, RecoversTwoPlantedClusters) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto d = two_clusters(rng, 100);
    KMeansOptions o;
    o.k = 2;
    o.seed = seed;
    const auto r = kmeans_anchors(d, o);
    ASSERT_EQ(r.anchors.k(), 2);
    EXPECT_LT(std::hypot(r.anchors.anchors[0].w - 10.0, r.anchors.anchors[0].h - 20.0), 1.0);
    EXPECT_LT(std::hypot(r.anchors.anchors[1].w - 100.0, r.anchors.anchors[1].h - 80.0), 1.0);
  }
}

TEST(KMeans, InvalidInputs) {
  KMeansOptions o;
  o.k = 2;
  EXPECT_THROW(kmeans_anchors(std::vector<BoxDims>{}, o), ValidationError);
  EXPECT_THROW(kmeans_anchors(std::vector<BoxDims>{{5, 5}, {5, 5}, {5, 5}}, o), ValidationError);
  EXPECT_THROW(kmeans_anchors(std::vector<BoxDims>{{5, 5}, {0, 5}}, o), ValidationError);
  o.k = 0;
  EXPECT_THROW(kmeans_anchors(std::vector<BoxDims>{{5, 5}}, o), ValidationError);
  try {
    o.k = 3;
    kmeans_anchors(std::vector<BoxDims>{{1, 1}, {2, 2}}, o);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("reduce k"), std::string::npos);
  }
}

TEST(KMeans, ObjectiveNonIncreasingOnFiftyDatasets) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed + 100);
    const auto d = random_dims(rng, 200);
    KMeansOptions o;
    o.seed = seed;
    const auto r = kmeans_anchors(d, o);
    ASSERT_FALSE(r.history.empty());
    for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]) << seed;
    EXPECT_LE(r.anchors.inertia, r.history.back() + 1e-9);
  }
}

TEST(KMeans, SortedPositiveAndNearestAssignment) {
  Rng rng(7);
  const auto d = random_dims(rng, 300);
  const auto r = kmeans_anchors(d, KMeansOptions{});
  EXPECT_NO_THROW(r.anchors.validate());
  const auto& a = r.anchors.anchors;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : a) best = std::min(best, std::pow(d[i].w - c.w, 2) + std::pow(d[i].h - c.h, 2));
    const auto& mine = a[static_cast<std::size_t>(r.labels[i])];
    EXPECT_EQ(std::pow(d[i].w - mine.w, 2) + std::pow(d[i].h - mine.h, 2), best);
  }
  EXPECT_NEAR(kmeans_objective(d, a), r.anchors.inertia, 1e-9 * r.anchors.inertia);
}

TEST(KMeans, RefitFromConvergedCentroidsIsStable) {
  Rng rng(8);
  const auto d = random_dims(rng, 250);
  KMeansOptions o;
  const auto r = kmeans_anchors(d, o);
  const auto again = kmeans_refine(d, r.anchors.anchors, o);
  EXPECT_LT(std::abs(again.anchors.inertia - r.anchors.inertia), o.tol * r.anchors.inertia);
}

TEST(KMeans, DeterministicForSeed) {
  Rng rng(9);
  const auto d = random_dims(rng, 120);
  KMeansOptions o;
  o.seed = 1234;
  const auto a = kmeans_anchors(d, o), b = kmeans_anchors(d, o);
  EXPECT_EQ(a.anchors.anchors, b.anchors.anchors);
  EXPECT_EQ(a.anchors.inertia, b.anchors.inertia);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(KMeans, IouDistanceMode) {
  Rng rng(10);
  const auto d = two_clusters(rng, 50);
  KMeansOptions o;
  o.k = 2;
  o.distance = AnchorDistance::kIou;
  const auto r = kmeans_anchors(d, o);
  EXPECT_EQ(r.anchors.distance, AnchorDistance::kIou);
  EXPECT_LT(std::hypot(r.anchors.anchors[0].w - 10.0, r.anchors.anchors[0].h - 20.0), 1.0);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_LE(r.history[i], r.history[i - 1]);
}

TEST(AnchorSet, JsonRoundTripAndValidation) {
  const AnchorSet s = default_anchors();
  EXPECT_EQ(s.k(), 9);
  const auto j = s.to_json();
  EXPECT_EQ(j["k"], 9);
  EXPECT_EQ(j["distance"], "euclidean");
  EXPECT_EQ(AnchorSet::from_json(j).anchors, s.anchors);
  auto bad = j;
  bad["k"] = 4;
  EXPECT_THROW(AnchorSet::from_json(bad), ParseError);
  AnchorSet unsorted;
  unsorted.anchors = {{5, 5}, {1, 1}};
  EXPECT_THROW(unsorted.validate(), ConfigError);
  EXPECT_THROW(parse_anchor_distance("cosine"), ConfigError);
}

TEST(AnchorSet, PartitionGivesRemainderToFinerScales) {
  AnchorSet s = default_anchors();
  const auto two = s.partition(2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].size(), 5u);
  EXPECT_EQ(two[1].size(), 4u);
  EXPECT_EQ(two[0].front(), s.anchors.front());
  EXPECT_EQ(two[1].back(), s.anchors.back());
  const auto three = s.partition(3);
  for (const auto& p : three) EXPECT_EQ(p.size(), 3u);
  EXPECT_THROW(s.partition(10), ConfigError);
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

TEST(LoadBoxDims, VocSingleObject) {
  testing::TempDir dir("voc");
  write(dir.path() / "a.xml",
        "<annotation><size><width>1000</width><height>1000</height><depth>3</depth></size>"
        "<object><name>car</name><bndbox><xmin>10</xmin><ymin>20</ymin><xmax>110</xmax><ymax>220</ymax>"
        "</bndbox></object></annotation>");
  const auto d = load_box_dims(dir.path(), AnnotationFormat::kVocXml);
  ASSERT_EQ(d.dims.size(), 1u);
  EXPECT_EQ(d.dims[0], (BoxDims{100, 200}));
  const auto r = load_box_dims(dir.path() / "a.xml", AnnotationFormat::kVocXml, std::pair{640, 640});
  EXPECT_NEAR(r.dims[0].w, 64.0, 1e-12);
  EXPECT_NEAR(r.dims[0].h, 128.0, 1e-12);
}

TEST(LoadBoxDims, JsonKeepsFileOrderAndSkipsEmpty) {
  testing::TempDir dir("json");
  write(dir.path() / "scene.json",
        R"({"image":"x.ppm","width":64,"height":64,"objects":[)"
        R"({"class":"a","x1":0,"y1":0,"x2":3,"y2":4},{"class":"b","x1":5,"y1":5,"x2":15,"y2":6},)"
        R"({"class":"c","x1":1,"y1":1,"x2":2,"y2":9},{"class":"d","x1":4,"y1":4,"x2":4,"y2":9}]})");
  const auto d = load_box_dims(dir.path(), AnnotationFormat::kJson);
  ASSERT_EQ(d.dims.size(), 3u);
  EXPECT_EQ(d.dims[0], (BoxDims{3, 4}));
  EXPECT_EQ(d.dims[1], (BoxDims{10, 1}));
  EXPECT_EQ(d.dims[2], (BoxDims{1, 8}));
  EXPECT_EQ(d.skipped, 1);
  EXPECT_EQ(d.files, 1);
}

TEST(LoadBoxDims, MalformedInputsNameTheFileAndField) {
  testing::TempDir dir("bad");
  write(dir.path() / "m.xml", "<annotation><object><bndbox><xmin>1</xmin></bndbox></object></annotation>");
  try {
    load_box_dims(dir.path() / "m.xml", AnnotationFormat::kVocXml);
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("m.xml"), std::string::npos);
    EXPECT_NE(msg.find("bndbox.ymin"), std::string::npos);
  }
  write(dir.path() / "t.xml", "<annotation><object>");
  EXPECT_THROW(load_box_dims(dir.path() / "t.xml", AnnotationFormat::kVocXml), ParseError);
  write(dir.path() / "j.json", R"({"objects":[{"x1":1}]})");
  EXPECT_THROW(load_box_dims(dir.path() / "j.json", AnnotationFormat::kJson), ParseError);
  write(dir.path() / "k.json", "{not json");
  EXPECT_THROW(load_box_dims(dir.path() / "k.json", AnnotationFormat::kJson), ParseError);
  write(dir.path() / "s.json", R"({"objects":[{"x1":1,"y1":1,"x2":2,"y2":2}]})");
  EXPECT_THROW(load_box_dims(dir.path() / "s.json", AnnotationFormat::kJson, std::pair{64, 64}), ParseError);
  EXPECT_THROW(load_box_dims(dir.path() / "missing", AnnotationFormat::kJson), IoError);
  EXPECT_THROW(parse_annotation_format("yaml"), ConfigError);
}

}  // namespace
}  // namespace tacr
