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

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "test_util.hpp"

namespace tacr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

TEST(Cli, EndToEndPipeline) {
  testing::TempDir dir("pipeline");
  const std::string out = dir.path().string();
  const Outcome synth = run({"--seed", "7", "--out-dir", out, "synth", "--n", "100"});
  ASSERT_EQ(synth.code, 0) << synth.err;
  EXPECT_NE(synth.out.find("event=synth images=100 train=81 val=9 test=10"), std::string::npos) << synth.out;
  EXPECT_TRUE(fs::exists(dir.path() / "data" / "manifest.json"));
  EXPECT_EQ(load(dir.path() / "data" / "resolved_config.json")["seed"], 7);

  const Outcome anchors = run({"--seed", "7", "--out-dir", out, "anchors", "--k", "9"});
  ASSERT_EQ(anchors.code, 0) << anchors.err;
  const json a = load(dir.path() / "anchors.json");
  EXPECT_EQ(a["k"], 9);
  EXPECT_EQ(a["distance"], "euclidean");
  EXPECT_EQ(a["anchors"].size(), 9u);
  EXPECT_TRUE(a["inertia"].is_number());

  const Outcome train = run({"--seed", "7", "--out-dir", out, "train", "--epochs", "3"});
  ASSERT_EQ(train.code, 0) << train.err;
  EXPECT_NE(train.out.find("epoch=3 "), std::string::npos);
  for (const char* f : {"best.ckpt", "last.ckpt", "run_record.json", "model_config.json", "resolved_config.json"}) {
    EXPECT_TRUE(fs::exists(dir.path() / "train" / f)) << f;
  }
  const json resolved = load(dir.path() / "train" / "resolved_config.json");
  EXPECT_EQ(resolved["train"]["epochs"], 3);
  EXPECT_EQ(resolved["resolved"]["model"]["anchors"]["anchors"], a["anchors"]);
  std::ifstream ck(dir.path() / "train" / "best.ckpt");
  std::string magic;
  std::getline(ck, magic);
  EXPECT_EQ(magic, "TACR-CKPT v1");

  const Outcome eval = run({"--out-dir", out, "eval", "--dump-gates", "--dump-dyrelu"});
  ASSERT_EQ(eval.code, 0) << eval.err;
  const json rep = load(dir.path() / "eval" / "eval_report.json");
  EXPECT_GE(rep["map"].get<double>(), 0.0);
  EXPECT_LE(rep["map"].get<double>(), 1.0);
  EXPECT_EQ(rep["classes"].size(), 4u);
  EXPECT_EQ(count_lines(dir.path() / "eval" / "pr_drink.csv") >= 1, true);
  EXPECT_TRUE(fs::exists(dir.path() / "eval" / "detections.json"));
  const json gates = load(dir.path() / "eval" / "gates.json");
  EXPECT_EQ(gates["image_ids"].size(), 10u);
  EXPECT_EQ(gates["taps"].size(), 2u);
  EXPECT_TRUE(fs::exists(dir.path() / "eval" / "dyrelu.json"));

  const Outcome bench = run({"--out-dir", out, "bench", "--images", "5"});
  ASSERT_EQ(bench.code, 0) << bench.err;
  const json b = load(dir.path() / "bench" / "bench.json");
  EXPECT_EQ(b["per_image_seconds"].size(), 5u);
  EXPECT_GT(b["fps"].get<double>(), 0.0);
  EXPECT_GT(b["detection_time_per_image_s"].get<double>(), 0.0);
  EXPECT_EQ(b["model"], (dir.path() / "train" / "best.ckpt").string());
}

TEST(Cli, AblationWritesLadderTables) {
  testing::TempDir dir("ablation");
  const std::string out = dir.path().string();
  ASSERT_EQ(run({"--out-dir", out, "synth", "--n", "20"}).code, 0);
  ASSERT_EQ(run({"--out-dir", out, "anchors", "--k", "9"}).code, 0);
  const Outcome r = run({"--out-dir", out, "--log-level", "warn", "ablation", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty()) << r.out;
  EXPECT_EQ(count_lines(dir.path() / "ablation" / "ladder.csv"), 7);
  EXPECT_EQ(count_lines(dir.path() / "ablation" / "ladder.md"), 8);
  EXPECT_EQ(load(dir.path() / "ablation" / "ladder.json").size(), 6u);
}

TEST(Cli, GradcheckCommand) {
  testing::TempDir dir("grad");
  const Outcome r = run({"--out-dir", dir.path().string(), "gradcheck", "--module", "ca"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = load(dir.path() / "gradcheck" / "gradcheck.json");
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_NE(r.out.find("event=gradcheck module=ca"), std::string::npos);
  // An unattainable tolerance is a runtime failure.
  EXPECT_EQ(run({"--out-dir", dir.path().string(), "gradcheck", "--module", "dyrelu", "--tol", "1e-300"}).code, 2);
}

TEST(Cli, EnvironmentAndConfigFile) {
  testing::TempDir dir("env");
  const std::string out = dir.path().string();
  {
    ScopedEnv env("TACR_N", "12");
    ASSERT_EQ(run({"--out-dir", out, "synth"}).code, 0);
    EXPECT_EQ(load(dir.path() / "data" / "manifest.json")["n_images"], 12);
    ASSERT_EQ(run({"--out-dir", out, "synth", "--n", "5"}).code, 0);
    EXPECT_EQ(load(dir.path() / "data" / "manifest.json")["n_images"], 5);
  }
  const fs::path cfg = dir.path() / "cfg.json";
  std::ofstream(cfg) << R"({"seed": 99, "synth": {"n": 7, "split": "0.6,0.2,0.2"}})";
  ASSERT_EQ(run({"--config", cfg.string(), "--out-dir", out, "synth"}).code, 0);
  const json m = load(dir.path() / "data" / "manifest.json");
  EXPECT_EQ(m["n_images"], 7);
  EXPECT_EQ(m["scene_spec"]["seed"], 99);
  EXPECT_EQ(load(dir.path() / "data" / "resolved_config.json")["synth"]["n"], 7);
  {
    ScopedEnv env("TACR_SEED", "5");
    ASSERT_EQ(run({"--config", cfg.string(), "--out-dir", out, "synth"}).code, 0);
    EXPECT_EQ(load(dir.path() / "data" / "manifest.json")["scene_spec"]["seed"], 5);
  }
}

TEST(Cli, ExitCodes) {
  testing::TempDir dir("codes");
  const std::string out = dir.path().string();
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"synth", "--bogus"}).code, 1);
  EXPECT_EQ(run({"--out-dir", out, "synth", "--n", "0"}).code, 1);
  EXPECT_EQ(run({"--out-dir", out, "synth", "--split", "0.5,0.5,0.5"}).code, 1);
  EXPECT_EQ(run({"--out-dir", out, "anchors", "--distance", "manhattan"}).code, 1);
  EXPECT_EQ(run({"--log-level", "chatty", "synth"}).code, 1);
  // No dataset on disk.
  const Outcome missing = run({"--out-dir", out, "train", "--epochs", "1"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
  ASSERT_EQ(run({"--out-dir", out, "synth", "--n", "10", "--min-objects", "1", "--max-objects", "1"}).code, 0);
  const Outcome too_many = run({"--out-dir", out, "anchors", "--k", "500"});
  EXPECT_EQ(too_many.code, 1);
  EXPECT_NE(too_many.err.find("reduce k"), std::string::npos);
  EXPECT_EQ(run({"--out-dir", out, "eval", "--checkpoint", (dir.path() / "none.ckpt").string()}).code, 2);
}

TEST(Cli, HelpForEverySubcommand) {
  const Outcome top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* sub : {"synth", "anchors", "train", "eval", "bench", "gradcheck", "ablation"}) {
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
    const Outcome h = run({sub, "--help"});
    EXPECT_EQ(h.code, 0) << sub;
    EXPECT_NE(h.out.find("--"), std::string::npos) << sub;
  }
  EXPECT_NE(run({"train", "--help"}).out.find("--epochs"), std::string::npos);
  EXPECT_NE(run({"eval", "--help"}).out.find("--dump-gates"), std::string::npos);
}

}  // namespace
}  // namespace tacr
