/*
 * Copyright 2026 The OLN Proposals Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "fixtures.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = 0;
  std::string output;
};

CliRun cli(const std::string& args) {
  int status = 0;
  CliRun r;
  r.output = fixtures::run_command(std::string("'") + OLN_CLI_PATH + "' " + args + " 2>&1", &status);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("oln_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Fixtures, EvalReproducesWorkedExamplesExactly) {
  const auto results = fixtures::check_fixtures(OLN_CLI_PATH, OLN_FIXTURE_DIR);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_TRUE(r.equal) << r.name << " " << r.field << ": expected " << r.expected << ", got " << r.actual;
  }
}

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(cli("gen-data --out " + path("a") + " -n 3 --seed 5 --size 64").code, 0);
  ASSERT_EQ(cli("gen-data --out " + path("b") + " -n 3 --seed 5 --size 64").code, 0);
  EXPECT_EQ(slurp(path("a/annotations.json")), slurp(path("b/annotations.json")));
  EXPECT_EQ(slurp(path("a/images/000001.png")), slurp(path("b/images/000001.png")));
  ASSERT_EQ(cli("gen-data --out " + path("c") + " -n 3 --seed 6 --size 64").code, 0);
  EXPECT_NE(slurp(path("a/annotations.json")), slurp(path("c/annotations.json")));
}

TEST_F(CliTest, TrainZeroStepsWritesLoadableCheckpoint) {
  const CliRun t = cli("train --steps 0 --out " + path("m.ckpt"));
  ASSERT_EQ(t.code, 0) << t.output;
  EXPECT_TRUE(fs::exists(path("m.ckpt")));
  ASSERT_EQ(cli("gen-data --out " + path("d") + " -n 2 --seed 1 --size 64").code, 0);
  const CliRun p = cli("propose --checkpoint " + path("m.ckpt") + " --data " + path("d/annotations.json") + " --out " +
                    path("p.json") + " --max 20");
  ASSERT_EQ(p.code, 0) << p.output;
  const json props = json::parse(slurp(path("p.json")));
  ASSERT_TRUE(props.is_array());
  EXPECT_LE(props.size(), 40u);
  const CliRun e = cli("eval --annotations " + path("d/annotations.json") + " --proposals " + path("p.json") +
                    " --ks 10,20 --csv " + path("ar.csv") + " --out " + path("r.json"));
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_TRUE(json::parse(slurp(path("r.json"))).contains("ar"));
  EXPECT_EQ(slurp(path("ar.csv")).rfind("k,", 0), 0u);
}

TEST_F(CliTest, TrainAppendsLossLogAndHeatmapExports) {
  ASSERT_EQ(cli("gen-data --out " + path("d") + " -n 2 --seed 2 --size 64").code, 0);
  write("cfg.json", R"({"head": "oln_box", "train": {"steps": 4, "batch_size": 1, "log_every": 2}})");
  const std::string base = "train --config " + path("cfg.json") + " --data " + path("d/annotations.json") +
                           " --loss-log " + path("loss.csv") + " --out " + path("m.ckpt");
  ASSERT_EQ(cli(base).code, 0);
  ASSERT_EQ(cli(base).code, 0);
  std::ifstream in(path("loss.csv"));
  std::string line;
  int headers = 0, rows = 0;
  while (std::getline(in, line)) (line.rfind("step,", 0) == 0 ? headers : rows) += 1;
  EXPECT_EQ(headers, 1);
  // Steps 0 and 2 plus the final step, twice.
  EXPECT_EQ(rows, 6);
  const CliRun h = cli("heatmap --checkpoint " + path("m.ckpt") + " --image " + path("d/images/000001.png") + " --out " +
                    path("h.png"));
  ASSERT_EQ(h.code, 0) << h.output;
  EXPECT_TRUE(fs::exists(path("h.png")));
  EXPECT_TRUE(fs::exists(path("h.npy")));
}

TEST_F(CliTest, ErrorsAreStructured) {
  const CliRun usage = cli("eval");
  EXPECT_EQ(usage.code, 2);
  write("bad.json", R"({"head": "oln_box", "trian": {}})");
  const CliRun parse = cli("train --steps 0 --config " + path("bad.json") + " --out " + path("m.ckpt"));
  EXPECT_EQ(parse.code, 3);
  const json err = json::parse(parse.output);
  EXPECT_EQ(err["error"]["type"], "parse");
  write("cfg.json", R"({"head": "no_such_head"})");
  EXPECT_EQ(cli("train --steps 0 --config " + path("cfg.json") + " --out " + path("m.ckpt")).code, 3);
  write("cfg2.json", R"({"train": {"batch_size": 0}})");
  EXPECT_EQ(cli("train --steps 0 --config " + path("cfg2.json") + " --out " + path("m.ckpt")).code, 4);
  write("empty.json", R"({"images": [], "annotations": [], "categories": []})");
  write("props.json", R"([{"image_id": 9, "bbox": [0, 0, 1, 1], "score": 1}])");
  EXPECT_EQ(cli("eval --annotations " + path("empty.json") + " --proposals " + path("props.json")).code, 5);
  EXPECT_EQ(cli("eval --annotations " + path("empty.json") + " --proposals " + path("props.json") + " --ks x").code, 5);
}
