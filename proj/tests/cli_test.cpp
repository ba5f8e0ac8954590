// Copyright 2026 The TTR Authors
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
#include <chrono>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "support/temp_dir.hpp"

namespace ttr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::TempDir;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result ttr(std::vector<std::string> args) {
  args.insert(args.begin(), "ttr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

constexpr const char* kTinyConfig = R"({
  // small world for fast tests
  "seed": 5,
  "synth": {"n_users": 100, "n_stores": 30, "n_clusters": 3, "days": 30, "orders_per_user_mean": 8},
  "model": {"dim": 8},
  "train": {"epochs": 2, "batch_size": 32, "cache_capacity": 64, "eval_every_steps": 5, "eval_ks": [5, 20]},
  "eval": {"ks": [5, 20]}
})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { testing::write_file(dir_ / "tiny.json", kTinyConfig); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void generate_data() {
    const Result r = ttr({"generate", "--config", path("tiny.json"), "--out", path("data")});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  TempDir dir_;
};

TEST_F(CliTest, NoCommandIsUsageError) {
  EXPECT_EQ(ttr({}).code, 2);
  EXPECT_EQ(ttr({"frobnicate"}).code, 2);
  EXPECT_EQ(ttr({"--version"}).code, 0);
}

TEST_F(CliTest, GenerateWritesRecordsAndManifest) {
  generate_data();
  const json manifest = json::parse(testing::read_file(dir_ / "data" / "manifest.json"));
  EXPECT_EQ(manifest["tool"], "ttr");
  EXPECT_EQ(manifest["command"], "generate");
  EXPECT_EQ(manifest["seed"], 5);
  std::size_t lines = 0;
  std::istringstream in(testing::read_file(dir_ / "data" / "interactions.jsonl"));
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, manifest["data"]["records"].get<std::size_t>());
  EXPECT_GT(lines, 100u);
}

TEST_F(CliTest, GenerateIsDeterministic) {
  ASSERT_EQ(ttr({"generate", "--config", path("tiny.json"), "--out", path("a")}).code, 0);
  ASSERT_EQ(ttr({"generate", "--config", path("tiny.json"), "--out", path("b")}).code, 0);
  ASSERT_EQ(ttr({"generate", "--config", path("tiny.json"), "--seed", "6", "--out", path("c")}).code, 0);
  const auto fp = [&](const char* d) {
    return json::parse(testing::read_file(dir_ / d / "manifest.json"))["data"]["fingerprint"];
  };
  EXPECT_EQ(fp("a"), fp("b"));
  EXPECT_NE(fp("a"), fp("c"));
}

TEST_F(CliTest, BadConfigIsUsageError) {
  testing::write_file(dir_ / "bad.json", R"({"synth": {"n_clusters": 0}})");
  const Result r = ttr({"generate", "--config", path("bad.json"), "--out", path("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("n_clusters"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "x"));
}

TEST_F(CliTest, RefusesToOverwriteWithoutForce) {
  generate_data();
  EXPECT_EQ(ttr({"generate", "--config", path("tiny.json"), "--out", path("data")}).code, 2);
  EXPECT_EQ(ttr({"generate", "--config", path("tiny.json"), "--out", path("data"), "--force"}).code, 0);
  for (const auto& entry : fs::directory_iterator(dir_.path())) {
    EXPECT_EQ(entry.path().filename().string().find(".tmp-"), std::string::npos);
  }
}

TEST_F(CliTest, UnknownVariantIsUsageError) {
  generate_data();
  const Result r = ttr({"train", "--config", path("tiny.json"), "--data", path("data"), "--variant",
                        "mlp", "--out", path("run")});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir_ / "run"));
}

TEST_F(CliTest, MissingDataIsUsageError) {
  const Result r = ttr({"train", "--config", path("tiny.json"), "--data", path("nope.jsonl"),
                        "--out", path("run")});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, UnreadableDataIsRuntimeFailure) {
  testing::write_file(dir_ / "broken.jsonl", "{\"user\": 1}\n");
  const Result r = ttr({"train", "--config", path("tiny.json"), "--data", path("broken.jsonl"),
                        "--out", path("run")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainEvaluateCompare) {
  generate_data();
  const auto start = std::chrono::steady_clock::now();
  for (const char* v : {"dmf", "bow", "bow-shared"}) {
    const Result r = ttr({"train", "--config", path("tiny.json"), "--data", path("data"),
                          "--variant", v, "--out", path(std::string("run-") + v)});
    ASSERT_EQ(r.code, 0) << v << ": " << r.err;
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);

  const fs::path run = dir_ / "run-bow-shared";
  for (const char* f : {"model.ckpt", "vocab.json", "train_log.jsonl", "train_curve.csv",
                        "metrics.json", "metrics.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  const json metrics = json::parse(testing::read_file(run / "metrics.json"));

  // Rerunning from the manifest reproduces the metrics.
  const Result again = ttr({"train", "--config", (run / "manifest.json").string(), "--data",
                            path("data"), "--out", path("again")});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(json::parse(testing::read_file(dir_ / "again" / "metrics.json"))["hit_rate"],
            metrics["hit_rate"]);

  // Evaluating the checkpoint on the same data gives the training-time report.
  const Result eval = ttr({"evaluate", "--checkpoint", run.string(), "--data", path("data"), "--ks", "5,20"});
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_EQ(json::parse(eval.out)["hit_rate"], metrics["hit_rate"]);
  EXPECT_EQ(ttr({"evaluate", "--checkpoint", run.string(), "--data", path("data"), "--ks", "31"}).code, 2);

  const Result cmp = ttr({"compare", path("run-dmf"), path("run-bow"), path("run-bow-shared"),
                          "--out", path("cmp.csv")});
  ASSERT_EQ(cmp.code, 0) << cmp.err;
  std::istringstream csv(testing::read_file(dir_ / "cmp.csv"));
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("run,hit_rate@5,hit_rate@20,parameter_count,steps_to_hr@20", 0), 0u) << header;
  std::vector<double> hr20;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::istringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    ASSERT_GE(cells.size(), 4u);
    hr20.push_back(std::stod(cells[2]));
  }
  ASSERT_EQ(hr20.size(), 3u);
  EXPECT_GE(hr20[0], hr20[1]);
  EXPECT_GE(hr20[1], hr20[2]);
}

TEST_F(CliTest, CompareNeedsTwoRunsAndMetrics) {
  fs::create_directories(dir_ / "empty-run");
  fs::create_directories(dir_ / "other");
  EXPECT_EQ(ttr({"compare", path("empty-run")}).code, 2);
  const Result r = ttr({"compare", path("empty-run"), path("other")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("MissingReport"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("empty-run"), std::string::npos) << r.err;
}

TEST_F(CliTest, InvalidThreadCapIsUsageError) {
  generate_data();
  ::setenv("TTR_THREADS", "zero", 1);
  const Result r = ttr({"train", "--config", path("tiny.json"), "--data", path("data"), "--out", path("run")});
  ::unsetenv("TTR_THREADS");
  EXPECT_EQ(r.code, 2);
}

}  // namespace
}  // namespace ttr
