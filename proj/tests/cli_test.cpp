// Copyright 2026 The Authors.
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

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const json kTiny = {
    {"seed", 4},
    {"dataset", {{"num_classes", 3}, {"num_samples", 250}, {"dim", 4}, {"spread", 0.4}}},
    {"model", {{"kind", "mlp"}, {"hidden", 4}}},
    {"selection", {{"budget_fraction", 0.2}, {"pool_size", 20}, {"per_pool", 5}}},
    {"training", {{"epochs", 5}, {"warmup_epochs", 1}, {"milestones", {3}}, {"batch_size", 16}}},
    {"diagnostics",
     {{"landscape", {{"grid", 4}, {"budget_fraction", 0.1}}},
      {"theorem1", {{"num_subsets", 6}, {"num_eval", 4}}},
      {"trajectory", {{"steps", 40}, {"num_seeds", 3}}}}}};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pcore_cli_test_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path WriteConfig(const std::string& name, const json& j) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  // Runs the binary and returns its exit status; stderr goes to dir_/stderr.txt.
  int Run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " '" + std::string(PCORE_CLI_PATH) + "' " + args +
                            " >'" + (dir_ / "stdout.txt").string() + "' 2>'" +
                            (dir_ / "stderr.txt").string() + "'";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  static std::string Slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  static int Lines(const fs::path& p) {
    int n = 0;
    for (char c : Slurp(p)) n += c == '\n';
    return n;
  }

  fs::path dir_;
};

TEST_F(CliTest, TrainWritesOneRowPerEpoch) {
  const fs::path cfg = WriteConfig("c.json", kTiny);
  ASSERT_EQ(Run("train --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  EXPECT_EQ(Lines(dir_ / "o" / "metrics.csv"), 6);
  EXPECT_TRUE(fs::exists(dir_ / "o" / "final_state.pcm"));
  const json echo = json::parse(Slurp(dir_ / "o" / "config.json"));
  EXPECT_EQ(echo["training"]["epochs"], 5);
  EXPECT_EQ(echo["training"]["peak_lr"], 0.1);
  const json summary = json::parse(Slurp(dir_ / "o" / "summary.json"));
  EXPECT_EQ(summary["diverged"], false);
}

TEST_F(CliTest, RerunsAreByteIdentical) {
  const fs::path cfg = WriteConfig("c.json", kTiny);
  for (const std::string cmd : {"train", "select", "gradmatch", "trajectory"}) {
    ASSERT_EQ(Run(cmd + " --config " + cfg.string() + " --out " + (dir_ / "a").string()), 0)
        << cmd;
    ASSERT_EQ(Run(cmd + " --config " + cfg.string() + " --out " + (dir_ / "b").string()), 0)
        << cmd;
    int compared = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "a")) {
      EXPECT_EQ(Slurp(e.path()), Slurp(dir_ / "b" / e.path().filename())) << cmd << " "
                                                                           << e.path();
      ++compared;
    }
    EXPECT_GT(compared, 1);
    fs::remove_all(dir_ / "a");
    fs::remove_all(dir_ / "b");
  }
}

TEST_F(CliTest, OverridesChangeTheEcho) {
  const fs::path cfg = WriteConfig("c.json", kTiny);
  ASSERT_EQ(Run("train --config " + cfg.string() + " --out " + (dir_ / "o").string() +
                " --seed 9 --threads 2 --method random"),
            0);
  const json echo = json::parse(Slurp(dir_ / "o" / "config.json"));
  EXPECT_EQ(echo["seed"], 9);
  EXPECT_EQ(echo["threads"], 2);
  EXPECT_EQ(echo["training"]["method"], "random");
}

TEST_F(CliTest, TheoremProbeRows) {
  json c = {{"seed", 1},
            {"dataset", {{"num_classes", 3}, {"num_samples", 75}, {"dim", 3}, {"spread", 0.5}}},
            {"model", {{"kind", "softmax"}}},
            {"training", {{"method", "full"}, {"epochs", 10}, {"warmup_epochs", 0},
                          {"milestones", json::array()}}},
            {"diagnostics", {{"theorem1", {{"num_subsets", 8}, {"num_eval", 8}}}}}};
  const fs::path cfg = WriteConfig("c.json", c);
  ASSERT_EQ(Run("verify-theorem1 --config " + cfg.string() + " --out " + (dir_ / "o").string()),
            0);
  std::ifstream in(dir_ / "o" / "theorem1.csv");
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) EXPECT_TRUE(std::isfinite(std::stod(cell))) << line;
  }
  EXPECT_EQ(rows, 8);
  const json j = json::parse(Slurp(dir_ / "o" / "theorem1.json"));
  EXPECT_TRUE(j.contains("spearman_stability_vs_gap"));
}

TEST_F(CliTest, EveryCommandRuns) {
  const fs::path cfg = WriteConfig("c.json", kTiny);
  json cor = kTiny;
  cor["dataset"]["corruption_ratio"] = 0.3;
  const fs::path ccfg = WriteConfig("cor.json", cor);
  for (const std::string cmd : {"gen-data", "select", "landscape", "gradmatch", "converge",
                                "trajectory"}) {
    EXPECT_EQ(Run(cmd + " --config " + cfg.string() + " --out " + (dir_ / cmd).string()), 0)
        << cmd << ": " << Slurp(dir_ / "stderr.txt");
  }
  EXPECT_EQ(Run("corrupt --config " + ccfg.string() + " --out " + (dir_ / "c").string()), 0)
      << Slurp(dir_ / "stderr.txt");
  const json cj = json::parse(Slurp(dir_ / "c" / "corruption.json"));
  EXPECT_EQ(cj["flipped"], 60);
}

TEST_F(CliTest, UnknownKeyIsSchemaError) {
  json bad = kTiny;
  bad["training"]["epochz"] = 3;
  const fs::path cfg = WriteConfig("c.json", bad);
  EXPECT_EQ(Run("train --config " + cfg.string() + " --out " + (dir_ / "o").string()), 2);
  const json err = json::parse(Slurp(dir_ / "stderr.txt"));
  EXPECT_EQ(err["exit_code"], 2);
  EXPECT_NE(err["message"].get<std::string>().find("training.epochz"), std::string::npos);
  const json file = json::parse(Slurp(dir_ / "o" / "error.json"));
  EXPECT_EQ(file["kind"], err["kind"]);
}

TEST_F(CliTest, BadFlagsAreSchemaErrors) {
  EXPECT_EQ(Run("train --bogus 1"), 2);
  EXPECT_EQ(Run("train --threads 0"), 2);
  EXPECT_EQ(Run("train --method fastest --out " + (dir_ / "o").string()), 2);
  EXPECT_EQ(Run("nonsense"), 2);
  EXPECT_EQ(Run(""), 2);
}

TEST_F(CliTest, MissingConfigIsIoError) {
  EXPECT_EQ(Run("train --config " + (dir_ / "nope.json").string() + " --out " +
                (dir_ / "o").string()),
            3);
  const json err = json::parse(Slurp(dir_ / "stderr.txt"));
  EXPECT_EQ(err["exit_code"], 3);
}

TEST_F(CliTest, MissingDatasetFileIsIoError) {
  json c = kTiny;
  c["dataset"] = {{"source", "file"},
                  {"train_path", (dir_ / "none.pcd").string()},
                  {"test_path", (dir_ / "none.pcd").string()}};
  const fs::path cfg = WriteConfig("c.json", c);
  EXPECT_EQ(Run("train --config " + cfg.string() + " --out " + (dir_ / "o").string()), 3);
  EXPECT_TRUE(fs::exists(dir_ / "o" / "error.json"));
}

TEST_F(CliTest, DivergenceExitsFour) {
  const json c = {{"dataset", {{"num_classes", 2}, {"num_samples", 200}, {"dim", 5},
                               {"spread", 100.0}}},
                  {"model", {{"kind", "softmax"}}},
                  {"training", {{"method", "full"}, {"epochs", 5}, {"peak_lr", 1000.0},
                                {"warmup_epochs", 0}, {"milestones", json::array()}}}};
  const fs::path cfg = WriteConfig("c.json", c);
  EXPECT_EQ(Run("train --config " + cfg.string() + " --out " + (dir_ / "o").string()), 4);
  const json file = json::parse(Slurp(dir_ / "o" / "error.json"));
  EXPECT_EQ(file["status"], "diverged");
  EXPECT_EQ(file["exit_code"], 4);
  EXPECT_TRUE(file["diverged_epoch"].is_number_integer());
  EXPECT_TRUE(fs::exists(dir_ / "o" / "metrics.csv"));
}

TEST_F(CliTest, EnvVarSetsDefaultOutputRoot) {
  const fs::path cfg = WriteConfig("c.json", kTiny);
  ASSERT_EQ(Run("trajectory --config " + cfg.string(),
                "PCORE_OUT_ROOT='" + (dir_ / "root").string() + "'"),
            0);
  EXPECT_TRUE(fs::exists(dir_ / "root" / "trajectory" / "trajectory.json"));
  EXPECT_TRUE(fs::exists(dir_ / "root" / "trajectory" / "config.json"));
}

}  // namespace
