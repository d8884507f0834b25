// Copyright 2026 The deideval Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// End-to-end checks of the deideval executable.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "deideval/common.hpp"
#include "deideval/dataset.hpp"
#include "deideval/report.hpp"
#include "gtest/gtest.h"

namespace deideval {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(DEIDEVAL_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string sample(const std::string& name) {
  return (fs::path(DEIDEVAL_SAMPLE_DIR) / name).string();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("deideval_cli_" + std::string(::testing::UnitTest::GetInstance()
                                              ->current_test_info()
                                              ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CliTest, IdentityRoundTripScoresPerfectly) {
  const std::string common = " --dict " + sample("dictionary.json");
  auto r = run("deid identity --data " + sample("data.csv") + common + " --seed 1 --out " +
               path("id.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  r = run("evaluate --target " + sample("data.csv") + " --deid " + path("id.csv") + common +
          " --config " + sample("config.json") + " --out " + path("rep"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("k-marginal score: 1000"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("unique exact match: 100%"), std::string::npos) << r.output;
  const auto rep = load_report(read_file(path("rep/report.json")));
  EXPECT_FALSE(rep.any_failed());
  EXPECT_TRUE(fs::exists(path("rep/dispersal_profile.csv")));
}

TEST_F(CliTest, SwapIsReproducibleAndScoresBelowPerfect) {
  const std::string base = "deid swap --data " + sample("data.csv") + " --dict " +
                           sample("dictionary.json") + " --rate 0.3 --seed 9 --out ";
  ASSERT_EQ(run(base + path("a.csv")).code, 0);
  ASSERT_EQ(run(base + path("b.csv")).code, 0);
  EXPECT_EQ(read_file(path("a.csv")), read_file(path("b.csv")));
  const auto r = run("evaluate --target " + sample("data.csv") + " --deid " + path("a.csv") +
                     " --dict " + sample("dictionary.json") + " --config " +
                     sample("config.json") + " --out " + path("rep"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("k-marginal score: 1000"), std::string::npos);
}

TEST_F(CliTest, ValidateReportsOffendingCell) {
  auto r = run("validate --data " + sample("data.csv") + " --dict " + sample("dictionary.json"));
  EXPECT_EQ(r.code, 0) << r.output;
  write_file(path("bad.csv"),
             "PUMA,AGEP,SEX,MSP,RAC1P,EDU,INC,PWGTP\n"
             "00101,40,1,1,1,2,3,10\n"
             "00102,41,3,1,1,2,3,10\n");
  r = run("validate --data " + path("bad.csv") + " --dict " + sample("dictionary.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("row 2"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("SEX"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("OutOfDomain"), std::string::npos) << r.output;
}

TEST_F(CliTest, DispersalOfChainedBinaryFeatures) {
  std::string dict = R"({"features": [)";
  std::string csv = "B0,B1,B2,B3\n";
  for (int i = 0; i < 4; ++i) {
    dict += std::string(i ? "," : "") + R"({"name": "B)" + std::to_string(i) +
            R"(", "kind": "categorical", "values": [0, 1]})";
  }
  dict += "]}";
  for (int row = 0; row < 16; ++row) {
    csv += std::to_string(row >> 3 & 1) + "," + std::to_string(row >> 2 & 1) + "," +
           std::to_string(row >> 1 & 1) + "," + std::to_string(row & 1) + "\n";
  }
  write_file(path("d.json"), dict);
  write_file(path("d.csv"), csv);
  const auto r = run("dispersal --data " + path("d.csv") + " --dict " + path("d.json") +
                     " --order B0,B1,B2,B3 --out " + path("out"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream profile(read_file(path("out/dispersal_profile.csv")));
  std::string line;
  std::getline(profile, line);
  std::vector<std::string> ratios;
  while (std::getline(profile, line)) ratios.push_back(split(line, ',')[2]);
  EXPECT_EQ(ratios, (std::vector<std::string>{"2", "4", "8"}));
  EXPECT_TRUE(fs::exists(path("out/dispersal_steps.csv")));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("evaluate --target x.csv").code, 1);
  EXPECT_EQ(run("deid shuffle --data a --dict b --seed 1 --out c").code, 1);
  EXPECT_EQ(run("validate --data " + path("missing.csv") + " --dict " +
                sample("dictionary.json"))
                .code,
            2);
  // Only one ordered feature is evaluated, so the correlation section fails.
  write_file(path("cfg.json"),
             R"({"seed": 1, "features": ["PUMA", "SEX", "MSP", "EDU"],
                 "equivalent_subsample": {"trials": 1}})");
  const auto r = run("evaluate --target " + sample("data.csv") + " --deid " +
                     sample("data.csv") + " --dict " + sample("dictionary.json") +
                     " --config " + path("cfg.json") + " --out " + path("rep"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("correlations"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("rep/report.json")));
  write_file(path("cfg.json"), R"({"seed": 1, "unknown": 2})");
  EXPECT_EQ(run("evaluate --target " + sample("data.csv") + " --deid " + sample("data.csv") +
                " --dict " + sample("dictionary.json") + " --config " + path("cfg.json") +
                " --out " + path("rep"))
                .code,
            2);
}

}  // namespace
}  // namespace deideval
