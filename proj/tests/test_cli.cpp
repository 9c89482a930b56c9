#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MILO_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("milo_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    nlohmann::json cfg = nlohmann::json::parse(R"({
      "name": "cli-tiny",
      "env": {"kind": "gridworld", "width": 3, "height": 3, "horizon": 8, "slip": 0.1,
              "goal_x": 2, "goal_y": 2},
      "expert": {"n_e": 10, "pool_trajectories": 10},
      "behavior": {"target_score": 0.5},
      "offline": {"n_o": 300},
      "solver": {"iterations": 5},
      "methods": ["milo", "bc-both"],
      "seeds": [0, 1]
    })");
    cfg["out"] = (dir_ / "out").string();
    std::ofstream(dir_ / "config.json") << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string config() const { return (dir_ / "config.json").string(); }
  fs::path dir_;
};

TEST_F(Cli, FullPipelineSucceeds) {
  EXPECT_EQ(run_cli("generate --config " + config()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "data" / "seed_1" / "offline.jsonl"));
  EXPECT_EQ(run_cli("run --config " + config() + " --seed-override 1"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "runs" / "milo" / "seed_1.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "out" / "runs" / "milo" / "seed_0.csv"));
  EXPECT_EQ(run_cli("diagnose --config " + config()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "coverage.json"));
  EXPECT_EQ(run_cli("report --config " + config()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "out" / "report.md"));
}

TEST_F(Cli, OutAndMethodFlags) {
  const std::string other = (dir_ / "other").string();
  EXPECT_EQ(run_cli("run --config " + config() + " --out " + other + " --method bc-both"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "other" / "runs" / "bc-both" / "seed_0.json"));
  EXPECT_FALSE(fs::exists(dir_ / "other" / "runs" / "milo"));
  EXPECT_EQ(run_cli("report --out " + other), 0);
}

TEST_F(Cli, ConfigErrorsExitWithTwo) {
  EXPECT_EQ(run_cli("run --config " + (dir_ / "missing.json").string()), 2);
  std::ofstream(dir_ / "bad.json") << "{\"name\": \"x\", \"env\": {\"kind\": \"nowhere\"}}";
  EXPECT_EQ(run_cli("run --config " + (dir_ / "bad.json").string()), 2);
  std::ofstream(dir_ / "broken.json") << "{not json";
  EXPECT_EQ(run_cli("generate --config " + (dir_ / "broken.json").string()), 2);
  EXPECT_EQ(run_cli("run --config " + config() + " --method gail"), 2);
  EXPECT_EQ(run_cli("run"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("run --config " + config() + " --seed-override notanumber"), 2);
  EXPECT_EQ(run_cli("report"), 2);
}

TEST_F(Cli, RuntimeFailuresExitWithThree) {
  EXPECT_EQ(run_cli("report --out " + (dir_ / "empty").string()), 3);
  // Corrupted pre-generated data is a data error, not a config error.
  EXPECT_EQ(run_cli("generate --config " + config()), 0);
  std::ofstream(dir_ / "out" / "data" / "seed_0" / "offline.jsonl") << "garbage\n";
  EXPECT_EQ(run_cli("run --config " + config()), 3);
}

TEST_F(Cli, HelpExitsWithZero) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("run --help"), 0);
}

}  // namespace
