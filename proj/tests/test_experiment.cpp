#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "milo/experiment.hpp"

namespace milo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json tiny_config() {
  return json::parse(R"({
    "name": "tiny",
    "env": {"kind": "gridworld", "width": 4, "height": 4, "horizon": 12, "slip": 0.1,
            "goal_x": 3, "goal_y": 3},
    "expert": {"n_e": 20, "pool_trajectories": 20},
    "behavior": {"target_score": 0.5, "label": "50%"},
    "offline": {"n_o": 1000},
    "solver": {"iterations": 10},
    "methods": ["milo", "bc-expert"],
    "seeds": [0, 1],
    "threads": 1
  })");
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class ExperimentDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("milo_exp_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

void expect_config_error(json doc, const std::string& fragment) {
  try {
    ExperimentConfig::from_json(doc);
    FAIL() << "expected ConfigError mentioning " << fragment;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(Config, ParsesAndRoundTrips) {
  const ExperimentConfig c = ExperimentConfig::from_json(tiny_config());
  EXPECT_EQ(c.name, "tiny");
  EXPECT_EQ(c.env, EnvKind::kGridworld);
  EXPECT_EQ(c.gridworld.width, 4);
  EXPECT_EQ(c.n_o, 1000);
  EXPECT_EQ(c.solver.iterations, 10);
  EXPECT_EQ(c.methods.size(), 2u);
  EXPECT_EQ(c.behavior.label, "50%");
  const json once = c.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(once).to_json(), once);
}

TEST(Config, RejectsUnknownKeys) {
  json doc = tiny_config();
  doc["bogus"] = 1;
  expect_config_error(doc, "bogus");
  doc = tiny_config();
  doc["env"]["wdith"] = 4;
  expect_config_error(doc, "wdith");
}

TEST(Config, RejectsBadValues) {
  json doc = tiny_config();
  doc["offline"]["n_o"] = "many";
  expect_config_error(doc, "n_o");
  doc = tiny_config();
  doc["offline"]["n_o"] = 0;
  expect_config_error(doc, "n_o");
  doc = tiny_config();
  doc["methods"] = {"milo", "gail"};
  expect_config_error(doc, "gail");
  doc = tiny_config();
  doc["env"]["kind"] = "mountain_car";
  expect_config_error(doc, "mountain_car");
  doc = tiny_config();
  doc["model"] = {{"kind", "knr"}};
  expect_config_error(doc, "knr");
  doc = tiny_config();
  doc["behavior"].erase("target_score");
  expect_config_error(doc, "behavior");
  doc = tiny_config();
  doc["penalty"] = {{"lambda_penalty", 2.0}};
  expect_config_error(doc, "lambda_penalty");
  doc = tiny_config();
  doc.erase("env");
  expect_config_error(doc, "env");
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/config.json"), ConfigError);
}

TEST(Experiment, BehaviorHitsTargetScore) {
  const Experiment exp(ExperimentConfig::from_json(tiny_config()));
  EXPECT_LT(exp.expert_value(), exp.random_value());
  EXPECT_NEAR(exp.behavior_score(), 0.5, 1e-6);
  EXPECT_GT(exp.behavior_epsilon(), 0.0);
  EXPECT_LT(exp.behavior_epsilon(), 1.0);
  EXPECT_NEAR(epsilon_for_score(exp.mdp(), exp.tabular_expert(), 0.5), exp.behavior_epsilon(), 1e-9);
  EXPECT_EQ(exp.env_id(), "gridworld-4x4");
}

TEST(Experiment, RunIsDeterministicAndRejectsUnknownMethods) {
  const Experiment exp(ExperimentConfig::from_json(tiny_config()));
  const SeedData data = exp.generate(3);
  EXPECT_EQ(data.expert.size(), 20);
  EXPECT_EQ(data.offline.size(), 1000);
  const MethodRun a = exp.run("milo", data, 3);
  const MethodRun b = exp.run("milo", data, 3);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  EXPECT_NEAR(a.normalized_score,
              normalized_score(a.report.final_v_true, exp.random_value(), exp.expert_value()),
              1e-15);
  EXPECT_THROW(exp.run("gail", data, 3), ConfigError);
}

TEST_F(ExperimentDir, SummaryAggregatesPerSeedResults) {
  ExperimentConfig c = ExperimentConfig::from_json(tiny_config());
  const json summary = cmd_run(c, dir_.string());
  for (const std::string m : {"milo", "bc-expert"}) {
    const json& s = summary.at("methods").at(m).at("final_v_true");
    const auto per_seed = s.at("per_seed").get<std::vector<double>>();
    ASSERT_EQ(per_seed.size(), 2u);
    EXPECT_NEAR(s.at("mean").get<double>(), (per_seed[0] + per_seed[1]) / 2, 1e-12);
    EXPECT_NEAR(s.at("median").get<double>(), (per_seed[0] + per_seed[1]) / 2, 1e-12);
    for (int k = 0; k < 2; ++k) {
      const fs::path run = dir_ / "runs" / m / ("seed_" + std::to_string(k) + ".json");
      ASSERT_TRUE(fs::exists(run)) << run;
      EXPECT_DOUBLE_EQ(json::parse(read_file(run)).at("final_v_true").get<double>(), per_seed[k]);
      EXPECT_TRUE(fs::exists(dir_ / "runs" / m / ("seed_" + std::to_string(k) + ".csv")));
    }
  }
  EXPECT_TRUE(fs::exists(dir_ / "summary.json"));
  EXPECT_EQ(summary.at("n_o").get<int>(), 1000);
}

TEST_F(ExperimentDir, ThreadCountDoesNotChangeResults) {
  ExperimentConfig c = ExperimentConfig::from_json(tiny_config());
  c.threads = 1;
  const json one = cmd_run(c, (dir_ / "a").string());
  c.threads = 3;
  const json three = cmd_run(c, (dir_ / "b").string());
  EXPECT_EQ(one.at("methods"), three.at("methods"));
}

TEST_F(ExperimentDir, SingleMethodRun) {
  const ExperimentConfig c = ExperimentConfig::from_json(tiny_config());
  const json summary = cmd_run(c, dir_.string(), std::string("bc-expert"));
  EXPECT_TRUE(summary.at("methods").contains("bc-expert"));
  EXPECT_FALSE(summary.at("methods").contains("milo"));
  EXPECT_THROW(cmd_run(c, dir_.string(), std::string("nope")), ConfigError);
}

TEST_F(ExperimentDir, GenerateIsDeterministicAndReusedByRun) {
  const ExperimentConfig c = ExperimentConfig::from_json(tiny_config());
  cmd_generate(c, (dir_ / "a").string());
  cmd_generate(c, (dir_ / "b").string());
  for (const std::string f : {"data/seed_0/expert.jsonl", "data/seed_0/offline.jsonl",
                              "data/seed_1/offline.jsonl", "env.json"}) {
    ASSERT_TRUE(fs::exists(dir_ / "a" / f)) << f;
    EXPECT_EQ(read_file(dir_ / "a" / f), read_file(dir_ / "b" / f)) << f;
  }
  const json manifest = json::parse(read_file(dir_ / "a" / "manifest.json"));
  EXPECT_TRUE(manifest.contains("config"));
  // Runs on pre-generated data match runs that generate in memory.
  const json from_disk = cmd_run(c, (dir_ / "a").string());
  const json in_memory = cmd_run(c, (dir_ / "c").string());
  EXPECT_EQ(from_disk.at("methods"), in_memory.at("methods"));
}

TEST_F(ExperimentDir, DiagnoseWritesCoverage) {
  const ExperimentConfig c = ExperimentConfig::from_json(tiny_config());
  const json cov = cmd_diagnose(c, dir_.string());
  EXPECT_TRUE(fs::exists(dir_ / "coverage.json"));
  ASSERT_TRUE(cov.contains("concentrability"));
  if (!cov.at("concentrability").at("infinite").get<bool>()) {
    EXPECT_NEAR(cov.at("concentrability").at("value").get<double>(),
                cov.at("relative_condition_number").at("value").get<double>(), 1e-8);
  }
  EXPECT_GT(cov.at("err_o").get<double>(), 0.0);
}

TEST_F(ExperimentDir, ReportOnEmptyDirectoryFails) {
  try {
    cmd_report(dir_.string());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no runs found"), std::string::npos);
  }
  EXPECT_THROW(cmd_report((dir_ / "missing").string()), DataError);
}

std::vector<std::vector<std::string>> parse_markdown(const std::string& md) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(md);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("|---", 0) == 0) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line.substr(1));
    for (std::string cell; std::getline(ls, cell, '|');) {
      const auto b = cell.find_first_not_of(' ');
      const auto e = cell.find_last_not_of(' ');
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    rows.push_back(cells);
  }
  return rows;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& csv) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(cells);
  }
  return rows;
}

TEST_F(ExperimentDir, ReportCollectsRunsAndFormatsAgree) {
  json a = tiny_config();
  a["seeds"] = {0};
  json b = a;
  b["name"] = "tiny-random";
  b["behavior"] = {{"epsilon", 1.0}, {"label", "random"}};
  b["methods"] = {"milo", "bc-both"};
  cmd_run(ExperimentConfig::from_json(a), (dir_ / "half").string());
  cmd_run(ExperimentConfig::from_json(b), (dir_ / "random").string());
  const auto [scores, tiers] = cmd_report(dir_.string());
  ASSERT_EQ(scores.rows.size(), 2u);
  ASSERT_EQ(tiers.rows.size(), 2u);
  EXPECT_EQ(scores.header,
            (std::vector<std::string>{"experiment", "env", "behavior", "n_o", "milo", "bc-expert", "bc-both"}));
  // Tiers are ordered by decreasing behavior score.
  EXPECT_EQ(tiers.rows[0][2], "50%");
  EXPECT_EQ(tiers.rows[1][2], "random");
  EXPECT_EQ(tiers.rows[1][3], "0.000");
  EXPECT_EQ(scores.rows[1][5], "");  // bc-expert was not run for the random tier

  for (const ReportTables* t : {&scores, &tiers}) {
    const auto md = parse_markdown(to_markdown(*t));
    const auto csv = parse_csv(to_csv(*t));
    ASSERT_EQ(md.size(), t->rows.size() + 1);
    EXPECT_EQ(md, csv);
    EXPECT_EQ(md.front(), t->header);
  }
  EXPECT_EQ(read_file(dir_ / "scores.csv"), to_csv(scores));
  EXPECT_EQ(read_file(dir_ / "tiers.csv"), to_csv(tiers));
  EXPECT_NE(read_file(dir_ / "report.md").find(to_markdown(tiers)), std::string::npos);
}

TEST(Report, CsvQuotesSpecialCells) {
  ReportTables t{{"a", "b"}, {{"x,y", "say \"hi\""}}};
  EXPECT_EQ(to_csv(t), "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
  EXPECT_EQ(to_markdown(t), "| a | b |\n|---|---|\n| x,y | say \"hi\" |\n");
}

}  // namespace
}  // namespace milo
