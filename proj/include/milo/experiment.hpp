#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "milo/datasets.hpp"
#include "milo/diagnostics.hpp"
#include "milo/envs.hpp"
#include "milo/solver.hpp"

namespace milo {

enum class EnvKind { kGridworld, kTrapChain, kLinearControl };
enum class DiscriminatorKind { kMMD, kCostShaped };

struct BehaviorConfig {
  /// Tabular: target normalized score of the epsilon-greedy behavior policy
  /// (epsilon found by bisection). Ignored when `epsilon` is set.
  std::optional<double> target_score;
  /// Tabular: explicit mixing weight with the uniform policy (1 = random).
  std::optional<double> epsilon;
  /// Tabular: per-action probabilities applied at every state, overriding the
  /// expert mixture (used for the trap chain).
  std::optional<std::vector<double>> action_probs;
  /// Continuous: Gaussian exploration noise on the expert controller, and the
  /// probability of replacing an action with a uniform draw from the box.
  double noise_std = 0.3;
  double random_action_prob = 0.0;
  /// Fraction of offline trajectories collected by the uniform-random policy
  /// instead of the behavior policy.
  double random_mixture = 0.0;
  /// Label used by report tables, e.g. "50%" or "random".
  std::string label;
};

struct ExperimentConfig {
  std::string name = "experiment";
  EnvKind env = EnvKind::kGridworld;
  GridworldSpec gridworld;
  TrapChainSpec trap_chain;
  LinearControlSpec linear_control = LinearControlSpec::planar();

  int n_e = 20;
  int expert_pool = 100;
  bool single_trajectory = false;
  double expert_noise_std = 0.1;  // continuous expert demonstrations only
  int n_o = 10000;
  BehaviorConfig behavior;

  MiloConfig solver;
  DiscriminatorKind discriminator = DiscriminatorKind::kMMD;
  int class_size = 8;  // cost-shaped class: the true cost plus class_size - 1 rescalings

  std::vector<std::string> methods = {"milo", "bc-expert", "bc-both"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  int threads = 0;  // 0 uses the hardware concurrency
  std::string out_dir = "runs";

  /// Throws ConfigError on unknown keys, ids, or out-of-range values.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

/// Method ids accepted by run().
const std::vector<std::string>& known_methods();

struct SeedData {
  ExpertDataset expert;
  OfflineDataset offline;
};

struct MethodRun {
  std::string method;
  std::uint64_t seed = 0;
  SolverReport report;
  double normalized_score = 0.0;
};

/// Environment, expert and behavior policies built from a config. Immutable
/// after construction and safe to share across worker threads.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }
  bool tabular() const { return config_.env != EnvKind::kLinearControl; }
  const FiniteMDP& mdp() const;
  const LinearGaussianEnv& control() const;
  const TabularPolicy& tabular_expert() const { return tabular_expert_; }
  const TabularPolicy& tabular_behavior() const { return tabular_behavior_; }

  double expert_value() const { return expert_value_; }
  double random_value() const { return random_value_; }
  double behavior_value() const { return behavior_value_; }
  double behavior_score() const;
  /// Mixing weight of the tabular behavior policy (NaN when not applicable).
  double behavior_epsilon() const { return behavior_epsilon_; }
  std::string env_id() const;

  SeedData generate(std::uint64_t seed) const;
  /// Cost-shaped finite class for the tabular environment (seeded).
  FiniteClass cost_shaped_class(std::uint64_t seed) const;
  MethodRun run(const std::string& method, const SeedData& data, std::uint64_t seed) const;
  CoverageReport diagnose(const SeedData& data) const;

 private:
  ExperimentConfig config_;
  std::optional<FiniteMDP> mdp_;
  std::optional<LinearGaussianEnv> control_;
  TabularPolicy tabular_expert_;
  TabularPolicy tabular_behavior_;
  std::shared_ptr<const ContinuousPolicy> control_expert_;
  std::shared_ptr<const ContinuousPolicy> control_demonstrator_;
  std::shared_ptr<const ContinuousPolicy> control_behavior_;
  std::shared_ptr<const ContinuousPolicy> control_random_;
  double expert_value_ = 0.0;
  double random_value_ = 0.0;
  double behavior_value_ = 0.0;
  double behavior_epsilon_ = 0.0;
};

/// Smallest epsilon in [0, 1] whose epsilon-greedy mixture of `expert` has
/// normalized score at most `target` (bisection to 1e-10).
double epsilon_for_score(const FiniteMDP& env, const TabularPolicy& expert, double target);

/// Writes data/seed_<k>/{expert,offline}.jsonl, env.json and manifest.json
/// under `out_dir`. Returns the manifest.
nlohmann::json cmd_generate(const ExperimentConfig& config, const std::string& out_dir);

/// Runs every configured method (or only `method`) on every seed, fanning
/// seeds out over worker threads. Writes runs/<method>/seed_<k>.{csv,json} and
/// summary.json. Datasets are read from data/ when present.
nlohmann::json cmd_run(const ExperimentConfig& config, const std::string& out_dir,
                       const std::optional<std::string>& method = std::nullopt);

/// Coverage diagnostics for the first seed's datasets; writes coverage.json.
nlohmann::json cmd_diagnose(const ExperimentConfig& config, const std::string& out_dir);

struct ReportTables {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Aggregates every summary.json below `dir` into a score table (one row per
/// experiment) and a coverage-tier table (one row per environment and
/// behavior tier). Writes report.md, scores.csv and tiers.csv into `dir`.
/// Throws DataError("no runs found ...") when there is nothing to aggregate.
std::pair<ReportTables, ReportTables> cmd_report(const std::string& dir);

std::string to_markdown(const ReportTables& table);
std::string to_csv(const ReportTables& table);

}  // namespace milo
