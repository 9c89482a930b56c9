#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "milo/datasets.hpp"
#include "milo/discriminators.hpp"
#include "milo/mdp.hpp"
#include "milo/models.hpp"
#include "milo/policy_opt.hpp"

namespace milo {

enum class SolverMode {
  kNPG,           // incremental natural-gradient min player
  kBestResponse,  // exact argmax over a finite class, exact value iteration argmin
};

struct MiloConfig {
  int iterations = 100;
  double lambda_bc = 0.1;
  double lambda_penalty = 2.5e-4;
  PenaltyVariant penalty = PenaltyVariant::kTheory;
  SolverMode mode = SolverMode::kNPG;
  double delta = 0.1;
  double model_lambda = 1.0;
  bool bc_warm_start = true;
  double discriminator_radius_sq = 1.0;
  NPGConfig npg;
  SampledNPGConfig sampled;
  // Continuous environments only.
  int rff_features = 256;
  double rff_bandwidth = 0.0;  // 0 selects the median heuristic
  int ensemble_members = 4;
  int eval_episodes = 200;
  std::uint64_t seed = 0;
};

struct IterationRecord {
  int iter = 0;
  double ipm = 0.0;
  double v_true = 0.0;
  double v_model = 0.0;
  double bc_loss = 0.0;
  double penalty_mass = 0.0;
};

struct SolverReport {
  std::string method;
  std::vector<IterationRecord> iterations;
  double final_v_true = 0.0;
  double wall_clock_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;

  /// Timing is excluded unless requested so reports compare byte-for-byte.
  nlohmann::json to_json(bool include_timing = false) const;
  /// Columns: iter, ipm, v_true, v_model, bc_loss, penalty_mass.
  void write_csv(std::ostream& out) const;
};

struct TabularResult {
  TabularPolicy policy;
  SolverReport report;
};

struct ContinuousResult {
  GaussianLinearPolicy policy;
  SolverReport report;
};

/// Penalty table b(s, a) = H min(sigma, 2) (theory), or zero (none).
Mat penalty_table(const Mat& sigma, int horizon, PenaltyVariant variant);

/// Pessimistic min-max imitation on a finite MDP. The true environment supplies
/// d0, H and the state/action counts, and is otherwise used only for reporting.
/// With `cls` the discriminator is the finite class; otherwise the one-hot MMD.
/// `sigma_override` replaces the count-based uncertainty.
TabularResult solve_milo(const ExpertDataset& expert, const OfflineDataset& offline,
                         const FiniteMDP& env, const MiloConfig& config,
                         const FiniteClass* cls = nullptr, const Mat* sigma_override = nullptr);

/// argmin_pi V^pi_{P_hat, c + b} by exact value iteration.
TabularResult solve_offline_rl(const OfflineDataset& offline, const Mat& cost,
                               const FiniteMDP& env, const MiloConfig& config,
                               const Mat* sigma_override = nullptr);

/// Empirical action frequencies per state (uniform at unseen states). Offline
/// pairs, when given, are pooled with the expert pairs unweighted.
TabularPolicy bc_train(const ExpertDataset& expert, const OfflineDataset* offline, int n_states,
                       int n_actions);

/// Maximum-likelihood linear-Gaussian policy: least-squares mean, per-dimension
/// residual standard deviation (floored at min_log_std).
GaussianLinearPolicy bc_train_gaussian(const ExpertDataset& expert, const OfflineDataset* offline,
                                       double min_log_std = GaussianLinearPolicy::kMinLogStd);

struct AblationResult {
  TabularResult with_penalty;
  TabularResult without_penalty;
};

/// Runs solve_milo with the configured lambda_penalty and with lambda_penalty = 0.
AblationResult ablate_pessimism(const ExpertDataset& expert, const OfflineDataset& offline,
                                const FiniteMDP& env, const MiloConfig& config,
                                const FiniteClass* cls = nullptr,
                                const Mat* sigma_override = nullptr);

/// Pessimistic min-max imitation on a linear-Gaussian system: KNR model, RFF MMD
/// discriminator, sampled BC-regularized NPG inside the model.
ContinuousResult solve_milo(const ExpertDataset& expert, const OfflineDataset& offline,
                            const LinearGaussianEnv& env, const MiloConfig& config);

/// (J_random - J) / (J_random - J_expert).
double normalized_score(double value, double random_value, double expert_value);

/// Monte Carlo cumulative cost.
double estimate_value(const LinearGaussianEnv& env, const ContinuousPolicy& policy, int episodes,
                      std::uint64_t seed);

}  // namespace milo
