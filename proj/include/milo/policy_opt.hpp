#pragma once

#include <functional>
#include <vector>

#include "milo/datasets.hpp"
#include "milo/mdp.hpp"

namespace milo {

// ---------------------------------------------------------------- planning

struct PlanResult {
  TabularPolicy policy;                   // greedy table of the first step
  std::vector<std::vector<int>> actions;  // actions[t][s] for t = 0..H-1
  std::vector<Vec> values;                // optimal V_1..V_{H+1}
  double value = 0.0;                     // d0 . V_1
};

/// Backward induction on the H-step problem. Ties go to the lowest action index.
/// Rows of the dynamics may be sub-stochastic (zero-cost sink).
PlanResult exact_value_iteration(const TabularDynamics& model, const Mat& cost);

/// Value of the time-indexed deterministic policy actions[t][s].
double nonstationary_value(const TabularDynamics& model,
                           const std::vector<std::vector<int>>& actions, const Mat& cost);

// ---------------------------------------------------------------- policies

class SoftmaxTabularPolicy {
 public:
  explicit SoftmaxTabularPolicy(Mat logits);
  static SoftmaxTabularPolicy uniform(int n_states, int n_actions);
  /// Logits log(max(p, floor)) of a tabular policy.
  static SoftmaxTabularPolicy from_probs(const TabularPolicy& policy, double floor = 1e-3);

  const Mat& logits() const { return logits_; }
  int n_states() const { return static_cast<int>(logits_.rows()); }
  int n_actions() const { return static_cast<int>(logits_.cols()); }
  Mat probs() const;
  TabularPolicy to_tabular() const { return TabularPolicy(probs()); }

 private:
  Mat logits_;
};

class GaussianLinearPolicy : public ContinuousPolicy {
 public:
  static constexpr double kInitLogStd = -0.25;
  static constexpr double kMinLogStd = -2.0;

  GaussianLinearPolicy(Mat mean_weights, Vec log_std, double min_log_std = kMinLogStd);
  static GaussianLinearPolicy zeros(int state_dim, int action_dim,
                                    double init_log_std = kInitLogStd,
                                    double min_log_std = kMinLogStd);

  /// Policy features psi(s) = [s; 1].
  static Vec features(const Vec& state);

  Vec act(const Vec& state, Rng& rng) const override;
  Vec mean(const Vec& state) const { return mean_weights_ * features(state); }
  double log_prob(const Vec& state, const Vec& action) const;
  /// Gradient of log pi(a|s) with respect to parameters().
  Vec grad_log_prob(const Vec& state, const Vec& action) const;

  /// [row-major mean weights; log_std].
  Vec parameters() const;
  GaussianLinearPolicy with_parameters(const Vec& params) const;
  int n_params() const { return static_cast<int>(mean_weights_.size() + log_std_.size()); }

  const Mat& mean_weights() const { return mean_weights_; }
  const Vec& log_std() const { return log_std_; }
  double min_log_std() const { return min_log_std_; }
  int state_dim() const { return static_cast<int>(mean_weights_.cols()) - 1; }
  int action_dim() const { return static_cast<int>(mean_weights_.rows()); }

 private:
  Mat mean_weights_;  // d_A x (d_S + 1)
  Vec log_std_;
  double min_log_std_;
};

/// Mean-action policy of a Gaussian policy (for deterministic evaluation).
class MeanActionPolicy : public ContinuousPolicy {
 public:
  explicit MeanActionPolicy(const GaussianLinearPolicy& policy) : policy_(policy) {}
  Vec act(const Vec& state, Rng&) const override { return policy_.mean(state); }

 private:
  GaussianLinearPolicy policy_;
};

// ---------------------------------------------------------------- behavior cloning

/// Mean negative log-likelihood of the expert actions.
double bc_loss(const SoftmaxTabularPolicy& policy, const ExpertDataset& expert);
Mat bc_gradient(const SoftmaxTabularPolicy& policy, const ExpertDataset& expert);
double bc_loss(const GaussianLinearPolicy& policy, const ExpertDataset& expert);
Vec bc_gradient(const GaussianLinearPolicy& policy, const ExpertDataset& expert);

// ---------------------------------------------------------------- NPG

struct NPGConfig {
  double max_kl = 0.01;
  double damping = 1e-5;
  int cg_iters = 25;
  double step_size = 0.0;  // 0 selects the trust-region step sqrt(2 max_kl / x^T F x)
  double lambda_bc = 0.1;
  bool precondition_bc = true;
  int backtrack_steps = 20;
  double backtrack_ratio = 0.5;
};

struct NPGStepInfo {
  double mean_kl = 0.0;
  double step = 0.0;
  bool accepted = false;
  bool fallback = false;  // Fisher solve failed; plain gradient used
  double objective = 0.0;  // per-step average cost of the pre-update policy
};

/// Exact policy gradient of J = V / H under the model, with per-state Fisher
/// blocks F_s = d(s) (diag(pi_s) - pi_s pi_s^T) where d is the average state
/// occupancy.
struct TabularGradient {
  Mat gradient;             // S x A
  std::vector<Mat> fisher;  // one A x A block per state
  Vec state_weight;         // average state occupancy d(s)
  double objective = 0.0;   // J
};

TabularGradient exact_policy_gradient(const TabularDynamics& model,
                                      const SoftmaxTabularPolicy& policy, const Mat& cost);

/// Solves (F_s + damping I) x_s = g_s block by block. Sets `ok` to false if a
/// block cannot be factored.
Mat natural_direction(const TabularGradient& grad, const Mat& g, double damping, bool* ok = nullptr);

/// Mean over d of KL(p_old(.|s) || p_new(.|s)), normalized by the mass of d.
double mean_kl(const Mat& p_old, const Mat& p_new, const Vec& state_weight);

/// theta' = theta - eta F^{-1}(grad J + lambda_BC grad l_BC) with KL backtracking.
SoftmaxTabularPolicy tabular_npg_step(const SoftmaxTabularPolicy& policy,
                                      const TabularDynamics& model, const Mat& cost,
                                      const ExpertDataset* expert, const NPGConfig& config,
                                      NPGStepInfo* info = nullptr);

/// Conjugate gradient for a symmetric positive definite operator.
Vec conjugate_gradient(const std::function<Vec(const Vec&)>& apply, const Vec& b, int iters,
                       double tol, bool* converged = nullptr);

// ---------------------------------------------------------------- sampled NPG

/// Episodic simulator (usually the learned model) with the cost the learner minimizes.
struct ModelEnv {
  std::function<Vec(Rng&)> sample_initial;
  std::function<Vec(const Vec& state, const Vec& action, Rng&)> step;
  CostFn cost;
  int horizon = 1;
};

struct RolloutBatch {
  std::vector<std::vector<Vec>> states;
  std::vector<std::vector<Vec>> actions;  // actions as sampled (before any clipping)
  std::vector<std::vector<double>> costs;

  int n_steps() const;
};

RolloutBatch collect_rollouts(const ModelEnv& env, const ContinuousPolicy& policy, int n_traj,
                              Rng& rng);

/// GAE on costs: delta_t = c_t + gamma V_{t+1} - V_t, A_t = delta_t + gamma lambda A_{t+1}.
/// `values` has length T + 1 (the last entry is the terminal value).
std::vector<double> estimate_advantages(const std::vector<double>& costs,
                                        const std::vector<double>& values, double gamma,
                                        double gae_lambda);

/// Discounted cost-to-go.
std::vector<double> discounted_returns(const std::vector<double>& costs, double gamma);

/// Linear value function over [s; s*s; t/H; 1], fit by ridge regression.
class LinearCritic {
 public:
  LinearCritic() = default;
  static Vec features(const Vec& state, int t, int horizon);
  double predict(const Vec& state, int t, int horizon) const;
  void fit(const RolloutBatch& batch, const std::vector<std::vector<double>>& targets,
           int horizon, double l2);
  bool fitted() const { return weights_.size() > 0; }

 private:
  Vec weights_;
};

struct SampledNPGConfig {
  NPGConfig npg;
  int batch_size = 40000;  // environment steps per update
  double gamma = 0.995;
  double gae_lambda = 0.97;
  double critic_l2 = 1e-4;
  int critic_epochs = 2;
};

/// Mean over states of KL(p(.|s) || q(.|s)) for two Gaussian policies.
double mean_kl(const GaussianLinearPolicy& p, const GaussianLinearPolicy& q,
               const std::vector<Vec>& states);

GaussianLinearPolicy npg_step(const GaussianLinearPolicy& policy, const ModelEnv& model,
                              const ExpertDataset* expert, LinearCritic& critic,
                              const SampledNPGConfig& config, Rng& rng,
                              NPGStepInfo* info = nullptr);

}  // namespace milo
