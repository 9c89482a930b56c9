#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "milo/types.hpp"

namespace milo {

/// Finite-horizon tabular dynamics. Transition rows are indexed by
/// `s * n_actions + a`. Rows may be sub-stochastic: the missing mass flows into
/// an implicit absorbing sink with zero cost, which never appears in
/// occupancies or values over the real states.
struct TabularDynamics {
  int n_states = 0;
  int n_actions = 0;
  int horizon = 0;
  Vec d0;
  Mat transition;

  int row(int s, int a) const { return s * n_actions + a; }
  int n_pairs() const { return n_states * n_actions; }

  /// Throws ConfigError on shape errors, negative entries, or rows summing
  /// above one. With `stochastic`, rows must sum to one within 1e-12.
  void validate(bool stochastic) const;
};

/// Stationary tabular policy: one probability row per state.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  explicit TabularPolicy(Mat probs);

  static TabularPolicy uniform(int n_states, int n_actions);
  static TabularPolicy deterministic(const std::vector<int>& actions, int n_actions);

  const Mat& probs() const { return probs_; }
  int n_states() const { return static_cast<int>(probs_.rows()); }
  int n_actions() const { return static_cast<int>(probs_.cols()); }
  double operator()(int s, int a) const { return probs_(s, a); }

 private:
  Mat probs_;
};

/// Ground-truth episodic MDP with costs in [0, 1].
class FiniteMDP {
 public:
  FiniteMDP() = default;
  FiniteMDP(int n_states, int n_actions, int horizon, Vec d0, Mat transition, Mat cost);

  int n_states() const { return dynamics_.n_states; }
  int n_actions() const { return dynamics_.n_actions; }
  int horizon() const { return dynamics_.horizon; }
  const Vec& d0() const { return dynamics_.d0; }
  const Mat& transition() const { return dynamics_.transition; }
  const Mat& cost() const { return cost_; }
  const TabularDynamics& dynamics() const { return dynamics_; }

  /// Copy of the dynamics with a different transition table (same d0, H).
  TabularDynamics with_transition(const Mat& transition) const;

 private:
  TabularDynamics dynamics_;
  Mat cost_;
};

/// Average state-action distribution (1/H) sum_t d_t, by exact forward recursion.
Mat occupancy(const TabularDynamics& dynamics, const TabularPolicy& policy);
Mat occupancy(const FiniteMDP& mdp, const TabularPolicy& policy);

/// Per-step distributions d_t for t = 1..H (index 0 is t = 1).
std::vector<Mat> occupancy_by_step(const TabularDynamics& dynamics, const TabularPolicy& policy);

/// State values V_h for h = 1..H+1 (index H is the terminal zero vector).
std::vector<Vec> state_values(const TabularDynamics& dynamics, const TabularPolicy& policy,
                              const Mat& cost);

/// Expected cumulative cost by exact backward dynamic programming.
double value(const TabularDynamics& dynamics, const TabularPolicy& policy, const Mat& cost);
double value(const FiniteMDP& mdp, const TabularPolicy& policy, const Mat& cost);
double value(const FiniteMDP& mdp, const TabularPolicy& policy);

struct SimulationGap {
  double lhs = 0.0;
  std::vector<double> rhs_terms;
};

/// Decomposes V^pi_{P,f} - V^pi_{P_hat,f_hat} into per-step expectations under
/// the true per-step distributions: E_{d_{P,h}}[f - f_hat + (P - P_hat) V_hat_{h+1}].
SimulationGap simulation_gap(const FiniteMDP& mdp, const Mat& model_transition, const Mat& f,
                             const Mat& f_hat, const TabularPolicy& policy);

struct Step {
  Vec state;
  Vec action;
  double cost = 0.0;
  Vec next_state;
};

using Trajectory = std::vector<Step>;
using CostFn = std::function<double(const Vec& state, const Vec& action)>;
using FeatureMap = std::function<Vec(const Vec& state, const Vec& action)>;

class ContinuousPolicy {
 public:
  virtual ~ContinuousPolicy() = default;
  virtual Vec act(const Vec& state, Rng& rng) const = 0;
};

/// s' = clip(W* phi(s, a) + zeta * eps). The feature map clips the action to
/// its box, scales [s; a] and projects onto the unit ball, so ||phi|| <= 1.
class LinearGaussianEnv {
 public:
  struct Spec {
    Mat w_star;
    int action_dim = 1;
    double feature_scale = 1.0;
    double noise_std = 0.1;
    int horizon = 20;
    Vec init_mean;
    double init_std = 0.0;
    Vec state_bound;   // symmetric box half-widths
    Vec action_bound;  // symmetric box half-widths
    CostFn cost;       // clipped to [0, 1]
  };

  explicit LinearGaussianEnv(Spec spec);

  int state_dim() const { return static_cast<int>(spec_.w_star.rows()); }
  int action_dim() const { return spec_.action_dim; }
  int feature_dim() const { return static_cast<int>(spec_.w_star.cols()); }
  int horizon() const { return spec_.horizon; }
  double noise_std() const { return spec_.noise_std; }
  const Mat& w_star() const { return spec_.w_star; }
  const Spec& spec() const { return spec_; }

  Vec features(const Vec& state, const Vec& action) const;
  FeatureMap feature_map() const;
  Vec clip_action(const Vec& action) const;
  Vec clip_state(const Vec& state) const;
  Vec mean_next(const Vec& state, const Vec& action) const;
  Vec sample_initial(Rng& rng) const;
  Vec step(const Vec& state, const Vec& action, Rng& rng) const;
  double cost(const Vec& state, const Vec& action) const;

 private:
  Spec spec_;
};

/// n trajectories of length H, deterministic given the seed. Tabular states and
/// actions are stored as one-element vectors holding the index.
std::vector<Trajectory> rollout(const FiniteMDP& mdp, const TabularPolicy& policy,
                                std::uint64_t seed, int n);
std::vector<Trajectory> rollout(const LinearGaussianEnv& env, const ContinuousPolicy& policy,
                                std::uint64_t seed, int n);

/// Draws an index from a (sub-)probability vector. Returns `probs.size()` when
/// the draw lands in the missing mass.
int sample_index(const Eigen::Ref<const Vec>& probs, Rng& rng);

/// Row-major flattening of an S x A table into an (S*A) vector.
Vec flatten_pairs(const Mat& table);
Mat unflatten_pairs(const Vec& flat, int n_states, int n_actions);

nlohmann::json to_json(const FiniteMDP& mdp);
FiniteMDP finite_mdp_from_json(const nlohmann::json& doc);

}  // namespace milo
