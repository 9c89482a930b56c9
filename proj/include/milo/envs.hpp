#pragma once

#include <memory>
#include <string>
#include <vector>

#include "milo/mdp.hpp"

namespace milo {

/// Four-action gridworld (up, down, left, right). With probability `slip` the
/// agent moves in a uniformly random direction instead. Every step costs 1
/// except at the absorbing goal cell, which costs 0. Cells are indexed
/// `y * width + x`; up decreases y.
struct GridworldSpec {
  int width = 8;
  int height = 8;
  int horizon = 50;
  double slip = 0.1;
  int goal_x = -1;  // defaults to the far corner
  int goal_y = -1;
  std::vector<int> start_cells = {0};
};

FiniteMDP make_gridworld(const GridworldSpec& spec);

/// Chain 0..length-1 with actions {right, left, jump}. The last chain state is
/// an absorbing goal with cost 0. `jump` moves to an absorbing trap state (index
/// length) where every action costs 1. Chain states cost `step_cost`.
struct TrapChainSpec {
  int length = 6;
  int horizon = 20;
  double step_cost = 0.5;
  double slip = 0.0;  // probability that right/left fail and the agent stays put
};

FiniteMDP make_trap_chain(const TrapChainSpec& spec);

enum TrapChainAction { kRight = 0, kLeft = 1, kJump = 2 };

/// Random MDP with Dirichlet(1) transition rows, uniform-random costs in [0,1]
/// and a Dirichlet(1) initial distribution.
FiniteMDP make_random_mdp(int n_states, int n_actions, int horizon, Rng& rng);

/// Random stochastic rows of shape (S*A) x S.
Mat random_transition(int n_states, int n_actions, Rng& rng);
TabularPolicy random_policy(int n_states, int n_actions, Rng& rng);
Vec random_simplex(int n, Rng& rng);

/// (1 - epsilon) * policy + epsilon * uniform.
TabularPolicy epsilon_mix(const TabularPolicy& policy, double epsilon);

/// Linear controller a = K s + offset with optional Gaussian exploration noise.
class LinearFeedbackPolicy : public ContinuousPolicy {
 public:
  LinearFeedbackPolicy(Mat gain, Vec offset, double noise_std = 0.0);
  Vec act(const Vec& state, Rng& rng) const override;
  Vec mean_action(const Vec& state) const;
  const Mat& gain() const { return gain_; }
  const Vec& offset() const { return offset_; }
  double noise_std() const { return noise_std_; }

 private:
  Mat gain_;
  Vec offset_;
  double noise_std_;
};

/// Actions drawn uniformly from the box [-bound, bound].
class UniformBoxPolicy : public ContinuousPolicy {
 public:
  explicit UniformBoxPolicy(Vec bound);
  Vec act(const Vec& state, Rng& rng) const override;

 private:
  Vec bound_;
};

/// With probability epsilon the action is drawn uniformly from the box
/// [-bound, bound]; otherwise the base policy acts.
class EpsilonUniformPolicy : public ContinuousPolicy {
 public:
  EpsilonUniformPolicy(std::shared_ptr<const ContinuousPolicy> base, double epsilon, Vec bound);
  Vec act(const Vec& state, Rng& rng) const override;

 private:
  std::shared_ptr<const ContinuousPolicy> base_;
  double epsilon_;
  UniformBoxPolicy uniform_;
};

/// Two-dimensional regulation task s' = A s + B a + noise, written in the
/// KNR form W* phi(s, a) with phi = [s; a] / scale projected onto the unit
/// ball. Cost is min(1, q ||s - target||^2 + r ||a||^2).
struct LinearControlSpec {
  Mat a_matrix;  // d_S x d_S
  Mat b_matrix;  // d_S x d_A
  double feature_scale = 4.0;
  double noise_std = 0.05;
  int horizon = 30;
  Vec init_mean;
  double init_std = 0.3;
  double state_bound = 3.0;
  double action_bound = 1.5;
  double state_weight = 0.25;
  double action_weight = 0.02;

  static LinearControlSpec planar();
};

LinearGaussianEnv make_linear_control(const LinearControlSpec& spec);

/// Finite-horizon discrete Riccati recursion for x' = A x + B u with stage cost
/// x'Qx + u'Ru. Returns the first-step gain K (u = K x).
Mat lqr_gain(const Mat& a_matrix, const Mat& b_matrix, const Mat& q, const Mat& r, int horizon);

}  // namespace milo
