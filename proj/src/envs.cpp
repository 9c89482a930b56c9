#include "milo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace milo {

FiniteMDP make_gridworld(const GridworldSpec& spec) {
  require(spec.width >= 1 && spec.height >= 1, "gridworld needs positive width and height");
  require(spec.slip >= 0.0 && spec.slip <= 1.0, "slip must lie in [0, 1]");
  const int W = spec.width;
  const int S = spec.width * spec.height;
  const int A = 4;
  const int gx = spec.goal_x < 0 ? W - 1 : spec.goal_x;
  const int gy = spec.goal_y < 0 ? spec.height - 1 : spec.goal_y;
  require(gx < W && gy < spec.height, "goal outside the grid");
  const int goal = gy * W + gx;
  require(!spec.start_cells.empty(), "gridworld needs at least one start cell");

  const int dx[4] = {0, 0, -1, 1};
  const int dy[4] = {-1, 1, 0, 0};
  auto move = [&](int s, int dir) {
    const int x = std::clamp(s % W + dx[dir], 0, W - 1);
    const int y = std::clamp(s / W + dy[dir], 0, spec.height - 1);
    return y * W + x;
  };

  Mat p = Mat::Zero(S * A, S);
  Mat cost = Mat::Ones(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const int r = s * A + a;
      if (s == goal) {
        p(r, goal) = 1.0;
        cost(s, a) = 0.0;
        continue;
      }
      p(r, move(s, a)) += 1.0 - spec.slip;
      for (int d = 0; d < A; ++d) p(r, move(s, d)) += spec.slip / A;
    }
  }
  Vec d0 = Vec::Zero(S);
  for (int c : spec.start_cells) {
    require(c >= 0 && c < S, "start cell outside the grid");
    d0(c) += 1.0 / spec.start_cells.size();
  }
  return FiniteMDP(S, A, spec.horizon, d0, p, cost);
}

FiniteMDP make_trap_chain(const TrapChainSpec& spec) {
  require(spec.length >= 2, "trap chain needs at least two states");
  require(spec.step_cost >= 0.0 && spec.step_cost <= 1.0, "step_cost must lie in [0, 1]");
  require(spec.slip >= 0.0 && spec.slip <= 1.0, "slip must lie in [0, 1]");
  const int L = spec.length;
  const int S = L + 1;
  const int A = 3;
  const int goal = L - 1;
  const int trap = L;
  Mat p = Mat::Zero(S * A, S);
  Mat cost = Mat::Constant(S, A, spec.step_cost);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const int r = s * A + a;
      if (s == goal) {
        p(r, goal) = 1.0;
        cost(s, a) = 0.0;
      } else if (s == trap) {
        p(r, trap) = 1.0;
        cost(s, a) = 1.0;
      } else if (a == kJump) {
        p(r, trap) = 1.0;
      } else {
        const int target = a == kRight ? s + 1 : std::max(s - 1, 0);
        p(r, target) += 1.0 - spec.slip;
        p(r, s) += spec.slip;
      }
    }
  }
  Vec d0 = Vec::Zero(S);
  d0(0) = 1.0;
  return FiniteMDP(S, A, spec.horizon, d0, p, cost);
}

Vec random_simplex(int n, Rng& rng) {
  std::exponential_distribution<double> expo(1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = expo(rng);
  return v / v.sum();
}

Mat random_transition(int n_states, int n_actions, Rng& rng) {
  Mat p(n_states * n_actions, n_states);
  for (int r = 0; r < p.rows(); ++r) {
    Vec row = random_simplex(n_states, rng);
    row /= row.sum();
    p.row(r) = row.transpose();
  }
  return p;
}

TabularPolicy random_policy(int n_states, int n_actions, Rng& rng) {
  Mat probs(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) probs.row(s) = random_simplex(n_actions, rng).transpose();
  return TabularPolicy(std::move(probs));
}

FiniteMDP make_random_mdp(int n_states, int n_actions, int horizon, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Mat cost(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) cost(s, a) = unit(rng);
  }
  Vec d0 = random_simplex(n_states, rng);
  Mat p = random_transition(n_states, n_actions, rng);
  return FiniteMDP(n_states, n_actions, horizon, d0, p, cost);
}

TabularPolicy epsilon_mix(const TabularPolicy& policy, double epsilon) {
  require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
  const Mat uniform = Mat::Constant(policy.n_states(), policy.n_actions(), 1.0 / policy.n_actions());
  Mat mixed = (1.0 - epsilon) * policy.probs() + epsilon * uniform;
  for (int s = 0; s < mixed.rows(); ++s) mixed.row(s) /= mixed.row(s).sum();
  return TabularPolicy(std::move(mixed));
}

LinearFeedbackPolicy::LinearFeedbackPolicy(Mat gain, Vec offset, double noise_std)
    : gain_(std::move(gain)), offset_(std::move(offset)), noise_std_(noise_std) {
  require(offset_.size() == gain_.rows(), "offset must match the gain's row count");
  require(noise_std_ >= 0.0, "noise_std must be nonnegative");
}

Vec LinearFeedbackPolicy::mean_action(const Vec& state) const { return gain_ * state + offset_; }

Vec LinearFeedbackPolicy::act(const Vec& state, Rng& rng) const {
  Vec a = mean_action(state);
  if (noise_std_ > 0.0) {
    std::normal_distribution<double> normal(0.0, noise_std_);
    for (int i = 0; i < a.size(); ++i) a(i) += normal(rng);
  }
  return a;
}

UniformBoxPolicy::UniformBoxPolicy(Vec bound) : bound_(std::move(bound)) {
  require(bound_.size() >= 1 && (bound_.array() > 0.0).all(), "action bound must be positive");
}

Vec UniformBoxPolicy::act(const Vec&, Rng& rng) const {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vec a(bound_.size());
  for (int i = 0; i < a.size(); ++i) a(i) = bound_(i) * unit(rng);
  return a;
}

EpsilonUniformPolicy::EpsilonUniformPolicy(std::shared_ptr<const ContinuousPolicy> base,
                                           double epsilon, Vec bound)
    : base_(std::move(base)), epsilon_(epsilon), uniform_(std::move(bound)) {
  require(base_ != nullptr, "base policy is missing");
  require(epsilon_ >= 0.0 && epsilon_ <= 1.0, "epsilon must lie in [0, 1]");
}

Vec EpsilonUniformPolicy::act(const Vec& state, Rng& rng) const {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon_) return uniform_.act(state, rng);
  return base_->act(state, rng);
}

LinearControlSpec LinearControlSpec::planar() {
  LinearControlSpec spec;
  spec.a_matrix.resize(2, 2);
  spec.a_matrix << 1.02, 0.15, -0.05, 1.0;
  spec.b_matrix = 0.3 * Mat::Identity(2, 2);
  spec.feature_scale = 5.0;
  spec.init_mean = Vec(2);
  spec.init_mean << 2.0, -1.5;
  return spec;
}

LinearGaussianEnv make_linear_control(const LinearControlSpec& spec) {
  const int ds = static_cast<int>(spec.a_matrix.rows());
  require(spec.a_matrix.cols() == ds, "A must be square");
  require(spec.b_matrix.rows() == ds && spec.b_matrix.cols() >= 1, "B has wrong shape");
  const int da = static_cast<int>(spec.b_matrix.cols());
  LinearGaussianEnv::Spec env;
  env.w_star.resize(ds, ds + da);
  env.w_star << spec.a_matrix, spec.b_matrix;
  env.w_star *= spec.feature_scale;
  env.action_dim = da;
  env.feature_scale = spec.feature_scale;
  env.noise_std = spec.noise_std;
  env.horizon = spec.horizon;
  env.init_mean = spec.init_mean.size() == ds ? spec.init_mean : Vec::Zero(ds);
  env.init_std = spec.init_std;
  env.state_bound = Vec::Constant(ds, spec.state_bound);
  env.action_bound = Vec::Constant(da, spec.action_bound);
  const double q = spec.state_weight;
  const double r = spec.action_weight;
  env.cost = [q, r](const Vec& s, const Vec& a) {
    return std::min(1.0, q * s.squaredNorm() + r * a.squaredNorm());
  };
  return LinearGaussianEnv(std::move(env));
}

Mat lqr_gain(const Mat& a_matrix, const Mat& b_matrix, const Mat& q, const Mat& r, int horizon) {
  require(horizon >= 1, "horizon must be positive");
  Mat p = q;
  Mat gain = Mat::Zero(b_matrix.cols(), a_matrix.rows());
  for (int t = 0; t < horizon; ++t) {
    const Mat btp = b_matrix.transpose() * p;
    gain = -(r + btp * b_matrix).ldlt().solve(btp * a_matrix);
    const Mat closed = a_matrix + b_matrix * gain;
    p = q + gain.transpose() * r * gain + closed.transpose() * p * closed;
    p = 0.5 * (p + p.transpose()).eval();
  }
  return gain;
}

}  // namespace milo
