#include "milo/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

namespace milo {
namespace {

constexpr double kRowTolerance = 1e-12;

void check_policy_shape(const TabularDynamics& dynamics, const TabularPolicy& policy) {
  if (policy.n_states() != dynamics.n_states || policy.n_actions() != dynamics.n_actions) {
    throw ConfigError("policy is " + std::to_string(policy.n_states()) + "x" +
                      std::to_string(policy.n_actions()) + " but dynamics are " +
                      std::to_string(dynamics.n_states) + "x" +
                      std::to_string(dynamics.n_actions));
  }
}

void check_cost_shape(const TabularDynamics& dynamics, const Mat& cost) {
  if (cost.rows() != dynamics.n_states || cost.cols() != dynamics.n_actions) {
    throw ConfigError("cost table has wrong shape");
  }
  if (!cost.allFinite()) throw ConfigError("cost table has non-finite entries");
}

}  // namespace

void TabularDynamics::validate(bool stochastic) const {
  require(n_states >= 1 && n_actions >= 1, "need at least one state and one action");
  require(horizon >= 1, "horizon must be positive");
  require(d0.size() == n_states, "d0 has wrong length");
  require(transition.rows() == n_pairs() && transition.cols() == n_states,
          "transition table has wrong shape");
  require((d0.array() >= 0.0).all() && std::abs(d0.sum() - 1.0) <= kRowTolerance,
          "d0 must be a probability vector");
  require((transition.array() >= 0.0).all() && transition.allFinite(),
          "transition entries must be nonnegative");
  for (int r = 0; r < n_pairs(); ++r) {
    const double total = transition.row(r).sum();
    if (stochastic) {
      require(std::abs(total - 1.0) <= kRowTolerance,
              "transition row " + std::to_string(r) + " does not sum to 1");
    } else {
      require(total <= 1.0 + kRowTolerance,
              "transition row " + std::to_string(r) + " sums above 1");
    }
  }
}

TabularPolicy::TabularPolicy(Mat probs) : probs_(std::move(probs)) {
  require(probs_.rows() >= 1 && probs_.cols() >= 1, "policy table is empty");
  require((probs_.array() >= 0.0).all() && probs_.allFinite(),
          "policy probabilities must be nonnegative");
  for (int s = 0; s < probs_.rows(); ++s) {
    require(std::abs(probs_.row(s).sum() - 1.0) <= kRowTolerance,
            "policy row " + std::to_string(s) + " does not sum to 1");
  }
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  require(n_states >= 1 && n_actions >= 1, "policy needs states and actions");
  return TabularPolicy(Mat::Constant(n_states, n_actions, 1.0 / n_actions));
}

TabularPolicy TabularPolicy::deterministic(const std::vector<int>& actions, int n_actions) {
  Mat probs = Mat::Zero(static_cast<int>(actions.size()), n_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    require(actions[s] >= 0 && actions[s] < n_actions, "action index out of range");
    probs(static_cast<int>(s), actions[s]) = 1.0;
  }
  return TabularPolicy(std::move(probs));
}

FiniteMDP::FiniteMDP(int n_states, int n_actions, int horizon, Vec d0, Mat transition, Mat cost)
    : cost_(std::move(cost)) {
  dynamics_.n_states = n_states;
  dynamics_.n_actions = n_actions;
  dynamics_.horizon = horizon;
  dynamics_.d0 = std::move(d0);
  dynamics_.transition = std::move(transition);
  dynamics_.validate(true);
  check_cost_shape(dynamics_, cost_);
  require((cost_.array() >= 0.0).all() && (cost_.array() <= 1.0).all(),
          "costs must lie in [0, 1]");
}

TabularDynamics FiniteMDP::with_transition(const Mat& transition) const {
  TabularDynamics out = dynamics_;
  out.transition = transition;
  out.validate(false);
  return out;
}

std::vector<Mat> occupancy_by_step(const TabularDynamics& dynamics, const TabularPolicy& policy) {
  check_policy_shape(dynamics, policy);
  const int S = dynamics.n_states;
  const int A = dynamics.n_actions;
  std::vector<Mat> steps;
  steps.reserve(dynamics.horizon);
  Vec state_dist = dynamics.d0;
  Vec pair_dist(S * A);
  for (int t = 0; t < dynamics.horizon; ++t) {
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) pair_dist(s * A + a) = state_dist(s) * policy(s, a);
    }
    steps.push_back(unflatten_pairs(pair_dist, S, A));
    state_dist = dynamics.transition.transpose() * pair_dist;
  }
  return steps;
}

Mat occupancy(const TabularDynamics& dynamics, const TabularPolicy& policy) {
  Mat total = Mat::Zero(dynamics.n_states, dynamics.n_actions);
  for (const Mat& d : occupancy_by_step(dynamics, policy)) total += d;
  return total / dynamics.horizon;
}

Mat occupancy(const FiniteMDP& mdp, const TabularPolicy& policy) {
  return occupancy(mdp.dynamics(), policy);
}

std::vector<Vec> state_values(const TabularDynamics& dynamics, const TabularPolicy& policy,
                              const Mat& cost) {
  check_policy_shape(dynamics, policy);
  check_cost_shape(dynamics, cost);
  const int S = dynamics.n_states;
  const int A = dynamics.n_actions;
  const Vec flat_cost = flatten_pairs(cost);
  std::vector<Vec> values(dynamics.horizon + 1, Vec::Zero(S));
  for (int h = dynamics.horizon - 1; h >= 0; --h) {
    const Vec q = flat_cost + dynamics.transition * values[h + 1];
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) v += policy(s, a) * q(s * A + a);
      values[h](s) = v;
    }
  }
  return values;
}

double value(const TabularDynamics& dynamics, const TabularPolicy& policy, const Mat& cost) {
  return dynamics.d0.dot(state_values(dynamics, policy, cost).front());
}

double value(const FiniteMDP& mdp, const TabularPolicy& policy, const Mat& cost) {
  return value(mdp.dynamics(), policy, cost);
}

double value(const FiniteMDP& mdp, const TabularPolicy& policy) {
  return value(mdp.dynamics(), policy, mdp.cost());
}

SimulationGap simulation_gap(const FiniteMDP& mdp, const Mat& model_transition, const Mat& f,
                             const Mat& f_hat, const TabularPolicy& policy) {
  const TabularDynamics model = mdp.with_transition(model_transition);
  const std::vector<Vec> model_values = state_values(model, policy, f_hat);
  const std::vector<Mat> true_steps = occupancy_by_step(mdp.dynamics(), policy);

  SimulationGap gap;
  gap.lhs = value(mdp, policy, f) - mdp.d0().dot(model_values.front());
  const Vec flat_diff = flatten_pairs(f - f_hat);
  for (int h = 0; h < mdp.horizon(); ++h) {
    const Vec& next = model_values[h + 1];
    const Vec integrand =
        flat_diff + mdp.transition() * next - model_transition * next;
    gap.rhs_terms.push_back(flatten_pairs(true_steps[h]).dot(integrand));
  }
  return gap;
}

LinearGaussianEnv::LinearGaussianEnv(Spec spec) : spec_(std::move(spec)) {
  require(spec_.w_star.rows() >= 1 && spec_.w_star.cols() >= 1, "W* must be non-empty");
  require(spec_.action_dim >= 1, "action_dim must be positive");
  require(spec_.w_star.cols() == state_dim() + spec_.action_dim,
          "W* must have state_dim + action_dim columns");
  require(spec_.noise_std > 0.0, "noise_std must be positive");
  require(spec_.feature_scale > 0.0, "feature_scale must be positive");
  require(spec_.horizon >= 1, "horizon must be positive");
  require(spec_.init_mean.size() == state_dim(), "init_mean has wrong length");
  require(spec_.state_bound.size() == state_dim() && (spec_.state_bound.array() > 0).all(),
          "state_bound must be positive per dimension");
  require(spec_.action_bound.size() == spec_.action_dim &&
              (spec_.action_bound.array() > 0).all(),
          "action_bound must be positive per dimension");
  require(static_cast<bool>(spec_.cost), "cost function is required");
}

Vec LinearGaussianEnv::clip_action(const Vec& action) const {
  return action.cwiseMax(-spec_.action_bound).cwiseMin(spec_.action_bound);
}

Vec LinearGaussianEnv::clip_state(const Vec& state) const {
  return state.cwiseMax(-spec_.state_bound).cwiseMin(spec_.state_bound);
}

Vec LinearGaussianEnv::features(const Vec& state, const Vec& action) const {
  Vec v(state_dim() + action_dim());
  v << state, clip_action(action);
  v /= spec_.feature_scale;
  const double norm = v.norm();
  if (norm > 1.0) v /= norm;
  return v;
}

FeatureMap LinearGaussianEnv::feature_map() const {
  return [env = *this](const Vec& s, const Vec& a) { return env.features(s, a); };
}

Vec LinearGaussianEnv::mean_next(const Vec& state, const Vec& action) const {
  return spec_.w_star * features(state, action);
}

Vec LinearGaussianEnv::sample_initial(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec s = spec_.init_mean;
  for (int i = 0; i < s.size(); ++i) s(i) += spec_.init_std * normal(rng);
  return clip_state(s);
}

Vec LinearGaussianEnv::step(const Vec& state, const Vec& action, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec next = mean_next(state, action);
  for (int i = 0; i < next.size(); ++i) next(i) += spec_.noise_std * normal(rng);
  return clip_state(next);
}

double LinearGaussianEnv::cost(const Vec& state, const Vec& action) const {
  return std::clamp(spec_.cost(state, clip_action(action)), 0.0, 1.0);
}

int sample_index(const Eigen::Ref<const Vec>& probs, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  double cumulative = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    cumulative += probs(i);
    if (u < cumulative) return i;
  }
  return static_cast<int>(probs.size());
}

std::vector<Trajectory> rollout(const FiniteMDP& mdp, const TabularPolicy& policy,
                                std::uint64_t seed, int n) {
  require(n >= 1, "rollout count must be positive");
  check_policy_shape(mdp.dynamics(), policy);
  Rng rng(seed);
  std::vector<Trajectory> out;
  out.reserve(n);
  const int A = mdp.n_actions();
  for (int i = 0; i < n; ++i) {
    Trajectory traj;
    traj.reserve(mdp.horizon());
    int s = std::min(sample_index(mdp.d0(), rng), mdp.n_states() - 1);
    for (int t = 0; t < mdp.horizon(); ++t) {
      const int a = std::min(sample_index(policy.probs().row(s).transpose(), rng), A - 1);
      const int next =
          std::min(sample_index(mdp.transition().row(s * A + a).transpose(), rng),
                   mdp.n_states() - 1);
      traj.push_back({Vec::Constant(1, s), Vec::Constant(1, a), mdp.cost()(s, a),
                      Vec::Constant(1, next)});
      s = next;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<Trajectory> rollout(const LinearGaussianEnv& env, const ContinuousPolicy& policy,
                                std::uint64_t seed, int n) {
  require(n >= 1, "rollout count must be positive");
  Rng rng(seed);
  std::vector<Trajectory> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Trajectory traj;
    traj.reserve(env.horizon());
    Vec s = env.sample_initial(rng);
    for (int t = 0; t < env.horizon(); ++t) {
      Vec a = env.clip_action(policy.act(s, rng));
      Vec next = env.step(s, a, rng);
      const double c = env.cost(s, a);
      traj.push_back({s, a, c, next});
      s = std::move(next);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

Vec flatten_pairs(const Mat& table) {
  Vec flat(table.size());
  const int A = static_cast<int>(table.cols());
  for (int s = 0; s < table.rows(); ++s) {
    for (int a = 0; a < A; ++a) flat(s * A + a) = table(s, a);
  }
  return flat;
}

Mat unflatten_pairs(const Vec& flat, int n_states, int n_actions) {
  require(flat.size() == static_cast<Eigen::Index>(n_states) * n_actions,
          "flat table has wrong length");
  Mat table(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) table(s, a) = flat(s * n_actions + a);
  }
  return table;
}

nlohmann::json to_json(const FiniteMDP& mdp) {
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  std::vector<double> transition;
  transition.reserve(static_cast<std::size_t>(S) * A * S);
  for (int r = 0; r < S * A; ++r) {
    for (int sp = 0; sp < S; ++sp) transition.push_back(mdp.transition()(r, sp));
  }
  const Vec cost = flatten_pairs(mdp.cost());
  return {
      {"n_states", S},
      {"n_actions", A},
      {"horizon", mdp.horizon()},
      {"d0", std::vector<double>(mdp.d0().data(), mdp.d0().data() + S)},
      {"transition", transition},
      {"cost", std::vector<double>(cost.data(), cost.data() + cost.size())},
  };
}

FiniteMDP finite_mdp_from_json(const nlohmann::json& doc) {
  try {
    const int S = doc.at("n_states").get<int>();
    const int A = doc.at("n_actions").get<int>();
    const int H = doc.at("horizon").get<int>();
    require(S >= 1 && A >= 1, "n_states and n_actions must be positive");
    const auto d0 = doc.at("d0").get<std::vector<double>>();
    const auto transition = doc.at("transition").get<std::vector<double>>();
    const auto cost = doc.at("cost").get<std::vector<double>>();
    require(static_cast<int>(d0.size()) == S, "d0 has wrong length");
    require(transition.size() == static_cast<std::size_t>(S) * A * S,
            "transition has wrong length");
    require(cost.size() == static_cast<std::size_t>(S) * A, "cost has wrong length");
    Mat p(S * A, S);
    for (int r = 0; r < S * A; ++r) {
      for (int sp = 0; sp < S; ++sp) p(r, sp) = transition[static_cast<std::size_t>(r) * S + sp];
    }
    return FiniteMDP(S, A, H, Eigen::Map<const Vec>(d0.data(), S), std::move(p),
                     unflatten_pairs(Eigen::Map<const Vec>(cost.data(), S * A), S, A));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid MDP document: ") + e.what());
  }
}

}  // namespace milo
