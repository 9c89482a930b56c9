#include "milo/policy_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace milo {
namespace {

constexpr double kTieTolerance = 1e-12;
constexpr double kLogitFloor = -60.0;

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (int s = 0; s < logits.rows(); ++s) {
    const double m = logits.row(s).maxCoeff();
    p.row(s) = (logits.row(s).array() - m).exp().matrix();
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

Mat normalize_logits(Mat logits) {
  for (int s = 0; s < logits.rows(); ++s) {
    logits.row(s).array() -= logits.row(s).maxCoeff();
    logits.row(s) = logits.row(s).cwiseMax(kLogitFloor);
  }
  return logits;
}

std::vector<Vec> step_state_distributions(const TabularDynamics& model, const Mat& probs) {
  const int S = model.n_states;
  const int A = model.n_actions;
  std::vector<Vec> dists;
  dists.reserve(model.horizon);
  Vec state = model.d0;
  Vec pair(S * A);
  for (int t = 0; t < model.horizon; ++t) {
    dists.push_back(state);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) pair(s * A + a) = state(s) * probs(s, a);
    }
    state = model.transition.transpose() * pair;
  }
  return dists;
}

}  // namespace

// ---------------------------------------------------------------- planning

PlanResult exact_value_iteration(const TabularDynamics& model, const Mat& cost) {
  model.validate(false);
  require(cost.rows() == model.n_states && cost.cols() == model.n_actions && cost.allFinite(),
          "cost table has wrong shape or non-finite entries");
  const int S = model.n_states;
  const int A = model.n_actions;
  const int H = model.horizon;
  const Vec flat_cost = flatten_pairs(cost);
  PlanResult out;
  out.values.assign(H + 1, Vec::Zero(S));
  out.actions.assign(H, std::vector<int>(S, 0));
  for (int h = H - 1; h >= 0; --h) {
    const Vec q = flat_cost + model.transition * out.values[h + 1];
    for (int s = 0; s < S; ++s) {
      int best = 0;
      for (int a = 1; a < A; ++a) {
        if (q(s * A + a) < q(s * A + best) - kTieTolerance) best = a;
      }
      out.actions[h][s] = best;
      out.values[h](s) = q(s * A + best);
    }
  }
  out.policy = TabularPolicy::deterministic(out.actions.front(), A);
  out.value = model.d0.dot(out.values.front());
  return out;
}

double nonstationary_value(const TabularDynamics& model,
                           const std::vector<std::vector<int>>& actions, const Mat& cost) {
  require(static_cast<int>(actions.size()) == model.horizon, "need one action table per step");
  const int S = model.n_states;
  const int A = model.n_actions;
  const Vec flat_cost = flatten_pairs(cost);
  Vec v = Vec::Zero(S);
  for (int h = model.horizon - 1; h >= 0; --h) {
    require(static_cast<int>(actions[h].size()) == S, "action table has wrong length");
    const Vec q = flat_cost + model.transition * v;
    for (int s = 0; s < S; ++s) {
      const int a = actions[h][s];
      require(a >= 0 && a < A, "action index out of range");
      v(s) = q(s * A + a);
    }
  }
  return model.d0.dot(v);
}

// ---------------------------------------------------------------- policies

SoftmaxTabularPolicy::SoftmaxTabularPolicy(Mat logits) : logits_(std::move(logits)) {
  require(logits_.rows() >= 1 && logits_.cols() >= 1, "logit table is empty");
  require(logits_.allFinite(), "logits must be finite");
}

SoftmaxTabularPolicy SoftmaxTabularPolicy::uniform(int n_states, int n_actions) {
  return SoftmaxTabularPolicy(Mat::Zero(n_states, n_actions));
}

SoftmaxTabularPolicy SoftmaxTabularPolicy::from_probs(const TabularPolicy& policy, double floor) {
  require(floor > 0.0, "probability floor must be positive");
  return SoftmaxTabularPolicy(policy.probs().cwiseMax(floor).array().log().matrix());
}

Mat SoftmaxTabularPolicy::probs() const { return softmax_rows(logits_); }

GaussianLinearPolicy::GaussianLinearPolicy(Mat mean_weights, Vec log_std, double min_log_std)
    : mean_weights_(std::move(mean_weights)), log_std_(std::move(log_std)),
      min_log_std_(min_log_std) {
  require(mean_weights_.rows() >= 1 && mean_weights_.cols() >= 2,
          "mean weights must be d_A x (d_S + 1)");
  require(log_std_.size() == mean_weights_.rows(), "log_std must have length d_A");
  require(mean_weights_.allFinite() && log_std_.allFinite(), "policy parameters must be finite");
  log_std_ = log_std_.cwiseMax(min_log_std_);
}

GaussianLinearPolicy GaussianLinearPolicy::zeros(int state_dim, int action_dim,
                                                 double init_log_std, double min_log_std) {
  return GaussianLinearPolicy(Mat::Zero(action_dim, state_dim + 1),
                              Vec::Constant(action_dim, init_log_std), min_log_std);
}

Vec GaussianLinearPolicy::features(const Vec& state) {
  Vec psi(state.size() + 1);
  psi << state, 1.0;
  return psi;
}

Vec GaussianLinearPolicy::act(const Vec& state, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec a = mean(state);
  for (int j = 0; j < a.size(); ++j) a(j) += std::exp(log_std_(j)) * normal(rng);
  return a;
}

double GaussianLinearPolicy::log_prob(const Vec& state, const Vec& action) const {
  const Vec mu = mean(state);
  double lp = 0.0;
  for (int j = 0; j < mu.size(); ++j) {
    const double z = (action(j) - mu(j)) * std::exp(-log_std_(j));
    lp += -0.5 * z * z - log_std_(j) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

Vec GaussianLinearPolicy::grad_log_prob(const Vec& state, const Vec& action) const {
  const Vec psi = features(state);
  const Vec mu = mean_weights_ * psi;
  const int da = action_dim();
  const int dp = static_cast<int>(psi.size());
  Vec g(n_params());
  for (int j = 0; j < da; ++j) {
    const double inv_var = std::exp(-2.0 * log_std_(j));
    const double r = action(j) - mu(j);
    g.segment(j * dp, dp) = r * inv_var * psi;
    g(da * dp + j) = r * r * inv_var - 1.0;
  }
  return g;
}

Vec GaussianLinearPolicy::parameters() const {
  const int da = action_dim();
  const int dp = static_cast<int>(mean_weights_.cols());
  Vec p(n_params());
  for (int j = 0; j < da; ++j) p.segment(j * dp, dp) = mean_weights_.row(j).transpose();
  p.tail(da) = log_std_;
  return p;
}

GaussianLinearPolicy GaussianLinearPolicy::with_parameters(const Vec& params) const {
  require(params.size() == n_params(), "parameter vector has wrong length");
  const int da = action_dim();
  const int dp = static_cast<int>(mean_weights_.cols());
  Mat w(da, dp);
  for (int j = 0; j < da; ++j) w.row(j) = params.segment(j * dp, dp).transpose();
  return GaussianLinearPolicy(std::move(w), params.tail(da), min_log_std_);
}

// ---------------------------------------------------------------- behavior cloning

double bc_loss(const SoftmaxTabularPolicy& policy, const ExpertDataset& expert) {
  require(expert.size() >= 1, "expert dataset is empty");
  const Mat& z = policy.logits();
  double total = 0.0;
  for (int i = 0; i < expert.size(); ++i) {
    const int s = as_index(expert.states[i], policy.n_states());
    const int a = as_index(expert.actions[i], policy.n_actions());
    const double m = z.row(s).maxCoeff();
    const double lse = m + std::log((z.row(s).array() - m).exp().sum());
    total += lse - z(s, a);
  }
  return total / expert.size();
}

Mat bc_gradient(const SoftmaxTabularPolicy& policy, const ExpertDataset& expert) {
  require(expert.size() >= 1, "expert dataset is empty");
  const Mat p = policy.probs();
  Mat g = Mat::Zero(policy.n_states(), policy.n_actions());
  for (int i = 0; i < expert.size(); ++i) {
    const int s = as_index(expert.states[i], policy.n_states());
    const int a = as_index(expert.actions[i], policy.n_actions());
    g.row(s) += p.row(s);
    g(s, a) -= 1.0;
  }
  return g / expert.size();
}

double bc_loss(const GaussianLinearPolicy& policy, const ExpertDataset& expert) {
  require(expert.size() >= 1, "expert dataset is empty");
  double total = 0.0;
  for (int i = 0; i < expert.size(); ++i) total -= policy.log_prob(expert.states[i], expert.actions[i]);
  return total / expert.size();
}

Vec bc_gradient(const GaussianLinearPolicy& policy, const ExpertDataset& expert) {
  require(expert.size() >= 1, "expert dataset is empty");
  Vec g = Vec::Zero(policy.n_params());
  for (int i = 0; i < expert.size(); ++i) g -= policy.grad_log_prob(expert.states[i], expert.actions[i]);
  return g / expert.size();
}

// ---------------------------------------------------------------- tabular NPG

TabularGradient exact_policy_gradient(const TabularDynamics& model,
                                      const SoftmaxTabularPolicy& policy, const Mat& cost) {
  require(policy.n_states() == model.n_states && policy.n_actions() == model.n_actions,
          "policy does not match the model");
  const int S = model.n_states;
  const int A = model.n_actions;
  const int H = model.horizon;
  const Mat p = policy.probs();
  const TabularPolicy tab(p);
  const std::vector<Vec> values = state_values(model, tab, cost);
  const std::vector<Vec> dists = step_state_distributions(model, p);
  const Vec flat_cost = flatten_pairs(cost);

  TabularGradient out;
  out.gradient = Mat::Zero(S, A);
  out.state_weight = Vec::Zero(S);
  for (int t = 0; t < H; ++t) {
    const Vec q = flat_cost + model.transition * values[t + 1];
    for (int s = 0; s < S; ++s) {
      const double w = dists[t](s);
      if (w == 0.0) continue;
      out.state_weight(s) += w;
      for (int a = 0; a < A; ++a) out.gradient(s, a) += w * p(s, a) * (q(s * A + a) - values[t](s));
    }
  }
  out.gradient /= H;
  out.state_weight /= H;
  out.objective = model.d0.dot(values.front()) / H;
  out.fisher.reserve(S);
  for (int s = 0; s < S; ++s) {
    const Vec ps = p.row(s).transpose();
    Mat block = Mat(ps.asDiagonal()) - ps * ps.transpose();
    out.fisher.push_back(out.state_weight(s) * block);
  }
  return out;
}

Mat natural_direction(const TabularGradient& grad, const Mat& g, double damping, bool* ok) {
  require(g.rows() == grad.gradient.rows() && g.cols() == grad.gradient.cols(),
          "gradient has wrong shape");
  const int A = static_cast<int>(g.cols());
  Mat x(g.rows(), g.cols());
  bool success = true;
  for (int s = 0; s < g.rows(); ++s) {
    Mat system = grad.fisher[s] + damping * Mat::Identity(A, A);
    Eigen::LDLT<Mat> ldlt(system);
    const Vec rhs = g.row(s).transpose();
    if (rhs.isZero(0.0)) {
      x.row(s).setZero();
      continue;
    }
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 0.0) {
      success = false;
      x.row(s) = rhs.transpose();
      continue;
    }
    x.row(s) = ldlt.solve(rhs).transpose();
  }
  if (ok) *ok = success;
  return x;
}

double mean_kl(const Mat& p_old, const Mat& p_new, const Vec& state_weight) {
  const double mass = state_weight.sum();
  if (mass <= 0.0) return 0.0;
  double total = 0.0;
  for (int s = 0; s < p_old.rows(); ++s) {
    if (state_weight(s) == 0.0) continue;
    double kl = 0.0;
    for (int a = 0; a < p_old.cols(); ++a) {
      if (p_old(s, a) > 0.0) kl += p_old(s, a) * (std::log(p_old(s, a)) - std::log(p_new(s, a)));
    }
    total += state_weight(s) * std::max(0.0, kl);
  }
  return total / mass;
}

SoftmaxTabularPolicy tabular_npg_step(const SoftmaxTabularPolicy& policy,
                                      const TabularDynamics& model, const Mat& cost,
                                      const ExpertDataset* expert, const NPGConfig& config,
                                      NPGStepInfo* info) {
  require(config.max_kl > 0.0 && config.damping >= 0.0, "invalid NPG configuration");
  NPGStepInfo local;
  const TabularGradient grad = exact_policy_gradient(model, policy, cost);
  local.objective = grad.objective;
  Mat bc = Mat::Zero(policy.n_states(), policy.n_actions());
  if (expert != nullptr && config.lambda_bc > 0.0) bc = config.lambda_bc * bc_gradient(policy, *expert);

  bool ok = true;
  Mat direction;
  if (config.precondition_bc) {
    direction = natural_direction(grad, grad.gradient + bc, config.damping, &ok);
  } else {
    direction = natural_direction(grad, grad.gradient, config.damping, &ok) + bc;
  }
  if (!ok) {
    local.fallback = true;
    direction = grad.gradient + bc;
  }

  if (direction.norm() < 1e-14) {
    local.accepted = true;
    if (info) *info = local;
    return policy;
  }

  double quad = 0.0;
  for (int s = 0; s < direction.rows(); ++s) {
    const Vec xs = direction.row(s).transpose();
    quad += xs.dot(grad.fisher[s] * xs);
  }
  double step = config.step_size;
  if (step <= 0.0) {
    const double floor = std::max(config.damping, 1e-12) * direction.squaredNorm();
    step = std::sqrt(2.0 * config.max_kl / std::max(quad, floor));
  }

  const Mat p_old = policy.probs();
  for (int k = 0; k <= config.backtrack_steps; ++k) {
    const Mat logits = normalize_logits(policy.logits() - step * direction);
    const Mat p_new = softmax_rows(logits);
    const double kl = mean_kl(p_old, p_new, grad.state_weight);
    if (kl <= config.max_kl) {
      local.accepted = true;
      local.mean_kl = kl;
      local.step = step;
      if (info) *info = local;
      return SoftmaxTabularPolicy(logits);
    }
    step *= config.backtrack_ratio;
  }
  if (info) *info = local;
  return policy;
}

Vec conjugate_gradient(const std::function<Vec(const Vec&)>& apply, const Vec& b, int iters,
                       double tol, bool* converged) {
  Vec x = Vec::Zero(b.size());
  Vec r = b;
  Vec p = r;
  double rr = r.squaredNorm();
  const double target = tol * tol * std::max(b.squaredNorm(), 1e-300);
  bool done = rr <= target;
  for (int i = 0; i < iters && !done; ++i) {
    const Vec ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_next = r.squaredNorm();
    done = rr_next <= target;
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  if (converged) *converged = done;
  return x;
}

// ---------------------------------------------------------------- sampled NPG

int RolloutBatch::n_steps() const {
  int n = 0;
  for (const auto& traj : costs) n += static_cast<int>(traj.size());
  return n;
}

RolloutBatch collect_rollouts(const ModelEnv& env, const ContinuousPolicy& policy, int n_traj,
                              Rng& rng) {
  require(n_traj >= 1, "need at least one rollout");
  require(env.horizon >= 1 && env.sample_initial && env.step && env.cost,
          "model environment is incomplete");
  RolloutBatch batch;
  batch.states.resize(n_traj);
  batch.actions.resize(n_traj);
  batch.costs.resize(n_traj);
  for (int i = 0; i < n_traj; ++i) {
    Vec s = env.sample_initial(rng);
    for (int t = 0; t < env.horizon; ++t) {
      Vec a = policy.act(s, rng);
      const double c = env.cost(s, a);
      Vec next = env.step(s, a, rng);
      batch.states[i].push_back(s);
      batch.actions[i].push_back(std::move(a));
      batch.costs[i].push_back(c);
      s = std::move(next);
    }
  }
  return batch;
}

std::vector<double> estimate_advantages(const std::vector<double>& costs,
                                        const std::vector<double>& values, double gamma,
                                        double gae_lambda) {
  require(gamma > 0.0 && gamma <= 1.0 && gae_lambda > 0.0 && gae_lambda <= 1.0,
          "gamma and gae_lambda must lie in (0, 1]");
  require(values.size() == costs.size() + 1, "values must have length T + 1");
  std::vector<double> adv(costs.size());
  double running = 0.0;
  for (int t = static_cast<int>(costs.size()) - 1; t >= 0; --t) {
    const double delta = costs[t] + gamma * values[t + 1] - values[t];
    running = delta + gamma * gae_lambda * running;
    adv[t] = running;
  }
  return adv;
}

std::vector<double> discounted_returns(const std::vector<double>& costs, double gamma) {
  std::vector<double> out(costs.size());
  double running = 0.0;
  for (int t = static_cast<int>(costs.size()) - 1; t >= 0; --t) {
    running = costs[t] + gamma * running;
    out[t] = running;
  }
  return out;
}

Vec LinearCritic::features(const Vec& state, int t, int horizon) {
  Vec x(2 * state.size() + 2);
  x << state, state.cwiseAbs2(), static_cast<double>(t) / horizon, 1.0;
  return x;
}

double LinearCritic::predict(const Vec& state, int t, int horizon) const {
  if (!fitted()) return 0.0;
  return weights_.dot(features(state, t, horizon));
}

void LinearCritic::fit(const RolloutBatch& batch, const std::vector<std::vector<double>>& targets,
                       int horizon, double l2) {
  require(l2 >= 0.0, "critic regularization must be nonnegative");
  const int d = static_cast<int>(features(batch.states.front().front(), 0, horizon).size());
  Mat gram = l2 * Mat::Identity(d, d);
  Vec rhs = Vec::Zero(d);
  int n = 0;
  for (std::size_t i = 0; i < batch.states.size(); ++i) {
    for (std::size_t t = 0; t < batch.states[i].size(); ++t) {
      const Vec x = features(batch.states[i][t], static_cast<int>(t), horizon);
      gram.noalias() += x * x.transpose();
      rhs += targets[i][t] * x;
      ++n;
    }
  }
  if (n == 0) return;
  gram.diagonal().array() += 1e-10 * n;
  weights_ = gram.ldlt().solve(rhs);
}

double mean_kl(const GaussianLinearPolicy& p, const GaussianLinearPolicy& q,
               const std::vector<Vec>& states) {
  if (states.empty()) return 0.0;
  const Vec sp = p.log_std().array().exp();
  const Vec sq = q.log_std().array().exp();
  double total = 0.0;
  for (const Vec& s : states) {
    const Vec dm = p.mean(s) - q.mean(s);
    for (int j = 0; j < dm.size(); ++j) {
      total += q.log_std()(j) - p.log_std()(j) +
               (sp(j) * sp(j) + dm(j) * dm(j)) / (2.0 * sq(j) * sq(j)) - 0.5;
    }
  }
  return total / states.size();
}

GaussianLinearPolicy npg_step(const GaussianLinearPolicy& policy, const ModelEnv& model,
                              const ExpertDataset* expert, LinearCritic& critic,
                              const SampledNPGConfig& config, Rng& rng, NPGStepInfo* info) {
  require(config.batch_size >= 1, "rollout budget must be positive");
  const int H = model.horizon;
  const int n_traj = std::max(1, config.batch_size / H);
  const RolloutBatch batch = collect_rollouts(model, policy, n_traj, rng);

  NPGStepInfo local;
  std::vector<std::vector<double>> advantages(n_traj);
  std::vector<std::vector<double>> returns(n_traj);
  double total_cost = 0.0;
  for (int i = 0; i < n_traj; ++i) {
    std::vector<double> values(H + 1, 0.0);
    for (int t = 0; t < H; ++t) values[t] = critic.predict(batch.states[i][t], t, H);
    advantages[i] = estimate_advantages(batch.costs[i], values, config.gamma, config.gae_lambda);
    returns[i] = discounted_returns(batch.costs[i], config.gamma);
    for (double c : batch.costs[i]) total_cost += c;
  }
  const int n = batch.n_steps();
  local.objective = total_cost / n;

  double mean = 0.0;
  for (const auto& traj : advantages) for (double a : traj) mean += a;
  mean /= n;
  double var = 0.0;
  for (const auto& traj : advantages) for (double a : traj) var += (a - mean) * (a - mean);
  const double scale = std::sqrt(var / n) + 1e-6;

  const int P = policy.n_params();
  Vec g_rl = Vec::Zero(P);
  Mat fisher = Mat::Zero(P, P);
  std::vector<Vec> states;
  states.reserve(n);
  for (int i = 0; i < n_traj; ++i) {
    for (int t = 0; t < H; ++t) {
      const Vec score = policy.grad_log_prob(batch.states[i][t], batch.actions[i][t]);
      g_rl += score * ((advantages[i][t] - mean) / scale);
      fisher.noalias() += score * score.transpose();
      states.push_back(batch.states[i][t]);
    }
  }
  g_rl /= n;
  fisher /= n;

  for (int epoch = 0; epoch < std::max(1, config.critic_epochs); ++epoch) {
    critic.fit(batch, returns, H, config.critic_l2);
  }

  Vec g_bc = Vec::Zero(P);
  if (expert != nullptr && config.npg.lambda_bc > 0.0) {
    g_bc = config.npg.lambda_bc * bc_gradient(policy, *expert);
  }

  const auto apply = [&](const Vec& v) -> Vec {
    return fisher * v + config.npg.damping * v;
  };
  bool converged = true;
  Vec direction;
  if (config.npg.precondition_bc) {
    direction = conjugate_gradient(apply, g_rl + g_bc, config.npg.cg_iters, 1e-10, &converged);
  } else {
    direction = conjugate_gradient(apply, g_rl, config.npg.cg_iters, 1e-10, &converged) + g_bc;
  }
  double quad = direction.dot(fisher * direction);
  if (!converged || !direction.allFinite() || !(quad > 0.0)) {
    local.fallback = true;
    direction = g_rl + g_bc;
    quad = direction.dot(fisher * direction);
  }
  if (direction.norm() < 1e-14) {
    local.accepted = true;
    if (info) *info = local;
    return policy;
  }

  double step = config.npg.step_size;
  if (step <= 0.0) {
    step = std::sqrt(2.0 * config.npg.max_kl / std::max(quad, 1e-12 * direction.squaredNorm()));
  }
  const Vec theta = policy.parameters();
  for (int k = 0; k <= config.npg.backtrack_steps; ++k) {
    GaussianLinearPolicy candidate = policy.with_parameters(theta - step * direction);
    const double kl = mean_kl(policy, candidate, states);
    if (kl <= config.npg.max_kl) {
      local.accepted = true;
      local.mean_kl = kl;
      local.step = step;
      if (info) *info = local;
      return candidate;
    }
    step *= config.npg.backtrack_ratio;
  }
  if (info) *info = local;
  return policy;
}

}  // namespace milo
