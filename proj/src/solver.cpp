#include "milo/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>

#include <nlohmann/json.hpp>

namespace milo {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_config(const MiloConfig& config) {
  require(config.iterations >= 1, "iterations must be at least 1");
  require(config.lambda_penalty >= 0.0 && config.lambda_penalty <= 1.0,
          "lambda_penalty must lie in [0, 1]");
  require(config.lambda_bc >= 0.0, "lambda_bc must be nonnegative");
  require(config.delta > 0.0 && config.delta < 1.0, "delta must lie in (0, 1)");
  require(config.model_lambda > 0.0, "model lambda must be positive");
}

bool finite_record(const IterationRecord& r) {
  return std::isfinite(r.ipm) && std::isfinite(r.v_true) && std::isfinite(r.v_model) &&
         std::isfinite(r.bc_loss) && std::isfinite(r.penalty_mass);
}

struct TabularSetup {
  TabularDynamics model;
  Mat penalty;
  Mat d_expert;
};

TabularSetup tabular_setup(const ExpertDataset& expert, const OfflineDataset& offline,
                           const FiniteMDP& env, const MiloConfig& config,
                           const Mat* sigma_override) {
  require(offline.size() >= 1, "offline dataset is empty");
  const TabularModel fitted =
      TabularModel::fit(offline, env.n_states(), env.n_actions(), config.model_lambda);
  TabularSetup setup;
  setup.model = env.with_transition(fitted.p_hat());
  if (config.penalty == PenaltyVariant::kEnsemble) {
    throw ConfigError("the ensemble penalty is only available for continuous environments");
  }
  const Mat sigma = sigma_override ? *sigma_override : fitted.sigma_table(config.delta);
  require(sigma.rows() == env.n_states() && sigma.cols() == env.n_actions(),
          "sigma table has wrong shape");
  setup.penalty = penalty_table(sigma, env.horizon(), config.penalty);
  if (expert.size() > 0) {
    setup.d_expert = empirical_distribution(expert.states, expert.actions, env.n_states(),
                                            env.n_actions());
  }
  return setup;
}

}  // namespace

nlohmann::json SolverReport::to_json(bool include_timing) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : iterations) {
    rows.push_back({{"iter", r.iter},
                    {"ipm", r.ipm},
                    {"v_true", r.v_true},
                    {"v_model", r.v_model},
                    {"bc_loss", r.bc_loss},
                    {"penalty_mass", r.penalty_mass}});
  }
  nlohmann::json doc = {{"method", method},
                        {"iterations", rows},
                        {"final_v_true", final_v_true},
                        {"aborted", aborted}};
  if (aborted) doc["abort_reason"] = abort_reason;
  if (include_timing) doc["wall_clock_seconds"] = wall_clock_seconds;
  return doc;
}

void SolverReport::write_csv(std::ostream& out) const {
  out << "iter,ipm,v_true,v_model,bc_loss,penalty_mass\n";
  out.precision(17);
  for (const auto& r : iterations) {
    out << r.iter << ',' << r.ipm << ',' << r.v_true << ',' << r.v_model << ',' << r.bc_loss
        << ',' << r.penalty_mass << '\n';
  }
}

Mat penalty_table(const Mat& sigma, int horizon, PenaltyVariant variant) {
  if (variant == PenaltyVariant::kNone) return Mat::Zero(sigma.rows(), sigma.cols());
  require(variant == PenaltyVariant::kTheory, "tabular penalties are theory or none");
  return sigma.unaryExpr([horizon](double s) { return theory_penalty(s, horizon); });
}

TabularPolicy bc_train(const ExpertDataset& expert, const OfflineDataset* offline, int n_states,
                       int n_actions) {
  Mat counts = Mat::Zero(n_states, n_actions);
  for (int i = 0; i < expert.size(); ++i) {
    counts(as_index(expert.states[i], n_states), as_index(expert.actions[i], n_actions)) += 1.0;
  }
  if (offline != nullptr) {
    for (int i = 0; i < offline->size(); ++i) {
      counts(as_index(offline->states[i], n_states), as_index(offline->actions[i], n_actions)) +=
          1.0;
    }
  }
  require(counts.sum() > 0.0, "behavior cloning needs at least one pair");
  Mat probs(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    const double total = counts.row(s).sum();
    if (total > 0.0) {
      probs.row(s) = counts.row(s) / total;
    } else {
      probs.row(s).setConstant(1.0 / n_actions);
    }
  }
  return TabularPolicy(std::move(probs));
}

GaussianLinearPolicy bc_train_gaussian(const ExpertDataset& expert, const OfflineDataset* offline,
                                       double min_log_std) {
  std::vector<const Vec*> states;
  std::vector<const Vec*> actions;
  for (int i = 0; i < expert.size(); ++i) {
    states.push_back(&expert.states[i]);
    actions.push_back(&expert.actions[i]);
  }
  if (offline != nullptr) {
    for (int i = 0; i < offline->size(); ++i) {
      states.push_back(&offline->states[i]);
      actions.push_back(&offline->actions[i]);
    }
  }
  require(!states.empty(), "behavior cloning needs at least one pair");
  const int dp = static_cast<int>(states.front()->size()) + 1;
  const int da = static_cast<int>(actions.front()->size());
  Mat gram = Mat::Zero(dp, dp);
  Mat cross = Mat::Zero(da, dp);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Vec psi = GaussianLinearPolicy::features(*states[i]);
    gram.noalias() += psi * psi.transpose();
    cross.noalias() += *actions[i] * psi.transpose();
  }
  const Eigen::CompleteOrthogonalDecomposition<Mat> cod(gram);
  const Mat weights = cod.solve(cross.transpose()).transpose();
  Vec resid = Vec::Zero(da);
  for (std::size_t i = 0; i < states.size(); ++i) {
    resid += (*actions[i] - weights * GaussianLinearPolicy::features(*states[i])).cwiseAbs2();
  }
  resid /= static_cast<double>(states.size());
  Vec log_std(da);
  for (int j = 0; j < da; ++j) {
    log_std(j) = resid(j) > 0.0 ? 0.5 * std::log(resid(j)) : min_log_std;
  }
  return GaussianLinearPolicy(weights, log_std.cwiseMax(min_log_std), min_log_std);
}

TabularResult solve_milo(const ExpertDataset& expert, const OfflineDataset& offline,
                         const FiniteMDP& env, const MiloConfig& config, const FiniteClass* cls,
                         const Mat* sigma_override) {
  check_config(config);
  require(expert.size() >= 1, "expert dataset is empty");
  const auto start = Clock::now();
  const TabularSetup setup = tabular_setup(expert, offline, env, config, sigma_override);
  const int S = env.n_states();
  const int A = env.n_actions();
  const double lp = config.lambda_penalty;
  if (cls != nullptr) {
    require((*cls)[0].rows() == S && (*cls)[0].cols() == A, "function class has wrong shape");
  }

  SoftmaxTabularPolicy policy = SoftmaxTabularPolicy::uniform(S, A);
  if (config.bc_warm_start) {
    ExpertDataset offline_pairs;
    offline_pairs.states = offline.states;
    offline_pairs.actions = offline.actions;
    policy = SoftmaxTabularPolicy::from_probs(bc_train(offline_pairs, nullptr, S, A));
  }
  TabularPolicy current = policy.to_tabular();

  NPGConfig npg = config.npg;
  npg.lambda_bc = config.lambda_bc;

  TabularResult result;
  result.report.method = "milo";
  for (int t = 0; t < config.iterations; ++t) {
    const Mat d_model = occupancy(setup.model, current);
    Mat f;
    double ipm = 0.0;
    if (cls != nullptr) {
      const FiniteBestResponse br = best_response_finite(*cls, d_model, setup.d_expert);
      f = (*cls)[br.index];
      ipm = br.ipm_value;
    } else {
      const MMDBestResponse br = mmd_best_response(
          flatten_pairs(d_model), flatten_pairs(setup.d_expert), config.discriminator_radius_sq);
      f = unflatten_pairs(br.discriminator.w, S, A);
      ipm = br.ipm_value;
    }
    const Mat cost = (1.0 - lp) * f + lp * setup.penalty;

    IterationRecord rec;
    rec.iter = t;
    rec.ipm = ipm;
    rec.v_true = value(env, current);
    rec.v_model = value(setup.model, current, env.cost());
    rec.bc_loss = bc_loss(SoftmaxTabularPolicy::from_probs(current, 1e-12), expert);
    rec.penalty_mass = (d_model.array() * setup.penalty.array()).sum();
    result.report.iterations.push_back(rec);
    if (!finite_record(rec)) {
      result.report.aborted = true;
      result.report.abort_reason = "non-finite values at iteration " + std::to_string(t);
      break;
    }

    if (config.mode == SolverMode::kBestResponse) {
      current = exact_value_iteration(setup.model, cost).policy;
    } else {
      policy = tabular_npg_step(policy, setup.model, cost, &expert, npg);
      current = policy.to_tabular();
    }
  }
  result.policy = current;
  result.report.final_v_true = value(env, current);
  result.report.wall_clock_seconds = seconds_since(start);
  return result;
}

TabularResult solve_offline_rl(const OfflineDataset& offline, const Mat& cost,
                               const FiniteMDP& env, const MiloConfig& config,
                               const Mat* sigma_override) {
  check_config(config);
  require(cost.rows() == env.n_states() && cost.cols() == env.n_actions(),
          "cost table has wrong shape");
  const auto start = Clock::now();
  const TabularSetup setup = tabular_setup(ExpertDataset{}, offline, env, config, sigma_override);
  const PlanResult plan = exact_value_iteration(setup.model, cost + setup.penalty);
  const Mat d_model = occupancy(setup.model, plan.policy);

  TabularResult result;
  result.policy = plan.policy;
  result.report.method = "offline-rl";
  IterationRecord rec;
  rec.v_true = value(env, plan.policy, cost);
  rec.v_model = value(setup.model, plan.policy, cost);
  rec.penalty_mass = (d_model.array() * setup.penalty.array()).sum();
  result.report.iterations.push_back(rec);
  result.report.final_v_true = rec.v_true;
  result.report.wall_clock_seconds = seconds_since(start);
  return result;
}

AblationResult ablate_pessimism(const ExpertDataset& expert, const OfflineDataset& offline,
                                const FiniteMDP& env, const MiloConfig& config,
                                const FiniteClass* cls, const Mat* sigma_override) {
  AblationResult out;
  out.with_penalty = solve_milo(expert, offline, env, config, cls, sigma_override);
  MiloConfig off = config;
  off.lambda_penalty = 0.0;
  out.without_penalty = solve_milo(expert, offline, env, off, cls, sigma_override);
  out.without_penalty.report.method = "milo-nopess";
  return out;
}

double normalized_score(double value, double random_value, double expert_value) {
  const double span = random_value - expert_value;
  require(std::abs(span) > 1e-12, "random and expert values coincide");
  return (random_value - value) / span;
}

double estimate_value(const LinearGaussianEnv& env, const ContinuousPolicy& policy, int episodes,
                      std::uint64_t seed) {
  require(episodes >= 1, "need at least one episode");
  double total = 0.0;
  for (const Trajectory& traj : rollout(env, policy, seed, episodes)) {
    for (const Step& step : traj) total += step.cost;
  }
  return total / episodes;
}

ContinuousResult solve_milo(const ExpertDataset& expert, const OfflineDataset& offline,
                            const LinearGaussianEnv& env, const MiloConfig& config) {
  check_config(config);
  require(expert.size() >= 1, "expert dataset is empty");
  require(offline.size() >= 2, "offline dataset needs at least two samples");
  const auto start = Clock::now();
  const int H = env.horizon();
  const double lp = config.lambda_penalty;
  const FeatureMap phi = env.feature_map();

  KNRParams params;
  params.lambda = config.model_lambda;
  params.zeta = env.noise_std();
  params.w_norm_bound = Eigen::JacobiSVD<Mat>(env.w_star()).singularValues()(0);
  params.delta = config.delta;
  const KNRModel model = KNRModel::fit(offline, phi, params);
  std::optional<EnsembleModel> ensemble;
  if (config.penalty == PenaltyVariant::kEnsemble) {
    ensemble = EnsembleModel::fit(offline, phi, params, config.ensemble_members,
                                  config.seed ^ 0x5851f42d4c957f2dULL);
  }
  const double beta = model.beta();
  auto penalty = [&](const Vec& s, const Vec& a) -> double {
    switch (config.penalty) {
      case PenaltyVariant::kTheory:
        return theory_penalty(beta / params.zeta * model.elliptical_norm(phi(s, a)), H);
      case PenaltyVariant::kEnsemble:
        return ensemble->disagreement(phi(s, a));
      case PenaltyVariant::kNone:
        break;
    }
    return 0.0;
  };

  std::vector<Vec> inputs;
  inputs.reserve(offline.size());
  for (int i = 0; i < offline.size(); ++i) {
    Vec x(offline.states[i].size() + offline.actions[i].size());
    x << offline.states[i], env.clip_action(offline.actions[i]);
    inputs.push_back(std::move(x));
  }
  auto [shift, scale] = standardization(inputs);
  for (Vec& x : inputs) x = (x - shift).cwiseQuotient(scale);
  const double bandwidth =
      config.rff_bandwidth > 0.0 ? config.rff_bandwidth : median_heuristic(inputs);
  RFFMap rff = make_rff(static_cast<int>(shift.size()), config.rff_features, bandwidth,
                        config.seed ^ 0x2545f4914f6cdd1dULL);
  rff.set_normalization(shift, scale);

  Vec expert_mean = Vec::Zero(rff.output_dim());
  for (int i = 0; i < expert.size(); ++i) {
    expert_mean += rff.featurize(expert.states[i], env.clip_action(expert.actions[i]));
  }
  expert_mean /= expert.size();

  ModelEnv sim;
  sim.horizon = H;
  sim.sample_initial = [&env](Rng& rng) { return env.sample_initial(rng); };
  sim.step = [&](const Vec& s, const Vec& a, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec next = model.predict(phi(s, a));
    for (int i = 0; i < next.size(); ++i) next(i) += params.zeta * normal(rng);
    return env.clip_state(next);
  };

  GaussianLinearPolicy policy = GaussianLinearPolicy::zeros(env.state_dim(), env.action_dim());
  if (config.bc_warm_start) {
    ExpertDataset offline_pairs;
    offline_pairs.states = offline.states;
    offline_pairs.actions = offline.actions;
    policy = bc_train_gaussian(offline_pairs, nullptr);
  }

  SampledNPGConfig sampled = config.sampled;
  sampled.npg.lambda_bc = config.lambda_bc;
  const int n_traj = std::max(1, sampled.batch_size / H);
  const double witness_shift = std::sqrt(2.0 * config.discriminator_radius_sq);
  Rng rng(config.seed);
  LinearCritic critic;
  ContinuousResult result{policy, {}};
  result.report.method = "milo";

  for (int t = 0; t < config.iterations; ++t) {
    const RolloutBatch batch = collect_rollouts(
        {sim.sample_initial, sim.step, [](const Vec&, const Vec&) { return 0.0; }, H}, policy,
        n_traj, rng);
    Vec model_mean = Vec::Zero(rff.output_dim());
    double penalty_mass = 0.0;
    double model_cost = 0.0;
    for (std::size_t i = 0; i < batch.states.size(); ++i) {
      for (std::size_t k = 0; k < batch.states[i].size(); ++k) {
        const Vec a = env.clip_action(batch.actions[i][k]);
        model_mean += rff.featurize(batch.states[i][k], a);
        penalty_mass += penalty(batch.states[i][k], a);
        model_cost += env.cost(batch.states[i][k], a);
      }
    }
    const double n_steps = batch.n_steps();
    model_mean /= n_steps;
    const MMDBestResponse br =
        mmd_best_response(model_mean, expert_mean, config.discriminator_radius_sq);
    const Vec w = br.discriminator.w;

    sim.cost = [&, w](const Vec& s, const Vec& a) {
      const Vec ac = env.clip_action(a);
      const double f = w.dot(rff.featurize(s, ac)) + witness_shift;
      return std::clamp((1.0 - lp) * f + lp * penalty(s, ac), 0.0, 2.0 * H + 1.0);
    };

    IterationRecord rec;
    rec.iter = t;
    rec.ipm = br.ipm_value;
    rec.v_true = estimate_value(env, MeanActionPolicy(policy), config.eval_episodes,
                                config.seed + 1000003ULL * (t + 1));
    rec.v_model = model_cost / batch.states.size();
    rec.bc_loss = bc_loss(policy, expert);
    rec.penalty_mass = penalty_mass / n_steps;
    result.report.iterations.push_back(rec);
    if (!finite_record(rec)) {
      result.report.aborted = true;
      result.report.abort_reason = "non-finite values at iteration " + std::to_string(t);
      break;
    }
    policy = npg_step(policy, sim, &expert, critic, sampled, rng);
  }
  result.policy = policy;
  result.report.final_v_true =
      estimate_value(env, MeanActionPolicy(policy), config.eval_episodes, config.seed + 17ULL);
  result.report.wall_clock_seconds = seconds_since(start);
  return result;
}

}  // namespace milo
