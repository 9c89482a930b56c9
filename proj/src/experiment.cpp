#include "milo/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace milo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kEvalSeed = 0x51ed2701ULL;
constexpr int kReferenceEpisodes = 2000;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Reads one JSON object and rejects keys that were never consumed.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  void get(const std::string& key, int& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    out = v->get<int>();
  }
  void get(const std::string& key, std::uint64_t& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      throw ConfigError(where(key) + " must be a nonnegative integer");
    }
    out = v->get<std::uint64_t>();
  }
  void get(const std::string& key, double& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
    out = v->get<double>();
  }
  void get(const std::string& key, bool& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_boolean()) throw ConfigError(where(key) + " must be a boolean");
    out = v->get<bool>();
  }
  void get(const std::string& key, std::string& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
    out = v->get<std::string>();
  }
  void get(const std::string& key, std::optional<double>& out) {
    double value = 0.0;
    if (!has(key)) return;
    get(key, value);
    out = value;
  }
  void get(const std::string& key, std::vector<double>& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    out.clear();
    if (!v->is_array()) throw ConfigError(where(key) + " must be an array of numbers");
    for (const json& x : *v) {
      if (!x.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
      out.push_back(x.get<double>());
    }
  }
  void get(const std::string& key, std::vector<int>& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    out.clear();
    if (!v->is_array()) throw ConfigError(where(key) + " must be an array of integers");
    for (const json& x : *v) {
      if (!x.is_number_integer()) throw ConfigError(where(key) + " must be an array of integers");
      out.push_back(x.get<int>());
    }
  }
  void get(const std::string& key, Mat& out) {
    const json* v = take(key);
    if (v == nullptr) return;
    if (!v->is_array() || v->empty() || !v->front().is_array()) {
      throw ConfigError(where(key) + " must be a nonempty array of rows");
    }
    const std::size_t cols = v->front().size();
    Mat m(static_cast<int>(v->size()), static_cast<int>(cols));
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& row = (*v)[i];
      if (!row.is_array() || row.size() != cols) throw ConfigError(where(key) + " is ragged");
      for (std::size_t j = 0; j < cols; ++j) {
        if (!row[j].is_number()) throw ConfigError(where(key) + " must hold numbers");
        m(static_cast<int>(i), static_cast<int>(j)) = row[j].get<double>();
      }
    }
    out = m;
  }
  void get(const std::string& key, Vec& out) {
    std::vector<double> values;
    if (!has(key)) return;
    get(key, values);
    out = Eigen::Map<const Vec>(values.data(), static_cast<int>(values.size()));
  }

  const json* raw(const std::string& key) { return take(key); }

  std::optional<Section> child(const std::string& key) {
    const json* v = take(key);
    if (v == nullptr) return std::nullopt;
    return Section(*v, where(key));
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown key " + where(item.key()));
    }
  }

 private:
  const json* take(const std::string& key) {
    if (!doc_.contains(key)) return nullptr;
    used_.insert(key);
    return &doc_.at(key);
  }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  const json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

std::string env_kind_id(EnvKind kind) {
  switch (kind) {
    case EnvKind::kGridworld:
      return "gridworld";
    case EnvKind::kTrapChain:
      return "trap_chain";
    case EnvKind::kLinearControl:
      return "linear_control";
  }
  return "";
}

json mat_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string penalty_id(PenaltyVariant v) {
  switch (v) {
    case PenaltyVariant::kTheory:
      return "theory";
    case PenaltyVariant::kEnsemble:
      return "ensemble";
    case PenaltyVariant::kNone:
      return "none";
  }
  return "";
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (xs.size() - 1));
}

double median(std::vector<double> xs) {
  require(!xs.empty(), "median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

json stats_json(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  return {{"per_seed", xs}, {"mean", mean}, {"std", sample_std(xs)}, {"median", median(xs)}};
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

fs::path seed_dir(const std::string& out_dir, std::uint64_t seed) {
  return fs::path(out_dir) / "data" / ("seed_" + std::to_string(seed));
}

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

template <class Fn>
void parallel_for(int n_jobs, int threads, Fn&& fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(1, n_jobs));
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_jobs));
  auto work = [&] {
    for (int i = next++; i < n_jobs; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {"milo", "milo-nopess", "bc-expert", "bc-both",
                                                   "offline-rl"};
  return methods;
}

// ---------------------------------------------------------------- config

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "config");
  root.get("name", c.name);

  if (auto env = root.child("env")) {
    std::string kind;
    env->get("kind", kind);
    if (kind == "gridworld") {
      c.env = EnvKind::kGridworld;
      env->get("width", c.gridworld.width);
      env->get("height", c.gridworld.height);
      env->get("horizon", c.gridworld.horizon);
      env->get("slip", c.gridworld.slip);
      env->get("goal_x", c.gridworld.goal_x);
      env->get("goal_y", c.gridworld.goal_y);
      env->get("start_cells", c.gridworld.start_cells);
    } else if (kind == "trap_chain") {
      c.env = EnvKind::kTrapChain;
      env->get("length", c.trap_chain.length);
      env->get("horizon", c.trap_chain.horizon);
      env->get("step_cost", c.trap_chain.step_cost);
      env->get("slip", c.trap_chain.slip);
    } else if (kind == "linear_control") {
      c.env = EnvKind::kLinearControl;
      LinearControlSpec& s = c.linear_control;
      env->get("a_matrix", s.a_matrix);
      env->get("b_matrix", s.b_matrix);
      env->get("feature_scale", s.feature_scale);
      env->get("noise_std", s.noise_std);
      env->get("horizon", s.horizon);
      env->get("init_mean", s.init_mean);
      env->get("init_std", s.init_std);
      env->get("state_bound", s.state_bound);
      env->get("action_bound", s.action_bound);
      env->get("state_weight", s.state_weight);
      env->get("action_weight", s.action_weight);
    } else {
      throw ConfigError("unknown env.kind '" + kind +
                        "' (expected gridworld, trap_chain or linear_control)");
    }
    env->finish();
  } else {
    throw ConfigError("config.env is required");
  }

  if (auto expert = root.child("expert")) {
    expert->get("n_e", c.n_e);
    expert->get("pool_trajectories", c.expert_pool);
    expert->get("single_trajectory", c.single_trajectory);
    expert->get("noise_std", c.expert_noise_std);
    expert->finish();
  }
  if (auto behavior = root.child("behavior")) {
    BehaviorConfig& b = c.behavior;
    behavior->get("target_score", b.target_score);
    behavior->get("epsilon", b.epsilon);
    if (behavior->has("action_probs")) {
      std::vector<double> probs;
      behavior->get("action_probs", probs);
      b.action_probs = probs;
    }
    behavior->get("noise_std", b.noise_std);
    behavior->get("random_action_prob", b.random_action_prob);
    behavior->get("random_mixture", b.random_mixture);
    behavior->get("label", b.label);
    behavior->finish();
  }
  if (auto offline = root.child("offline")) {
    offline->get("n_o", c.n_o);
    offline->finish();
  }
  if (auto model = root.child("model")) {
    std::string kind = c.env == EnvKind::kLinearControl ? "knr" : "tabular";
    model->get("kind", kind);
    const std::string expected = c.env == EnvKind::kLinearControl ? "knr" : "tabular";
    if (kind != expected) {
      throw ConfigError("model.kind '" + kind + "' does not match env (expected " + expected +
                        ")");
    }
    model->get("lambda", c.solver.model_lambda);
    model->get("delta", c.solver.delta);
    model->get("ensemble_members", c.solver.ensemble_members);
    model->finish();
  }
  if (auto penalty = root.child("penalty")) {
    std::string variant = "theory";
    penalty->get("variant", variant);
    if (variant == "theory") {
      c.solver.penalty = PenaltyVariant::kTheory;
    } else if (variant == "ensemble") {
      c.solver.penalty = PenaltyVariant::kEnsemble;
    } else if (variant == "none") {
      c.solver.penalty = PenaltyVariant::kNone;
    } else {
      throw ConfigError("unknown penalty.variant '" + variant + "'");
    }
    penalty->get("lambda_penalty", c.solver.lambda_penalty);
    penalty->finish();
  }
  if (auto disc = root.child("discriminator")) {
    std::string kind = "mmd";
    disc->get("kind", kind);
    if (kind == "mmd") {
      c.discriminator = DiscriminatorKind::kMMD;
    } else if (kind == "cost_shaped") {
      c.discriminator = DiscriminatorKind::kCostShaped;
    } else {
      throw ConfigError("unknown discriminator.kind '" + kind + "'");
    }
    disc->get("class_size", c.class_size);
    disc->get("rff_features", c.solver.rff_features);
    disc->get("rff_bandwidth", c.solver.rff_bandwidth);
    disc->get("radius_sq", c.solver.discriminator_radius_sq);
    disc->finish();
  }
  if (auto solver = root.child("solver")) {
    std::string mode = "npg";
    solver->get("mode", mode);
    if (mode == "npg") {
      c.solver.mode = SolverMode::kNPG;
    } else if (mode == "best_response") {
      c.solver.mode = SolverMode::kBestResponse;
    } else {
      throw ConfigError("unknown solver.mode '" + mode + "'");
    }
    MiloConfig& m = c.solver;
    solver->get("iterations", m.iterations);
    solver->get("lambda_bc", m.lambda_bc);
    solver->get("bc_warm_start", m.bc_warm_start);
    solver->get("max_kl", m.npg.max_kl);
    solver->get("damping", m.npg.damping);
    solver->get("cg_iters", m.npg.cg_iters);
    solver->get("step_size", m.npg.step_size);
    solver->get("batch_size", m.sampled.batch_size);
    solver->get("gamma", m.sampled.gamma);
    solver->get("gae_lambda", m.sampled.gae_lambda);
    solver->get("critic_l2", m.sampled.critic_l2);
    solver->get("eval_episodes", m.eval_episodes);
    solver->finish();
  }
  c.solver.sampled.npg = c.solver.npg;
  c.solver.npg.lambda_bc = c.solver.lambda_bc;
  c.solver.sampled.npg.lambda_bc = c.solver.lambda_bc;

  if (const json* methods = root.raw("methods")) {
    if (!methods->is_array()) throw ConfigError("config.methods must be an array of strings");
    c.methods.clear();
    for (const json& m : *methods) {
      if (!m.is_string()) throw ConfigError("config.methods must be an array of strings");
      c.methods.push_back(m.get<std::string>());
    }
  }
  if (const json* seeds = root.raw("seeds")) {
    if (!seeds->is_array()) throw ConfigError("config.seeds must be an array of integers");
    c.seeds.clear();
    for (const json& s : *seeds) {
      if (!s.is_number_integer() || s.get<long long>() < 0) {
        throw ConfigError("config.seeds must hold nonnegative integers");
      }
      c.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  root.get("threads", c.threads);
  root.get("out", c.out_dir);
  root.finish();

  require(c.n_e >= 1, "expert.n_e must be at least 1");
  require(c.expert_pool >= 1, "expert.pool_trajectories must be at least 1");
  require(c.expert_noise_std >= 0.0, "expert.noise_std must be nonnegative");
  require(c.n_o >= 1, "offline.n_o must be at least 1");
  require(!c.seeds.empty(), "config.seeds must be nonempty");
  require(!c.methods.empty(), "config.methods must be nonempty");
  for (const std::string& m : c.methods) {
    const auto& known = known_methods();
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw ConfigError("unknown method '" + m + "'");
    }
  }
  require(c.threads >= 0, "config.threads must be nonnegative");
  require(c.class_size >= 1, "discriminator.class_size must be at least 1");
  require(c.solver.iterations >= 1, "solver.iterations must be at least 1");
  require(c.solver.lambda_penalty >= 0.0 && c.solver.lambda_penalty <= 1.0,
          "penalty.lambda_penalty must lie in [0, 1]");
  require(c.solver.sampled.batch_size >= 1, "solver.batch_size must be at least 1");
  require(c.solver.eval_episodes >= 1, "solver.eval_episodes must be at least 1");
  const BehaviorConfig& b = c.behavior;
  if (b.target_score) {
    require(*b.target_score >= 0.0 && *b.target_score <= 1.0,
            "behavior.target_score must lie in [0, 1]");
  }
  if (b.epsilon) require(*b.epsilon >= 0.0 && *b.epsilon <= 1.0, "behavior.epsilon must lie in [0, 1]");
  require(b.noise_std >= 0.0, "behavior.noise_std must be nonnegative");
  require(b.random_action_prob >= 0.0 && b.random_action_prob <= 1.0,
          "behavior.random_action_prob must lie in [0, 1]");
  require(b.random_mixture >= 0.0 && b.random_mixture <= 1.0,
          "behavior.random_mixture must lie in [0, 1]");
  if (c.env != EnvKind::kLinearControl && !b.target_score && !b.epsilon && !b.action_probs) {
    throw ConfigError("tabular behavior needs target_score, epsilon or action_probs");
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

json ExperimentConfig::to_json() const {
  json env;
  env["kind"] = env_kind_id(this->env);
  switch (this->env) {
    case EnvKind::kGridworld:
      env.update({{"width", gridworld.width},
                  {"height", gridworld.height},
                  {"horizon", gridworld.horizon},
                  {"slip", gridworld.slip},
                  {"goal_x", gridworld.goal_x},
                  {"goal_y", gridworld.goal_y},
                  {"start_cells", gridworld.start_cells}});
      break;
    case EnvKind::kTrapChain:
      env.update({{"length", trap_chain.length},
                  {"horizon", trap_chain.horizon},
                  {"step_cost", trap_chain.step_cost},
                  {"slip", trap_chain.slip}});
      break;
    case EnvKind::kLinearControl: {
      const LinearControlSpec& s = linear_control;
      env.update({{"a_matrix", mat_json(s.a_matrix)},
                  {"b_matrix", mat_json(s.b_matrix)},
                  {"feature_scale", s.feature_scale},
                  {"noise_std", s.noise_std},
                  {"horizon", s.horizon},
                  {"init_mean", vec_json(s.init_mean)},
                  {"init_std", s.init_std},
                  {"state_bound", s.state_bound},
                  {"action_bound", s.action_bound},
                  {"state_weight", s.state_weight},
                  {"action_weight", s.action_weight}});
      break;
    }
  }
  json behavior = {{"noise_std", this->behavior.noise_std},
                   {"random_action_prob", this->behavior.random_action_prob},
                   {"random_mixture", this->behavior.random_mixture},
                   {"label", this->behavior.label}};
  if (this->behavior.target_score) behavior["target_score"] = *this->behavior.target_score;
  if (this->behavior.epsilon) behavior["epsilon"] = *this->behavior.epsilon;
  if (this->behavior.action_probs) behavior["action_probs"] = *this->behavior.action_probs;

  return {
      {"name", name},
      {"env", env},
      {"expert",
       {{"n_e", n_e},
        {"pool_trajectories", expert_pool},
        {"single_trajectory", single_trajectory},
        {"noise_std", expert_noise_std}}},
      {"behavior", behavior},
      {"offline", {{"n_o", n_o}}},
      {"model",
       {{"kind", this->env == EnvKind::kLinearControl ? "knr" : "tabular"},
        {"lambda", solver.model_lambda},
        {"delta", solver.delta},
        {"ensemble_members", solver.ensemble_members}}},
      {"penalty", {{"variant", penalty_id(solver.penalty)}, {"lambda_penalty", solver.lambda_penalty}}},
      {"discriminator",
       {{"kind", discriminator == DiscriminatorKind::kMMD ? "mmd" : "cost_shaped"},
        {"class_size", class_size},
        {"rff_features", solver.rff_features},
        {"rff_bandwidth", solver.rff_bandwidth},
        {"radius_sq", solver.discriminator_radius_sq}}},
      {"solver",
       {{"mode", solver.mode == SolverMode::kNPG ? "npg" : "best_response"},
        {"iterations", solver.iterations},
        {"lambda_bc", solver.lambda_bc},
        {"bc_warm_start", solver.bc_warm_start},
        {"max_kl", solver.npg.max_kl},
        {"damping", solver.npg.damping},
        {"cg_iters", solver.npg.cg_iters},
        {"step_size", solver.npg.step_size},
        {"batch_size", solver.sampled.batch_size},
        {"gamma", solver.sampled.gamma},
        {"gae_lambda", solver.sampled.gae_lambda},
        {"critic_l2", solver.sampled.critic_l2},
        {"eval_episodes", solver.eval_episodes}}},
      {"methods", methods},
      {"seeds", seeds},
      {"threads", threads},
      {"out", out_dir},
  };
}

// ---------------------------------------------------------------- experiment

double epsilon_for_score(const FiniteMDP& env, const TabularPolicy& expert, double target) {
  require(target >= 0.0 && target <= 1.0, "target score must lie in [0, 1]");
  const double je = value(env, expert);
  const double jr = value(env, TabularPolicy::uniform(env.n_states(), env.n_actions()));
  auto score = [&](double eps) { return normalized_score(value(env, epsilon_mix(expert, eps)), jr, je); };
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (score(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  behavior_epsilon_ = std::numeric_limits<double>::quiet_NaN();
  if (tabular()) {
    mdp_ = config_.env == EnvKind::kGridworld ? make_gridworld(config_.gridworld)
                                              : make_trap_chain(config_.trap_chain);
    const FiniteMDP& env = *mdp_;
    tabular_expert_ = exact_value_iteration(env.dynamics(), env.cost()).policy;
    expert_value_ = value(env, tabular_expert_);
    random_value_ = value(env, TabularPolicy::uniform(env.n_states(), env.n_actions()));
    const BehaviorConfig& b = config_.behavior;
    if (b.action_probs) {
      require(static_cast<int>(b.action_probs->size()) == env.n_actions(),
              "behavior.action_probs must have one entry per action");
      Mat probs(env.n_states(), env.n_actions());
      for (int s = 0; s < env.n_states(); ++s) {
        for (int a = 0; a < env.n_actions(); ++a) probs(s, a) = (*b.action_probs)[a];
      }
      tabular_behavior_ = TabularPolicy(probs);
    } else {
      behavior_epsilon_ = b.epsilon ? *b.epsilon : epsilon_for_score(env, tabular_expert_, *b.target_score);
      tabular_behavior_ = epsilon_mix(tabular_expert_, behavior_epsilon_);
    }
    const double w = config_.behavior.random_mixture;
    behavior_value_ = (1.0 - w) * value(env, tabular_behavior_) + w * random_value_;
  } else {
    const LinearControlSpec& spec = config_.linear_control;
    control_ = make_linear_control(spec);
    const int ds = static_cast<int>(spec.a_matrix.rows());
    const int da = static_cast<int>(spec.b_matrix.cols());
    const Mat gain = lqr_gain(spec.a_matrix, spec.b_matrix, spec.state_weight * Mat::Identity(ds, ds),
                              spec.action_weight * Mat::Identity(da, da), spec.horizon);
    control_expert_ = std::make_shared<LinearFeedbackPolicy>(gain, Vec::Zero(da), 0.0);
    control_demonstrator_ =
        std::make_shared<LinearFeedbackPolicy>(gain, Vec::Zero(da), config_.expert_noise_std);
    auto noisy = std::make_shared<LinearFeedbackPolicy>(gain, Vec::Zero(da), config_.behavior.noise_std);
    control_behavior_ = std::make_shared<EpsilonUniformPolicy>(
        noisy, config_.behavior.random_action_prob, Vec::Constant(da, spec.action_bound));
    control_random_ = std::make_shared<UniformBoxPolicy>(Vec::Constant(da, spec.action_bound));
    expert_value_ = estimate_value(*control_, *control_expert_, kReferenceEpisodes, kEvalSeed);
    random_value_ = estimate_value(*control_, *control_random_, kReferenceEpisodes, kEvalSeed + 1);
    const double w = config_.behavior.random_mixture;
    behavior_value_ =
        (1.0 - w) * estimate_value(*control_, *control_behavior_, kReferenceEpisodes, kEvalSeed + 2) +
        w * random_value_;
  }
}

const FiniteMDP& Experiment::mdp() const {
  require(mdp_.has_value(), "experiment has no tabular environment");
  return *mdp_;
}

const LinearGaussianEnv& Experiment::control() const {
  require(control_.has_value(), "experiment has no continuous environment");
  return *control_;
}

double Experiment::behavior_score() const {
  return normalized_score(behavior_value_, random_value_, expert_value_);
}

std::string Experiment::env_id() const {
  switch (config_.env) {
    case EnvKind::kGridworld:
      return "gridworld-" + std::to_string(config_.gridworld.width) + "x" +
             std::to_string(config_.gridworld.height);
    case EnvKind::kTrapChain:
      return "trap-chain-" + std::to_string(config_.trap_chain.length);
    case EnvKind::kLinearControl:
      return "linear-control-" + std::to_string(config_.linear_control.a_matrix.rows()) + "d";
  }
  return "";
}

SeedData Experiment::generate(std::uint64_t seed) const {
  SeedData data;
  const std::uint64_t expert_seed = derive_seed(seed, 1);
  const std::uint64_t offline_seed = derive_seed(seed, 2);
  if (tabular()) {
    data.expert = config_.single_trajectory
                      ? single_trajectory_expert(*mdp_, tabular_expert_, expert_seed)
                      : generate_expert(*mdp_, tabular_expert_, config_.n_e, config_.expert_pool,
                                        expert_seed);
    const double w = config_.behavior.random_mixture;
    const std::vector<std::pair<TabularPolicy, double>> mixture = {
        {tabular_behavior_, 1.0 - w},
        {TabularPolicy::uniform(mdp_->n_states(), mdp_->n_actions()), w}};
    data.offline = generate_offline(*mdp_, mixture, config_.n_o, offline_seed);
  } else {
    data.expert = config_.single_trajectory
                      ? single_trajectory_expert(*control_, *control_demonstrator_, expert_seed)
                      : generate_expert(*control_, *control_demonstrator_, config_.n_e,
                                        config_.expert_pool, expert_seed);
    const double w = config_.behavior.random_mixture;
    const std::vector<std::pair<const ContinuousPolicy*, double>> mixture = {
        {control_behavior_.get(), 1.0 - w}, {control_random_.get(), w}};
    data.offline = generate_offline(*control_, mixture, config_.n_o, offline_seed);
  }
  data.expert.meta.env = env_id();
  data.expert.meta.policy = "expert";
  data.offline.meta.env = env_id();
  data.offline.meta.policy = config_.behavior.label.empty() ? "behavior" : config_.behavior.label;
  return data;
}

FiniteClass Experiment::cost_shaped_class(std::uint64_t seed) const {
  const Mat& cost = mdp().cost();
  std::vector<Mat> members{cost};
  Rng rng(derive_seed(seed, 3));
  std::uniform_real_distribution<double> scale(0.5, 1.0);
  for (int k = 1; k < config_.class_size; ++k) {
    Mat m = cost;
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) *= scale(rng);
    members.push_back(std::move(m));
  }
  return FiniteClass(std::move(members));
}

MethodRun Experiment::run(const std::string& method, const SeedData& data,
                          std::uint64_t seed) const {
  const auto& known = known_methods();
  if (std::find(known.begin(), known.end(), method) == known.end()) {
    throw ConfigError("unknown method '" + method + "'");
  }
  MiloConfig cfg = config_.solver;
  cfg.seed = derive_seed(seed, 4);
  if (method == "milo-nopess") cfg.lambda_penalty = 0.0;

  MethodRun out;
  out.method = method;
  out.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  if (method == "milo" || method == "milo-nopess") {
    if (tabular()) {
      std::optional<FiniteClass> cls;
      if (config_.discriminator == DiscriminatorKind::kCostShaped) cls = cost_shaped_class(seed);
      out.report = solve_milo(data.expert, data.offline, *mdp_, cfg, cls ? &*cls : nullptr).report;
    } else {
      out.report = solve_milo(data.expert, data.offline, *control_, cfg).report;
    }
  } else if (method == "bc-expert" || method == "bc-both") {
    const OfflineDataset* pooled = method == "bc-both" ? &data.offline : nullptr;
    IterationRecord rec;
    if (tabular()) {
      const TabularPolicy pi = bc_train(data.expert, pooled, mdp_->n_states(), mdp_->n_actions());
      rec.v_true = value(*mdp_, pi);
      rec.v_model = rec.v_true;
      rec.bc_loss = bc_loss(SoftmaxTabularPolicy::from_probs(pi, 1e-12), data.expert);
    } else {
      const GaussianLinearPolicy pi = bc_train_gaussian(data.expert, pooled);
      rec.v_true = estimate_value(*control_, MeanActionPolicy(pi), cfg.eval_episodes, cfg.seed + 17ULL);
      rec.v_model = rec.v_true;
      rec.bc_loss = bc_loss(pi, data.expert);
    }
    out.report.iterations.push_back(rec);
    out.report.final_v_true = rec.v_true;
  } else {
    if (!tabular()) throw ConfigError("offline-rl is only available for tabular environments");
    out.report = solve_offline_rl(data.offline, mdp_->cost(), *mdp_, cfg).report;
  }
  out.report.method = method;
  out.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.normalized_score = normalized_score(out.report.final_v_true, random_value_, expert_value_);
  return out;
}

CoverageReport Experiment::diagnose(const SeedData& data) const {
  CoverageReport report;
  const double delta = config_.solver.delta;
  if (tabular()) {
    const FiniteMDP& env = *mdp_;
    const Mat d_expert = occupancy(env, tabular_expert_);
    const Mat rho = empirical_distribution(data.offline.states, data.offline.actions,
                                           env.n_states(), env.n_actions());
    report.concentrability = concentrability(d_expert, rho);
    report.relative_condition_number =
        relative_condition_number(one_hot_covariance(d_expert), one_hot_covariance(rho));
    const TabularModel model = TabularModel::fit(data.offline, env.n_states(), env.n_actions(),
                                                 config_.solver.model_lambda);
    report.err = err_bounds(model.sigma_table(delta), d_expert, data.expert.size(),
                            config_.class_size, delta, env.horizon());
    if (!report.concentrability->infinite) {
      report.rate_bound = tabular_bound(report.concentrability->value, env.n_states(),
                                           env.n_actions(), data.offline.size(), delta,
                                           env.horizon());
    }
    return report;
  }

  const LinearGaussianEnv& env = *control_;
  const FeatureMap phi = env.feature_map();
  const int d = env.feature_dim();
  auto covariance = [&](const std::vector<Vec>& states, const std::vector<Vec>& actions) {
    Mat cov = Mat::Zero(d, d);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const Vec f = phi(states[i], actions[i]);
      cov += f * f.transpose();
    }
    return Mat(cov / static_cast<double>(states.size()));
  };
  const Mat sigma_e = covariance(data.expert.states, data.expert.actions);
  const Mat sigma_rho = covariance(data.offline.states, data.offline.actions);
  report.relative_condition_number = relative_condition_number(sigma_e, sigma_rho);

  KNRParams params;
  params.lambda = config_.solver.model_lambda;
  params.zeta = env.noise_std();
  params.w_norm_bound = Eigen::JacobiSVD<Mat>(env.w_star()).singularValues()(0);
  params.delta = delta;
  const KNRModel knr = KNRModel::fit(data.offline, phi, params);
  report.information_gain_bar = knr.information_gain_bar();
  std::vector<double> sigma_at_expert;
  for (int i = 0; i < data.expert.size(); ++i) {
    sigma_at_expert.push_back(knr.sigma(phi(data.expert.states[i], data.expert.actions[i])));
  }
  report.err = err_bounds(sigma_at_expert, data.expert.size(), config_.class_size, delta,
                          env.horizon());
  if (!report.relative_condition_number->infinite) {
    report.rate_bound =
        knr_bound(d, env.state_dim(), report.relative_condition_number->value,
                  data.offline.size(), delta, env.horizon());
  }

  // Linear-kernel GP on the KNR features: finite rank, so d* uses the exact
  // spectrum of E_rho[phi phi^T].
  const int n_gp = std::min(data.offline.size(), 400);
  OfflineDataset subset;
  for (int i = 0; i < n_gp; ++i) {
    subset.states.push_back(data.offline.states[i]);
    subset.actions.push_back(data.offline.actions[i]);
    subset.next_states.push_back(data.offline.next_states[i]);
  }
  const GPModel gp = GPModel::fit(subset, phi, KernelSpec::dot(), env.noise_std());
  report.information_gain = gp.information_gain();
  report.empirical_effective_dim =
      empirical_effective_dimension(sorted_eigenvalues(gp.gram()), env.noise_std());
  report.effective_dim =
      effective_dimension(sorted_eigenvalues(sigma_rho), data.offline.size(), env.noise_std());
  return report;
}

// ---------------------------------------------------------------- commands

json cmd_generate(const ExperimentConfig& config, const std::string& out_dir) {
  const Experiment exp(config);
  std::vector<SeedData> data(config.seeds.size());
  parallel_for(static_cast<int>(config.seeds.size()), config.threads,
               [&](int i) { data[static_cast<std::size_t>(i)] = exp.generate(config.seeds[static_cast<std::size_t>(i)]); });

  json files = json::array();
  const fs::path root(out_dir);
  fs::create_directories(root);
  json env_doc = exp.tabular() ? to_json(exp.mdp()) : config.to_json().at("env");
  write_text(root / "env.json", dump(env_doc));
  files.push_back("env.json");
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    const fs::path dir = seed_dir(out_dir, config.seeds[i]);
    fs::create_directories(dir);
    save_dataset(data[i].expert, (dir / "expert.jsonl").string());
    save_dataset(data[i].offline, (dir / "offline.jsonl").string());
    files.push_back(fs::relative(dir / "expert.jsonl", root).generic_string());
    files.push_back(fs::relative(dir / "offline.jsonl", root).generic_string());
  }

  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json manifest = {{"name", config.name},
                   {"env", exp.env_id()},
                   {"created", stamp},
                   {"config", config.to_json()},
                   {"expert_value", exp.expert_value()},
                   {"random_value", exp.random_value()},
                   {"behavior",
                    {{"label", config.behavior.label},
                     {"value", exp.behavior_value()},
                     {"normalized_score", exp.behavior_score()}}},
                   {"files", files}};
  if (!std::isnan(exp.behavior_epsilon())) manifest["behavior"]["epsilon"] = exp.behavior_epsilon();
  write_text(root / "manifest.json", dump(manifest));
  return manifest;
}

json cmd_run(const ExperimentConfig& config, const std::string& out_dir,
             const std::optional<std::string>& method) {
  std::vector<std::string> methods = config.methods;
  if (method) {
    const auto& known = known_methods();
    if (std::find(known.begin(), known.end(), *method) == known.end()) {
      throw ConfigError("unknown method '" + *method + "'");
    }
    methods = {*method};
  }
  const Experiment exp(config);
  const std::size_t n_seeds = config.seeds.size();
  std::vector<SeedData> data(n_seeds);
  parallel_for(static_cast<int>(n_seeds), config.threads, [&](int i) {
    const std::uint64_t seed = config.seeds[static_cast<std::size_t>(i)];
    const fs::path dir = seed_dir(out_dir, seed);
    SeedData& slot = data[static_cast<std::size_t>(i)];
    if (fs::exists(dir / "expert.jsonl") && fs::exists(dir / "offline.jsonl")) {
      slot.expert = load_expert((dir / "expert.jsonl").string());
      slot.offline = load_offline((dir / "offline.jsonl").string());
    } else {
      slot = exp.generate(seed);
    }
  });

  const int n_jobs = static_cast<int>(methods.size() * n_seeds);
  std::vector<MethodRun> runs(static_cast<std::size_t>(n_jobs));
  parallel_for(n_jobs, config.threads, [&](int job) {
    const std::size_t m = static_cast<std::size_t>(job) / n_seeds;
    const std::size_t s = static_cast<std::size_t>(job) % n_seeds;
    MethodRun run = exp.run(methods[m], data[s], config.seeds[s]);
    const fs::path dir = fs::path(out_dir) / "runs" / methods[m];
    std::ostringstream csv;
    run.report.write_csv(csv);
    write_text(dir / ("seed_" + std::to_string(config.seeds[s]) + ".csv"), csv.str());
    json doc = run.report.to_json();
    doc["seed"] = config.seeds[s];
    doc["normalized_score"] = run.normalized_score;
    write_text(dir / ("seed_" + std::to_string(config.seeds[s]) + ".json"), dump(doc));
    runs[static_cast<std::size_t>(job)] = std::move(run);
  });

  json per_method = json::object();
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> finals;
    std::vector<double> scores;
    bool aborted = false;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const MethodRun& r = runs[m * n_seeds + s];
      finals.push_back(r.report.final_v_true);
      scores.push_back(r.normalized_score);
      aborted = aborted || r.report.aborted;
    }
    per_method[methods[m]] = {{"final_v_true", stats_json(finals)},
                              {"normalized_score", stats_json(scores)},
                              {"any_aborted", aborted}};
  }
  json behavior = {{"label", config.behavior.label},
                   {"value", exp.behavior_value()},
                   {"normalized_score", exp.behavior_score()}};
  if (!std::isnan(exp.behavior_epsilon())) behavior["epsilon"] = exp.behavior_epsilon();
  json summary = {{"name", config.name},
                  {"env", exp.env_id()},
                  {"n_e", config.single_trajectory ? -1 : config.n_e},
                  {"n_o", config.n_o},
                  {"seeds", config.seeds},
                  {"expert_value", exp.expert_value()},
                  {"random_value", exp.random_value()},
                  {"behavior", behavior},
                  {"methods", per_method}};
  write_text(fs::path(out_dir) / "summary.json", dump(summary));
  return summary;
}

json cmd_diagnose(const ExperimentConfig& config, const std::string& out_dir) {
  const Experiment exp(config);
  const std::uint64_t seed = config.seeds.front();
  const fs::path dir = seed_dir(out_dir, seed);
  SeedData data;
  if (fs::exists(dir / "expert.jsonl") && fs::exists(dir / "offline.jsonl")) {
    data.expert = load_expert((dir / "expert.jsonl").string());
    data.offline = load_offline((dir / "offline.jsonl").string());
  } else {
    data = exp.generate(seed);
  }
  json doc = exp.diagnose(data).to_json();
  doc["env"] = exp.env_id();
  doc["seed"] = seed;
  doc["n_e"] = data.expert.size();
  doc["n_o"] = data.offline.size();
  doc["bounds_up_to_constants"] = true;
  write_text(fs::path(out_dir) / "coverage.json", dump(doc));
  return doc;
}

std::string to_markdown(const ReportTables& table) {
  std::ostringstream out;
  auto row = [&](const std::vector<std::string>& cells) {
    out << '|';
    for (const std::string& c : cells) out << ' ' << c << " |";
    out << '\n';
  };
  row(table.header);
  out << '|';
  for (std::size_t i = 0; i < table.header.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& r : table.rows) row(r);
  return out.str();
}

std::string to_csv(const ReportTables& table) {
  std::ostringstream out;
  auto cell = [](const std::string& c) {
    if (c.find_first_of(",\"\n") == std::string::npos) return c;
    std::string quoted = "\"";
    for (char ch : c) {
      if (ch == '"') quoted += '"';
      quoted += ch;
    }
    return quoted + "\"";
  };
  auto row = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cell(cells[i]);
    out << '\n';
  };
  row(table.header);
  for (const auto& r : table.rows) row(r);
  return out.str();
}

std::pair<ReportTables, ReportTables> cmd_report(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("no runs found: " + dir + " is not a directory");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.json") {
      paths.push_back(entry.path());
    }
  }
  if (paths.empty()) throw DataError("no runs found under " + dir);
  std::sort(paths.begin(), paths.end());

  std::vector<json> summaries;
  for (const fs::path& p : paths) {
    std::ifstream in(p);
    try {
      summaries.push_back(json::parse(in));
      const json& s = summaries.back();
      (void)s.at("name");
      (void)s.at("env");
      (void)s.at("methods");
      (void)s.at("behavior");
    } catch (const json::exception& e) {
      throw DataError("malformed summary " + p.string() + ": " + e.what());
    }
  }

  std::vector<std::string> methods;
  for (const std::string& m : known_methods()) {
    for (const json& s : summaries) {
      if (s.at("methods").contains(m)) {
        methods.push_back(m);
        break;
      }
    }
  }
  auto method_cells = [&](const json& s) {
    std::vector<std::string> cells;
    for (const std::string& m : methods) {
      cells.push_back(s.at("methods").contains(m)
                          ? format_number(s["methods"][m]["normalized_score"]["median"].get<double>())
                          : "");
    }
    return cells;
  };
  auto label = [](const json& s) {
    const std::string l = s.at("behavior").value("label", "");
    return l.empty() ? std::string("-") : l;
  };

  ReportTables scores;
  scores.header = {"experiment", "env", "behavior", "n_o"};
  for (const std::string& m : methods) scores.header.push_back(m);
  for (const json& s : summaries) {
    std::vector<std::string> row = {s.at("name").get<std::string>(), s.at("env").get<std::string>(),
                                    label(s), std::to_string(s.value("n_o", 0))};
    for (std::string& c : method_cells(s)) row.push_back(std::move(c));
    scores.rows.push_back(std::move(row));
  }

  std::vector<const json*> order;
  for (const json& s : summaries) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const json* a, const json* b) {
    const auto ka = std::make_pair(a->at("env").get<std::string>(), a->value("n_o", 0));
    const auto kb = std::make_pair(b->at("env").get<std::string>(), b->value("n_o", 0));
    if (ka != kb) return ka < kb;
    return a->at("behavior").value("normalized_score", 0.0) >
           b->at("behavior").value("normalized_score", 0.0);
  });
  ReportTables tiers;
  tiers.header = {"env", "n_o", "behavior", "behavior_score"};
  for (const std::string& m : methods) tiers.header.push_back(m);
  for (const json* s : order) {
    std::vector<std::string> row = {
        s->at("env").get<std::string>(), std::to_string(s->value("n_o", 0)), label(*s),
        format_number(s->at("behavior").value("normalized_score", 0.0))};
    for (std::string& c : method_cells(*s)) row.push_back(std::move(c));
    tiers.rows.push_back(std::move(row));
  }

  std::ostringstream md;
  md << "# Results\n\nMedian normalized score over seeds (1 = expert, 0 = uniform random).\n\n"
     << "## Scores\n\n"
     << to_markdown(scores) << "\n## Coverage tiers\n\n"
     << to_markdown(tiers);
  write_text(fs::path(dir) / "report.md", md.str());
  write_text(fs::path(dir) / "scores.csv", to_csv(scores));
  write_text(fs::path(dir) / "tiers.csv", to_csv(tiers));
  return {scores, tiers};
}

}  // namespace milo
