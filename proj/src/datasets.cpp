#include "milo/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace milo {
namespace {

template <typename RolloutFn>
ExpertDataset sample_expert_pairs(RolloutFn&& rollout_fn, int n_e, int pool_trajectories,
                                  std::uint64_t seed) {
  require(n_e >= 1, "n_e must be positive");
  require(pool_trajectories >= 1, "pool_trajectories must be positive");
  const std::vector<Trajectory> pool = rollout_fn(seed, pool_trajectories);
  std::vector<const Step*> steps;
  for (const Trajectory& traj : pool) {
    for (const Step& step : traj) steps.push_back(&step);
  }
  if (steps.empty()) throw DataError("expert pool is empty");

  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> picks;
  if (static_cast<std::size_t>(n_e) <= steps.size()) {
    std::vector<std::size_t> order(steps.size());
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first n_e entries are a uniform sample without replacement.
    for (int i = 0; i < n_e; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    picks.assign(order.begin(), order.begin() + n_e);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, steps.size() - 1);
    for (int i = 0; i < n_e; ++i) picks.push_back(pick(rng));
  }

  ExpertDataset out;
  out.meta.seed = seed;
  for (std::size_t idx : picks) {
    out.states.push_back(steps[idx]->state);
    out.actions.push_back(steps[idx]->action);
  }
  return out;
}

template <typename RolloutFn>
OfflineDataset pool_offline(RolloutFn&& rollout_one, const std::vector<double>& weights, int n_o,
                            std::uint64_t seed) {
  require(n_o >= 1, "n_o must be positive");
  require(!weights.empty(), "behavior mixture is empty");
  for (double w : weights) require(w >= 0.0 && std::isfinite(w), "mixture weights must be nonnegative");
  require(std::accumulate(weights.begin(), weights.end(), 0.0) > 0.0,
          "mixture weights must not all be zero");
  std::discrete_distribution<int> component(weights.begin(), weights.end());
  Rng rng(seed);
  OfflineDataset out;
  out.meta.seed = seed;
  while (out.size() < n_o) {
    const int k = component(rng);
    const std::uint64_t traj_seed = rng();
    const Trajectory traj = rollout_one(k, traj_seed);
    if (traj.empty()) throw DataError("behavior rollout produced no transitions");
    for (const Step& step : traj) {
      if (out.size() >= n_o) break;
      out.states.push_back(step.state);
      out.actions.push_back(step.action);
      out.next_states.push_back(step.next_state);
    }
  }
  return out;
}

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) {
    const double x = v(i);
    if (std::isfinite(x) && std::floor(x) == x && std::abs(x) < 9.0e15) {
      arr.push_back(static_cast<std::int64_t>(x));
    } else {
      arr.push_back(x);
    }
  }
  return arr;
}

Vec vec_from_json(const nlohmann::json& arr, const std::string& where) {
  if (!arr.is_array()) throw DataError(where + ": expected an array of numbers");
  Vec v(static_cast<int>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw DataError(where + ": expected an array of numbers");
    v(static_cast<int>(i)) = arr[i].get<double>();
  }
  return v;
}

void write_lines(const std::string& path, const nlohmann::json& header,
                 const std::vector<nlohmann::json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << header.dump() << '\n';
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw DataError("failed writing " + path);
}

nlohmann::json header_for(const std::string& kind, const DatasetMeta& meta, int n) {
  return {{"kind", kind}, {"env", meta.env}, {"policy", meta.policy}, {"seed", meta.seed}, {"n", n}};
}

struct ParsedFile {
  DatasetMeta meta;
  int n = 0;
  std::vector<std::pair<int, nlohmann::json>> records;  // (line number, record)
};

ParsedFile read_lines(const std::string& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  ParsedFile parsed;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON");
    }
    if (!have_header) {
      try {
        if (doc.at("kind").get<std::string>() != kind) {
          throw DataError(path + ":" + std::to_string(line_no) + ": expected a " + kind +
                          " dataset");
        }
        parsed.meta.env = doc.at("env").get<std::string>();
        parsed.meta.policy = doc.value("policy", std::string());
        parsed.meta.seed = doc.at("seed").get<std::uint64_t>();
        parsed.n = doc.at("n").get<int>();
      } catch (const nlohmann::json::exception&) {
        throw DataError(path + ":" + std::to_string(line_no) + ": malformed header");
      }
      have_header = true;
      continue;
    }
    parsed.records.emplace_back(line_no, std::move(doc));
  }
  if (!have_header) throw DataError(path + ": empty dataset file");
  if (static_cast<int>(parsed.records.size()) != parsed.n) {
    throw DataError(path + ": header declares " + std::to_string(parsed.n) + " records but " +
                    std::to_string(parsed.records.size()) + " were found");
  }
  if (parsed.n < 1) throw DataError(path + ": dataset has no records");
  return parsed;
}

Vec field(const nlohmann::json& record, const char* key, const std::string& where) {
  if (!record.is_object() || !record.contains(key)) {
    throw DataError(where + ": missing field \"" + key + "\"");
  }
  return vec_from_json(record.at(key), where);
}

bool same_vectors(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

bool ExpertDataset::operator==(const ExpertDataset& other) const {
  return meta == other.meta && same_vectors(states, other.states) &&
         same_vectors(actions, other.actions);
}

bool OfflineDataset::operator==(const OfflineDataset& other) const {
  return meta == other.meta && same_vectors(states, other.states) &&
         same_vectors(actions, other.actions) && same_vectors(next_states, other.next_states);
}

ExpertDataset generate_expert(const FiniteMDP& env, const TabularPolicy& expert, int n_e,
                              int pool_trajectories, std::uint64_t seed) {
  return sample_expert_pairs(
      [&](std::uint64_t s, int n) { return rollout(env, expert, s, n); }, n_e,
      pool_trajectories, seed);
}

ExpertDataset generate_expert(const LinearGaussianEnv& env, const ContinuousPolicy& expert,
                              int n_e, int pool_trajectories, std::uint64_t seed) {
  return sample_expert_pairs(
      [&](std::uint64_t s, int n) { return rollout(env, expert, s, n); }, n_e,
      pool_trajectories, seed);
}

OfflineDataset generate_offline(const FiniteMDP& env, const TabularPolicy& behavior, int n_o,
                                std::uint64_t seed) {
  const std::vector<std::pair<TabularPolicy, double>> mixture = {{behavior, 1.0}};
  return generate_offline(env, mixture, n_o, seed);
}

OfflineDataset generate_offline(const FiniteMDP& env,
                                const std::vector<std::pair<TabularPolicy, double>>& mixture,
                                int n_o, std::uint64_t seed) {
  std::vector<double> weights;
  for (const auto& [policy, w] : mixture) weights.push_back(w);
  return pool_offline(
      [&](int k, std::uint64_t s) { return rollout(env, mixture[k].first, s, 1).front(); },
      weights, n_o, seed);
}

OfflineDataset generate_offline(const LinearGaussianEnv& env, const ContinuousPolicy& behavior,
                                int n_o, std::uint64_t seed) {
  const std::vector<std::pair<const ContinuousPolicy*, double>> mixture = {{&behavior, 1.0}};
  return generate_offline(env, mixture, n_o, seed);
}

OfflineDataset generate_offline(
    const LinearGaussianEnv& env,
    const std::vector<std::pair<const ContinuousPolicy*, double>>& mixture, int n_o,
    std::uint64_t seed) {
  std::vector<double> weights;
  for (const auto& [policy, w] : mixture) {
    require(policy != nullptr, "null behavior policy");
    weights.push_back(w);
  }
  return pool_offline(
      [&](int k, std::uint64_t s) { return rollout(env, *mixture[k].first, s, 1).front(); },
      weights, n_o, seed);
}

ExpertDataset single_trajectory_expert(const FiniteMDP& env, const TabularPolicy& expert,
                                       std::uint64_t seed) {
  ExpertDataset out;
  out.meta.seed = seed;
  const std::vector<Trajectory> runs = rollout(env, expert, seed, 1);
  for (const Step& step : runs.front()) {
    out.states.push_back(step.state);
    out.actions.push_back(step.action);
  }
  return out;
}

ExpertDataset single_trajectory_expert(const LinearGaussianEnv& env,
                                       const ContinuousPolicy& expert, std::uint64_t seed) {
  ExpertDataset out;
  out.meta.seed = seed;
  const std::vector<Trajectory> runs = rollout(env, expert, seed, 1);
  for (const Step& step : runs.front()) {
    out.states.push_back(step.state);
    out.actions.push_back(step.action);
  }
  return out;
}

void save_dataset(const ExpertDataset& data, const std::string& path) {
  std::vector<nlohmann::json> records;
  records.reserve(data.size());
  for (int i = 0; i < data.size(); ++i) {
    records.push_back({{"s", vec_to_json(data.states[i])}, {"a", vec_to_json(data.actions[i])}});
  }
  write_lines(path, header_for("expert", data.meta, data.size()), records);
}

void save_dataset(const OfflineDataset& data, const std::string& path) {
  std::vector<nlohmann::json> records;
  records.reserve(data.size());
  for (int i = 0; i < data.size(); ++i) {
    records.push_back({{"s", vec_to_json(data.states[i])},
                       {"a", vec_to_json(data.actions[i])},
                       {"sp", vec_to_json(data.next_states[i])}});
  }
  write_lines(path, header_for("offline", data.meta, data.size()), records);
}

ExpertDataset load_expert(const std::string& path) {
  ParsedFile parsed = read_lines(path, "expert");
  ExpertDataset out;
  out.meta = parsed.meta;
  for (const auto& [line_no, record] : parsed.records) {
    const std::string where = path + ":" + std::to_string(line_no);
    out.states.push_back(field(record, "s", where));
    out.actions.push_back(field(record, "a", where));
  }
  return out;
}

OfflineDataset load_offline(const std::string& path) {
  ParsedFile parsed = read_lines(path, "offline");
  OfflineDataset out;
  out.meta = parsed.meta;
  for (const auto& [line_no, record] : parsed.records) {
    const std::string where = path + ":" + std::to_string(line_no);
    out.states.push_back(field(record, "s", where));
    out.actions.push_back(field(record, "a", where));
    out.next_states.push_back(field(record, "sp", where));
    if (out.next_states.back().size() != out.states.back().size()) {
      throw DataError(where + ": s and sp have different lengths");
    }
  }
  return out;
}

int as_index(const Vec& v, int limit) {
  if (v.size() != 1) throw ConfigError("tabular entries must be one-element index vectors");
  const double x = v(0);
  if (!(x >= 0.0) || std::floor(x) != x || x >= limit) {
    throw ConfigError("expected an integer index in [0, " + std::to_string(limit) + "), got " +
                      std::to_string(x));
  }
  return static_cast<int>(x);
}

Mat empirical_distribution(const std::vector<Vec>& states, const std::vector<Vec>& actions,
                           int n_states, int n_actions) {
  require(states.size() == actions.size() && !states.empty(),
          "need a nonempty list of (s, a) pairs");
  Mat d = Mat::Zero(n_states, n_actions);
  for (std::size_t i = 0; i < states.size(); ++i) {
    d(as_index(states[i], n_states), as_index(actions[i], n_actions)) += 1.0;
  }
  return d / static_cast<double>(states.size());
}

}  // namespace milo
