#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "milo/mdp.hpp"

namespace milo {

struct DatasetMeta {
  std::string env;
  std::string policy;
  std::uint64_t seed = 0;

  bool operator==(const DatasetMeta&) const = default;
};

/// (s, a) pairs from the expert's occupancy.
struct ExpertDataset {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  DatasetMeta meta;

  int size() const { return static_cast<int>(states.size()); }
  bool operator==(const ExpertDataset& other) const;
};

/// (s, a, s') triples from the behavior distribution.
struct OfflineDataset {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  std::vector<Vec> next_states;
  DatasetMeta meta;

  int size() const { return static_cast<int>(states.size()); }
  bool operator==(const OfflineDataset& other) const;
};

/// Rolls out `pool_trajectories` expert trajectories and draws n_e pairs
/// uniformly from the pool, without replacement when n_e fits in the pool.
ExpertDataset generate_expert(const FiniteMDP& env, const TabularPolicy& expert, int n_e,
                              int pool_trajectories, std::uint64_t seed);
ExpertDataset generate_expert(const LinearGaussianEnv& env, const ContinuousPolicy& expert,
                              int n_e, int pool_trajectories, std::uint64_t seed);

/// Pools full behavior trajectories until n_o triples are collected. Each
/// trajectory picks one mixture component with probability proportional to its
/// weight.
OfflineDataset generate_offline(const FiniteMDP& env, const TabularPolicy& behavior, int n_o,
                                std::uint64_t seed);
OfflineDataset generate_offline(const FiniteMDP& env,
                                const std::vector<std::pair<TabularPolicy, double>>& mixture,
                                int n_o, std::uint64_t seed);
OfflineDataset generate_offline(const LinearGaussianEnv& env, const ContinuousPolicy& behavior,
                                int n_o, std::uint64_t seed);
OfflineDataset generate_offline(
    const LinearGaussianEnv& env,
    const std::vector<std::pair<const ContinuousPolicy*, double>>& mixture, int n_o,
    std::uint64_t seed);

/// The (s, a) pairs of one full expert trajectory, in order.
ExpertDataset single_trajectory_expert(const FiniteMDP& env, const TabularPolicy& expert,
                                       std::uint64_t seed);
ExpertDataset single_trajectory_expert(const LinearGaussianEnv& env,
                                       const ContinuousPolicy& expert, std::uint64_t seed);

/// JSON Lines: a header {"kind", "env", "policy", "seed", "n"} then one record
/// per pair or triple. Integral values are written as integers.
void save_dataset(const ExpertDataset& data, const std::string& path);
void save_dataset(const OfflineDataset& data, const std::string& path);
ExpertDataset load_expert(const std::string& path);
OfflineDataset load_offline(const std::string& path);

/// Reads an integer index stored in a one-element vector. Throws ConfigError if
/// the entry is not a nonnegative integer below `limit`.
int as_index(const Vec& v, int limit);

/// Empirical distribution over S x A of tabular (s, a) pairs.
Mat empirical_distribution(const std::vector<Vec>& states, const std::vector<Vec>& actions,
                           int n_states, int n_actions);

}  // namespace milo
