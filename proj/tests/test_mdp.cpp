#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "milo/envs.hpp"
#include "milo/mdp.hpp"
#include "test_util.hpp"

namespace milo {
namespace {

using testing::random_table;

TEST(Occupancy, SingleStateSingleActionIsPointMass) {
  FiniteMDP mdp(1, 1, 7, Vec::Ones(1), Mat::Ones(1, 1), Mat::Constant(1, 1, 0.3));
  const Mat d = occupancy(mdp, TabularPolicy::uniform(1, 1));
  EXPECT_DOUBLE_EQ(d(0, 0), 1.0);
}

TEST(Occupancy, HorizonOneIsInitialTimesPolicy) {
  Rng rng(3);
  FiniteMDP base = make_random_mdp(4, 3, 1, rng);
  const TabularPolicy pi = random_policy(4, 3, rng);
  const Mat d = occupancy(base, pi);
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(d(s, a), base.d0()(s) * pi(s, a), 1e-15);
  }
}

TEST(Occupancy, NormalizedOnRandomInstances) {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    FiniteMDP mdp = make_random_mdp(1 + k % 6, 1 + k % 4, 1 + k % 9, rng);
    const Mat d = occupancy(mdp, random_policy(mdp.n_states(), mdp.n_actions(), rng));
    EXPECT_NEAR(d.sum(), 1.0, 1e-10);
    EXPECT_GE(d.minCoeff(), 0.0);
  }
}

TEST(Occupancy, MatchesIndependentMonteCarlo) {
  Rng rng(5);
  FiniteMDP mdp = make_random_mdp(4, 2, 5, rng);
  const TabularPolicy pi = random_policy(4, 2, rng);
  const Mat exact = occupancy(mdp, pi);

  const int n = 1000000;
  Mat counts = Mat::Zero(4, 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const Eigen::Ref<const Vec>& p) {
    double x = u(rng);
    for (int i = 0; i < p.size(); ++i) {
      x -= p(i);
      if (x < 0.0) return i;
    }
    return static_cast<int>(p.size()) - 1;
  };
  for (int i = 0; i < n; ++i) {
    int s = draw(mdp.d0());
    for (int t = 0; t < 5; ++t) {
      const int a = draw(pi.probs().row(s).transpose());
      counts(s, a) += 1.0;
      s = draw(mdp.transition().row(s * 2 + a).transpose());
    }
  }
  const Mat freq = counts / (5.0 * n);
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 2; ++a) {
      // Per-step indicator variance bounds the variance of the trajectory average.
      const double se = std::sqrt(exact(s, a) * (1.0 - exact(s, a)) / n);
      EXPECT_NEAR(freq(s, a), exact(s, a), 3.0 * se + 1e-12) << "s=" << s << " a=" << a;
    }
  }
}

TEST(Occupancy, RejectsMismatchedPolicy) {
  Rng rng(1);
  FiniteMDP mdp = make_random_mdp(3, 2, 4, rng);
  EXPECT_THROW(occupancy(mdp, TabularPolicy::uniform(3, 3)), ConfigError);
  EXPECT_THROW(occupancy(mdp, TabularPolicy::uniform(2, 2)), ConfigError);
}

TEST(Value, ZeroAndUnitCosts) {
  Rng rng(2);
  FiniteMDP mdp = make_random_mdp(5, 3, 9, rng);
  const TabularPolicy pi = random_policy(5, 3, rng);
  EXPECT_DOUBLE_EQ(value(mdp, pi, Mat::Zero(5, 3)), 0.0);
  EXPECT_NEAR(value(mdp, pi, Mat::Ones(5, 3)), 9.0, 1e-12);
}

TEST(Value, OccupancyIdentityOnRandomInstances) {
  Rng rng(17);
  for (int k = 0; k < 150; ++k) {
    FiniteMDP mdp = make_random_mdp(2 + k % 5, 1 + k % 3, 1 + k % 12, rng);
    const TabularPolicy pi = random_policy(mdp.n_states(), mdp.n_actions(), rng);
    const Mat f = random_table(mdp.n_states(), mdp.n_actions(), rng, -1.0, 1.0);
    const double v = value(mdp, pi, f);
    const double via_d = mdp.horizon() * (occupancy(mdp, pi).array() * f.array()).sum();
    EXPECT_NEAR(v, via_d, 1e-9);
  }
}

TEST(Value, MatchesPathEnumeration) {
  Rng rng(23);
  for (int k = 0; k < 10; ++k) {
    FiniteMDP mdp = make_random_mdp(3, 2, 4, rng);
    const TabularPolicy pi = random_policy(3, 2, rng);
    const Mat f = random_table(3, 2, rng);
    EXPECT_NEAR(value(mdp, pi, f), testing::path_enumeration_value(mdp, pi, f), 1e-12);
  }
}

TEST(Value, StateValuesEndAtZero) {
  Rng rng(4);
  FiniteMDP mdp = make_random_mdp(3, 2, 6, rng);
  const auto v = state_values(mdp.dynamics(), TabularPolicy::uniform(3, 2), mdp.cost());
  ASSERT_EQ(v.size(), 7u);
  EXPECT_EQ(v.back().norm(), 0.0);
  EXPECT_NEAR(mdp.d0().dot(v.front()), value(mdp, TabularPolicy::uniform(3, 2)), 1e-12);
}

TEST(Value, SubStochasticRowsLoseMassToZeroCostSink) {
  // Row for (0, 0) keeps half its mass; the rest vanishes with zero cost.
  Mat p(1, 1);
  p << 0.5;
  TabularDynamics dyn;
  dyn.n_states = 1;
  dyn.n_actions = 1;
  dyn.horizon = 3;
  dyn.d0 = Vec::Ones(1);
  dyn.transition = p;
  EXPECT_NEAR(value(dyn, TabularPolicy::uniform(1, 1), Mat::Ones(1, 1)), 1.0 + 0.5 + 0.25, 1e-15);
}

TEST(Rollout, DeterministicChainRepeatsOneTrajectory) {
  const FiniteMDP chain = testing::deterministic_chain(2, 1, 4);
  const auto runs = rollout(chain, TabularPolicy::uniform(2, 1), 9, 5);
  ASSERT_EQ(runs.size(), 5u);
  for (const Trajectory& traj : runs) {
    ASSERT_EQ(traj.size(), 4u);
    EXPECT_EQ(traj[0].state(0), 0.0);
    for (std::size_t t = 1; t < traj.size(); ++t) EXPECT_EQ(traj[t].state(0), 1.0);
    for (const Step& step : traj) EXPECT_EQ(step.cost, 0.5);
  }
}

TEST(Rollout, SameSeedSameOutput) {
  Rng rng(6);
  FiniteMDP mdp = make_random_mdp(5, 3, 8, rng);
  const TabularPolicy pi = random_policy(5, 3, rng);
  const auto a = rollout(mdp, pi, 42, 20);
  const auto b = rollout(mdp, pi, 42, 20);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t t = 0; t < a[i].size(); ++t) {
      EXPECT_EQ(a[i][t].state, b[i][t].state);
      EXPECT_EQ(a[i][t].action, b[i][t].action);
      EXPECT_EQ(a[i][t].next_state, b[i][t].next_state);
    }
  }
}

TEST(Rollout, TrajectoriesChainAndHaveLengthH) {
  Rng rng(8);
  FiniteMDP mdp = make_random_mdp(4, 2, 6, rng);
  for (const Trajectory& traj : rollout(mdp, TabularPolicy::uniform(4, 2), 1, 50)) {
    ASSERT_EQ(traj.size(), 6u);
    for (std::size_t t = 0; t + 1 < traj.size(); ++t) {
      EXPECT_EQ(traj[t].next_state, traj[t + 1].state);
    }
  }
}

TEST(Rollout, StateFrequenciesMatchOccupancy) {
  Rng rng(12);
  FiniteMDP mdp = make_random_mdp(4, 2, 5, rng);
  const TabularPolicy pi = random_policy(4, 2, rng);
  const Mat exact = occupancy(mdp, pi);
  const int n = 100000;
  Mat counts = Mat::Zero(4, 2);
  double total_cost = 0.0;
  std::vector<double> returns;
  for (const Trajectory& traj : rollout(mdp, pi, 77, n)) {
    double ret = 0.0;
    for (const Step& step : traj) {
      counts(static_cast<int>(step.state(0)), static_cast<int>(step.action(0))) += 1.0;
      ret += step.cost;
    }
    total_cost += ret;
    returns.push_back(ret);
  }
  const Mat freq = counts / (5.0 * n);
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 2; ++a) {
      const double se = std::sqrt(exact(s, a) * (1.0 - exact(s, a)) / n);
      EXPECT_NEAR(freq(s, a), exact(s, a), 3.0 * se + 1e-12);
    }
  }
  const double mean = total_cost / n;
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= n - 1;
  EXPECT_NEAR(mean, value(mdp, pi), 3.0 * std::sqrt(var / n));
}

TEST(Rollout, ContinuousIsDeterministicAndBounded) {
  const LinearControlSpec spec = LinearControlSpec::planar();
  const LinearGaussianEnv env = make_linear_control(spec);
  const UniformBoxPolicy policy(Vec::Constant(2, 5.0));
  const auto a = rollout(env, policy, 3, 10);
  const auto b = rollout(env, policy, 3, 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), static_cast<std::size_t>(spec.horizon));
    for (std::size_t t = 0; t < a[i].size(); ++t) {
      EXPECT_EQ(a[i][t].next_state, b[i][t].next_state);
      EXPECT_LE(a[i][t].next_state.cwiseAbs().maxCoeff(), spec.state_bound);
      EXPECT_GE(a[i][t].cost, 0.0);
      EXPECT_LE(a[i][t].cost, 1.0);
      EXPECT_LE(env.features(a[i][t].state, a[i][t].action).norm(), 1.0 + 1e-12);
      if (t + 1 < a[i].size()) {
        EXPECT_EQ(a[i][t].next_state, a[i][t + 1].state);
      }
    }
  }
}

TEST(SimulationGap, IdenticalInputsGiveZero) {
  Rng rng(21);
  FiniteMDP mdp = make_random_mdp(3, 2, 5, rng);
  const Mat f = random_table(3, 2, rng);
  const SimulationGap gap = simulation_gap(mdp, mdp.transition(), f, f, TabularPolicy::uniform(3, 2));
  EXPECT_NEAR(gap.lhs, 0.0, 1e-15);
  for (double term : gap.rhs_terms) EXPECT_NEAR(term, 0.0, 1e-15);
}

TEST(SimulationGap, ConstantShiftGivesMinusHDelta) {
  Rng rng(22);
  FiniteMDP mdp = make_random_mdp(3, 2, 7, rng);
  const Mat f = random_table(3, 2, rng);
  const Mat f_hat = f.array() + 0.25;
  const SimulationGap gap =
      simulation_gap(mdp, mdp.transition(), f, f_hat, random_policy(3, 2, rng));
  EXPECT_NEAR(gap.lhs, -7.0 * 0.25, 1e-12);
}

TEST(SimulationGap, EqualityOnRandomTuples) {
  Rng rng(31);
  for (int k = 0; k < 100; ++k) {
    const int S = 2 + k % 4;
    const int A = 1 + k % 3;
    FiniteMDP mdp = make_random_mdp(S, A, 1 + k % 8, rng);
    Mat p_hat = random_transition(S, A, rng);
    if (k % 2 == 1) p_hat *= 0.9;  // sub-stochastic model rows
    const Mat f = random_table(S, A, rng);
    const Mat f_hat = random_table(S, A, rng);
    const TabularPolicy pi = random_policy(S, A, rng);
    const SimulationGap gap = simulation_gap(mdp, p_hat, f, f_hat, pi);
    TabularDynamics model = mdp.with_transition(p_hat);
    const double lhs = value(mdp, pi, f) - value(model, pi, f_hat);
    EXPECT_NEAR(gap.lhs, lhs, 1e-12);
    double sum = 0.0;
    for (double term : gap.rhs_terms) sum += term;
    EXPECT_EQ(static_cast<int>(gap.rhs_terms.size()), mdp.horizon());
    EXPECT_NEAR(sum, gap.lhs, 1e-9);
  }
}

TEST(FiniteMDPValidation, RejectsMalformedInput) {
  const Vec d0 = Vec::Ones(1);
  EXPECT_THROW(FiniteMDP(1, 1, 3, d0, Mat::Constant(1, 1, 0.9), Mat::Zero(1, 1)), ConfigError);
  EXPECT_THROW(FiniteMDP(1, 1, 3, d0, Mat::Ones(1, 1), Mat::Constant(1, 1, 1.5)), ConfigError);
  EXPECT_THROW(FiniteMDP(1, 1, 0, d0, Mat::Ones(1, 1), Mat::Zero(1, 1)), ConfigError);
  EXPECT_THROW(FiniteMDP(1, 1, 3, Vec::Constant(1, 0.5), Mat::Ones(1, 1), Mat::Zero(1, 1)),
               ConfigError);
  Mat bad_policy(1, 2);
  bad_policy << 0.7, 0.7;
  EXPECT_THROW(TabularPolicy{bad_policy}, ConfigError);
}

TEST(FiniteMDPJson, RoundTrip) {
  Rng rng(41);
  FiniteMDP mdp = make_random_mdp(4, 3, 6, rng);
  const FiniteMDP back = finite_mdp_from_json(to_json(mdp));
  EXPECT_EQ(back.transition(), mdp.transition());
  EXPECT_EQ(back.cost(), mdp.cost());
  EXPECT_EQ(back.d0(), mdp.d0());
  EXPECT_EQ(back.horizon(), mdp.horizon());
}

TEST(FiniteMDPJson, MalformedDocumentIsConfigError) {
  EXPECT_THROW(finite_mdp_from_json(nlohmann::json{{"n_states", 2}}), ConfigError);
  Rng rng(1);
  nlohmann::json doc = to_json(make_random_mdp(2, 2, 3, rng));
  doc["cost"] = std::vector<double>{0.1};
  EXPECT_THROW(finite_mdp_from_json(doc), ConfigError);
}

TEST(SampleIndex, MissingMassReturnsSize) {
  Rng rng(0);
  Vec p = Vec::Zero(3);
  EXPECT_EQ(sample_index(p, rng), 3);
  p << 0.0, 1.0, 0.0;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_index(p, rng), 1);
}

TEST(PairFlattening, RowMajorRoundTrip) {
  Mat t(2, 3);
  t << 1, 2, 3, 4, 5, 6;
  const Vec flat = flatten_pairs(t);
  EXPECT_EQ(flat(1 * 3 + 2), 6.0);
  EXPECT_EQ(unflatten_pairs(flat, 2, 3), t);
}

}  // namespace
}  // namespace milo
