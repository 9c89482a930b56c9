#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "milo/envs.hpp"
#include "milo/policy_opt.hpp"

namespace milo {
namespace {

TEST(Gridworld, RowsAreStochasticAndGoalAbsorbs) {
  GridworldSpec spec;
  spec.width = 5;
  spec.height = 4;
  spec.slip = 0.2;
  const FiniteMDP env = make_gridworld(spec);
  EXPECT_EQ(env.n_states(), 20);
  EXPECT_EQ(env.n_actions(), 4);
  env.dynamics().validate(true);
  const int goal = 3 * 5 + 4;
  for (int a = 0; a < 4; ++a) {
    EXPECT_DOUBLE_EQ(env.transition()(goal * 4 + a, goal), 1.0);
    EXPECT_DOUBLE_EQ(env.cost()(goal, a), 0.0);
    EXPECT_DOUBLE_EQ(env.cost()(0, a), 1.0);
  }
  EXPECT_DOUBLE_EQ(env.d0()(0), 1.0);
}

TEST(Gridworld, NoSlipMovesDeterministically) {
  GridworldSpec spec;
  spec.width = 3;
  spec.height = 3;
  spec.slip = 0.0;
  const FiniteMDP env = make_gridworld(spec);
  // From the center cell (1, 1) = index 4: up, down, left, right.
  EXPECT_DOUBLE_EQ(env.transition()(4 * 4 + 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(env.transition()(4 * 4 + 1, 7), 1.0);
  EXPECT_DOUBLE_EQ(env.transition()(4 * 4 + 2, 3), 1.0);
  EXPECT_DOUBLE_EQ(env.transition()(4 * 4 + 3, 5), 1.0);
  // Bumping into the wall keeps the agent in place.
  EXPECT_DOUBLE_EQ(env.transition()(0 * 4 + 2, 0), 1.0);
}

TEST(Gridworld, OptimalCostIsShortestPathWithoutSlip) {
  GridworldSpec spec;
  spec.slip = 0.0;
  spec.horizon = 30;
  const FiniteMDP env = make_gridworld(spec);
  const PlanResult plan = exact_value_iteration(env.dynamics(), env.cost());
  EXPECT_NEAR(plan.value, 14.0, 1e-12);  // Manhattan distance on the 8x8 grid
  EXPECT_NEAR(value(env, plan.policy), 14.0, 1e-12);
}

TEST(TrapChain, StructureMatchesSpec) {
  TrapChainSpec spec;
  const FiniteMDP env = make_trap_chain(spec);
  const int trap = spec.length;
  EXPECT_EQ(env.n_states(), spec.length + 1);
  env.dynamics().validate(true);
  EXPECT_DOUBLE_EQ(env.transition()(0 * 3 + kJump, trap), 1.0);
  EXPECT_DOUBLE_EQ(env.transition()(0 * 3 + kRight, 1), 1.0);
  EXPECT_DOUBLE_EQ(env.cost()(trap, kLeft), 1.0);
  EXPECT_DOUBLE_EQ(env.cost()(spec.length - 1, kJump), 0.0);
  EXPECT_DOUBLE_EQ(env.cost()(0, kRight), spec.step_cost);
  const PlanResult plan = exact_value_iteration(env.dynamics(), env.cost());
  EXPECT_NEAR(plan.value, spec.step_cost * (spec.length - 1), 1e-12);
}

TEST(RandomGenerators, ProduceValidObjects) {
  Rng rng(0);
  for (int k = 0; k < 20; ++k) {
    const FiniteMDP mdp = make_random_mdp(1 + k % 5, 1 + k % 3, 1 + k % 4, rng);
    mdp.dynamics().validate(true);
    EXPECT_GE(mdp.cost().minCoeff(), 0.0);
    EXPECT_LE(mdp.cost().maxCoeff(), 1.0);
    const Vec p = random_simplex(5, rng);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  }
}

TEST(EpsilonMix, EndpointsAndLinearity) {
  const TabularPolicy det = TabularPolicy::deterministic({0, 1, 2}, 3);
  EXPECT_EQ(epsilon_mix(det, 0.0).probs(), det.probs());
  EXPECT_TRUE(epsilon_mix(det, 1.0).probs().isApprox(TabularPolicy::uniform(3, 3).probs()));
  EXPECT_NEAR(epsilon_mix(det, 0.3)(1, 1), 0.7 + 0.1, 1e-15);
  EXPECT_THROW(epsilon_mix(det, 1.5), ConfigError);
}

TEST(Lqr, OneStepGainMatchesClosedForm) {
  Mat a(1, 1), b(1, 1), q(1, 1), r(1, 1);
  a << 1.0;
  b << 1.0;
  q << 1.0;
  r << 1.0;
  EXPECT_NEAR(lqr_gain(a, b, q, r, 1)(0, 0), -0.5, 1e-15);
}

TEST(Lqr, TwoStepGainMatchesDirectQuadraticMinimization) {
  const double a = 1.1, b = 0.4, q = 0.7, r = 0.2;
  Mat am(1, 1), bm(1, 1), qm(1, 1), rm(1, 1);
  am << a;
  bm << b;
  qm << q;
  rm << r;
  // Cost over (u0, u1) from x0 = 1: r u0^2 + q x1^2 + r u1^2 + q x2^2 with
  // x1 = a + b u0 and x2 = a x1 + b u1. Solve the 2x2 normal equations.
  Eigen::Matrix2d hess;
  Eigen::Vector2d lin;
  hess << r + q * b * b + q * a * a * b * b, q * a * b * b, q * a * b * b, r + q * b * b;
  lin << -(q * a * b + q * a * a * a * b), -(q * a * a * b);
  const Eigen::Vector2d u = hess.ldlt().solve(lin);
  EXPECT_NEAR(lqr_gain(am, bm, qm, rm, 2)(0, 0), u(0), 1e-12);
}

TEST(LinearControl, ExpertBeatsRandomPolicy) {
  const LinearControlSpec spec = LinearControlSpec::planar();
  const LinearGaussianEnv env = make_linear_control(spec);
  const Mat gain = lqr_gain(spec.a_matrix, spec.b_matrix, spec.state_weight * Mat::Identity(2, 2),
                            spec.action_weight * Mat::Identity(2, 2), spec.horizon);
  const LinearFeedbackPolicy expert(gain, Vec::Zero(2));
  const UniformBoxPolicy random(Vec::Constant(2, spec.action_bound));
  double je = 0.0, jr = 0.0;
  for (const Trajectory& t : rollout(env, expert, 1, 200)) {
    for (const Step& s : t) je += s.cost;
  }
  for (const Trajectory& t : rollout(env, random, 1, 200)) {
    for (const Step& s : t) jr += s.cost;
  }
  EXPECT_LT(je, 0.3 * jr);
}

TEST(LinearControl, MeanNextIsWStarTimesFeatures) {
  const LinearGaussianEnv env = make_linear_control(LinearControlSpec::planar());
  Vec s(2), a(2);
  s << 0.4, -0.2;
  a << 0.1, 0.3;
  EXPECT_TRUE(env.mean_next(s, a).isApprox(env.w_star() * env.features(s, a), 1e-14));
  // Inside the unit ball the model reproduces A s + B a.
  const LinearControlSpec spec = LinearControlSpec::planar();
  EXPECT_TRUE(env.mean_next(s, a).isApprox(spec.a_matrix * s + spec.b_matrix * a, 1e-12));
}

TEST(EpsilonUniformPolicy, AlwaysUniformAtEpsilonOne) {
  auto base = std::make_shared<LinearFeedbackPolicy>(Mat::Zero(1, 1), Vec::Constant(1, 9.0));
  const EpsilonUniformPolicy always(base, 1.0, Vec::Constant(1, 1.0));
  const EpsilonUniformPolicy never(base, 0.0, Vec::Constant(1, 1.0));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    EXPECT_LE(std::abs(always.act(Vec::Zero(1), rng)(0)), 1.0);
    EXPECT_EQ(never.act(Vec::Zero(1), rng)(0), 9.0);
  }
}

}  // namespace
}  // namespace milo
