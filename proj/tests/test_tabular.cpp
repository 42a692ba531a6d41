#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "fineft/tabular.hpp"
#include "oracles.hpp"

using namespace fineft;
using namespace fineft::oracles;

TEST(ValueIteration, MatchesPolicyEnumeration) {
  for (bool fwd : {true, false}) {
    const auto m = ring(fwd);
    const auto q = value_iteration(m, 0.9);
    const auto oracle = best_policy_q(m, 0.9);
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q[i], oracle[i], 1e-9);
  }
  FiniteMdp stochastic;
  stochastic.n_states = 2;
  stochastic.n_actions = 2;
  stochastic.kernel = {0.7, 0.3, 0.1, 0.9, 0.5, 0.5, 1.0, 0.0};
  stochastic.reward = {1.0, 0.0, -0.5, 2.0};
  stochastic.validate();
  const auto q = value_iteration(stochastic, 0.8);
  const auto oracle = best_policy_q(stochastic, 0.8);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q[i], oracle[i], 1e-9);
}

TEST(FiniteMdp, RejectsMalformedTables) {
  EXPECT_THROW((void)FiniteMdp::deterministic({{1, 5}}, {{0.0, 0.0}}), Error);
  EXPECT_THROW((void)FiniteMdp::deterministic({{0, 0}}, {{0.0}}), Error);
  FiniteMdp bad;
  bad.n_states = 1;
  bad.n_actions = 1;
  bad.kernel = {0.5};
  bad.reward = {0.0};
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW((void)value_iteration(ring(true), 1.0), Error);
}

TEST(TabularSelective, ConflictingDynamicsGetDistinctLearners) {
  TabularConfig cfg;
  cfg.n_learners = 2;
  const auto rep = tabular_selective_qlearning({ring(true), ring(false)}, cfg);
  ASSERT_EQ(rep.dynamics.size(), 2u);
  EXPECT_NE(rep.dynamics[0].assigned, rep.dynamics[1].assigned);
  for (const auto& d : rep.dynamics) {
    EXPECT_EQ(d.policy_match, 1.0);
    EXPECT_LE(d.sup_error, 1e-2);
    EXPECT_TRUE(d.converged_at.has_value());
  }
}

TEST(TabularSelective, SpareLearnersStayOutOfTheWay) {
  TabularConfig cfg;
  cfg.n_learners = 4;
  const auto rep = tabular_selective_qlearning({ring(true), ring(false)}, cfg);
  EXPECT_NE(rep.dynamics[0].assigned, rep.dynamics[1].assigned);
  for (const auto& d : rep.dynamics) {
    EXPECT_EQ(d.policy_match, 1.0);
    EXPECT_LE(d.sup_error, 1e-2);
  }
}

TEST(TabularSelective, SingleLearnerIsPlainQLearning) {
  TabularConfig cfg;
  cfg.n_learners = 1;
  cfg.rounds = 5;
  const auto m = ring(true);
  const auto rep = tabular_selective_qlearning({m}, cfg);
  EXPECT_EQ(rep.dynamics[0].assigned, 0u);
  EXPECT_LE(sup_distance(rep.learners[0], value_iteration(m, cfg.gamma)), 1e-3);
  EXPECT_EQ(rep.dynamics[0].policy_match, 1.0);
}

TEST(TabularSelective, DuplicatedDynamicsStillConverge) {
  TabularConfig cfg;
  cfg.n_learners = 3;
  const auto rep = tabular_selective_qlearning({ring(false), ring(false)}, cfg);
  for (const auto& d : rep.dynamics) {
    EXPECT_LE(d.sup_error, 1e-2);
    EXPECT_EQ(d.policy_match, 1.0);
  }
}

TEST(TabularSelective, RejectsMismatchedSpaces) {
  const auto small = FiniteMdp::deterministic({{0}}, {{1.0}});
  EXPECT_THROW((void)tabular_selective_qlearning({ring(true), small}, {}), Error);
  EXPECT_THROW((void)tabular_selective_qlearning({}, {}), Error);
}
