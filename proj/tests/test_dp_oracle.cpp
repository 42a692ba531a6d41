#include <gtest/gtest.h>

#include <random>

#include "fineft/dp_oracle.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace fineft;
using namespace fineft::oracles;

TEST(DpOracle, GreedyMatchesExhaustiveSearch) {
  std::mt19937_64 rng(2024);
  const auto cfg = three_action_config();
  for (int instance = 0; instance < 10; ++instance) {
    auto ds = random_instance(rng, 7);
    auto q = optimal_action_value(ds, {0, 7}, cfg);
    auto greedy = greedy_rollout(q, ds, cfg);
    ASSERT_EQ(greedy.actions.size(), 6u);
    const double best = brute_force_max(ds, cfg, 6);
    EXPECT_NEAR(env_return(ds, cfg, greedy.actions), best, 1e-9) << "instance " << instance;
    EXPECT_NEAR(greedy.total_reward, best, 1e-9);
    EXPECT_NEAR(q.value(0, 0, greedy.actions[0]), best, 1e-9);
  }
}

TEST(DpOracle, TwoLeverageInstancesMatchExhaustiveSearch) {
  std::mt19937_64 rng(7);
  EnvConfig cfg;
  cfg.action_space = ActionSpace(2, 3, {2, 5});
  ASSERT_EQ(cfg.action_space.size(), 5u);
  for (int instance = 0; instance < 5; ++instance) {
    auto ds = random_instance(rng, 5);
    auto q = optimal_action_value(ds, {0, 5}, cfg);
    EXPECT_NEAR(env_return(ds, cfg, greedy_rollout(q, ds, cfg).actions), brute_force_max(ds, cfg, 4), 1e-9);
  }
}

TEST(DpOracle, FlatMarketWithoutCostsIsZero) {
  auto ds = fixtures::toy_dataset(std::vector<double>(6, 100.0));
  for (auto& b : ds.lob) b = LobSnapshot{b.ts, {{100.0, 1e6}}, {{100.0, 1e6}}};
  EnvConfig cfg;
  cfg.fee_rate = 0;
  auto q = optimal_action_value(ds, {0, 6}, cfg);
  for (std::size_t t = 0; t < q.steps(); ++t)
    for (std::size_t p = 0; p < q.actions(); ++p)
      for (std::size_t a = 0; a < q.actions(); ++a) ASSERT_EQ(q.value(t, p, a), 0.0);
}

TEST(DpOracle, MaskedCellsDifferByPenalty) {
  std::mt19937_64 rng(3);
  auto ds = random_instance(rng, 6);
  auto cfg = three_action_config();
  cfg.action_space = ActionSpace(2, 3, {1});
  DpConfig dp;
  dp.capital = 200.0;  // 2 contracts at ~100 and 1x need ~200 of margin
  auto q = optimal_action_value(ds, {0, 6}, cfg, dp);
  std::size_t masked = 0, open = 0;
  for (std::size_t t = 0; t + 1 < q.steps(); ++t)
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t a = 0; a < 3; ++a) {
        const double r = transition_reward(ds, t, p, a, cfg);
        const double margin = a == 0 ? 0.0 : 2.0 * ds.marks[t].mark;
        EXPECT_EQ(q.masked(t, p, a), 200.0 + r <= margin);
        if (q.masked(t, p, a)) {
          ++masked;
          EXPECT_EQ(q.value(t, p, a), q.unmasked(t, p, a) - dp.mask_penalty);
        } else {
          ++open;
          EXPECT_EQ(q.value(t, p, a), q.unmasked(t, p, a));
        }
      }
  EXPECT_GT(masked, 0u);
  EXPECT_GT(open, 0u);
}

TEST(DpOracle, PenaltyDoesNotMoveUnmaskedCells) {
  std::mt19937_64 rng(5);
  auto ds = random_instance(rng, 7);
  auto cfg = three_action_config();
  cfg.action_space = ActionSpace(2, 3, {1});
  DpConfig a, b;
  a.capital = b.capital = 200.0;
  b.mask_penalty = 1e12;
  auto qa = optimal_action_value(ds, {0, 7}, cfg, a);
  auto qb = optimal_action_value(ds, {0, 7}, cfg, b);
  for (std::size_t t = 0; t < qa.steps(); ++t)
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t x = 0; x < 3; ++x)
        if (!qa.masked(t, p, x)) {
          EXPECT_EQ(qa.value(t, p, x), qb.value(t, p, x));
        }
}

TEST(DpOracle, RebuildAndDumpAreBitIdentical) {
  std::mt19937_64 rng(9);
  auto ds = random_instance(rng, 12);
  const auto cfg = three_action_config();
  auto q1 = optimal_action_value(ds, {2, 12}, cfg);
  auto q2 = optimal_action_value(ds, {2, 12}, cfg);
  EXPECT_EQ(q1, q2);
  auto path = fixtures::scratch_dir("dp_dump") / "qstar.bin";
  q1.save(path);
  EXPECT_EQ(OptimalQTable::load(path), q1);
  EXPECT_THROW(optimal_action_value(ds, {3, 4}, cfg), Error);
}

TEST(DemoTransitions, OptimalActorDominatesConstantPolicies) {
  std::mt19937_64 rng(11);
  auto ds = random_instance(rng, 40);
  auto cfg = three_action_config();
  auto q = optimal_action_value(ds, {0, 40}, cfg);
  FuturesEnv env(ds, cfg);
  auto rolls = demo_transitions(q, env);
  ASSERT_EQ(rolls.size(), 4u);
  std::size_t count = 0;
  for (const auto& r : rolls) {
    EXPECT_FALSE(r.liquidated);
    EXPECT_GE(rolls[0].total_reward + 1e-9, r.total_reward) << to_string(r.policy);
    count += r.transitions.size();
    for (const auto& tr : r.transitions) EXPECT_EQ(tr.q_star_row.size(), 3u);
  }
  EXPECT_EQ(count, 4u * 39u);
  EXPECT_EQ(rolls[1].total_reward, 0.0);
}

TEST(DemoTransitions, MaxLongBeatsMaxShortOnRisingMarket) {
  std::vector<double> marks;
  for (int t = 0; t < 30; ++t) marks.push_back(100.0 + t);
  auto ds = fixtures::toy_dataset(marks, 0.05);
  auto cfg = three_action_config();
  auto q = optimal_action_value(ds, {0, 30}, cfg);
  FuturesEnv env(ds, cfg);
  auto rolls = demo_transitions(q, env, {DemoPolicy::MaxLong, DemoPolicy::MaxShort});
  EXPECT_GT(rolls[0].total_reward, 0.0);
  EXPECT_GT(rolls[0].total_reward, rolls[1].total_reward);
}
