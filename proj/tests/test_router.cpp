#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fineft/router.hpp"

using namespace fineft;

TEST(EmaWindowScore, UnrolledRecursion) {
  const std::vector<double> w{0.8, 0.4};
  EXPECT_DOUBLE_EQ(ema_window_score(w, 0.5), 0.8);
  const std::vector<double> z{0.3, 0.9, 0.2};
  EXPECT_EQ(ema_window_score(z, 0.0), 0.2);
  EXPECT_THROW((void)ema_window_score({}, 0.5), Error);
}

TEST(EmaWindowScore, ConstantScoresGiveAGeometricSum) {
  for (std::size_t u : {1u, 2u, 7u, 60u})
    for (double g : {0.5, 0.9, 0.99}) {
      const std::vector<double> w(u, 0.7);
      EXPECT_NEAR(ema_window_score(w, g), 0.7 * (1.0 - std::pow(g, static_cast<double>(u))) / (1.0 - g), 1e-12);
    }
}

TEST(Route, UnitThresholdWithSingleStepWindowIsAlwaysConservative) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RouterConfig cfg{0.9, 1, 1.0, 0.05};
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<std::vector<double>> w(3);
    for (auto& x : w) x = {u(rng), u(rng), u(rng)};
    if (rep == 0) w[1].back() = 1.0;
    EXPECT_TRUE(route(w, cfg).conservative);
  }
}

TEST(Route, DominantDynamicIsChosen) {
  RouterConfig cfg{0.99, 1, 0.5, 0.05};
  const auto d = route({{0.0}, {0.0}, {1.0}, {0.0}}, cfg);
  EXPECT_FALSE(d.conservative);
  EXPECT_EQ(d.dynamic, 2u);
  EXPECT_EQ(d.score, 1.0);
  EXPECT_EQ(route({{0.6}, {0.6}}, cfg).dynamic, 0u);
}

TEST(Route, ThresholdRejectsTies) {
  RouterConfig cfg{0.5, 1, 0.5, 0.05};
  EXPECT_TRUE(route({{0.5}, {0.2}}, cfg).conservative);
  EXPECT_FALSE(route({{std::nextafter(0.5, 1.0)}, {0.2}}, cfg).conservative);
}

TEST(Route, ScalingKeepsTheWinnerButMayFlipTheBranch) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RouterConfig cfg{0.9, 4, 1.5, 0.05};
  std::size_t flips = 0;
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<std::vector<double>> w(4, std::vector<double>(4));
    for (auto& row : w)
      for (auto& x : row) x = u(rng);
    auto scaled = w;
    for (auto& row : scaled)
      for (auto& x : row) x *= 0.5;
    const auto a = route(w, cfg), b = route(scaled, cfg);
    EXPECT_EQ(a.dynamic, b.dynamic);
    flips += a.conservative != b.conservative ? 1 : 0;
  }
  EXPECT_GT(flips, 0u);
}

TEST(Route, ShortWindowIsFlagged) {
  RouterConfig cfg{0.9, 5, 0.1, 0.05};
  const auto d = route({{0.5, 0.5}, {0.1, 0.1}}, cfg);
  EXPECT_TRUE(d.partial_window);
  EXPECT_NEAR(d.score, 0.95, 1e-12);
  EXPECT_FALSE(route({{0.5, 0.5, 0.5, 0.5, 0.5, 0.5}}, cfg).partial_window);
}

TEST(RouteSeries, MatchesStepwiseRouting) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> s(3, std::vector<double>(40));
  for (auto& row : s)
    for (auto& x : row) x = u(rng);
  RouterConfig cfg{0.8, 6, 2.0, 0.05};
  const auto series = route_series(s, cfg);
  ASSERT_EQ(series.size(), 40u);
  for (std::size_t t = 0; t < 40; ++t) {
    std::vector<std::vector<double>> w(3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = (t >= 5 ? t - 5 : 0); k <= t; ++k) w[i].push_back(s[i][k]);
    const auto d = route(w, cfg);
    EXPECT_EQ(series[t].dynamic, d.dynamic);
    EXPECT_EQ(series[t].score, d.score);
    EXPECT_EQ(series[t].conservative, d.conservative);
  }
}

TEST(ConservativeAction, ClosesOnlyPastTheDrawdownLimit) {
  const ActionSpace space(8, 9, {5});
  Account acct;
  acct.position = 4.0;
  acct.leverage = 5;
  acct.avg_entry_price = 100.0;
  acct.trade_open_mb = 100000.0;
  acct.trade_peak_mb = 110000.0;
  acct.wallet = 104000.0;
  EXPECT_EQ(conservative_action(acct, 100.0, space, 0.05), 0u);
  acct.wallet = 106000.0;
  EXPECT_EQ(conservative_action(acct, 100.0, space, 0.05), space.index_of(4.0, 5));
  Account flat;
  flat.wallet = 1e5;
  EXPECT_EQ(conservative_action(flat, 100.0, space, 0.05), 0u);
}

TEST(ConservativeAction, NeverGrowsThePositionOrChangesLeverage) {
  const ActionSpace space(8, 9, {2, 5});
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(-8.0, 8.0), mb(5e4, 1.5e5), mark(50.0, 150.0);
  for (int rep = 0; rep < 2000; ++rep) {
    Account a;
    a.position = rep % 3 == 0 ? std::round(pos(rng) / 2.0) * 2.0 : pos(rng);
    a.leverage = rep % 2 == 0 ? 2 : 5;
    a.avg_entry_price = mark(rng);
    a.wallet = mb(rng);
    a.trade_open_mb = mb(rng);
    a.trade_peak_mb = a.trade_open_mb + mb(rng) * 0.1;
    const auto tgt = space.target(conservative_action(a, mark(rng), space, 0.05));
    EXPECT_LE(std::abs(tgt.position), std::abs(a.position) + 1e-12);
    EXPECT_GE(tgt.position * a.position, 0.0);
    if (tgt.position != 0.0) {
      EXPECT_EQ(tgt.leverage, a.leverage);
    }
  }
}

TEST(TuneRouter, GridSearch) {
  RouterGrid single{{0.95}, {30}, {0.4}, 0.05};
  const auto one = tune_router(single, [](const RouterConfig&) { return 1.0; });
  EXPECT_EQ(one.best, (RouterConfig{0.95, 30, 0.4, 0.05}));
  EXPECT_EQ(one.trials.size(), 1u);
  RouterGrid two{{0.9, 0.99}, {60}, {0.5}, 0.05};
  const auto best = tune_router(two, [](const RouterConfig& c) { return c.gamma > 0.95 ? 2.0 : 1.0; });
  EXPECT_EQ(best.best.gamma, 0.99);
  EXPECT_EQ(best.best_objective, 2.0);
  const auto tie = tune_router(two, [](const RouterConfig&) { return 0.0; });
  EXPECT_EQ(tie.best.gamma, 0.9);
  RouterGrid empty{{}, {60}, {0.5}, 0.05};
  EXPECT_THROW((void)tune_router(empty, [](const RouterConfig&) { return 0.0; }), Error);
}
