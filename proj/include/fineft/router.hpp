#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "fineft/core.hpp"
#include "fineft/futures_env.hpp"

namespace fineft {

struct RouterConfig {
  double gamma{0.99};
  std::size_t window{60};  // number of per-step scores in the EMA window
  double tau{0.5};
  double drawdown{0.05};   // conservative policy's per-trade drawdown limit

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) fail("router: gamma must be in [0, 1)");
    if (window == 0) fail("router: window must be positive");
    if (std::isnan(tau)) fail("router: tau must be a number");
    if (!(drawdown > 0.0)) fail("router: drawdown must be positive");
  }

  bool operator==(const RouterConfig&) const = default;
};

// Re = gamma * Re + R_t over the window, starting from its first score.
[[nodiscard]] inline double ema_window_score(std::span<const double> scores, double gamma) {
  if (scores.empty()) fail("ema_window_score: empty window");
  double re = scores[0];
  for (std::size_t t = 1; t < scores.size(); ++t) re = gamma * re + scores[t];
  return re;
}

struct RouteDecision {
  bool conservative{false};
  std::size_t dynamic{0};   // winning dynamic
  double score{0.0};        // its EMA score
  std::vector<double> scores;
  bool partial_window{false};
};

// windows[i] holds dynamic i's most recent per-step scores (oldest first).
// The dynamic with the largest EMA score wins (ties to the lowest); the
// conservative policy is chosen when that score is <= tau.
[[nodiscard]] inline RouteDecision route(const std::vector<std::vector<double>>& windows, const RouterConfig& cfg) {
  if (windows.empty()) fail("route: no dynamics");
  RouteDecision d;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    const std::size_t take = std::min(w.size(), cfg.window);
    if (take < cfg.window) d.partial_window = true;
    d.scores.push_back(ema_window_score(std::span<const double>(w).last(take), cfg.gamma));
    if (d.scores.back() > d.scores[d.dynamic]) d.dynamic = i;
  }
  d.score = d.scores[d.dynamic];
  d.conservative = d.score <= cfg.tau;
  return d;
}

// Decisions for every step of per-step score series (dynamics x steps); step t
// uses scores up to and including t.
[[nodiscard]] inline std::vector<RouteDecision> route_series(const std::vector<std::vector<double>>& per_step,
                                                             const RouterConfig& cfg) {
  if (per_step.empty()) fail("route_series: no dynamics");
  const std::size_t n = per_step.front().size();
  for (const auto& s : per_step)
    if (s.size() != n) fail("route_series: score series differ in length");
  std::vector<RouteDecision> out;
  out.reserve(n);
  std::vector<std::vector<double>> windows(per_step.size());
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t + 1 >= cfg.window ? t + 1 - cfg.window : 0;
    for (std::size_t i = 0; i < per_step.size(); ++i)
      windows[i].assign(per_step[i].begin() + static_cast<std::ptrdiff_t>(lo),
                        per_step[i].begin() + static_cast<std::ptrdiff_t>(t + 1));
    out.push_back(route(windows, cfg));
  }
  return out;
}

// Closes when the current trade's drawdown from its peak margin balance,
// relative to the margin balance at entry, exceeds the limit; otherwise
// holds. Never opens: a flat account stays flat, and an off-grid position
// (after a partial fill) is held at the nearest pool position toward zero.
[[nodiscard]] inline std::size_t conservative_action(const Account& acct, double mark, const ActionSpace& space,
                                                     double drawdown_limit) {
  if (acct.position == 0.0) return 0;
  const double v = acct.margin_balance(mark);
  if (acct.trade_open_mb > 0.0 && (acct.trade_peak_mb - v) / acct.trade_open_mb > drawdown_limit) return 0;
  double hold = 0.0;
  for (double p : space.position_pool())
    if (p * acct.position > 0.0 && std::abs(p) <= std::abs(acct.position) + 1e-12 && std::abs(p) > std::abs(hold))
      hold = p;
  return hold == 0.0 ? 0 : space.index_of(hold, acct.leverage);
}

struct RouterGrid {
  std::vector<double> gamma{0.9, 0.99, 0.999};
  std::vector<std::size_t> window{30, 60, 120, 300};
  std::vector<double> tau{0.0, 0.25, 0.5, 0.75};
  double drawdown{0.05};
};

struct GridResult {
  RouterConfig config;
  double objective{0.0};
};

struct TuneResult {
  RouterConfig best;
  double best_objective{-std::numeric_limits<double>::infinity()};
  std::vector<GridResult> trials;
};

// Exhaustive grid search; the first config with the highest objective wins.
[[nodiscard]] inline TuneResult tune_router(const RouterGrid& grid,
                                            const std::function<double(const RouterConfig&)>& objective) {
  if (grid.gamma.empty() || grid.window.empty() || grid.tau.empty()) fail("tune_router: empty grid");
  TuneResult out;
  bool first = true;
  for (double g : grid.gamma)
    for (std::size_t u : grid.window)
      for (double t : grid.tau) {
        RouterConfig c{g, u, t, grid.drawdown};
        c.validate();
        const double v = objective(c);
        out.trials.push_back({c, v});
        if (first || v > out.best_objective) {
          out.best = c;
          out.best_objective = v;
          first = false;
        }
      }
  return out;
}

}  // namespace fineft
