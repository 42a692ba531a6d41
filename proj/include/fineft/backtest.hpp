#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "json.hpp"

#include "fineft/core.hpp"
#include "fineft/ensemble.hpp"
#include "fineft/futures_env.hpp"
#include "fineft/ood.hpp"
#include "fineft/router.hpp"

namespace fineft {

// ---------------------------------------------------------------------------
// Equity curves

// Point 0 is the reset state; point k > 0 is the state after step k - 1, with
// the action taken, fees and funding paid during that step.
struct CurvePoint {
  std::int64_t ts{0};
  double value{0.0};
  double position{0.0};
  std::size_t action{0};
  double fees{0.0};
  double funding{0.0};
  bool liquidated{false};
  bool operator==(const CurvePoint&) const = default;
};

// A trade spans a maximal run of non-zero positions; a direct flip from long
// to short stays inside one trade. pnl = V at close - V before the opening step.
struct Trade {
  std::int64_t open_ts{0};
  std::int64_t close_ts{0};
  double pnl{0.0};
  bool closed{true};  // false for a position still open at the end of the curve
  bool operator==(const Trade&) const = default;
};

struct EquityCurve {
  std::vector<CurvePoint> points;
  std::vector<Trade> trades;
  double h_max{1.0};
  bool operator==(const EquityCurve&) const = default;
};

[[nodiscard]] inline std::vector<Trade> derive_trades(const std::vector<CurvePoint>& pts) {
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<Trade> out;
  std::size_t open = none;
  auto base = [&] { return open == 0 ? 0 : open - 1; };
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const bool held = pts[k].position != 0.0;
    if (held && open == none) open = k;
    if (!held && open != none) {
      out.push_back({pts[open].ts, pts[k].ts, pts[k].value - pts[base()].value, true});
      open = none;
    }
  }
  if (open != none) out.push_back({pts[open].ts, pts.back().ts, pts.back().value - pts[base()].value, false});
  return out;
}

// Maps the environment and its current observation to an action index.
using Policy = std::function<std::size_t(const FuturesEnv&, const MarketState&)>;

// Deterministic rollout over `range` from `initial_action`'s position.
[[nodiscard]] inline EquityCurve backtest(FuturesEnv& env, IndexRange range, const Policy& policy,
                                         std::size_t initial_action = 0) {
  EquityCurve curve;
  curve.h_max = env.config().action_space.h_max();
  auto obs = env.reset(range, initial_action);
  curve.points.push_back({obs.ts, env.margin_balance(), env.account().position, initial_action, 0.0, 0.0, false});
  bool done = false;
  while (!done) {
    const auto ts = obs.ts;
    try {
      const std::size_t a = policy(env, obs);
      const auto res = env.step(a);
      curve.points.push_back({res.observation.ts, res.info.margin_balance, env.account().position, a,
                              res.info.fees_paid, res.info.funding_paid, res.info.liquidated});
      obs = res.observation;
      done = res.done;
    } catch (const Error& e) {
      fail("backtest at ts ", ts, ": ", e.what());
    }
  }
  curve.trades = derive_trades(curve.points);
  return curve;
}

[[nodiscard]] inline Policy null_policy() {
  return [](const FuturesEnv&, const MarketState&) { return std::size_t{0}; };
}

[[nodiscard]] inline Policy learner_policy(const Ensemble& ens, std::size_t learner) {
  if (learner >= ens.size()) fail("learner_policy: no learner ", learner);
  return [&ens, learner](const FuturesEnv& env, const MarketState& s) {
    return ens.greedy(learner, env_features(env, s));
  };
}

// Greedy on the mean Q over all learners.
[[nodiscard]] inline Policy ensemble_mean_policy(const Ensemble& ens) {
  return [&ens](const FuturesEnv& env, const MarketState& s) {
    const auto f = env_features(env, s);
    Vector q = ens.q_values(0, f);
    for (std::size_t i = 1; i < ens.size(); ++i) q += ens.q_values(i, f);
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < q.size(); ++a)
      if (q(a) > q(best)) best = a;
    return static_cast<std::size_t>(best);
  };
}

// equity CSV: ts,value,position,action,fees,funding,liquidated
inline void write_equity_csv(const std::filesystem::path& path, const EquityCurve& curve) {
  std::ostringstream out;
  out << "ts,value,position,action,fees,funding,liquidated\n";
  for (const auto& p : curve.points)
    out << p.ts << ',' << format_double(p.value) << ',' << format_double(p.position) << ',' << p.action << ','
        << format_double(p.fees) << ',' << format_double(p.funding) << ',' << (p.liquidated ? 1 : 0) << '\n';
  write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsConfig {
  std::size_t bars_per_day{288};
  double annualization{365.0};
};

// Undefined ratios are empty (JSON null).
struct MetricsReport {
  double tr{0.0};
  std::optional<double> asr, acr, asor, avol;
  double mdd{0.0};
  double to{0.0};
  std::size_t ttn{0}, tt{0};
  std::optional<double> wr, rrr, arr;
  std::size_t steps{0};
  std::size_t days{0};
};

// Values sampled every bars_per_day points; a trailing partial day counts.
[[nodiscard]] inline std::vector<double> daily_returns(const std::vector<double>& values, std::size_t bars_per_day) {
  if (bars_per_day == 0) fail("daily_returns: bars_per_day must be positive");
  std::vector<double> out;
  if (values.size() < 2) return out;
  std::size_t prev = 0;
  for (std::size_t k = bars_per_day;; k += bars_per_day) {
    const std::size_t at = std::min(k, values.size() - 1);
    out.push_back(values[at] / values[prev] - 1.0);
    prev = at;
    if (at == values.size() - 1) break;
  }
  return out;
}

[[nodiscard]] inline double max_drawdown(const std::vector<double>& values) {
  double peak = -std::numeric_limits<double>::infinity(), mdd = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    if (peak > 0.0) mdd = std::max(mdd, (peak - v) / peak);
  }
  return std::min(mdd, 1.0);
}

namespace detail {

inline double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Sample standard deviation; empty below two observations.
inline std::optional<double> stdev(const std::vector<double>& x) {
  if (x.size() < 2) return std::nullopt;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

}  // namespace detail

[[nodiscard]] inline MetricsReport compute_metrics(const EquityCurve& curve, const MetricsConfig& cfg = {}) {
  const auto& pts = curve.points;
  if (pts.size() < 2) fail("compute_metrics: curve needs at least 2 points");
  if (!(curve.h_max > 0.0)) fail("compute_metrics: h_max must be positive");
  std::vector<double> v;
  v.reserve(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const auto& p = pts[k];
    if (!std::isfinite(p.value)) fail("compute_metrics: non-finite value at ts ", p.ts);
    // A liquidation can leave the final balance at or below zero; the loss is
    // capped at the whole balance.
    const bool wiped = k + 1 == pts.size() && k > 0 && p.liquidated;
    if (!(p.value > 0.0) && !wiped) fail("compute_metrics: non-positive value at ts ", p.ts);
    v.push_back(std::max(p.value, 0.0));
  }
  MetricsReport r;
  r.steps = pts.size() - 1;
  r.tr = (v.back() - v.front()) / v.front();
  r.mdd = max_drawdown(v);

  const auto ret = daily_returns(v, cfg.bars_per_day);
  r.days = ret.size();
  const double m = cfg.annualization;
  const double mu = detail::mean(ret);
  if (const auto sd = detail::stdev(ret)) {
    r.avol = *sd * std::sqrt(m);
    if (*sd > 0.0) r.asr = mu / *sd * std::sqrt(m);
  }
  std::vector<double> neg;
  for (double x : ret)
    if (x < 0.0) neg.push_back(x);
  if (const auto dd = detail::stdev(neg); dd && *dd > 0.0) r.asor = mu * std::sqrt(m) / *dd;
  if (r.mdd > 0.0) r.acr = mu * m / r.mdd;

  double traded = 0.0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double h0 = pts[k].position, h1 = pts[k + 1].position;
    traded += std::abs(h0 - h1);
    if (h0 != h1) ++r.tt;
    if (h0 != 0.0 && h1 == 0.0) ++r.ttn;
  }
  r.to = traded / curve.h_max;

  double win_sum = 0.0, loss_sum = 0.0;
  std::size_t wins = 0, losses = 0, closed = 0;
  for (const auto& t : curve.trades) {
    if (!t.closed) continue;
    ++closed;
    if (t.pnl > 0.0) {
      win_sum += t.pnl;
      ++wins;
    } else if (t.pnl < 0.0) {
      loss_sum += -t.pnl;
      ++losses;
    }
  }
  if (closed > 0) r.wr = static_cast<double>(wins) / static_cast<double>(closed);
  if (losses > 0) {
    r.rrr = win_sum / loss_sum;
    if (wins > 0) r.arr = (win_sum / static_cast<double>(wins)) / (loss_sum / static_cast<double>(losses));
  }
  return r;
}

[[nodiscard]] inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& x) { return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["TR"] = r.tr;
  j["ASR"] = opt(r.asr);
  j["ACR"] = opt(r.acr);
  j["ASoR"] = opt(r.asor);
  j["AVOL"] = opt(r.avol);
  j["MDD"] = r.mdd;
  j["TO"] = r.to;
  j["TTN"] = r.ttn;
  j["TT"] = r.tt;
  j["WR"] = opt(r.wr);
  j["RRR"] = opt(r.rrr);
  j["ARR"] = opt(r.arr);
  j["steps"] = r.steps;
  j["days"] = r.days;
  return j;
}

// ---------------------------------------------------------------------------
// Stage II filtering

struct FilterConfig {
  int leverage{0};          // leverage of the initial positions; 0 = largest in the pool
  std::size_t threads{0};   // 0 = hardware concurrency
};

struct FilterResult {
  std::vector<std::size_t> policy;              // learner per dynamic
  std::vector<std::vector<double>> mean_return;  // [dynamic][learner]
};

namespace detail {

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) body(i);
      } catch (const std::exception& e) {
        errors[w] = e.what();
        next = n;
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) fail(e);
}

}  // namespace detail

// Backtests every learner greedily on every segment of each dynamic from
// every pool position and keeps the learner with the highest mean total
// return (ties to the lowest index). Segment ranges are absolute indices.
[[nodiscard]] inline FilterResult filter_ensemble(const Ensemble& ens, const FuturesEnv& env_template,
                                                  const std::vector<std::vector<IndexRange>>& segments,
                                                  const FilterConfig& cfg = {}) {
  if (segments.empty()) fail("filter_ensemble: no dynamics");
  const auto& space = env_template.config().action_space;
  const int lev = cfg.leverage == 0 ? space.max_leverage() : cfg.leverage;
  std::vector<std::size_t> starts;
  for (double p : space.position_pool()) starts.push_back(p == 0.0 ? 0 : space.index_of(p, lev));
  const std::size_t warm = env_template.dataset().warmup;

  struct Task {
    std::size_t dyn, learner;
    IndexRange range;
    std::size_t start;
  };
  std::vector<Task> tasks;
  std::vector<std::size_t> runs(segments.size(), 0);
  for (std::size_t d = 0; d < segments.size(); ++d) {
    for (const auto& seg : segments[d]) {
      if (seg.end < std::max(seg.begin, warm) + 2) continue;
      for (std::size_t i = 0; i < ens.size(); ++i)
        for (auto a : starts) tasks.push_back({d, i, seg, a});
      ++runs[d];
    }
    if (runs[d] == 0) fail("filter_ensemble: dynamic ", d, " has no validation segments");
  }
  std::vector<double> tr(tasks.size());
  detail::parallel_for(tasks.size(), cfg.threads, [&](std::size_t k) {
    FuturesEnv env = env_template;
    const auto& t = tasks[k];
    const auto curve = backtest(env, t.range, learner_policy(ens, t.learner), t.start);
    tr[k] = (curve.points.back().value - curve.points.front().value) / curve.points.front().value;
  });

  FilterResult out;
  out.mean_return.assign(segments.size(), std::vector<double>(ens.size(), 0.0));
  for (std::size_t k = 0; k < tasks.size(); ++k) out.mean_return[tasks[k].dyn][tasks[k].learner] += tr[k];
  for (std::size_t d = 0; d < segments.size(); ++d) {
    auto& row = out.mean_return[d];
    for (auto& x : row) x /= static_cast<double>(runs[d] * starts.size());
    out.policy.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Routed policy

// Per-step scores [dynamic][t - range.begin] of each regime model on the
// indicator vectors over `range`.
[[nodiscard]] inline std::vector<std::vector<double>> regime_scores(const std::vector<RegimeModel>& models,
                                                                    const Dataset& ds, IndexRange range) {
  if (range.end > ds.states.size()) fail("regime_scores: range exceeds dataset");
  std::vector<std::vector<double>> ys;
  for (std::size_t t = range.begin; t < range.end; ++t) ys.push_back(ds.states[t].indicators);
  const Matrix y = columns(ys);
  std::vector<std::vector<double>> out;
  for (const auto& m : models) out.push_back(m.scores(y));
  return out;
}

struct RoutingRow {
  std::int64_t ts{0};
  std::size_t winning_dyn{0};
  double score{0.0};
  std::optional<std::size_t> learner;  // empty when the conservative policy acted
  bool operator==(const RoutingRow&) const = default;
};

struct RoutedRun {
  EquityCurve curve;
  std::vector<RoutingRow> routing;
  [[nodiscard]] double conservative_fraction(std::size_t from = 0, std::size_t to = SIZE_MAX) const {
    to = std::min(to, routing.size());
    if (to <= from) return 0.0;
    std::size_t c = 0;
    for (std::size_t k = from; k < to; ++k) c += routing[k].learner ? 0 : 1;
    return static_cast<double>(c) / static_cast<double>(to - from);
  }
};

// Routes with scores precomputed by regime_scores over the same range: the
// winning dynamic's filtered learner acts unless the router rejects, in which
// case the conservative policy does.
[[nodiscard]] inline RoutedRun routed_backtest(FuturesEnv& env, IndexRange range, const Ensemble& ens,
                                               const std::vector<std::size_t>& policy,
                                               const std::vector<std::vector<double>>& scores,
                                               const RouterConfig& cfg) {
  cfg.validate();
  if (scores.size() != policy.size()) fail("routed_backtest: ", scores.size(), " score series for ", policy.size(), " dynamics");
  for (auto l : policy)
    if (l >= ens.size()) fail("routed_backtest: no learner ", l);
  const auto decisions = route_series(scores, cfg);
  if (decisions.size() != range.size()) fail("routed_backtest: scores do not cover the range");
  RoutedRun run;
  const auto& space = env.config().action_space;
  Policy p = [&](const FuturesEnv& e, const MarketState& s) {
    const auto& d = decisions[e.t() - range.begin];
    RoutingRow row{s.ts, d.dynamic, d.score, std::nullopt};
    std::size_t a = 0;
    if (d.conservative) {
      a = conservative_action(e.account(), e.mark(), space, cfg.drawdown);
    } else {
      row.learner = policy[d.dynamic];
      a = ens.greedy(policy[d.dynamic], env_features(e, s));
    }
    run.routing.push_back(row);
    return a;
  };
  run.curve = backtest(env, range, p);
  return run;
}

// routing.csv: ts,winning_dyn,score,choice (learner_{i} or conservative)
inline void write_routing_csv(const std::filesystem::path& path, const std::vector<RoutingRow>& rows) {
  std::ostringstream out;
  out << "ts,winning_dyn,score,choice\n";
  for (const auto& r : rows)
    out << r.ts << ',' << r.winning_dyn << ',' << format_double(r.score) << ','
        << (r.learner ? concat("learner_", *r.learner + 1) : std::string("conservative")) << '\n';
  write_text(path, out.str());
}

}  // namespace fineft
