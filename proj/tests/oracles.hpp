#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "fineft/backtest.hpp"
#include "fineft/dp_oracle.hpp"
#include "fineft/ood.hpp"
#include "fineft/tabular.hpp"
#include "test_support.hpp"

namespace fineft::oracles {

// Random walk marks with a two-level book whose spread and depth vary per step.
inline Dataset random_instance(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> step(0.0, 1.0);
  std::uniform_real_distribution<double> half(0.01, 0.3), qty(0.5, 3.0), funding(-2e-4, 2e-4);
  std::vector<double> marks{100.0};
  for (std::size_t t = 1; t < n; ++t) marks.push_back(marks.back() + step(rng));
  auto ds = fixtures::toy_dataset(marks);
  for (std::size_t t = 0; t < n; ++t) {
    const double h = half(rng);
    ds.lob[t] = LobSnapshot{ds.ts[t],
                            {{marks[t] - h, qty(rng)}, {marks[t] - 2 * h, 50.0}},
                            {{marks[t] + h, qty(rng)}, {marks[t] + 2 * h, 50.0}}};
    ds.marks[t].funding_rate = (t % 3 == 2) ? funding(rng) : 0.0;
  }
  return ds;
}

inline double env_return(const Dataset& ds, const EnvConfig& cfg, const std::vector<std::size_t>& actions) {
  FuturesEnv env(ds, cfg);
  env.reset({0, ds.size()});
  double total = 0.0;
  for (auto a : actions) total += env.step(a).reward;
  return total;
}

inline double brute_force_max(const Dataset& ds, const EnvConfig& cfg, std::size_t decisions) {
  const std::size_t na = cfg.action_space.size();
  std::vector<std::size_t> seq(decisions, 0);
  double best = -std::numeric_limits<double>::infinity();
  while (true) {
    best = std::max(best, env_return(ds, cfg, seq));
    std::size_t i = 0;
    while (i < decisions && ++seq[i] == na) seq[i++] = 0;
    if (i == decisions) break;
  }
  return best;
}

inline EnvConfig three_action_config() {
  EnvConfig cfg;
  cfg.action_space = ActionSpace(2, 3, {5});
  cfg.fee_rate = 0.0002;
  return cfg;
}

// Four states on a ring; action 0 steps forward, action 1 steps back. In the
// first dynamic action 0 pays, in the second action 1 pays.
inline FiniteMdp ring(bool forward_pays) {
  std::vector<std::vector<std::size_t>> next{{1, 3}, {2, 0}, {3, 1}, {0, 2}};
  std::vector<std::vector<double>> r;
  for (std::size_t s = 0; s < 4; ++s) {
    const double bonus = 0.25 * static_cast<double>(s);
    r.push_back(forward_pays ? std::vector<double>{1.0 + bonus, -1.0} : std::vector<double>{-1.0, 1.0 + bonus});
  }
  return FiniteMdp::deterministic(next, r);
}

// Best deterministic stationary policy by exact policy evaluation
// (I - gamma P_pi) v = r_pi over all |A|^|S| policies.
inline std::vector<double> best_policy_q(const FiniteMdp& m, double gamma) {
  const auto S = static_cast<Eigen::Index>(m.n_states);
  std::vector<double> best_v(m.n_states, -1e300);
  std::size_t total = 1;
  for (std::size_t s = 0; s < m.n_states; ++s) total *= m.n_actions;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<std::size_t> pi(m.n_states);
    std::size_t c = code;
    for (auto& a : pi) {
      a = c % m.n_actions;
      c /= m.n_actions;
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd r(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      const auto us = static_cast<std::size_t>(s);
      r(s) = m.r(us, pi[us]);
      for (Eigen::Index s2 = 0; s2 < S; ++s2) A(s, s2) -= gamma * m.p(us, pi[us], static_cast<std::size_t>(s2));
    }
    const Eigen::VectorXd v = A.partialPivLu().solve(r);
    for (std::size_t s = 0; s < m.n_states; ++s) best_v[s] = std::max(best_v[s], v(static_cast<Eigen::Index>(s)));
  }
  std::vector<double> q(m.n_states * m.n_actions);
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t a = 0; a < m.n_actions; ++a) {
      double x = m.r(s, a);
      for (std::size_t s2 = 0; s2 < m.n_states; ++s2) x += gamma * m.p(s, a, s2) * best_v[s2];
      q[s * m.n_actions + a] = x;
    }
  return q;
}

// Mann-Whitney estimate of P(score_in > score_out) + 0.5 P(tie).
inline double roc_auc(const std::vector<double>& in, const std::vector<double>& out) {
  double wins = 0.0;
  for (double a : in)
    for (double b : out) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / static_cast<double>(in.size() * out.size());
}

// sup |F_n(x) - x| for a sample on [0, 1].
inline double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d = std::max(d, static_cast<double>(i + 1) / n - x[i]);
    d = std::max(d, x[i] - static_cast<double>(i) / n);
  }
  return d;
}

inline OodConfig gaussian_ood_config() {
  OodConfig c;
  c.hidden = 32;
  c.latent = 4;
  c.epochs = 2000;
  c.batch_size = 250;
  c.lr = LrSchedule{2e-3, 2e-4, 4000};
  return c;
}

inline EquityCurve hand_curve(const std::vector<double>& v, const std::vector<double>& h, double h_max) {
  EquityCurve c;
  c.h_max = h_max;
  for (std::size_t k = 0; k < v.size(); ++k) c.points.push_back({static_cast<std::int64_t>(k), v[k], h[k], 0, 0, 0, false});
  c.trades = derive_trades(c.points);
  return c;
}

// Metric definitions written independently: per-day slices, O(n^2) drawdown,
// trades read off position runs, two-pass moments.
struct MetricOracle {
  double tr, mdd, to, ttn, tt;
  std::optional<double> asr, acr, asor, avol, wr, rrr, arr;
};

inline MetricOracle brute_force_metrics(const std::vector<double>& v, const std::vector<double>& h, double h_max,
                                        std::size_t bpd, double m) {
  MetricOracle o{};
  o.tr = v.back() / v.front() - 1.0;
  o.mdd = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i; j < v.size(); ++j) o.mdd = std::max(o.mdd, 1.0 - v[j] / v[i]);
  std::vector<std::size_t> marks;
  for (std::size_t k = 0; k < v.size(); k += bpd) marks.push_back(k);
  if (marks.back() != v.size() - 1) marks.push_back(v.size() - 1);
  std::vector<double> ret;
  for (std::size_t d = 1; d < marks.size(); ++d) ret.push_back((v[marks[d]] - v[marks[d - 1]]) / v[marks[d - 1]]);
  auto moments = [](const std::vector<double>& x) -> std::pair<double, std::optional<double>> {
    double s = 0.0;
    for (double e : x) s += e;
    const double mu = x.empty() ? 0.0 : s / static_cast<double>(x.size());
    if (x.size() < 2) return {mu, std::nullopt};
    double q = 0.0;
    for (double e : x) q += (e - mu) * (e - mu);
    return {mu, std::sqrt(q / static_cast<double>(x.size() - 1))};
  };
  const auto [mu, sd] = moments(ret);
  if (sd) {
    o.avol = *sd * std::sqrt(m);
    if (*sd > 0) o.asr = mu * std::sqrt(m) / *sd;
  }
  std::vector<double> neg;
  std::copy_if(ret.begin(), ret.end(), std::back_inserter(neg), [](double x) { return x < 0; });
  if (const auto dd = moments(neg).second; dd && *dd > 0) o.asor = mu * std::sqrt(m) / *dd;
  if (o.mdd > 0) o.acr = mu * m / o.mdd;
  o.to = o.ttn = o.tt = 0.0;
  for (std::size_t k = 1; k < h.size(); ++k) {
    o.to += std::abs(h[k] - h[k - 1]) / h_max;
    o.tt += h[k] != h[k - 1] ? 1 : 0;
    o.ttn += h[k - 1] != 0 && h[k] == 0 ? 1 : 0;
  }
  std::vector<double> pnl;
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k] == 0) continue;
    std::size_t e = k;
    while (e < h.size() && h[e] != 0) ++e;
    if (e < h.size()) pnl.push_back(v[e] - v[k == 0 ? 0 : k - 1]);
    k = e;
  }
  double gain = 0, loss = 0, nw = 0, nl = 0;
  for (double p : pnl) {
    if (p > 0) gain += p, nw += 1;
    if (p < 0) loss -= p, nl += 1;
  }
  if (!pnl.empty()) o.wr = nw / static_cast<double>(pnl.size());
  if (nl > 0) o.rrr = gain / loss;
  if (nl > 0 && nw > 0) o.arr = (gain / nw) / (loss / nl);
  return o;
}

// Ten-point equity and position series with three closed trades.
inline const std::vector<double>& hand_values() {
  static const std::vector<double> v{100000, 101000, 99500, 102000, 103500, 101000, 100500, 104000, 103000, 105000};
  return v;
}

inline const std::vector<double>& hand_positions() {
  static const std::vector<double> h{0, 2, 2, 0, -1, -1, 0, 2, -2, 0};
  return h;
}

}  // namespace fineft::oracles
