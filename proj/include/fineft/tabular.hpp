#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "fineft/core.hpp"
#include "fineft/ensemble.hpp"

namespace fineft {

// Finite MDP with expected rewards r(s, a) and kernel P(s' | s, a).
struct FiniteMdp {
  std::size_t n_states{0};
  std::size_t n_actions{0};
  std::vector<double> kernel;  // [(s * A + a) * S + s']
  std::vector<double> reward;  // [s * A + a]

  [[nodiscard]] double p(std::size_t s, std::size_t a, std::size_t s2) const {
    return kernel[(s * n_actions + a) * n_states + s2];
  }
  [[nodiscard]] double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }

  // Deterministic MDP from next-state and reward tables.
  [[nodiscard]] static FiniteMdp deterministic(const std::vector<std::vector<std::size_t>>& next,
                                               const std::vector<std::vector<double>>& rewards) {
    FiniteMdp m;
    m.n_states = next.size();
    m.n_actions = next.empty() ? 0 : next.front().size();
    m.kernel.assign(m.n_states * m.n_actions * m.n_states, 0.0);
    m.reward.assign(m.n_states * m.n_actions, 0.0);
    if (rewards.size() != m.n_states) fail("mdp: reward table has ", rewards.size(), " rows");
    for (std::size_t s = 0; s < m.n_states; ++s) {
      if (next[s].size() != m.n_actions || rewards[s].size() != m.n_actions) fail("mdp: ragged table at state ", s);
      for (std::size_t a = 0; a < m.n_actions; ++a) {
        if (next[s][a] >= m.n_states) fail("mdp: next state ", next[s][a], " out of range");
        m.kernel[(s * m.n_actions + a) * m.n_states + next[s][a]] = 1.0;
        m.reward[s * m.n_actions + a] = rewards[s][a];
      }
    }
    m.validate();
    return m;
  }

  void validate() const {
    if (n_states == 0 || n_actions == 0) fail("mdp: empty state or action set");
    if (kernel.size() != n_states * n_actions * n_states || reward.size() != n_states * n_actions)
      fail("mdp: table sizes disagree with |S| and |A|");
    for (std::size_t s = 0; s < n_states; ++s)
      for (std::size_t a = 0; a < n_actions; ++a) {
        double total = 0.0;
        for (std::size_t s2 = 0; s2 < n_states; ++s2) {
          if (p(s, a, s2) < 0.0) fail("mdp: negative probability at (", s, ", ", a, ")");
          total += p(s, a, s2);
        }
        if (std::abs(total - 1.0) > 1e-9) fail("mdp: row (", s, ", ", a, ") sums to ", total);
      }
  }
};

using QTable = std::vector<double>;  // [s * A + a]

[[nodiscard]] inline double row_max(const QTable& q, std::size_t s, std::size_t na) {
  return *std::max_element(q.begin() + static_cast<std::ptrdiff_t>(s * na),
                           q.begin() + static_cast<std::ptrdiff_t>((s + 1) * na));
}

[[nodiscard]] inline std::size_t row_argmax(const QTable& q, std::size_t s, std::size_t na) {
  std::size_t best = 0;
  for (std::size_t a = 1; a < na; ++a)
    if (q[s * na + a] > q[s * na + best]) best = a;
  return best;
}

// Expected one-step backup r(s,a) + gamma * sum_s' P(s'|s,a) max_b Q(s', b).
[[nodiscard]] inline double bellman_backup(const FiniteMdp& m, const QTable& q, std::size_t s, std::size_t a,
                                           double gamma) {
  double v = m.r(s, a);
  for (std::size_t s2 = 0; s2 < m.n_states; ++s2)
    if (m.p(s, a, s2) != 0.0) v += gamma * m.p(s, a, s2) * row_max(q, s2, m.n_actions);
  return v;
}

[[nodiscard]] inline QTable value_iteration(const FiniteMdp& m, double gamma, double tol = 1e-13,
                                            std::size_t max_iter = 100000) {
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("value_iteration: gamma must be in [0, 1)");
  QTable q(m.n_states * m.n_actions, 0.0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    QTable next(q.size());
    double delta = 0.0;
    for (std::size_t s = 0; s < m.n_states; ++s)
      for (std::size_t a = 0; a < m.n_actions; ++a) {
        next[s * m.n_actions + a] = bellman_backup(m, q, s, a, gamma);
        delta = std::max(delta, std::abs(next[s * m.n_actions + a] - q[s * m.n_actions + a]));
      }
    q = std::move(next);
    if (delta <= tol) return q;
  }
  fail("value_iteration: no convergence after ", max_iter, " sweeps");
}

[[nodiscard]] inline double sup_distance(const QTable& a, const QTable& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Mean |expected TD error| of q over all (s, a) of the MDP.
[[nodiscard]] inline double mean_abs_td(const FiniteMdp& m, const QTable& q, double gamma) {
  double total = 0.0;
  for (std::size_t s = 0; s < m.n_states; ++s)
    for (std::size_t a = 0; a < m.n_actions; ++a)
      total += std::abs(bellman_backup(m, q, s, a, gamma) - q[s * m.n_actions + a]);
  return total / static_cast<double>(m.n_states * m.n_actions);
}

struct TabularConfig {
  std::size_t n_learners{2};
  std::size_t neighbors{0};
  double gamma{0.9};
  double learning_rate{0.5};
  std::size_t block{16};            // transitions sharing one learner selection
  std::size_t steps_per_dynamic{2000};
  std::size_t rounds{10};           // passes over the dynamic sequence
  double tolerance{1e-2};           // sup-norm threshold for convergence steps
  std::uint64_t seed{3};
};

struct DynamicReport {
  std::size_t assigned{0};                     // learner with the smallest mean |TD|, 0-based
  double sup_error{0.0};                       // max |Q_assigned - Q*|
  double policy_match{0.0};                    // fraction of states whose greedy action is optimal
  std::optional<std::size_t> converged_at;     // transitions processed when the error last fell below tolerance
};

struct TabularReport {
  std::vector<DynamicReport> dynamics;
  std::vector<QTable> learners;
  std::vector<QTable> optimal;
  std::size_t transitions{0};
};

// Streams transitions dynamic by dynamic (uniform state and action, sampled
// next state). Each block of transitions selects learners by the block-mean
// Huber TD error through weight_matrix; learner i then applies
// Q_i(s,a) += lr * W_ii * (r + gamma * max Q_i(s') - Q_i(s,a)).
[[nodiscard]] inline TabularReport tabular_selective_qlearning(const std::vector<FiniteMdp>& mdps,
                                                               const TabularConfig& cfg) {
  if (mdps.empty()) fail("tabular: no MDPs");
  if (cfg.n_learners == 0 || cfg.block == 0) fail("tabular: n_learners and block must be positive");
  const std::size_t S = mdps.front().n_states, A = mdps.front().n_actions;
  for (const auto& m : mdps) {
    m.validate();
    if (m.n_states != S || m.n_actions != A) fail("tabular: MDPs must share state and action spaces");
  }
  TabularReport rep;
  for (const auto& m : mdps) rep.optimal.push_back(value_iteration(m, cfg.gamma));
  rep.learners.assign(cfg.n_learners, QTable(S * A, 0.0));
  rep.dynamics.resize(mdps.size());
  std::vector<std::vector<std::optional<std::size_t>>> below(mdps.size(),
                                                            std::vector<std::optional<std::size_t>>(cfg.n_learners));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_s(0, S - 1), pick_a(0, A - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(cfg.n_learners);

  struct Sample {
    std::size_t s, a, s2;
    double r;
  };
  std::vector<Sample> block;
  for (std::size_t round = 0; round < cfg.rounds; ++round)
    for (std::size_t d = 0; d < mdps.size(); ++d) {
      const auto& m = mdps[d];
      for (std::size_t done = 0; done < cfg.steps_per_dynamic;) {
        block.clear();
        for (std::size_t k = 0; k < cfg.block && done < cfg.steps_per_dynamic; ++k, ++done) {
          Sample x{pick_s(rng), pick_a(rng), 0, 0.0};
          double c = u(rng), acc = 0.0;
          x.s2 = S - 1;
          for (std::size_t s2 = 0; s2 < S; ++s2) {
            acc += m.p(x.s, x.a, s2);
            if (c < acc) {
              x.s2 = s2;
              break;
            }
          }
          x.r = m.r(x.s, x.a);
          block.push_back(x);
        }
        Matrix L = Matrix::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          const auto& q = rep.learners[static_cast<std::size_t>(i)];
          double sum = 0.0;
          for (const auto& x : block) sum += huber(x.r + cfg.gamma * row_max(q, x.s2, A) - q[x.s * A + x.a]);
          L(i, i) = sum / static_cast<double>(block.size());
        }
        const auto w = weight_matrix(L, cfg.neighbors);
        for (std::size_t i = 0; i < cfg.n_learners; ++i) {
          const double wi = w.w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
          if (wi == 0.0) continue;
          auto& q = rep.learners[i];
          for (const auto& x : block)
            q[x.s * A + x.a] += cfg.learning_rate * wi * (x.r + cfg.gamma * row_max(q, x.s2, A) - q[x.s * A + x.a]);
        }
        rep.transitions += block.size();
        for (std::size_t dd = 0; dd < mdps.size(); ++dd)
          for (std::size_t i = 0; i < cfg.n_learners; ++i) {
            const bool ok = sup_distance(rep.learners[i], rep.optimal[dd]) <= cfg.tolerance;
            if (!ok) below[dd][i].reset();
            else if (!below[dd][i]) below[dd][i] = rep.transitions;
          }
      }
    }

  for (std::size_t d = 0; d < mdps.size(); ++d) {
    auto& dr = rep.dynamics[d];
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cfg.n_learners; ++i) {
      const double e = mean_abs_td(mdps[d], rep.learners[i], cfg.gamma);
      if (e < best) {
        best = e;
        dr.assigned = i;
      }
    }
    const auto& q = rep.learners[dr.assigned];
    const auto& qs = rep.optimal[d];
    dr.sup_error = sup_distance(q, qs);
    std::size_t match = 0;
    for (std::size_t s = 0; s < S; ++s)
      if (qs[s * A + row_argmax(q, s, A)] >= row_max(qs, s, A) - 1e-9) ++match;
    dr.policy_match = static_cast<double>(match) / static_cast<double>(S);
    dr.converged_at = below[d][dr.assigned];
  }
  return rep;
}

}  // namespace fineft
