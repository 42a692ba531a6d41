#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "fineft/core.hpp"
#include "fineft/futures_env.hpp"

namespace fineft {

struct DpConfig {
  double mask_penalty{1e9};
  // Capital for the solvency mask; NaN means the env's initial wallet.
  double capital{std::numeric_limits<double>::quiet_NaN()};
};

// Q*[t, prev, a] over a slice of N timestamps; t is relative to `begin`.
class OptimalQTable {
 public:
  OptimalQTable() = default;
  OptimalQTable(std::size_t begin, std::size_t steps, std::size_t actions, double penalty, double capital)
      : begin_(begin), steps_(steps), actions_(actions), penalty_(penalty), capital_(capital),
        value_(steps * actions * actions, 0.0), raw_(value_.size(), 0.0), masked_(value_.size(), 0) {}

  [[nodiscard]] std::size_t begin() const { return begin_; }
  [[nodiscard]] std::size_t steps() const { return steps_; }
  [[nodiscard]] std::size_t actions() const { return actions_; }
  [[nodiscard]] double penalty() const { return penalty_; }
  [[nodiscard]] double capital() const { return capital_; }

  [[nodiscard]] double value(std::size_t t, std::size_t p, std::size_t a) const { return value_[idx(t, p, a)]; }
  // Value before the mask penalty is applied.
  [[nodiscard]] double unmasked(std::size_t t, std::size_t p, std::size_t a) const { return raw_[idx(t, p, a)]; }
  [[nodiscard]] bool masked(std::size_t t, std::size_t p, std::size_t a) const { return masked_[idx(t, p, a)] != 0; }

  [[nodiscard]] std::vector<double> row(std::size_t t, std::size_t p) const {
    const auto* b = &value_[idx(t, p, 0)];
    return {b, b + actions_};
  }

  // argmax_a Q*[t, p, a], ties to the lowest index.
  [[nodiscard]] std::size_t greedy(std::size_t t, std::size_t p) const {
    std::size_t best = 0;
    for (std::size_t a = 1; a < actions_; ++a)
      if (value(t, p, a) > value(t, p, best)) best = a;
    return best;
  }

  void set(std::size_t t, std::size_t p, std::size_t a, double raw, bool mask) {
    const auto i = idx(t, p, a);
    raw_[i] = raw;
    masked_[i] = mask ? 1 : 0;
    value_[i] = mask ? raw - penalty_ : raw;
  }

  bool operator==(const OptimalQTable&) const = default;

  // Binary dump: magic, shape header, then values / unmasked values / mask bytes.
  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("cannot write ", path.string());
    out.write(kMagic, 8);
    const std::uint64_t hdr[4] = {kVersion, begin_, steps_, actions_};
    out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    out.write(reinterpret_cast<const char*>(&penalty_), sizeof(double));
    out.write(reinterpret_cast<const char*>(&capital_), sizeof(double));
    out.write(reinterpret_cast<const char*>(value_.data()), static_cast<std::streamsize>(value_.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(raw_.data()), static_cast<std::streamsize>(raw_.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(masked_.data()), static_cast<std::streamsize>(masked_.size()));
    if (!out) fail("short write to ", path.string());
  }

  static OptimalQTable load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open ", path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) fail(path.string(), ": not a Q* table");
    std::uint64_t hdr[4];
    in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!in || hdr[0] != kVersion) fail(path.string(), ": unsupported Q* table version");
    double penalty = 0.0, capital = 0.0;
    in.read(reinterpret_cast<char*>(&penalty), sizeof(double));
    in.read(reinterpret_cast<char*>(&capital), sizeof(double));
    OptimalQTable q(hdr[1], hdr[2], hdr[3], penalty, capital);
    in.read(reinterpret_cast<char*>(q.value_.data()), static_cast<std::streamsize>(q.value_.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(q.raw_.data()), static_cast<std::streamsize>(q.raw_.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(q.masked_.data()), static_cast<std::streamsize>(q.masked_.size()));
    if (!in) fail(path.string(), ": truncated Q* table");
    return q;
  }

 private:
  static constexpr char kMagic[8] = {'F', 'F', 'T', 'Q', 'S', 'T', 'A', 'R'};
  static constexpr std::uint64_t kVersion = 1;

  [[nodiscard]] std::size_t idx(std::size_t t, std::size_t p, std::size_t a) const {
    return (t * actions_ + p) * actions_ + a;
  }

  std::size_t begin_{0}, steps_{0}, actions_{0};
  double penalty_{0.0}, capital_{0.0};
  std::vector<double> value_, raw_;
  std::vector<std::uint8_t> masked_;
};

// One-step reward of moving from action p to action a at absolute index t:
// H_a (M_{t+1} - M_t) - O_t - funding_{t+1}. Assumes the book fills the delta.
[[nodiscard]] inline double transition_reward(const Dataset& ds, std::size_t t, std::size_t p, std::size_t a,
                                              const EnvConfig& cfg) {
  const double hp = cfg.action_space.target(p).position;
  const double ha = cfg.action_space.target(a).position;
  const double m0 = ds.marks[t].mark, m1 = ds.marks[t + 1].mark;
  double loss = 0.0;
  const double delta = ha - hp;
  if (delta != 0.0)
    loss = execute_market_order(ds.lob[t], std::abs(delta), delta > 0 ? Side::Buy : Side::Sell, cfg.fee_rate, m0)
               .order_loss;
  return ha * (m1 - m0) - loss - ds.marks[t + 1].funding_rate * ha * m1;
}

// Backward recursion Q*[t,p,a] = r_t(p,a) + max_a' Q*[t+1,a,a'] with Q*[N-1] = 0.
// A cell is masked when capital plus its one-step reward cannot cover the
// initial margin of the target position.
[[nodiscard]] inline OptimalQTable optimal_action_value(const Dataset& ds, IndexRange range, const EnvConfig& cfg,
                                                        const DpConfig& dp = {}) {
  if (range.end > ds.size()) fail("optimal_action_value: range exceeds dataset");
  if (range.size() < 2) fail("optimal_action_value: slice must have at least 2 timestamps");
  if (!(dp.mask_penalty > 0.0)) fail("optimal_action_value: mask penalty must be positive");
  const double capital = std::isnan(dp.capital) ? cfg.initial_wallet : dp.capital;
  const auto& space = cfg.action_space;
  const std::size_t n = range.size(), na = space.size();
  OptimalQTable q(range.begin, n, na, dp.mask_penalty, capital);
  std::vector<double> best_next(na, 0.0);
  for (std::size_t tt = n - 1; tt-- > 0;) {
    for (std::size_t a = 0; a < na; ++a) {
      double b = q.value(tt + 1, a, 0);
      for (std::size_t a2 = 1; a2 < na; ++a2) b = std::max(b, q.value(tt + 1, a, a2));
      best_next[a] = b;
    }
    const std::size_t t = range.begin + tt;
    const double m0 = ds.marks[t].mark;
    for (std::size_t p = 0; p < na; ++p)
      for (std::size_t a = 0; a < na; ++a) {
        const double r = transition_reward(ds, t, p, a, cfg);
        const auto tgt = space.target(a);
        const double margin = tgt.position == 0.0 ? 0.0 : std::abs(tgt.position) * m0 / tgt.leverage;
        q.set(tt, p, a, r + best_next[a], capital + r <= margin);
      }
  }
  return q;
}

struct GreedyRollout {
  std::vector<std::size_t> actions;
  double total_reward{0.0};
};

// Follows argmax_a Q*[t, prev, a] from a flat start, summing DP rewards.
[[nodiscard]] inline GreedyRollout greedy_rollout(const OptimalQTable& q, const Dataset& ds, const EnvConfig& cfg) {
  GreedyRollout out;
  std::size_t prev = 0;
  for (std::size_t tt = 0; tt + 1 < q.steps(); ++tt) {
    const auto a = q.greedy(tt, prev);
    out.actions.push_back(a);
    out.total_reward += transition_reward(ds, q.begin() + tt, prev, a, cfg);
    prev = a;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Demonstrations

struct Transition {
  std::vector<double> s;
  std::size_t a{0};
  double r{0.0};
  std::vector<double> s_next;
  bool done{false};
  std::vector<double> q_star_row;  // Q*[t, prev, ·]; empty for non-demonstrations
  std::size_t t{0};                // absolute dataset index of s
};

enum class DemoPolicy { Optimal, Flat, MaxLong, MaxShort };

inline const char* to_string(DemoPolicy p) {
  switch (p) {
    case DemoPolicy::Optimal: return "optimal";
    case DemoPolicy::Flat: return "flat";
    case DemoPolicy::MaxLong: return "max_long";
    case DemoPolicy::MaxShort: return "max_short";
  }
  return "?";
}

struct DemoRollout {
  DemoPolicy policy{DemoPolicy::Optimal};
  std::vector<Transition> transitions;
  double total_reward{0.0};
  bool liquidated{false};
};

// Rolls each policy through `env` over the table's slice and tags every
// transition with the Q* row of its (t, previous action).
[[nodiscard]] inline std::vector<DemoRollout> demo_transitions(
    const OptimalQTable& q, FuturesEnv& env,
    const std::vector<DemoPolicy>& policies = {DemoPolicy::Optimal, DemoPolicy::Flat, DemoPolicy::MaxLong,
                                               DemoPolicy::MaxShort}) {
  const auto& space = env.config().action_space;
  if (q.actions() != space.size()) fail("demo_transitions: table and action space disagree");
  const double h_max = space.h_max();
  const auto interval = env.dataset().funding_interval;
  const IndexRange range{q.begin(), q.begin() + q.steps()};
  std::vector<DemoRollout> out;
  for (auto policy : policies) {
    DemoRollout roll;
    roll.policy = policy;
    auto obs = env.reset(range);
    if (env.t() != q.begin()) fail("demo_transitions: slice starts inside the warm-up window");
    bool done = false;
    while (!done) {
      const std::size_t t = env.t();
      const std::size_t prev = env.current_action_index();
      std::size_t a = 0;
      switch (policy) {
        case DemoPolicy::Optimal: a = q.greedy(t - q.begin(), prev); break;
        case DemoPolicy::Flat: a = 0; break;
        case DemoPolicy::MaxLong: a = space.index_of(h_max, space.max_leverage()); break;
        case DemoPolicy::MaxShort: a = space.index_of(-h_max, space.max_leverage()); break;
      }
      Transition tr;
      tr.s = observation_features(obs, h_max, interval);
      tr.a = a;
      tr.t = t;
      tr.q_star_row = q.row(t - q.begin(), prev);
      auto res = env.step(a);
      tr.r = res.reward;
      tr.done = res.done;
      tr.s_next = observation_features(res.observation, h_max, interval);
      roll.total_reward += res.reward;
      roll.liquidated = roll.liquidated || res.info.liquidated;
      roll.transitions.push_back(std::move(tr));
      obs = res.observation;
      done = res.done;
    }
    out.push_back(std::move(roll));
  }
  return out;
}

}  // namespace fineft
