#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fineft/core.hpp"
#include "fineft/market_data.hpp"

namespace fineft {

// ---------------------------------------------------------------------------
// Action space: index 0 is the flat position (no leverage); every other index
// pairs one non-zero pool position with one leverage.

struct ActionTarget {
  double position{0.0};
  int leverage{0};  // 0 for the flat action
  bool operator==(const ActionTarget&) const = default;
};

class ActionSpace {
 public:
  ActionSpace() : ActionSpace(8.0, 9, {5}) {}

  ActionSpace(double h_max, std::size_t position_choices, std::vector<int> leverage_pool)
      : h_max_(h_max), leverage_pool_(std::move(leverage_pool)) {
    if (!(h_max > 0.0)) fail("h_max must be positive");
    if (position_choices < 3 || position_choices % 2 == 0)
      fail("position_choices must be odd and >= 3, got ", position_choices);
    if (leverage_pool_.empty()) fail("leverage pool must not be empty");
    for (std::size_t i = 0; i < leverage_pool_.size(); ++i) {
      if (leverage_pool_[i] < 1) fail("leverage must be >= 1");
      if (i > 0 && leverage_pool_[i] <= leverage_pool_[i - 1])
        fail("leverage pool must be strictly increasing");
    }
    const std::size_t half = position_choices / 2;
    positions_.resize(position_choices);
    for (std::size_t i = 0; i < half; ++i) {
      const double v = h_max * static_cast<double>(half - i) / static_cast<double>(half);
      positions_[i] = -v;
      positions_[position_choices - 1 - i] = v;
    }
    positions_[half] = 0.0;
    for (std::size_t i = 0; i < position_choices; ++i)
      if (i != half) nonzero_.push_back(positions_[i]);
  }

  // {1, 1 + (l_max-1)/(n-1), ..., l_max}; n = 1 gives {l_max}.
  [[nodiscard]] static std::vector<int> linear_leverage_pool(int l_max, std::size_t n) {
    if (n == 1) return {l_max};
    std::vector<int> pool;
    for (std::size_t i = 0; i < n; ++i)
      pool.push_back(static_cast<int>(std::lround(
          1.0 + static_cast<double>(l_max - 1) * static_cast<double>(i) / static_cast<double>(n - 1))));
    return pool;
  }

  [[nodiscard]] std::size_t size() const { return leverage_pool_.size() * nonzero_.size() + 1; }
  [[nodiscard]] double h_max() const { return h_max_; }
  [[nodiscard]] const std::vector<double>& position_pool() const { return positions_; }
  [[nodiscard]] const std::vector<int>& leverage_pool() const { return leverage_pool_; }
  [[nodiscard]] int max_leverage() const { return leverage_pool_.back(); }

  [[nodiscard]] ActionTarget target(std::size_t index) const {
    if (index >= size()) fail("action index ", index, " out of range [0, ", size(), ")");
    if (index == 0) return {0.0, 0};
    const std::size_t k = index - 1;
    return {nonzero_[k % nonzero_.size()], leverage_pool_[k / nonzero_.size()]};
  }

  // Inverse of target(); position must be a pool value, leverage a pool value.
  [[nodiscard]] std::size_t index_of(double position, int leverage) const {
    if (position == 0.0) return 0;
    auto pit = std::find(nonzero_.begin(), nonzero_.end(), position);
    auto lit = std::find(leverage_pool_.begin(), leverage_pool_.end(), leverage);
    if (pit == nonzero_.end()) fail("position ", position, " is not in the pool");
    if (lit == leverage_pool_.end()) fail("leverage ", leverage, " is not in the pool");
    return 1 + static_cast<std::size_t>(lit - leverage_pool_.begin()) * nonzero_.size() +
           static_cast<std::size_t>(pit - nonzero_.begin());
  }

  // Nearest pool position (used after partial fills or coercions).
  [[nodiscard]] std::size_t nearest_index(double position, int leverage) const {
    if (std::find(leverage_pool_.begin(), leverage_pool_.end(), leverage) == leverage_pool_.end())
      leverage = leverage_pool_.front();
    double best = positions_.front();
    for (double p : positions_)
      if (std::abs(p - position) < std::abs(best - position)) best = p;
    return index_of(best, leverage);
  }

 private:
  double h_max_;
  std::vector<int> leverage_pool_;
  std::vector<double> positions_;
  std::vector<double> nonzero_;
};

// ---------------------------------------------------------------------------
// Tiered maintenance margin: M_m = k * NPV - j on the first tier whose bound
// is >= NPV.

struct MarginTier {
  double npv_upper_bound{0.0};
  double k{0.0};
  double j{0.0};
};

class MarginTable {
 public:
  MarginTable() : MarginTable(btcusdt()) {}
  explicit MarginTable(std::vector<MarginTier> tiers) : tiers_(std::move(tiers)) {
    if (tiers_.empty()) fail("margin table must have at least one tier");
    for (std::size_t i = 0; i < tiers_.size(); ++i) {
      if (i > 0 && !(tiers_[i].npv_upper_bound > tiers_[i - 1].npv_upper_bound))
        fail("margin tier bounds must be strictly increasing");
      if (i > 0 && tiers_[i].k < tiers_[i - 1].k) fail("margin tier rates must be nondecreasing");
    }
  }

  static MarginTable btcusdt() { return MarginTable({{50000, 0.004, 0}, {500000, 0.005, 50}, {10000000, 0.01, 2550}}); }
  static MarginTable ethusdt() { return MarginTable({{50000, 0.004, 0}, {500000, 0.005, 50}, {10000000, 0.0065, 800}}); }
  static MarginTable bnbusdt() {
    return MarginTable({{10000, 0.005, 0}, {50000, 0.006, 10}, {100000, 0.01, 210}, {500000, 0.02, 1210}, {2000000, 0.05, 16210}});
  }
  static MarginTable dotusdt() {
    return MarginTable({{10000, 0.0065, 0}, {50000, 0.01, 35}, {500000, 0.02, 535}, {2000000, 0.05, 15535}});
  }
  static MarginTable preset(const std::string& name) {
    if (name == "btcusdt") return btcusdt();
    if (name == "ethusdt") return ethusdt();
    if (name == "bnbusdt") return bnbusdt();
    if (name == "dotusdt") return dotusdt();
    fail("unknown margin table preset '", name, "'");
  }

  [[nodiscard]] const std::vector<MarginTier>& tiers() const { return tiers_; }
  [[nodiscard]] double max_npv() const { return tiers_.back().npv_upper_bound; }

  [[nodiscard]] const MarginTier& tier_for(double npv) const {
    if (npv < 0.0) fail("NPV must be non-negative");
    for (const auto& t : tiers_)
      if (npv <= t.npv_upper_bound) return t;
    fail("NPV ", npv, " exceeds the last margin tier bound ", max_npv());
  }

  // Same formula, but NPV beyond the table keeps the last tier.
  [[nodiscard]] double maintenance_margin_extrapolated(double npv) const {
    if (npv == 0.0) return 0.0;
    const auto& t = npv > max_npv() ? tiers_.back() : tier_for(npv);
    return t.k * npv - t.j;
  }

 private:
  std::vector<MarginTier> tiers_;
};

[[nodiscard]] inline double maintenance_margin(double npv, const MarginTable& table) {
  if (npv == 0.0) return 0.0;
  const auto& t = table.tier_for(npv);
  return t.k * npv - t.j;
}

// ---------------------------------------------------------------------------
// Market order execution

struct Execution {
  double executed_value{0.0};  // buys: notional*(1+fee); sells: notional*(1-fee)
  double notional{0.0};        // sum of level price * filled qty
  double fees{0.0};
  double executed_price{0.0};
  double filled_qty{0.0};
  double order_loss{0.0};  // loss versus valuing the filled quantity at mark
  bool partial{false};
};

[[nodiscard]] inline Execution execute_market_order(const LobSnapshot& lob, double qty, Side side,
                                                     double fee_rate, double mark) {
  Execution e;
  if (!(qty > 0.0)) return e;
  const auto& levels = side == Side::Buy ? lob.asks : lob.bids;
  double remaining = qty;
  for (const auto& level : levels) {
    if (remaining <= 0.0) break;
    const double take = std::min(level.qty, remaining);
    e.notional += level.price * take;
    e.filled_qty += take;
    remaining -= take;
  }
  if (remaining > 0.0) e.partial = true;
  if (e.filled_qty <= 0.0) return e;
  e.fees = e.notional * fee_rate;
  e.executed_value = side == Side::Buy ? e.notional + e.fees : e.notional - e.fees;
  e.executed_price = e.executed_value / e.filled_qty;
  e.order_loss = side == Side::Buy ? e.executed_value - e.filled_qty * mark
                                   : e.filled_qty * mark - e.executed_value;
  return e;
}

// ---------------------------------------------------------------------------
// Account

struct Account {
  double wallet{0.0};
  double position{0.0};
  int leverage{1};
  double avg_entry_price{0.0};
  double trade_open_mb{0.0};
  double trade_peak_mb{0.0};

  [[nodiscard]] double unrealized_pnl(double mark) const { return position * (mark - avg_entry_price); }
  [[nodiscard]] double margin_balance(double mark) const { return wallet + unrealized_pnl(mark); }
  [[nodiscard]] double initial_margin(double mark) const {
    return std::abs(position) * mark / static_cast<double>(leverage);
  }
  [[nodiscard]] double available_balance(double mark) const {
    return margin_balance(mark) - initial_margin(mark);
  }
  bool operator==(const Account&) const = default;
};

// Positive rate charges longs and credits shorts, on nominal position value.
[[nodiscard]] inline Account settle_funding(Account acct, double rate, double mark) {
  acct.wallet -= rate * acct.position * mark;
  return acct;
}

// Applies a signed fill at an executed price: closes against the open
// position first (realizing PnL into the wallet), then opens the remainder.
inline void apply_fill(Account& acct, double signed_qty, double price, double snap) {
  if (signed_qty == 0.0) return;
  const auto sign = [](double v) { return v > 0.0 ? 1.0 : -1.0; };
  if (acct.position == 0.0 || sign(signed_qty) == sign(acct.position)) {
    const double total = std::abs(acct.position) + std::abs(signed_qty);
    acct.avg_entry_price =
        (std::abs(acct.position) * acct.avg_entry_price + std::abs(signed_qty) * price) / total;
    acct.position += signed_qty;
  } else {
    const double close_qty = std::min(std::abs(signed_qty), std::abs(acct.position));
    acct.wallet += close_qty * (price - acct.avg_entry_price) * sign(acct.position);
    acct.position += sign(signed_qty) * close_qty;
    const double rest = std::abs(signed_qty) - close_qty;
    if (std::abs(acct.position) <= snap) {
      acct.position = 0.0;
      acct.avg_entry_price = 0.0;
    }
    if (rest > snap) {
      acct.position = sign(signed_qty) * rest;
      acct.avg_entry_price = price;
    }
  }
  if (std::abs(acct.position) <= snap) {
    acct.position = 0.0;
    acct.avg_entry_price = 0.0;
  }
}

// ---------------------------------------------------------------------------
// Environment

struct EnvConfig {
  double initial_wallet{100000.0};
  double fee_rate{0.0002};
  double liquidation_fee_rate{0.005};
  double open_loss_long_rate{0.0005};
  double open_loss_short_rate{0.0};
  MarginTable margin_table;
  ActionSpace action_space;

  void validate() const {
    if (!(initial_wallet > 0.0)) fail("initial_wallet must be positive");
    if (fee_rate < 0.0 || liquidation_fee_rate < 0.0) fail("fee rates must be non-negative");
    if (open_loss_long_rate < 0.0 || open_loss_short_rate < 0.0)
      fail("open-loss rates must be non-negative");
  }
};

struct StepInfo {
  double margin_balance{0.0};
  double maintenance_margin{0.0};
  bool liquidated{false};
  double funding_paid{0.0};
  double fees_paid{0.0};
  double order_loss{0.0};  // includes the forced close on liquidation
  double traded_qty{0.0};
  double position{0.0};  // held over the step, after the trade
  bool coerced{false};  // requested action was unaffordable; position held
  bool partial_fill{false};
  double available_after_trade{0.0};
};

struct StepResult {
  MarketState observation;
  double reward{0.0};
  bool done{false};
  StepInfo info;
};

// Single-threaded exchange simulator over an immutable Dataset (which must
// outlive the environment).
class FuturesEnv {
 public:
  FuturesEnv(const Dataset& ds, EnvConfig cfg) : ds_(&ds), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (ds.states.size() != ds.size()) fail("FuturesEnv needs a dataset with computed indicators");
    snap_ = cfg_.action_space.h_max() * 1e-12;
  }

  // Starts an episode at the first usable timestamp of `range`. A non-zero
  // initial action places that position at mark without trading cost.
  MarketState reset(IndexRange range, std::size_t initial_action = 0) {
    if (range.end > ds_->size()) fail("reset: range exceeds dataset");
    const std::size_t begin = std::max(range.begin, ds_->warmup);
    if (range.end < begin + 2) fail("reset: range shorter than 2 usable steps");
    begin_ = begin;
    end_ = range.end;
    t_ = begin;
    done_ = false;
    acct_ = Account{};
    acct_.wallet = cfg_.initial_wallet;
    acct_.leverage = cfg_.action_space.leverage_pool().front();
    const auto target = cfg_.action_space.target(initial_action);
    if (target.position != 0.0) {
      acct_.position = target.position;
      acct_.leverage = target.leverage;
      acct_.avg_entry_price = mark();
    }
    acct_.trade_open_mb = acct_.trade_peak_mb = margin_balance();
    return observation();
  }

  StepResult step(std::size_t action) {
    if (done_) fail("step called on a finished episode");
    const auto& space = cfg_.action_space;
    ActionTarget target = space.target(action);
    if (target.position == 0.0) target.leverage = acct_.leverage;

    const double m0 = mark();
    const auto& book = ds_->lob[t_];
    const double v0 = margin_balance();
    StepResult res;

    // Affordability: opening orders switch leverage first, then must cover the
    // open loss plus initial margin of the opened quantity.
    const double pos = acct_.position;
    const double delta = target.position - pos;
    const bool same_side = pos == 0.0 || target.position == 0.0 || (pos > 0.0) == (target.position > 0.0);
    const double keep = same_side ? std::min(std::abs(pos), std::abs(target.position)) : 0.0;
    const double open_qty = std::abs(target.position) - keep;
    const bool opening = open_qty > snap_;
    const bool relever = target.position != 0.0 && target.leverage != acct_.leverage;
    if (opening || relever) {
      double actual_loss = 0.0;
      if (std::abs(delta) > snap_)
        actual_loss = execute_market_order(book, std::abs(delta), delta > 0 ? Side::Buy : Side::Sell,
                                           cfg_.fee_rate, m0)
                          .order_loss;
      double est_loss = 0.0;
      if (opening)
        est_loss = target.position > 0.0
                       ? open_qty * (book.best_ask() * (1.0 + cfg_.open_loss_long_rate) - m0)
                       : open_qty * (m0 - book.best_bid() * (1.0 - cfg_.open_loss_short_rate));
      const double lev = static_cast<double>(target.leverage);
      const double available = v0 - keep * m0 / lev;
      const double required = std::max(est_loss, actual_loss) + open_qty * m0 / lev;
      const bool too_big = std::abs(target.position) * m0 > cfg_.margin_table.max_npv();
      if (available < required || too_big) {
        target = {pos, acct_.leverage};
        res.info.coerced = true;
      }
    }

    // Trade.
    const double trade = target.position - acct_.position;
    if (std::abs(trade) > snap_) {
      const auto exec = execute_market_order(book, std::abs(trade), trade > 0 ? Side::Buy : Side::Sell,
                                             cfg_.fee_rate, m0);
      const double was = acct_.position;
      apply_fill(acct_, trade > 0 ? exec.filled_qty : -exec.filled_qty, exec.executed_price, snap_);
      res.info.fees_paid += exec.fees;
      res.info.order_loss += exec.order_loss;
      res.info.traded_qty += exec.filled_qty;
      res.info.partial_fill = exec.partial;
      const bool opened_new = acct_.position != 0.0 && (was == 0.0 || (was > 0.0) != (acct_.position > 0.0));
      if (opened_new) acct_.trade_open_mb = acct_.trade_peak_mb = margin_balance();
    }
    if (acct_.position != 0.0) acct_.leverage = target.leverage;
    if (acct_.position == 0.0) acct_.trade_open_mb = acct_.trade_peak_mb = margin_balance();
    res.info.available_after_trade = acct_.available_balance(m0);
    res.info.position = acct_.position;

    // Advance, fund, check liquidation.
    ++t_;
    const auto& mp = ds_->marks[t_];
    if (mp.funding_rate != 0.0 && acct_.position != 0.0) {
      res.info.funding_paid = mp.funding_rate * acct_.position * mp.mark;
      acct_ = settle_funding(acct_, mp.funding_rate, mp.mark);
    }
    double v1 = margin_balance();
    const double mm = cfg_.margin_table.maintenance_margin_extrapolated(std::abs(acct_.position) * mp.mark);
    res.info.maintenance_margin = mm;
    if (acct_.position != 0.0 && v1 <= mm) {
      liquidate();
      res.info.liquidated = true;
      res.info.fees_paid += last_liquidation_.fees;
      res.info.order_loss += last_liquidation_.order_loss;
      res.info.traded_qty += last_liquidation_.filled_qty;
      v1 = margin_balance();
      done_ = true;
    }
    acct_.trade_peak_mb = std::max(acct_.trade_peak_mb, v1);
    if (t_ + 1 >= end_) done_ = true;

    res.reward = v1 - v0;
    res.done = done_;
    res.info.margin_balance = v1;
    res.observation = observation();
    return res;
  }

  [[nodiscard]] double mark() const { return ds_->marks[t_].mark; }
  [[nodiscard]] double margin_balance() const { return acct_.margin_balance(mark()); }
  [[nodiscard]] const Account& account() const { return acct_; }
  [[nodiscard]] std::size_t t() const { return t_; }
  [[nodiscard]] std::size_t begin() const { return begin_; }
  [[nodiscard]] std::size_t end() const { return end_; }
  [[nodiscard]] bool done() const { return done_; }
  [[nodiscard]] const EnvConfig& config() const { return cfg_; }
  [[nodiscard]] const Dataset& dataset() const { return *ds_; }
  [[nodiscard]] std::size_t current_action_index() const {
    return cfg_.action_space.nearest_index(acct_.position, acct_.leverage);
  }

  [[nodiscard]] MarketState observation() const {
    MarketState s = ds_->states[t_];
    s.position = acct_.position;
    return s;
  }

 private:
  void liquidate() {
    const double m = mark();
    const auto& book = ds_->lob[t_];
    const double qty = std::abs(acct_.position);
    const Side side = acct_.position > 0.0 ? Side::Sell : Side::Buy;
    auto exec = execute_market_order(book, qty, side, cfg_.liquidation_fee_rate, m);
    if (exec.partial) {
      // unfilled remainder is closed at the worst book level
      const double rest = qty - exec.filled_qty;
      const double px = side == Side::Sell ? book.bids.back().price : book.asks.back().price;
      const double notional = rest * px;
      const double fee = notional * cfg_.liquidation_fee_rate;
      exec.notional += notional;
      exec.fees += fee;
      exec.executed_value += side == Side::Buy ? notional + fee : notional - fee;
      exec.filled_qty = qty;
      exec.executed_price = exec.executed_value / qty;
      exec.order_loss = side == Side::Buy ? exec.executed_value - qty * m : qty * m - exec.executed_value;
    }
    apply_fill(acct_, side == Side::Buy ? qty : -qty, exec.executed_price, snap_);
    acct_.position = 0.0;
    acct_.avg_entry_price = 0.0;
    last_liquidation_ = exec;
  }

  const Dataset* ds_;
  EnvConfig cfg_;
  Account acct_;
  std::size_t begin_{0}, end_{0}, t_{0};
  bool done_{true};
  double snap_{0.0};
  Execution last_liquidation_;
};

// Network input for a state: indicators, position / h_max, funding countdown.
[[nodiscard]] inline std::vector<double> observation_features(const MarketState& s, double h_max,
                                                              std::int64_t funding_interval = 28800) {
  std::vector<double> f = s.indicators;
  f.push_back(s.position / h_max);
  f.push_back(static_cast<double>(s.funding_countdown.hours) /
              std::max<double>(1.0, static_cast<double>(funding_interval) / 3600.0));
  f.push_back(static_cast<double>(s.funding_countdown.minutes) / 60.0);
  return f;
}

}  // namespace fineft
