#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fineft/core.hpp"

namespace fineft {

struct LobLevel {
  double price{0.0};
  double qty{0.0};
  bool operator==(const LobLevel&) const = default;
};

// Aggregated book at one timestamp, best level first on each side.
struct LobSnapshot {
  std::int64_t ts{0};
  std::vector<LobLevel> bids;
  std::vector<LobLevel> asks;

  [[nodiscard]] double best_bid() const { return bids.front().price; }
  [[nodiscard]] double best_ask() const { return asks.front().price; }
  [[nodiscard]] double mid() const { return 0.5 * (best_bid() + best_ask()); }

  // Throws on a book that breaks ordering, crossing or positivity.
  void validate() const {
    if (bids.empty() || asks.empty()) fail("book at ts ", ts, " has an empty side");
    for (std::size_t i = 0; i < bids.size(); ++i) {
      if (!(bids[i].qty > 0.0) || !(bids[i].price > 0.0))
        fail("book at ts ", ts, " has non-positive bid level ", i + 1);
      if (i > 0 && !(bids[i].price < bids[i - 1].price))
        fail("book at ts ", ts, " bids not strictly decreasing at level ", i + 1);
    }
    for (std::size_t i = 0; i < asks.size(); ++i) {
      if (!(asks[i].qty > 0.0) || !(asks[i].price > 0.0))
        fail("book at ts ", ts, " has non-positive ask level ", i + 1);
      if (i > 0 && !(asks[i].price > asks[i - 1].price))
        fail("book at ts ", ts, " asks not strictly increasing at level ", i + 1);
    }
    if (!(best_ask() > best_bid())) fail("crossed book at ts ", ts, ": ask <= bid");
  }
  bool operator==(const LobSnapshot&) const = default;
};

enum class Side { Buy, Sell };

struct TradeRecord {
  std::int64_t ts{0};
  double price{0.0};
  double qty{0.0};
  Side side{Side::Buy};
  bool operator==(const TradeRecord&) const = default;
};

struct MarkPoint {
  std::int64_t ts{0};
  double mark{0.0};
  double funding_rate{0.0};  // nonzero only at settlement timestamps
  std::int64_t seconds_to_funding{0};
  bool operator==(const MarkPoint&) const = default;
};

struct FundingCountdown {
  int hours{0};
  int minutes{0};
  bool operator==(const FundingCountdown&) const = default;
};

[[nodiscard]] inline FundingCountdown countdown_from_seconds(std::int64_t seconds) {
  return {static_cast<int>(seconds / 3600), static_cast<int>((seconds % 3600) / 60)};
}

struct MarketState {
  std::int64_t ts{0};
  std::vector<double> indicators;
  double position{0.0};
  FundingCountdown funding_countdown;
  bool operator==(const MarketState&) const = default;
};

struct SplitRanges {
  IndexRange train;
  IndexRange valid;
  IndexRange test;
  bool operator==(const SplitRanges&) const = default;
};

struct Dataset {
  std::vector<std::int64_t> ts;
  std::vector<LobSnapshot> lob;
  std::vector<std::vector<TradeRecord>> trades;  // per timestamp; may be empty overall
  std::vector<MarkPoint> marks;
  std::vector<MarketState> states;  // filled by compute_indicators
  std::vector<std::string> feature_names;
  std::size_t warmup{0};  // states before this index are not usable
  SplitRanges split;
  std::size_t dropped{0};
  std::vector<int> regime;  // synthetic ground-truth regime per timestamp
  std::int64_t funding_interval{28800};

  [[nodiscard]] std::size_t size() const { return ts.size(); }
  [[nodiscard]] bool has_trades() const { return !trades.empty(); }
  [[nodiscard]] std::size_t feature_dim() const { return feature_names.size(); }
  bool operator==(const Dataset&) const = default;
};

[[nodiscard]] inline std::int64_t seconds_to_next_funding(std::int64_t ts, std::int64_t interval) {
  std::int64_t r = ts % interval;
  if (r < 0) r += interval;
  return interval - r;
}

// ---------------------------------------------------------------------------
// CSV loading

struct DataPaths {
  std::filesystem::path lob;
  std::filesystem::path trades;  // optional; empty path means no trade series
  std::filesystem::path mark;
};

// Column names; LOB columns are prefix + level (1-based).
struct CsvSchema {
  std::string ts{"ts"};
  std::string bid_px{"bid_px_"};
  std::string bid_qty{"bid_qty_"};
  std::string ask_px{"ask_px_"};
  std::string ask_qty{"ask_qty_"};
  std::string price{"price"};
  std::string qty{"qty"};
  std::string side{"side"};
  std::string mark{"mark"};
  std::string funding_rate{"funding_rate"};
  std::int64_t funding_interval{28800};
};

namespace detail {

class CsvTable {
 public:
  CsvTable(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path);
    if (!in) fail("cannot open ", path_);
    std::string line;
    if (!std::getline(in, line)) fail(path_, ": missing header row");
    for (auto f : split_view(line, ',')) header_.push_back(trim(f));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      auto fields = split_view(line, ',');
      if (fields.size() != header_.size())
        fail(path_, ":", lineno, ": expected ", header_.size(), " fields, got ", fields.size());
      std::vector<std::string> row;
      row.reserve(fields.size());
      for (auto f : fields) row.push_back(trim(f));
      rows_.push_back(std::move(row));
      lines_.push_back(lineno);
    }
  }

  [[nodiscard]] std::size_t column(const std::string& name) const {
    auto it = std::find(header_.begin(), header_.end(), name);
    if (it == header_.end()) fail(path_, ": missing column '", name, "'");
    return static_cast<std::size_t>(it - header_.begin());
  }
  [[nodiscard]] bool has_column(const std::string& name) const {
    return std::find(header_.begin(), header_.end(), name) != header_.end();
  }
  [[nodiscard]] std::size_t rows() const { return rows_.size(); }
  [[nodiscard]] const std::string& cell(std::size_t r, std::size_t c) const { return rows_[r][c]; }
  [[nodiscard]] std::size_t line(std::size_t r) const { return lines_[r]; }
  [[nodiscard]] const std::string& path() const { return path_; }

  // nullopt for an empty cell; throws with line number for garbage.
  [[nodiscard]] std::optional<double> number(std::size_t r, std::size_t c) const {
    const auto& s = rows_[r][c];
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    if (!parse_double(s, v) || !std::isfinite(v))
      fail(path_, ":", lines_[r], ": unparseable value '", s, "' in column '", header_[c], "'");
    return v;
  }
  [[nodiscard]] std::optional<std::int64_t> integer(std::size_t r, std::size_t c) const {
    const auto& s = rows_[r][c];
    if (s.empty()) return std::nullopt;
    std::int64_t v = 0;
    if (!parse_int64(s, v))
      fail(path_, ":", lines_[r], ": unparseable integer '", s, "' in column '", header_[c], "'");
    return v;
  }

 private:
  std::string path_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> lines_;
};

}  // namespace detail

// Aligns the three series on the timestamps present (and complete) in all of
// them. Timestamps missing anywhere are dropped and counted in `dropped`.
// An empty mark cell falls back to the book mid.
[[nodiscard]] inline Dataset load_dataset(const DataPaths& paths, const CsvSchema& schema = {}) {
  std::set<std::int64_t> all_ts;
  std::set<std::int64_t> incomplete;

  // LOB
  std::map<std::int64_t, LobSnapshot> books;
  {
    detail::CsvTable t(paths.lob);
    std::size_t depth = 0;
    while (t.has_column(schema.bid_px + std::to_string(depth + 1))) ++depth;
    if (depth == 0) fail(t.path(), ": no '", schema.bid_px, "1' column");
    const auto c_ts = t.column(schema.ts);
    std::vector<std::size_t> bp, bq, ap, aq;
    for (std::size_t i = 1; i <= depth; ++i) {
      bp.push_back(t.column(schema.bid_px + std::to_string(i)));
      bq.push_back(t.column(schema.bid_qty + std::to_string(i)));
      ap.push_back(t.column(schema.ask_px + std::to_string(i)));
      aq.push_back(t.column(schema.ask_qty + std::to_string(i)));
    }
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto ts = t.integer(r, c_ts);
      if (!ts) continue;
      all_ts.insert(*ts);
      LobSnapshot book;
      book.ts = *ts;
      bool complete = true;
      for (std::size_t i = 0; i < depth; ++i) {
        auto p1 = t.number(r, bp[i]), q1 = t.number(r, bq[i]);
        auto p2 = t.number(r, ap[i]), q2 = t.number(r, aq[i]);
        if (!p1 || !q1 || !p2 || !q2) {
          complete = false;
          continue;
        }
        book.bids.push_back({*p1, *q1});
        book.asks.push_back({*p2, *q2});
      }
      if (!complete) {
        incomplete.insert(*ts);
        continue;
      }
      book.validate();
      if (!books.emplace(*ts, std::move(book)).second)
        fail(t.path(), ":", t.line(r), ": duplicate timestamp ", *ts);
    }
  }

  // Trades (many rows per timestamp)
  std::map<std::int64_t, std::vector<TradeRecord>> trades;
  const bool with_trades = !paths.trades.empty();
  if (with_trades) {
    detail::CsvTable t(paths.trades);
    const auto c_ts = t.column(schema.ts), c_p = t.column(schema.price),
               c_q = t.column(schema.qty), c_s = t.column(schema.side);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto ts = t.integer(r, c_ts);
      if (!ts) continue;
      all_ts.insert(*ts);
      auto p = t.number(r, c_p), q = t.number(r, c_q);
      const auto& s = t.cell(r, c_s);
      if (!p || !q || s.empty()) {
        incomplete.insert(*ts);
        continue;
      }
      Side side;
      if (s == "buy" || s == "b" || s == "1")
        side = Side::Buy;
      else if (s == "sell" || s == "s" || s == "-1")
        side = Side::Sell;
      else
        fail(t.path(), ":", t.line(r), ": unparseable side '", s, "'");
      if (!(*p > 0.0) || !(*q > 0.0))
        fail(t.path(), ":", t.line(r), ": trade price and qty must be positive");
      trades[*ts].push_back({*ts, *p, *q, side});
    }
  }

  // Mark + funding
  std::map<std::int64_t, MarkPoint> marks;
  std::set<std::int64_t> mark_from_mid;
  {
    detail::CsvTable t(paths.mark);
    const auto c_ts = t.column(schema.ts), c_m = t.column(schema.mark),
               c_f = t.column(schema.funding_rate);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto ts = t.integer(r, c_ts);
      if (!ts) continue;
      all_ts.insert(*ts);
      auto m = t.number(r, c_m);
      auto f = t.number(r, c_f);
      if (!f) {
        incomplete.insert(*ts);
        continue;
      }
      if (m && !(*m > 0.0)) fail(t.path(), ":", t.line(r), ": mark must be positive");
      MarkPoint mp{*ts, m.value_or(0.0), *f,
                   seconds_to_next_funding(*ts, schema.funding_interval)};
      if (!m) mark_from_mid.insert(*ts);
      if (!marks.emplace(*ts, mp).second)
        fail(t.path(), ":", t.line(r), ": duplicate timestamp ", *ts);
    }
  }

  Dataset ds;
  ds.funding_interval = schema.funding_interval;
  for (auto ts : all_ts) {
    // a bar without trade rows is a zero-volume bar, not a missing one
    const bool ok = !incomplete.count(ts) && books.count(ts) && marks.count(ts);
    if (!ok) {
      ++ds.dropped;
      continue;
    }
    ds.ts.push_back(ts);
    auto& book = books.at(ts);
    auto mp = marks.at(ts);
    if (mark_from_mid.count(ts)) mp.mark = book.mid();
    ds.lob.push_back(std::move(book));
    ds.marks.push_back(mp);
    if (with_trades) {
      auto it = trades.find(ts);
      ds.trades.push_back(it == trades.end() ? std::vector<TradeRecord>{} : std::move(it->second));
    }
  }
  if (ds.ts.empty()) fail("load_dataset: timestamp intersection of input files is empty");
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic regime-switching market

struct RegimeSpec {
  std::string name;
  double drift{0.0};       // per-step log drift
  double volatility{0.0};  // per-step log volatility
  std::size_t min_duration{1};
  std::size_t max_duration{1};
};

struct SyntheticConfig {
  std::size_t steps{20000};
  std::int64_t start_ts{1640995200};  // 2022-01-01T00:00:00Z
  std::int64_t bar_seconds{300};
  double initial_price{100.0};
  std::vector<RegimeSpec> regimes;
  std::size_t depth{5};
  double spread{2e-4};   // relative full spread
  double tick{1e-4};     // relative price step between levels
  double level_qty{400.0};
  double funding_rate_mean{1e-4};
  double funding_rate_std{5e-5};
  std::int64_t funding_interval{28800};
  std::size_t trades_per_bar{3};
  // Volatility multiplier ramps linearly from 1 at `vol_ramp_start` (fraction
  // of the series) to `vol_ramp_end` at the last step.
  double vol_ramp_start{1.0};
  double vol_ramp_end{1.0};
};

inline void validate(const SyntheticConfig& cfg) {
  if (cfg.regimes.empty()) fail("synthetic config needs at least one regime");
  if (cfg.steps < 2) fail("synthetic config needs at least 2 steps");
  if (cfg.depth < 1) fail("synthetic depth must be >= 1");
  if (!(cfg.spread > 0.0)) fail("synthetic spread must be positive");
  if (cfg.tick < 0.0) fail("synthetic tick must be non-negative");
  if (cfg.depth > 1 && !(cfg.tick > 0.0)) fail("synthetic tick must be positive for depth > 1");
  if (!(cfg.level_qty > 0.0)) fail("synthetic level_qty must be positive");
  if (!(cfg.initial_price > 0.0)) fail("synthetic initial_price must be positive");
  if (cfg.bar_seconds <= 0 || cfg.funding_interval <= 0) fail("synthetic time steps must be positive");
  if (cfg.vol_ramp_end < 0.0) fail("synthetic vol_ramp_end must be non-negative");
  for (const auto& r : cfg.regimes) {
    if (r.volatility < 0.0 || !std::isfinite(r.volatility))
      fail("regime '", r.name, "' has negative volatility");
    if (r.min_duration < 1 || r.max_duration < r.min_duration)
      fail("regime '", r.name, "' has an invalid duration range");
  }
}

[[nodiscard]] inline Dataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::gamma_distribution<double> qty_dist(2.0, cfg.level_qty / 2.0);
  std::bernoulli_distribution coin(0.5);

  Dataset ds;
  ds.funding_interval = cfg.funding_interval;
  ds.ts.reserve(cfg.steps);
  std::size_t regime = 0;
  std::size_t remaining = 0;
  auto draw_duration = [&](const RegimeSpec& r) {
    std::uniform_int_distribution<std::size_t> d(r.min_duration, r.max_duration);
    return d(rng);
  };
  remaining = draw_duration(cfg.regimes[regime]);
  const auto ramp_begin = static_cast<double>(cfg.steps) * cfg.vol_ramp_start;

  double log_return = 0.0;  // cumulative, so a flat path stays exactly at initial_price
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (remaining == 0) {
      if (cfg.regimes.size() > 1) {
        std::uniform_int_distribution<std::size_t> pick(0, cfg.regimes.size() - 2);
        auto next = pick(rng);
        regime = next >= regime ? next + 1 : next;
      }
      remaining = draw_duration(cfg.regimes[regime]);
    }
    --remaining;
    const auto& spec = cfg.regimes[regime];
    if (t > 0) {
      double mult = 1.0;
      if (static_cast<double>(t) > ramp_begin && cfg.steps > 1) {
        double frac = (static_cast<double>(t) - ramp_begin) /
                      std::max(1.0, static_cast<double>(cfg.steps - 1) - ramp_begin);
        mult = 1.0 + (cfg.vol_ramp_end - 1.0) * std::min(1.0, frac);
      }
      log_return += spec.drift + spec.volatility * mult * normal(rng);
    }
    const double mark = cfg.initial_price * std::exp(log_return);
    const std::int64_t ts = cfg.start_ts + static_cast<std::int64_t>(t) * cfg.bar_seconds;

    LobSnapshot book;
    book.ts = ts;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      const double off = cfg.spread / 2.0 + static_cast<double>(i) * cfg.tick;
      book.bids.push_back({mark * (1.0 - off), qty_dist(rng)});
      book.asks.push_back({mark * (1.0 + off), qty_dist(rng)});
    }

    std::vector<TradeRecord> bar_trades;
    for (std::size_t k = 0; k < cfg.trades_per_bar; ++k) {
      const bool buy = coin(rng);
      bar_trades.push_back({ts, buy ? book.best_ask() : book.best_bid(), qty_dist(rng) / 10.0,
                            buy ? Side::Buy : Side::Sell});
    }

    const std::int64_t since_epoch = ts % cfg.funding_interval;
    double funding = 0.0;
    if (since_epoch == 0) funding = cfg.funding_rate_mean + cfg.funding_rate_std * normal(rng);

    ds.ts.push_back(ts);
    ds.lob.push_back(std::move(book));
    ds.trades.push_back(std::move(bar_trades));
    ds.marks.push_back({ts, mark, funding, seconds_to_next_funding(ts, cfg.funding_interval)});
    ds.regime.push_back(static_cast<int>(regime));
  }
  return ds;
}

// Writes lob.csv, trades.csv, mark.csv (and regimes.csv for synthetic data).
inline void write_dataset_csv(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t depth = ds.lob.empty() ? 0 : ds.lob.front().bids.size();
  {
    std::ostringstream out;
    out << "ts";
    for (const char* col : {"bid_px_", "bid_qty_", "ask_px_", "ask_qty_"})
      for (std::size_t i = 1; i <= depth; ++i) out << ',' << col << i;
    out << '\n';
    for (const auto& b : ds.lob) {
      out << b.ts;
      for (const auto& l : b.bids) out << ',' << format_double(l.price);
      for (const auto& l : b.bids) out << ',' << format_double(l.qty);
      for (const auto& l : b.asks) out << ',' << format_double(l.price);
      for (const auto& l : b.asks) out << ',' << format_double(l.qty);
      out << '\n';
    }
    write_text(dir / "lob.csv", out.str());
  }
  if (ds.has_trades()) {
    std::ostringstream out;
    out << "ts,price,qty,side\n";
    for (const auto& bar : ds.trades)
      for (const auto& tr : bar)
        out << tr.ts << ',' << format_double(tr.price) << ',' << format_double(tr.qty) << ','
            << (tr.side == Side::Buy ? "buy" : "sell") << '\n';
    write_text(dir / "trades.csv", out.str());
  }
  {
    std::ostringstream out;
    out << "ts,mark,funding_rate\n";
    for (const auto& m : ds.marks)
      out << m.ts << ',' << format_double(m.mark) << ',' << format_double(m.funding_rate) << '\n';
    write_text(dir / "mark.csv", out.str());
  }
  if (!ds.regime.empty()) {
    std::ostringstream out;
    out << "ts,regime\n";
    for (std::size_t i = 0; i < ds.size(); ++i) out << ds.ts[i] << ',' << ds.regime[i] << '\n';
    write_text(dir / "regimes.csv", out.str());
  }
}

// Reads back the optional regimes.csv written next to a synthetic dataset.
inline void attach_regimes_csv(Dataset& ds, const std::filesystem::path& path) {
  detail::CsvTable t(path);
  const auto c_ts = t.column("ts"), c_r = t.column("regime");
  std::map<std::int64_t, int> by_ts;
  for (std::size_t r = 0; r < t.rows(); ++r)
    by_ts[*t.integer(r, c_ts)] = static_cast<int>(*t.integer(r, c_r));
  ds.regime.clear();
  for (auto ts : ds.ts) {
    auto it = by_ts.find(ts);
    if (it == by_ts.end()) fail(path.string(), ": no regime for ts ", ts);
    ds.regime.push_back(it->second);
  }
}

// ---------------------------------------------------------------------------
// Chronological split

struct SplitRatios {
  double train{0.5};
  double valid{0.25};
  double test{0.25};
};

[[nodiscard]] inline SplitRanges split_ranges(std::size_t n, const SplitRatios& r) {
  if (!(r.train > 0.0) || !(r.valid > 0.0) || !(r.test > 0.0))
    fail("split ratios must be positive");
  if (std::abs(r.train + r.valid + r.test - 1.0) > 1e-9) fail("split ratios must sum to 1");
  const auto nd = static_cast<double>(n);
  const auto train_end = static_cast<std::size_t>(std::floor(nd * r.train + 1e-9));
  const auto valid_end = static_cast<std::size_t>(std::floor(nd * (r.train + r.valid) + 1e-9));
  SplitRanges s{{0, train_end}, {train_end, valid_end}, {valid_end, n}};
  if (s.train.empty() || s.valid.empty() || s.test.empty())
    fail("split of ", n, " rows leaves an empty range");
  return s;
}

[[nodiscard]] inline Dataset split_chrono(Dataset ds, const SplitRatios& ratios) {
  ds.split = split_ranges(ds.size(), ratios);
  return ds;
}

// ---------------------------------------------------------------------------
// Indicators

// Feature tokens: "ret:<h>", "ema:<span>", "vol:<window>", "imbalance",
// "spread", "volume_z:<window>".
struct IndicatorSpec {
  std::vector<std::string> features{"ret:1",   "ret:5",     "ret:15", "ret:60",
                                    "ret:240", "ema:12",    "ema:26", "vol:60",
                                    "vol:240", "imbalance", "spread", "volume_z:60"};
};

namespace detail {

struct FeatureToken {
  std::string kind;
  std::size_t arg{0};
};

inline FeatureToken parse_feature(const std::string& token) {
  auto colon = token.find(':');
  FeatureToken f{token.substr(0, colon), 0};
  if (colon != std::string::npos) {
    std::int64_t v = 0;
    if (!parse_int64(token.substr(colon + 1), v) || v <= 0)
      fail("indicator '", token, "' needs a positive integer argument");
    f.arg = static_cast<std::size_t>(v);
  }
  const bool needs_arg = f.kind == "ret" || f.kind == "ema" || f.kind == "vol" || f.kind == "volume_z";
  const bool known = needs_arg || f.kind == "imbalance" || f.kind == "spread";
  if (!known) fail("unknown indicator '", token, "'");
  if (needs_arg && f.arg == 0) fail("indicator '", token, "' needs a window argument");
  return f;
}

}  // namespace detail

// Raw (unnormalized) feature matrix, one row per timestamp, plus warm-up length.
struct RawIndicators {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> names;
  std::size_t warmup{0};
};

[[nodiscard]] inline RawIndicators compute_raw_indicators(const Dataset& ds, const IndicatorSpec& spec) {
  const std::size_t n = ds.size();
  if (n == 0) fail("compute_indicators: empty dataset");
  RawIndicators out;
  out.rows.assign(n, {});
  std::vector<double> log_mark(n);
  for (std::size_t t = 0; t < n; ++t) log_mark[t] = std::log(ds.marks[t].mark);

  for (const auto& token : spec.features) {
    const auto f = detail::parse_feature(token);
    std::vector<double> col(n, 0.0);
    if (f.kind == "ret") {
      for (std::size_t t = f.arg; t < n; ++t) col[t] = log_mark[t] - log_mark[t - f.arg];
      out.warmup = std::max(out.warmup, f.arg);
    } else if (f.kind == "ema") {
      const double a = 2.0 / (static_cast<double>(f.arg) + 1.0);
      double ema = ds.marks[0].mark;
      for (std::size_t t = 0; t < n; ++t) {
        ema = t == 0 ? ema : a * ds.marks[t].mark + (1.0 - a) * ema;
        col[t] = ema / ds.marks[t].mark - 1.0;
      }
      out.warmup = std::max(out.warmup, f.arg);
    } else if (f.kind == "vol") {
      // population std of 1-step log returns over the trailing window
      double s = 0.0, s2 = 0.0;
      for (std::size_t t = 1; t < n; ++t) {
        const double r = log_mark[t] - log_mark[t - 1];
        s += r;
        s2 += r * r;
        if (t > f.arg) {
          const double old = log_mark[t - f.arg] - log_mark[t - f.arg - 1];
          s -= old;
          s2 -= old * old;
        }
        const double cnt = static_cast<double>(std::min(t, f.arg));
        const double mean = s / cnt;
        col[t] = std::sqrt(std::max(0.0, s2 / cnt - mean * mean));
      }
      out.warmup = std::max(out.warmup, f.arg);
    } else if (f.kind == "imbalance" || f.kind == "spread") {
      if (ds.lob.size() != n) fail("indicator '", token, "' needs the LOB series");
      for (std::size_t t = 0; t < n; ++t) {
        const auto& b = ds.lob[t];
        if (f.kind == "imbalance") {
          double qb = 0.0, qa = 0.0;
          for (const auto& l : b.bids) qb += l.qty;
          for (const auto& l : b.asks) qa += l.qty;
          col[t] = qb / (qb + qa);
        } else {
          col[t] = (b.best_ask() - b.best_bid()) / b.mid();
        }
      }
    } else {  // volume_z
      if (!ds.has_trades()) fail("indicator '", token, "' needs the trade series");
      std::vector<double> vol(n, 0.0);
      for (std::size_t t = 0; t < n; ++t)
        for (const auto& tr : ds.trades[t]) vol[t] += tr.qty;
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t + 1 >= f.arg ? t + 1 - f.arg : 0;
        double s = 0.0, s2 = 0.0;
        for (std::size_t k = lo; k <= t; ++k) {
          s += vol[k];
          s2 += vol[k] * vol[k];
        }
        const double cnt = static_cast<double>(t + 1 - lo);
        const double mean = s / cnt;
        const double sd = std::sqrt(std::max(0.0, s2 / cnt - mean * mean));
        col[t] = sd > 1e-12 ? (vol[t] - mean) / sd : 0.0;
      }
      out.warmup = std::max(out.warmup, f.arg);
    }
    for (std::size_t t = 0; t < n; ++t) out.rows[t].push_back(col[t]);
    out.names.push_back(token);
  }
  if (out.warmup >= n) fail("compute_indicators: warm-up ", out.warmup, " leaves no usable rows");
  return out;
}

// Column mean/std over `range` (population std; zero std maps to 1).
struct ZScore {
  std::vector<double> mean;
  std::vector<double> scale;
};

[[nodiscard]] inline ZScore fit_zscore(const std::vector<std::vector<double>>& rows, IndexRange range) {
  if (range.empty()) fail("fit_zscore: empty normalization range");
  const std::size_t d = rows[range.begin].size();
  ZScore z{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t t = range.begin; t < range.end; ++t)
    for (std::size_t j = 0; j < d; ++j) z.mean[j] += rows[t][j];
  const auto cnt = static_cast<double>(range.size());
  for (auto& m : z.mean) m /= cnt;
  for (std::size_t t = range.begin; t < range.end; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = rows[t][j] - z.mean[j];
      z.scale[j] += dv * dv;
    }
  for (auto& s : z.scale) {
    s = std::sqrt(s / cnt);
    if (!(s > 1e-12)) s = 1.0;
  }
  return z;
}

// Fills ds.states with z-scored indicator vectors. Statistics come from the
// usable part of the training split when one is set, else from all usable rows.
[[nodiscard]] inline Dataset compute_indicators(Dataset ds, const IndicatorSpec& spec = {}) {
  auto raw = compute_raw_indicators(ds, spec);
  const std::size_t n = ds.size();
  IndexRange norm{raw.warmup, n};
  if (!ds.split.train.empty()) norm = {std::max(raw.warmup, ds.split.train.begin), ds.split.train.end};
  if (norm.empty()) fail("compute_indicators: training split lies inside the warm-up window");
  const auto z = fit_zscore(raw.rows, norm);

  ds.states.assign(n, {});
  for (std::size_t t = 0; t < n; ++t) {
    auto& s = ds.states[t];
    s.ts = ds.ts[t];
    s.funding_countdown = countdown_from_seconds(ds.marks[t].seconds_to_funding);
    s.indicators.resize(raw.names.size());
    for (std::size_t j = 0; j < raw.names.size(); ++j) {
      const double v = (raw.rows[t][j] - z.mean[j]) / z.scale[j];
      if (t >= raw.warmup && !std::isfinite(v))
        fail("indicator '", raw.names[j], "' is not finite at ts ", ds.ts[t]);
      s.indicators[j] = std::isfinite(v) ? v : 0.0;
    }
  }
  ds.feature_names = raw.names;
  ds.warmup = raw.warmup;
  return ds;
}

// features.csv: ts, one column per indicator (shortest round-trip decimals).
inline void write_features_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "ts";
  for (const auto& n : ds.feature_names) out << ',' << n;
  out << '\n';
  for (const auto& s : ds.states) {
    out << s.ts;
    for (double v : s.indicators) out << ',' << format_double(v);
    out << '\n';
  }
  write_text(path, out.str());
}

}  // namespace fineft
