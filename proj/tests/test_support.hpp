#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fineft/market_data.hpp"

namespace fineft::fixtures {

// Book with `depth` levels of `qty` each, `half_spread` and `tick` in price units.
inline LobSnapshot toy_book(std::int64_t ts, double mark, double half_spread, double qty,
                            std::size_t depth = 1, double tick = 0.01) {
  LobSnapshot b;
  b.ts = ts;
  for (std::size_t i = 0; i < depth; ++i) {
    b.bids.push_back({mark - half_spread - tick * static_cast<double>(i), qty});
    b.asks.push_back({mark + half_spread + tick * static_cast<double>(i), qty});
  }
  return b;
}

// Hand-built dataset over a mark path; states carry no indicators.
inline Dataset toy_dataset(const std::vector<double>& marks, double half_spread = 0.0,
                           double qty = 1e6, const std::vector<double>& funding = {},
                           std::size_t depth = 1) {
  Dataset ds;
  for (std::size_t t = 0; t < marks.size(); ++t) {
    const std::int64_t ts = 1000 + static_cast<std::int64_t>(t) * 300;
    ds.ts.push_back(ts);
    // a zero-spread book still needs ask > bid
    const double hs = half_spread > 0.0 ? half_spread : marks[t] * 1e-12;
    ds.lob.push_back(toy_book(ts, marks[t], hs, qty, depth));
    const double f = funding.empty() ? 0.0 : funding[t];
    ds.marks.push_back({ts, marks[t], f, seconds_to_next_funding(ts, ds.funding_interval)});
    MarketState s;
    s.ts = ts;
    s.funding_countdown = countdown_from_seconds(ds.marks.back().seconds_to_funding);
    ds.states.push_back(s);
  }
  return ds;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fineft_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fineft::fixtures
