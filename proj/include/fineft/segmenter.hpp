#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include "fineft/core.hpp"

namespace fineft {

struct Segment {
  std::size_t start{0};
  std::size_t end{0};  // exclusive
  double slope{0.0};   // per-step change of the smoothed log price
  int label{-1};

  [[nodiscard]] std::size_t length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

enum class MergeOrder {
  SmallestFirst,  // merge the most similar adjacent pair first
  LeftToRight,    // merge the first qualifying pair from the left
};

struct SegmenterConfig {
  std::size_t window{288};
  double merge_threshold{0.25};  // relative slope difference
  MergeOrder order{MergeOrder::SmallestFirst};
};

// Centered moving average; the window shrinks symmetrically near the ends.
[[nodiscard]] inline std::vector<double> centered_moving_average(const std::vector<double>& x, std::size_t window) {
  if (window == 0) fail("moving average window must be positive");
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  const std::size_t left = (window - 1) / 2, right = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i - left, hi = i + right;
    if (i < left || i + right > n - 1) {
      const std::size_t r = std::min({left, i, n - 1 - i});
      lo = i - r;
      hi = i + r;
    }
    out[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  return out;
}

// |a - b| / max(|a|, |b|); zero when both are zero.
[[nodiscard]] inline double relative_slope_difference(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

namespace detail {

inline double chord_slope(const std::vector<double>& smooth, std::size_t start, std::size_t end) {
  const std::size_t last = std::min(end, smooth.size() - 1);
  if (last <= start) return 0.0;
  return (smooth[last] - smooth[start]) / static_cast<double>(last - start);
}

}  // namespace detail

// Smooths log prices, cuts at strict local extrema, then merges adjacent
// segments whose relative slope difference is below the threshold until no
// pair qualifies. A segment's slope is the chord of the smoothed log price
// from its first bar to the first bar of the next segment.
[[nodiscard]] inline std::vector<Segment> segment_series(const std::vector<double>& prices, const SegmenterConfig& cfg) {
  if (cfg.window == 0) fail("segment: window must be positive");
  if (prices.size() <= cfg.window) fail("segment: series of ", prices.size(), " bars is not longer than window ", cfg.window);
  if (!(cfg.merge_threshold >= 0.0)) fail("segment: merge threshold must be non-negative");
  std::vector<double> logp(prices.size());
  for (std::size_t i = 0; i < prices.size(); ++i) {
    if (!(prices[i] > 0.0)) fail("segment: non-positive price at index ", i);
    logp[i] = std::log(prices[i]);
  }
  const auto smooth = centered_moving_average(logp, cfg.window);
  const std::size_t n = smooth.size();
  std::vector<std::size_t> cuts{0};
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const bool peak = smooth[i] > smooth[i - 1] && smooth[i] > smooth[i + 1];
    const bool trough = smooth[i] < smooth[i - 1] && smooth[i] < smooth[i + 1];
    if (peak || trough) cuts.push_back(i);
  }
  cuts.push_back(n);
  std::vector<Segment> segs;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
    segs.push_back({cuts[k], cuts[k + 1], detail::chord_slope(smooth, cuts[k], cuts[k + 1]), -1});

  while (segs.size() > 1) {
    std::size_t pick = segs.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < segs.size(); ++k) {
      const double d = relative_slope_difference(segs[k].slope, segs[k + 1].slope);
      if (!(d < cfg.merge_threshold)) continue;
      if (cfg.order == MergeOrder::LeftToRight) {
        pick = k;
        break;
      }
      if (d < best) {
        best = d;
        pick = k;
      }
    }
    if (pick == segs.size()) break;
    segs[pick].end = segs[pick + 1].end;
    segs[pick].slope = detail::chord_slope(smooth, segs[pick].start, segs[pick].end);
    segs.erase(segs.begin() + static_cast<std::ptrdiff_t>(pick + 1));
  }
  return segs;
}

struct Labeling {
  std::vector<Segment> segments;
  bool degenerate{false};  // all slopes equal; every segment got label m / 2
};

// Length-weighted quantile bins over slope: sorted by slope, a segment goes to
// bin floor(m * (length before it + half its length) / total). Bin edges are
// then nudged so every bin holds at least one segment. Label 0 is the most
// negative slope bucket.
[[nodiscard]] inline Labeling label_dynamics(std::vector<Segment> segs, std::size_t m) {
  if (m == 0) fail("label_dynamics: dynamic count must be positive");
  if (segs.size() < m) fail("label_dynamics: ", segs.size(), " segments cannot fill ", m, " dynamics");
  Labeling out;
  const bool all_equal = std::all_of(segs.begin(), segs.end(), [&](const Segment& s) { return s.slope == segs[0].slope; });
  if (all_equal && m > 1) {
    for (auto& s : segs) s.label = static_cast<int>(m / 2);
    out.segments = std::move(segs);
    out.degenerate = true;
    return out;
  }
  std::vector<std::size_t> order(segs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return segs[a].slope < segs[b].slope; });
  double total = 0.0;
  for (const auto& s : segs) total += static_cast<double>(s.length());
  const std::size_t n = segs.size();
  std::vector<std::size_t> bin(n);
  double before = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double len = static_cast<double>(segs[order[r]].length());
    bin[r] = std::min(m - 1, static_cast<std::size_t>(static_cast<double>(m) * (before + 0.5 * len) / total));
    before += len;
  }
  // edge[k] = first rank in bin k; force edge[k-1] < edge[k] <= n - (m - k)
  std::vector<std::size_t> edge(m + 1, 0);
  edge[m] = n;
  for (std::size_t k = 1; k < m; ++k) {
    edge[k] = static_cast<std::size_t>(std::lower_bound(bin.begin(), bin.end(), k) - bin.begin());
    edge[k] = std::max(edge[k], edge[k - 1] + 1);
  }
  for (std::size_t k = m - 1; k >= 1; --k) edge[k] = std::min(edge[k], n - (m - k));
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t r = edge[k]; r < edge[k + 1]; ++r) segs[order[r]].label = static_cast<int>(k);
  out.segments = std::move(segs);
  return out;
}

// Per-bar labels over [0, n) from a labeled partition.
[[nodiscard]] inline std::vector<int> bar_labels(const std::vector<Segment>& segs, std::size_t n) {
  std::vector<int> out(n, -1);
  for (const auto& s : segs) {
    if (s.end > n || s.start >= s.end) fail("bar_labels: segment [", s.start, ", ", s.end, ") outside [0, ", n, ")");
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(s.start), out.begin() + static_cast<std::ptrdiff_t>(s.end),
              s.label);
  }
  return out;
}

// segments.csv: start_ts,end_ts,slope,label with end_ts the last bar inside.
// `ts` is indexed by the same positions as the segments plus `offset`.
inline void write_segments_csv(const std::filesystem::path& path, const std::vector<Segment>& segs,
                               const std::vector<std::int64_t>& ts, std::size_t offset = 0) {
  std::ostringstream out;
  out << "start_ts,end_ts,slope,label\n";
  for (const auto& s : segs) {
    if (offset + s.end > ts.size()) fail("write_segments_csv: segment beyond timestamps");
    out << ts[offset + s.start] << ',' << ts[offset + s.end - 1] << ',' << format_double(s.slope) << ',' << s.label
        << '\n';
  }
  write_text(path, out.str());
}

}  // namespace fineft
