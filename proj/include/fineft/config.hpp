#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fineft/backtest.hpp"
#include "fineft/core.hpp"
#include "fineft/dp_oracle.hpp"
#include "fineft/ensemble.hpp"
#include "fineft/futures_env.hpp"
#include "fineft/market_data.hpp"
#include "fineft/ood.hpp"
#include "fineft/router.hpp"
#include "fineft/segmenter.hpp"

namespace fineft {

// INI sections as flat string maps. Every key must be consumed by a typed
// getter; leftovers are reported as unknown keys.
class IniDoc {
 public:
  IniDoc() = default;

  static IniDoc parse(const std::string& text, const std::string& origin) {
    boost::property_tree::ptree pt;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
      fail(origin, ":", e.line(), ": ", e.message());
    }
    IniDoc doc;
    doc.origin_ = origin;
    for (const auto& [section, body] : pt) {
      if (body.empty() && !body.data().empty()) fail(origin, ": key '", section, "' outside any section");
      auto& dst = doc.sections_[section];
      for (const auto& [key, value] : body) dst[key] = trim(value.data());
    }
    return doc;
  }

  static IniDoc load(const std::filesystem::path& path) { return parse(read_text(path), path.string()); }

  [[nodiscard]] bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

  [[nodiscard]] std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    used_.insert(section + "." + key);
    auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
  }

  template <typename T>
  void get(const std::string& section, const std::string& key, T& out) const {
    const auto v = raw(section, key);
    if (!v) return;
    out = convert<T>(*v, section, key);
  }

  template <typename T>
  void get_list(const std::string& section, const std::string& key, std::vector<T>& out) const {
    const auto v = raw(section, key);
    if (!v) return;
    out.clear();
    if (trim(*v).empty()) return;
    for (auto part : split_view(*v, ',')) out.push_back(convert<T>(trim(part), section, key));
  }

  // Section names starting with `prefix` (e.g. "regime." -> "bull").
  [[nodiscard]] std::vector<std::string> sections_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, body] : sections_)
      if (name.rfind(prefix, 0) == 0) out.push_back(name.substr(prefix.size()));
    return out;
  }

  void check_all_used() const {
    for (const auto& [section, body] : sections_)
      for (const auto& [key, value] : body)
        if (!used_.count(section + "." + key)) fail(origin_, ": unknown key '", key, "' in [", section, "]");
  }

 private:
  template <typename T>
  static T convert(const std::string& v, const std::string& section, const std::string& key) {
    auto bad = [&]() { fail("config [", section, "] ", key, ": cannot parse '", v, "'"); };
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v != "false" && v != "0" && v != "no") bad();
      return false;
    } else if constexpr (std::is_floating_point_v<T>) {
      double d = 0.0;
      if (!parse_double(v, d)) bad();
      return static_cast<T>(d);
    } else {
      std::int64_t i = 0;
      if (!parse_int64(v, i)) bad();
      if constexpr (std::is_unsigned_v<T>) {
        if (i < 0) bad();
      }
      return static_cast<T>(i);
    }
  }

  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
  mutable std::set<std::string> used_;
};

struct DataSource {
  std::string kind{"synthetic"};  // synthetic | csv
  DataPaths paths;
  std::filesystem::path regimes;  // optional regimes.csv for csv sources
};

struct PipelineConfig {
  std::uint64_t seed{1};
  DataSource source;
  SyntheticConfig synthetic;
  SplitRatios split;
  IndicatorSpec features;
  EnvConfig env;
  DpConfig dp;
  EnsembleConfig ensemble;
  PretrainConfig pretrain;
  TrainConfig train;
  SegmenterConfig segment;
  std::size_t dynamics{2};
  OodConfig ood;
  RouterConfig router;
  RouterGrid grid;
  bool tune_router{true};
  FilterConfig filter;
  MetricsConfig metrics;
  std::optional<std::uint64_t> ensemble_seed;  // default: pipeline seed
  std::optional<std::uint64_t> train_seed;     // default: pipeline seed

  // Stage seeds follow the pipeline seed unless set explicitly.
  void apply_seed(std::uint64_t s) {
    seed = s;
    ensemble.seed = ensemble_seed.value_or(s);
    train.seed = train_seed.value_or(s);
  }
};

namespace detail {

inline std::vector<RegimeSpec> default_regimes() {
  return {{"bull", 1e-3, 2.5e-4, 1500, 3000}, {"bear", -1e-3, 2.5e-4, 1500, 3000}};
}

inline std::vector<MarginTier> parse_tiers(const std::string& text) {
  std::vector<MarginTier> tiers;
  for (auto row : split_view(text, ';')) {
    const auto cols = split_view(trim(row), ':');
    MarginTier t;
    if (cols.size() != 3 || !parse_double(cols[0], t.npv_upper_bound) || !parse_double(cols[1], t.k) ||
        !parse_double(cols[2], t.j))
      fail("config [env] margin_table: expected 'bound:k:j;...', got '", text, "'");
    tiers.push_back(t);
  }
  return tiers;
}

}  // namespace detail

// Relative data paths resolve against `base_dir` (the config file's directory).
[[nodiscard]] inline PipelineConfig parse_config(const IniDoc& ini, const std::filesystem::path& base_dir = {}) {
  PipelineConfig c;
  ini.get("pipeline", "seed", c.seed);
  std::uint64_t es = 0, ts = 0;
  if (ini.raw("ensemble", "seed")) {
    ini.get("ensemble", "seed", es);
    c.ensemble_seed = es;
  }
  if (ini.raw("train", "seed")) {
    ini.get("train", "seed", ts);
    c.train_seed = ts;
  }

  ini.get("data", "source", c.source.kind);
  if (c.source.kind != "synthetic" && c.source.kind != "csv") fail("config [data] source must be synthetic or csv");
  auto path_key = [&](const char* key, std::filesystem::path& out) {
    std::string s;
    ini.get("data", key, s);
    if (!s.empty()) out = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base_dir / s;
  };
  path_key("lob", c.source.paths.lob);
  path_key("trades", c.source.paths.trades);
  path_key("mark", c.source.paths.mark);
  path_key("regimes", c.source.regimes);
  if (c.source.kind == "csv" && (c.source.paths.lob.empty() || c.source.paths.mark.empty()))
    fail("config [data] csv source needs lob and mark paths");

  auto& sc = c.synthetic;
  ini.get("data", "steps", sc.steps);
  ini.get("data", "start_ts", sc.start_ts);
  ini.get("data", "bar_seconds", sc.bar_seconds);
  ini.get("data", "initial_price", sc.initial_price);
  ini.get("data", "depth", sc.depth);
  ini.get("data", "spread", sc.spread);
  ini.get("data", "tick", sc.tick);
  ini.get("data", "level_qty", sc.level_qty);
  ini.get("data", "funding_rate_mean", sc.funding_rate_mean);
  ini.get("data", "funding_rate_std", sc.funding_rate_std);
  ini.get("data", "funding_interval", sc.funding_interval);
  ini.get("data", "trades_per_bar", sc.trades_per_bar);
  ini.get("data", "vol_ramp_start", sc.vol_ramp_start);
  ini.get("data", "vol_ramp_end", sc.vol_ramp_end);
  std::vector<std::string> names;
  ini.get_list("data", "regimes_order", names);
  if (names.empty()) names = ini.sections_with_prefix("regime.");
  if (names.empty()) {
    sc.regimes = detail::default_regimes();
  } else {
    for (const auto& n : names) {
      const std::string sec = "regime." + n;
      if (!ini.has_section(sec)) fail("config: regime '", n, "' has no [", sec, "] section");
      RegimeSpec r{n, 0.0, 0.0, 1, 1};
      ini.get(sec, "drift", r.drift);
      ini.get(sec, "volatility", r.volatility);
      ini.get(sec, "min_duration", r.min_duration);
      ini.get(sec, "max_duration", r.max_duration);
      sc.regimes.push_back(r);
    }
  }

  ini.get("split", "train", c.split.train);
  ini.get("split", "valid", c.split.valid);
  ini.get("split", "test", c.split.test);
  ini.get_list("features", "list", c.features.features);
  if (c.features.features.empty()) fail("config [features] list must not be empty");

  auto& e = c.env;
  ini.get("env", "initial_wallet", e.initial_wallet);
  ini.get("env", "fee_rate", e.fee_rate);
  ini.get("env", "liquidation_fee_rate", e.liquidation_fee_rate);
  ini.get("env", "open_loss_long_rate", e.open_loss_long_rate);
  ini.get("env", "open_loss_short_rate", e.open_loss_short_rate);
  double h_max = e.action_space.h_max();
  std::size_t choices = e.action_space.position_pool().size();
  std::vector<int> lev = e.action_space.leverage_pool();
  ini.get("env", "h_max", h_max);
  ini.get("env", "position_choices", choices);
  ini.get_list("env", "leverage", lev);
  e.action_space = ActionSpace(h_max, choices, lev);
  std::string tiers;
  ini.get("env", "margin_table", tiers);
  if (!tiers.empty()) e.margin_table = MarginTable(detail::parse_tiers(tiers));
  e.validate();

  ini.get("dp", "mask_penalty", c.dp.mask_penalty);

  auto& en = c.ensemble;
  ini.get("ensemble", "n_learners", en.n_learners);
  ini.get_list("ensemble", "hidden", en.hidden);
  ini.get("ensemble", "gamma", en.gamma);
  ini.get("ensemble", "tau_net", en.tau_net);
  ini.get("ensemble", "kl_temperature", en.kl_temperature);
  ini.get("ensemble", "huber_delta", en.huber_delta);
  ini.get("ensemble", "reward_scale", en.reward_scale);
  ini.get("ensemble", "lr_start", en.lr.start);
  ini.get("ensemble", "lr_end", en.lr.end);
  ini.get("ensemble", "lr_decay_steps", en.lr.decay_steps);
  en.validate();

  ini.get("pretrain", "epochs", c.pretrain.epochs);
  ini.get("pretrain", "batch_size", c.pretrain.batch_size);
  ini.get("pretrain", "alpha_start", c.pretrain.alpha.start);
  ini.get("pretrain", "alpha_end", c.pretrain.alpha.end);
  ini.get("pretrain", "alpha_steps", c.pretrain.alpha.steps);
  ini.get("pretrain", "seed", c.pretrain.seed);

  auto& t = c.train;
  ini.get("train", "total_steps", t.total_steps);
  ini.get("train", "batch_size", t.batch_size);
  ini.get("train", "buffer_capacity", t.buffer_capacity);
  ini.get("train", "learning_starts", t.learning_starts);
  ini.get("train", "update_every", t.update_every);
  ini.get("train", "episode_length", t.episode_length);
  ini.get("train", "steps_per_epoch", t.steps_per_epoch);
  ini.get("train", "neighbors", t.neighbors);
  std::string mode = to_string(t.mode);
  ini.get("train", "mode", mode);
  t.mode = parse_update_mode(mode);
  ini.get("train", "epsilon_start", t.epsilon.start);
  ini.get("train", "epsilon_end", t.epsilon.end);
  ini.get("train", "epsilon_steps", t.epsilon.steps);
  ini.get("train", "alpha_start", t.alpha.start);
  ini.get("train", "alpha_end", t.alpha.end);
  ini.get("train", "alpha_steps", t.alpha.steps);
  ini.get("train", "optimal_actor", t.optimal_actor);
  t.validate();

  ini.get("segment", "window", c.segment.window);
  ini.get("segment", "merge_threshold", c.segment.merge_threshold);
  ini.get("segment", "dynamics", c.dynamics);
  std::string order = "smallest_first";
  ini.get("segment", "order", order);
  if (order == "smallest_first") c.segment.order = MergeOrder::SmallestFirst;
  else if (order == "left_to_right") c.segment.order = MergeOrder::LeftToRight;
  else fail("config [segment] order must be smallest_first or left_to_right");
  if (c.dynamics == 0) fail("config [segment] dynamics must be positive");

  auto& o = c.ood;
  ini.get("ood", "hidden", o.hidden);
  ini.get("ood", "latent", o.latent);
  ini.get("ood", "epochs", o.epochs);
  ini.get("ood", "batch_size", o.batch_size);
  ini.get("ood", "lr", o.lr.start);
  o.lr.end = o.lr.start;
  ini.get("ood", "eval_samples", o.eval_samples);
  ini.get("ood", "seed", o.seed);
  ini.get("ood", "eval_seed", o.eval_seed);
  o.validate();

  ini.get("router", "gamma", c.router.gamma);
  ini.get("router", "window", c.router.window);
  ini.get("router", "tau", c.router.tau);
  ini.get("router", "drawdown", c.router.drawdown);
  ini.get("router", "tune", c.tune_router);
  ini.get_list("router", "grid_gamma", c.grid.gamma);
  ini.get_list("router", "grid_window", c.grid.window);
  ini.get_list("router", "grid_tau", c.grid.tau);
  c.grid.drawdown = c.router.drawdown;
  c.router.validate();

  ini.get("filter", "leverage", c.filter.leverage);
  ini.get("filter", "threads", c.filter.threads);
  ini.get("metrics", "bars_per_day", c.metrics.bars_per_day);
  ini.get("metrics", "annualization", c.metrics.annualization);

  ini.check_all_used();
  c.apply_seed(c.seed);
  return c;
}

[[nodiscard]] inline PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(IniDoc::load(path), path.parent_path());
}

// Canonical per-section view of the parsed values; stage fingerprints hash
// the sections a stage depends on.
[[nodiscard]] inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["pipeline"] = {{"seed", c.seed}};
  ordered_json regimes = ordered_json::array();
  for (const auto& r : c.synthetic.regimes)
    regimes.push_back({{"name", r.name}, {"drift", r.drift}, {"volatility", r.volatility},
                       {"min_duration", r.min_duration}, {"max_duration", r.max_duration}});
  const auto& s = c.synthetic;
  j["data"] = {{"source", c.source.kind},
               {"lob", c.source.paths.lob.string()},
               {"trades", c.source.paths.trades.string()},
               {"mark", c.source.paths.mark.string()},
               {"regimes_csv", c.source.regimes.string()},
               {"steps", s.steps},
               {"start_ts", s.start_ts},
               {"bar_seconds", s.bar_seconds},
               {"initial_price", s.initial_price},
               {"depth", s.depth},
               {"spread", s.spread},
               {"tick", s.tick},
               {"level_qty", s.level_qty},
               {"funding_rate_mean", s.funding_rate_mean},
               {"funding_rate_std", s.funding_rate_std},
               {"funding_interval", s.funding_interval},
               {"trades_per_bar", s.trades_per_bar},
               {"vol_ramp_start", s.vol_ramp_start},
               {"vol_ramp_end", s.vol_ramp_end},
               {"regimes", regimes}};
  j["split"] = {{"train", c.split.train}, {"valid", c.split.valid}, {"test", c.split.test}};
  j["features"] = {{"list", c.features.features}};
  ordered_json tiers = ordered_json::array();
  for (const auto& t : c.env.margin_table.tiers()) tiers.push_back({t.npv_upper_bound, t.k, t.j});
  j["env"] = {{"initial_wallet", c.env.initial_wallet},
              {"fee_rate", c.env.fee_rate},
              {"liquidation_fee_rate", c.env.liquidation_fee_rate},
              {"open_loss_long_rate", c.env.open_loss_long_rate},
              {"open_loss_short_rate", c.env.open_loss_short_rate},
              {"h_max", c.env.action_space.h_max()},
              {"position_choices", c.env.action_space.position_pool().size()},
              {"leverage", c.env.action_space.leverage_pool()},
              {"margin_table", tiers}};
  j["dp"] = {{"mask_penalty", c.dp.mask_penalty}};
  const auto& en = c.ensemble;
  j["ensemble"] = {{"n_learners", en.n_learners}, {"hidden", en.hidden},
                   {"gamma", en.gamma},           {"tau_net", en.tau_net},
                   {"kl_temperature", en.kl_temperature}, {"huber_delta", en.huber_delta},
                   {"reward_scale", en.reward_scale},     {"lr_start", en.lr.start},
                   {"lr_end", en.lr.end},                 {"lr_decay_steps", en.lr.decay_steps},
                   {"seed", en.seed}};
  const auto& p = c.pretrain;
  j["pretrain"] = {{"epochs", p.epochs},           {"batch_size", p.batch_size}, {"alpha_start", p.alpha.start},
                   {"alpha_end", p.alpha.end},     {"alpha_steps", p.alpha.steps}, {"seed", p.seed}};
  const auto& t = c.train;
  j["train"] = {{"total_steps", t.total_steps},
                {"batch_size", t.batch_size},
                {"buffer_capacity", t.buffer_capacity},
                {"learning_starts", t.learning_starts},
                {"update_every", t.update_every},
                {"episode_length", t.episode_length},
                {"steps_per_epoch", t.steps_per_epoch},
                {"neighbors", t.neighbors},
                {"mode", to_string(t.mode)},
                {"epsilon_start", t.epsilon.start},
                {"epsilon_end", t.epsilon.end},
                {"epsilon_steps", t.epsilon.steps},
                {"alpha_start", t.alpha.start},
                {"alpha_end", t.alpha.end},
                {"alpha_steps", t.alpha.steps},
                {"optimal_actor", t.optimal_actor},
                {"seed", t.seed}};
  j["segment"] = {{"window", c.segment.window},
                  {"merge_threshold", c.segment.merge_threshold},
                  {"order", c.segment.order == MergeOrder::SmallestFirst ? "smallest_first" : "left_to_right"},
                  {"dynamics", c.dynamics}};
  const auto& o = c.ood;
  j["ood"] = {{"hidden", o.hidden}, {"latent", o.latent},           {"epochs", o.epochs},
              {"batch_size", o.batch_size}, {"lr", o.lr.start},     {"eval_samples", o.eval_samples},
              {"seed", o.seed},     {"eval_seed", o.eval_seed}};
  j["router"] = {{"gamma", c.router.gamma},   {"window", c.router.window},   {"tau", c.router.tau},
                 {"drawdown", c.router.drawdown}, {"tune", c.tune_router},  {"grid_gamma", c.grid.gamma},
                 {"grid_window", c.grid.window},  {"grid_tau", c.grid.tau}};
  j["filter"] = {{"leverage", c.filter.leverage}};
  j["metrics"] = {{"bars_per_day", c.metrics.bars_per_day}, {"annualization", c.metrics.annualization}};
  return j;
}

}  // namespace fineft
