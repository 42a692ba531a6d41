#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fineft/backtest.hpp"
#include "fineft/config.hpp"
#include "fineft/core.hpp"
#include "fineft/dp_oracle.hpp"
#include "fineft/ensemble.hpp"
#include "fineft/futures_env.hpp"
#include "fineft/market_data.hpp"
#include "fineft/ood.hpp"
#include "fineft/router.hpp"
#include "fineft/segmenter.hpp"

namespace fineft {

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"data",   "features", "dp",          "train",    "segment",
                                          "fit-vae", "filter",  "tune-router", "backtest", "report"};
  return s;
}

[[nodiscard]] inline std::size_t stage_index(const std::string& name) {
  const auto& s = pipeline_stages();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] == name) return i;
  fail("unknown pipeline stage '", name, "'");
}

struct PipelineOptions {
  std::filesystem::path out_dir{"out"};
  bool resume{false};
  std::string until{"report"};           // last stage to run
  std::optional<std::string> force_from;  // stages from here on rerun even when resumable
  std::function<void(const std::string&)> log;
};

struct StageRecord {
  std::string name;
  bool skipped{false};
  double seconds{0.0};
};

struct PipelineRun {
  std::vector<StageRecord> stages;
  nlohmann::ordered_json summary;  // empty unless the report stage ran or was reused

  [[nodiscard]] bool skipped(const std::string& stage) const {
    for (const auto& s : stages)
      if (s.name == stage) return s.skipped;
    return false;
  }
};

// Ground-truth regime runs inside `range`, grouped by regime label.
[[nodiscard]] inline std::vector<std::vector<IndexRange>> regime_runs(const Dataset& ds, IndexRange range) {
  if (ds.regime.size() != ds.size()) fail("regime_runs: dataset carries no regime labels");
  const std::size_t first = std::max(range.begin, ds.warmup);
  if (range.end <= first) return {};
  std::vector<std::vector<IndexRange>> out;
  std::size_t s = first;
  for (std::size_t t = first + 1; t <= range.end; ++t)
    if (t == range.end || ds.regime[t] != ds.regime[s]) {
      const auto r = static_cast<std::size_t>(ds.regime[s]);
      if (out.size() <= r) out.resize(r + 1);
      out[r].push_back({s, t});
      s = t;
    }
  return out;
}

[[nodiscard]] inline std::string learner_name(std::size_t i) { return concat("learner_", i + 1); }

// Structural check of summary.json; returns the first problem found.
[[nodiscard]] inline std::optional<std::string> validate_summary(const nlohmann::ordered_json& s) {
  auto need = [&](const nlohmann::ordered_json& obj, const char* key, auto pred, const char* what)
      -> std::optional<std::string> {
    if (!obj.is_object() || !obj.contains(key)) return concat("missing '", key, "'");
    if (!pred(obj.at(key))) return concat("'", key, "' is not ", what);
    return std::nullopt;
  };
  auto is_obj = [](const auto& v) { return v.is_object(); };
  auto is_arr = [](const auto& v) { return v.is_array(); };
  auto is_num = [](const auto& v) { return v.is_number(); };
  auto num_or_null = [](const auto& v) { return v.is_number() || v.is_null(); };
  for (const char* k : {"config", "dataset", "training", "segments", "filter", "router", "policies", "routing"})
    if (auto e = need(s, k, is_obj, "an object")) return e;
  for (const char* k : {"seed", "version"})
    if (auto e = need(s, k, is_num, "a number")) return e;
  if (auto e = need(s, "artifacts", is_arr, "an array")) return e;
  for (const char* k : {"rows", "warmup", "dropped"})
    if (auto e = need(s["dataset"], k, is_num, "a number")) return concat("dataset: ", *e);
  for (const char* k : {"env_steps", "updates"})
    if (auto e = need(s["training"], k, is_num, "a number")) return concat("training: ", *e);
  if (auto e = need(s["filter"], "policy", is_arr, "an array")) return concat("filter: ", *e);
  if (auto e = need(s["router"], "config", is_obj, "an object")) return concat("router: ", *e);
  const auto& pol = s["policies"];
  for (const char* k : {"fineft", "fineft_no_tau", "router_off"})
    if (auto e = need(pol, k, is_obj, "an object")) return concat("policies: ", *e);
  const std::size_t n = s["filter"].contains("mean_return") && !s["filter"]["mean_return"].empty()
                            ? s["filter"]["mean_return"][0].size()
                            : 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!pol.contains(learner_name(i))) return concat("policies: missing '", learner_name(i), "'");
  for (const auto& [name, m] : pol.items()) {
    for (const char* k : {"TR", "MDD", "TO", "TTN", "TT", "steps", "days"})
      if (auto e = need(m, k, is_num, "a number")) return concat("policies.", name, ": ", *e);
    for (const char* k : {"ASR", "ACR", "ASoR", "AVOL", "WR", "RRR", "ARR"})
      if (auto e = need(m, k, num_or_null, "a number or null")) return concat("policies.", name, ": ", *e);
  }
  for (const char* k : {"fineft", "fineft_no_tau"}) {
    if (auto e = need(s["routing"], k, is_obj, "an object")) return concat("routing: ", *e);
    if (auto e = need(s["routing"][k], "thirds", is_arr, "an array")) return concat("routing.", k, ": ", *e);
  }
  return std::nullopt;
}

namespace detail {

inline nlohmann::ordered_json range_json(IndexRange r) { return nlohmann::ordered_json::array({r.begin, r.end}); }

template <typename T>
nlohmann::ordered_json matrix_json(const std::vector<std::vector<T>>& m) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& row : m) j.push_back(row);
  return j;
}

inline std::vector<std::string> files_under(const std::filesystem::path& root, const std::filesystem::path& sub) {
  std::vector<std::string> out;
  if (!std::filesystem::exists(root / sub)) return out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root / sub))
    if (e.is_regular_file()) out.push_back(std::filesystem::relative(e.path(), root).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& p) {
  try {
    return nlohmann::ordered_json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    fail(p.string(), ": ", e.what());
  }
}

inline Dataset read_stage_data(const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
  const auto dir = out_dir / "data";
  DataPaths p{dir / "lob.csv", dir / "trades.csv", dir / "mark.csv"};
  CsvSchema schema;
  if (cfg.source.kind == "synthetic") schema.funding_interval = cfg.synthetic.funding_interval;
  Dataset ds = load_dataset(p, schema);
  if (std::filesystem::exists(dir / "regimes.csv")) attach_regimes_csv(ds, dir / "regimes.csv");
  return ds;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
  write_text(p, j.dump(2) + "\n");
}

}  // namespace detail

// data -> features -> dp -> train -> segment -> fit-vae -> filter ->
// tune-router -> backtest -> report. manifest.json records each stage's
// input fingerprint and output checksums; with `resume`, a stage whose
// fingerprint and outputs still match is reused instead of rerun, and a
// rerun stage forces every stage that consumes it to rerun.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, PipelineOptions opt) : cfg_(std::move(cfg)), opt_(std::move(opt)), out_(opt_.out_dir) {}

  PipelineRun run() {
    std::filesystem::create_directories(out_);
    const auto manifest_path = out_ / "manifest.json";
    if (std::filesystem::exists(manifest_path)) manifest_ = detail::read_json(manifest_path);
    if (!manifest_.is_object() || !manifest_.contains("stages")) manifest_ = {{"stages", nlohmann::ordered_json::object()}};
    const std::size_t last = stage_index(opt_.until);
    const std::size_t force = opt_.force_from ? stage_index(*opt_.force_from) : pipeline_stages().size();
    for (std::size_t i = 0; i <= last; ++i) {
      const auto& name = pipeline_stages()[i];
      const auto t0 = std::chrono::steady_clock::now();
      bool skipped = false;
      try {
        skipped = step(name, opt_.resume && i < force);
      } catch (const std::exception& e) {
        fail("stage ", name, " failed: ", e.what());
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      run_.stages.push_back({name, skipped, secs});
      detail::write_json(manifest_path, manifest_);
      say(concat(name, skipped ? " (reused)" : "", " ", format_double(std::round(secs * 100) / 100), "s"));
    }
    nlohmann::ordered_json timing = nlohmann::ordered_json::object();
    for (const auto& s : run_.stages) timing[s.name] = {{"seconds", s.seconds}, {"skipped", s.skipped}};
    detail::write_json(out_ / "timing.json", timing);
    return run_;
  }

  [[nodiscard]] const Dataset& dataset() const { return ds_; }
  [[nodiscard]] const Ensemble& ensemble() const { return ens_; }

 private:
  using json = nlohmann::ordered_json;

  void say(const std::string& s) const {
    if (opt_.log) opt_.log(s);
  }

  // Input fingerprint: the stage name, the config sections it reads and the
  // fingerprints of the stages it consumes.
  std::string fingerprint(const std::string& name, const std::vector<std::string>& sections,
                          const std::vector<std::string>& upstream) {
    const auto all = to_json(cfg_);
    Fnv1a h;
    h.update(name);
    for (const auto& s : sections) {
      h.update(s);
      h.update(all.at(s).dump());
    }
    for (const auto& u : upstream) h.update(keys_.at(u));
    return hex64(h.digest());
  }

  [[nodiscard]] bool reusable(const std::string& name, const std::string& key) const {
    const auto& st = manifest_["stages"];
    if (!st.contains(name) || st[name].value("key", "") != key) return false;
    for (const auto& [rel, sum] : st[name]["outputs"].items()) {
      const auto p = out_ / rel;
      if (!std::filesystem::exists(p) || file_checksum(p) != sum.get<std::string>()) return false;
    }
    return !st[name]["outputs"].empty();
  }

  void record(const std::string& name, const std::string& key, const std::vector<std::string>& outputs) {
    json o = json::object();
    for (const auto& rel : outputs) o[rel] = file_checksum(out_ / rel);
    manifest_["stages"][name] = {{"key", key}, {"outputs", o}};
  }

  // Runs or reuses one stage; returns true when reused.
  bool step(const std::string& name, bool may_reuse) {
    struct Spec {
      std::vector<std::string> sections, upstream;
    };
    static const std::map<std::string, Spec> specs{
        {"data", {{"pipeline", "data"}, {}}},
        {"features", {{"split", "features"}, {"data"}}},
        {"dp", {{"env", "dp"}, {"features"}}},
        {"train", {{"ensemble", "pretrain", "train"}, {"dp"}}},
        {"segment", {{"segment"}, {"features"}}},
        {"fit-vae", {{"ood"}, {"segment"}}},
        {"filter", {{"filter"}, {"train", "segment"}}},
        {"tune-router", {{"router", "metrics"}, {"fit-vae", "filter"}}},
        {"backtest", {{"metrics"}, {"tune-router"}}},
        {"report", {{}, {"backtest"}}},
    };
    const auto& spec = specs.at(name);
    const auto key = fingerprint(name, spec.sections, spec.upstream);
    keys_[name] = key;
    bool upstream_rerun = false;
    for (const auto& u : spec.upstream) upstream_rerun = upstream_rerun || rerun_.count(u) > 0;
    const bool reuse = may_reuse && !upstream_rerun && reusable(name, key);
    if (!reuse) rerun_.insert(name);
    const auto outputs = execute(name, reuse);
    if (!reuse) record(name, key, outputs);
    return reuse;
  }

  std::vector<std::string> execute(const std::string& name, bool reuse) {
    if (name == "data") return stage_data(reuse);
    if (name == "features") return stage_features(reuse);
    if (name == "dp") return stage_dp(reuse);
    if (name == "train") return stage_train(reuse);
    if (name == "segment") return stage_segment(reuse);
    if (name == "fit-vae") return stage_fit_vae(reuse);
    if (name == "filter") return stage_filter(reuse);
    if (name == "tune-router") return stage_tune_router(reuse);
    if (name == "backtest") return stage_backtest(reuse);
    return stage_report(reuse);
  }

  [[nodiscard]] IndexRange usable(IndexRange r) const { return {std::max(r.begin, ds_.warmup), r.end}; }

  std::vector<std::string> stage_data(bool reuse) {
    const auto dir = out_ / "data";
    if (!reuse) {
      Dataset raw;
      if (cfg_.source.kind == "synthetic") {
        raw = generate_synthetic(cfg_.synthetic, cfg_.seed);
      } else {
        raw = load_dataset(cfg_.source.paths);
        if (!cfg_.source.regimes.empty()) attach_regimes_csv(raw, cfg_.source.regimes);
      }
      write_dataset_csv(raw, dir);
    }
    // Always read back from disk so fresh and resumed runs see identical data.
    ds_ = detail::read_stage_data(cfg_, out_);
    return detail::files_under(out_, "data");
  }

  std::vector<std::string> stage_features(bool reuse) {
    ds_ = compute_indicators(split_chrono(std::move(ds_), cfg_.split), cfg_.features);
    if (!reuse) write_features_csv(ds_, out_ / "features.csv");
    env_.emplace(ds_, cfg_.env);
    return {"features.csv"};
  }

  std::vector<std::string> stage_dp(bool reuse) {
    const auto path = out_ / "qstar.bin";
    if (reuse) {
      q_ = OptimalQTable::load(path);
    } else {
      q_ = optimal_action_value(ds_, usable(ds_.split.train), cfg_.env, cfg_.dp);
      q_.save(path);
    }
    return {"qstar.bin"};
  }

  std::vector<std::string> stage_train(bool reuse) {
    const auto dir = out_ / "ensemble";
    const auto report_path = out_ / "train_report.json";
    if (reuse) {
      ens_ = load_ensemble(dir);
      train_ = detail::read_json(report_path);
    } else {
      std::filesystem::remove_all(dir);
      const auto demos = demo_transitions(q_, *env_);
      std::vector<Transition> all;
      for (const auto& d : demos) all.insert(all.end(), d.transitions.begin(), d.transitions.end());
      if (all.empty()) fail("no demonstration transitions");
      ens_ = Ensemble::create(all.front().s.size(), cfg_.env.action_space.size(), cfg_.ensemble);
      const auto pre = pretrain(ens_, all, cfg_.pretrain);
      FuturesEnv env = *env_;
      const auto rep = train_loop(env, ens_, q_, usable(ds_.split.train), cfg_.train, dir);
      save_ensemble(ens_, dir);
      train_ = json::object();
      train_["pretrain_updates"] = pre.updates;
      train_["env_steps"] = rep.env_steps;
      train_["updates"] = rep.updates;
      train_["episodes"] = rep.episodes;
      train_["epoch_loss"] = rep.epoch_loss;
      train_["i_star_counts"] = rep.i_star_counts;
      train_["i_star_by_regime"] = detail::matrix_json(rep.i_star_by_regime);
      train_["last_epoch_i_star_by_regime"] = detail::matrix_json(rep.last_epoch_i_star_by_regime);
      detail::write_json(report_path, train_);
    }
    auto outs = detail::files_under(out_, "ensemble");
    outs.push_back("train_report.json");
    return outs;
  }

  std::vector<std::string> stage_segment(bool reuse) {
    const auto v = ds_.split.valid;
    std::vector<double> prices;
    for (std::size_t t = v.begin; t < v.end; ++t) prices.push_back(ds_.marks[t].mark);
    labeling_ = label_dynamics(segment_series(prices, cfg_.segment), cfg_.dynamics);
    segs_.assign(cfg_.dynamics, {});
    for (const auto& s : labeling_.segments)
      segs_[static_cast<std::size_t>(s.label)].push_back({v.begin + s.start, v.begin + s.end});
    if (!reuse) write_segments_csv(out_ / "segments.csv", labeling_.segments, ds_.ts, v.begin);
    return {"segments.csv"};
  }

  std::vector<std::string> stage_fit_vae(bool reuse) {
    const auto dir = out_ / "regimes";
    if (reuse) {
      models_ = load_regime_models(dir);
    } else {
      std::map<int, std::vector<std::vector<double>>> by_dyn;
      for (std::size_t d = 0; d < segs_.size(); ++d)
        for (const auto& r : segs_[d])
          for (std::size_t t = std::max(r.begin, ds_.warmup); t < r.end; ++t)
            by_dyn[static_cast<int>(d)].push_back(ds_.states[t].indicators);
      for (std::size_t d = 0; d < segs_.size(); ++d)
        if (!by_dyn.count(static_cast<int>(d))) fail("dynamic ", d, " has no usable validation states");
      std::filesystem::remove_all(dir);
      models_ = fit_vaes(by_dyn, cfg_.ood);
      save_regime_models(models_, dir);
    }
    return detail::files_under(out_, "regimes");
  }

  std::vector<std::string> stage_filter(bool reuse) {
    const auto path = out_ / "filter.json";
    if (reuse) {
      const auto j = detail::read_json(path);
      filter_.policy = j.at("policy_index").get<std::vector<std::size_t>>();
      filter_.mean_return = j.at("mean_return").get<std::vector<std::vector<double>>>();
    } else {
      filter_ = filter_ensemble(ens_, *env_, segs_, cfg_.filter);
      json j;
      json names = json::array();
      for (auto l : filter_.policy) names.push_back(learner_name(l));
      j["policy"] = names;
      j["policy_index"] = filter_.policy;
      j["mean_return"] = detail::matrix_json(filter_.mean_return);
      detail::write_json(path, j);
    }
    return {"filter.json"};
  }

  std::vector<std::string> stage_tune_router(bool reuse) {
    const auto path = out_ / "router.json";
    if (reuse) {
      const auto j = detail::read_json(path);
      const auto& c = j.at("config");
      router_ = RouterConfig{c.at("gamma"), c.at("window"), c.at("tau"), c.at("drawdown")};
      router_json_ = j;
      return {"router.json"};
    }
    json j;
    if (cfg_.tune_router) {
      const auto range = usable(ds_.split.valid);
      const auto scores = regime_scores(models_, ds_, range);
      auto objective = [&](const RouterConfig& c) {
        FuturesEnv env = *env_;
        const auto run = routed_backtest(env, range, ens_, filter_.policy, scores, c);
        const auto m = compute_metrics(run.curve, cfg_.metrics);
        return m.acr.value_or(0.0);
      };
      const auto res = tune_router(cfg_.grid, objective);
      router_ = res.best;
      j["tuned"] = true;
      j["objective"] = "validation ACR";
      j["best_objective"] = res.best_objective;
      json trials = json::array();
      for (const auto& t : res.trials)
        trials.push_back({{"gamma", t.config.gamma}, {"window", t.config.window}, {"tau", t.config.tau},
                          {"objective", t.objective}});
      j["trials"] = trials;
    } else {
      router_ = cfg_.router;
      j["tuned"] = false;
    }
    j["config"] = {{"gamma", router_.gamma}, {"window", router_.window}, {"tau", router_.tau},
                   {"drawdown", router_.drawdown}};
    router_json_ = j;
    detail::write_json(path, j);
    return {"router.json"};
  }

  std::vector<std::string> stage_backtest(bool reuse) {
    const auto path = out_ / "metrics.json";
    std::vector<std::string> outs;
    for (const char* p : {"fineft", "fineft_no_tau", "router_off"}) outs.push_back(concat("equity_", p, ".csv"));
    for (std::size_t i = 0; i < ens_.size(); ++i) outs.push_back(concat("equity_", learner_name(i), ".csv"));
    outs.push_back("routing.csv");
    outs.push_back("metrics.json");
    if (reuse) {
      backtest_ = detail::read_json(path);
      return outs;
    }
    const auto range = usable(ds_.split.test);
    const auto scores = regime_scores(models_, ds_, range);
    json policies = json::object(), routing = json::object();
    auto emit = [&](const std::string& name, const EquityCurve& c) {
      write_equity_csv(out_ / concat("equity_", name, ".csv"), c);
      policies[name] = to_json(compute_metrics(c, cfg_.metrics));
    };
    auto routed = [&](const std::string& name, const RouterConfig& rc) {
      FuturesEnv env = *env_;
      const auto run = routed_backtest(env, range, ens_, filter_.policy, scores, rc);
      emit(name, run.curve);
      const std::size_t n = run.routing.size();
      json thirds = json::array();
      for (std::size_t k = 0; k < 3; ++k) thirds.push_back(run.conservative_fraction(n * k / 3, n * (k + 1) / 3));
      routing[name] = {{"tau", rc.tau}, {"conservative_fraction", run.conservative_fraction()}, {"thirds", thirds}};
      return run;
    };
    const auto main = routed("fineft", router_);
    write_routing_csv(out_ / "routing.csv", main.routing);
    RouterConfig no_tau = router_;
    no_tau.tau = 0.0;
    (void)routed("fineft_no_tau", no_tau);
    {
      FuturesEnv env = *env_;
      emit("router_off", backtest(env, range, ensemble_mean_policy(ens_)));
    }
    for (std::size_t i = 0; i < ens_.size(); ++i) {
      FuturesEnv env = *env_;
      emit(learner_name(i), backtest(env, range, learner_policy(ens_, i)));
    }
    backtest_ = {{"policies", policies}, {"routing", routing}};
    detail::write_json(path, backtest_);
    return outs;
  }

  std::vector<std::string> stage_report(bool reuse) {
    const auto path = out_ / "summary.json";
    if (reuse) {
      run_.summary = detail::read_json(path);
      return {"summary.json"};
    }
    json s;
    s["version"] = 1;
    s["seed"] = cfg_.seed;
    s["config"] = to_json(cfg_);
    const auto& sp = ds_.split;
    s["dataset"] = {{"rows", ds_.size()},
                    {"dropped", ds_.dropped},
                    {"warmup", ds_.warmup},
                    {"features", ds_.feature_names},
                    {"split", {{"train", detail::range_json(sp.train)},
                               {"valid", detail::range_json(sp.valid)},
                               {"test", detail::range_json(sp.test)}}}};
    s["training"] = train_;
    json per_dyn = json::array();
    for (const auto& segs : segs_) {
      std::size_t bars = 0;
      for (const auto& r : segs) bars += r.size();
      per_dyn.push_back({{"segments", segs.size()}, {"bars", bars}});
    }
    s["segments"] = {{"count", labeling_.segments.size()}, {"degenerate", labeling_.degenerate}, {"dynamics", per_dyn}};
    json names = json::array();
    for (auto l : filter_.policy) names.push_back(learner_name(l));
    s["filter"] = {{"policy", names}, {"mean_return", detail::matrix_json(filter_.mean_return)}};
    s["router"] = {{"config", router_json_.at("config")}, {"tuned", router_json_.value("tuned", false)}};
    if (router_json_.contains("best_objective")) s["router"]["validation_objective"] = router_json_["best_objective"];
    s["policies"] = backtest_.at("policies");
    s["routing"] = backtest_.at("routing");
    std::vector<std::string> artifacts;
    for (const auto& [stage, rec] : manifest_["stages"].items())
      if (stage != "report")
        for (const auto& [rel, sum] : rec["outputs"].items()) artifacts.push_back(rel);
    artifacts.push_back("summary.json");
    std::sort(artifacts.begin(), artifacts.end());
    artifacts.erase(std::unique(artifacts.begin(), artifacts.end()), artifacts.end());
    s["artifacts"] = artifacts;
    if (auto err = validate_summary(s)) fail("summary does not validate: ", *err);
    run_.summary = s;
    detail::write_json(path, s);
    return {"summary.json"};
  }

  PipelineConfig cfg_;
  PipelineOptions opt_;
  std::filesystem::path out_;
  json manifest_;
  std::map<std::string, std::string> keys_;
  std::set<std::string> rerun_;
  PipelineRun run_;

  Dataset ds_;
  std::optional<FuturesEnv> env_;
  OptimalQTable q_;
  Ensemble ens_;
  json train_;
  Labeling labeling_;
  std::vector<std::vector<IndexRange>> segs_;
  std::vector<RegimeModel> models_;
  FilterResult filter_;
  RouterConfig router_;
  json router_json_;
  json backtest_;
};

// Split and featurized dataset of a run directory whose data stage has completed.
[[nodiscard]] inline Dataset load_run_dataset(const PipelineConfig& cfg, const std::filesystem::path& out_dir) {
  return compute_indicators(split_chrono(detail::read_stage_data(cfg, out_dir), cfg.split), cfg.features);
}

inline PipelineRun run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opt) {
  return Pipeline(cfg, opt).run();
}

}  // namespace fineft
