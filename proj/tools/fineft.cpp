#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fineft/config.hpp"
#include "fineft/pipeline.hpp"

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool resume{false};
  std::string out_dir{"out"};
  bool quiet{false};
};

int run(const GlobalFlags& g, const std::string& command) {
  auto cfg = g.config.empty() ? fineft::parse_config(fineft::IniDoc{}) : fineft::load_config(g.config);
  if (g.seed) cfg.apply_seed(*g.seed);
  fineft::PipelineOptions opt;
  opt.out_dir = g.out_dir;
  if (command == "pipeline") {
    opt.resume = g.resume;
  } else {
    // A single stage reuses valid upstream artifacts and reruns itself
    // unless --resume is given.
    opt.until = command == "gen-data" ? "data" : command;
    opt.resume = true;
    if (!g.resume) opt.force_from = opt.until;
  }
  if (!g.quiet) opt.log = [](const std::string& s) { std::cerr << s << '\n'; };
  const auto res = fineft::run_pipeline(cfg, opt);
  if (command == "report" || command == "pipeline") std::cout << res.summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble futures trading pipeline"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--config", g.config, "INI configuration file");
  app.add_option("--seed", g.seed, "Pipeline seed (overrides [pipeline] seed)");
  app.add_flag("--resume", g.resume, "Reuse stage artifacts whose inputs are unchanged");
  app.add_option("--out-dir", g.out_dir, "Artifact directory")->capture_default_str();
  app.add_flag("-q,--quiet", g.quiet, "No per-stage progress on stderr");
  app.fallthrough();

  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "Generate or load the market dataset"},
      {"features", "Compute indicators and the chronological split"},
      {"train", "Solve the DP oracle, pretrain and train the ensemble"},
      {"segment", "Segment and label the validation range"},
      {"fit-vae", "Fit one VAE per labelled dynamic"},
      {"filter", "Pick one learner per dynamic on validation"},
      {"tune-router", "Grid-search router parameters on validation"},
      {"backtest", "Backtest FineFT and its ablations on the test range"},
      {"report", "Write summary.json"},
      {"pipeline", "Run every stage"},
  };
  std::string chosen;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->callback([&chosen, n = std::string(name)] { chosen = n; });
  }
  CLI11_PARSE(app, argc, argv);
  try {
    return run(g, chosen);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
