#include <gtest/gtest.h>

#include "fineft/config.hpp"
#include "test_support.hpp"

using namespace fineft;

namespace {

PipelineConfig from_text(const std::string& text, const std::filesystem::path& base = {}) {
  return parse_config(IniDoc::parse(text, "test.ini"), base);
}

std::filesystem::path config_dir() { return std::filesystem::path(FINEFT_SOURCE_DIR) / "configs"; }

}  // namespace

TEST(Config, EmptyFileKeepsLibraryDefaults) {
  const auto c = from_text("");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.ensemble.n_learners, EnsembleConfig{}.n_learners);
  EXPECT_EQ(c.train.batch_size, TrainConfig{}.batch_size);
  EXPECT_EQ(c.env.fee_rate, 0.0002);
  EXPECT_EQ(c.env.action_space.max_leverage(), 5);
  EXPECT_EQ(c.features.features, IndicatorSpec{}.features);
  EXPECT_EQ(c.synthetic.regimes.size(), 2u);
  EXPECT_EQ(c.router, RouterConfig{});
}

TEST(Config, ParsesSectionsListsAndRegimes) {
  const auto c = from_text(R"(
[pipeline]
seed = 9
[data]
steps = 3000
regimes_order = up, flat
[regime.flat]
drift = 0
volatility = 0.001
min_duration = 10
max_duration = 20
[regime.up]
drift = 0.0002
volatility = 0.002
min_duration = 5
max_duration = 6
[features]
list = ret:1, vol:60 , imbalance
[env]
h_max = 4
position_choices = 5
leverage = 2, 5
margin_table = 1000:0.01:0; 100000:0.02:10
[ensemble]
hidden = 16, 8
[train]
mode = equal
optimal_actor = false
)");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.ensemble.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.synthetic.steps, 3000u);
  ASSERT_EQ(c.synthetic.regimes.size(), 2u);
  EXPECT_EQ(c.synthetic.regimes[0].name, "up");
  EXPECT_EQ(c.synthetic.regimes[0].drift, 0.0002);
  EXPECT_EQ(c.synthetic.regimes[1].max_duration, 20u);
  EXPECT_EQ(c.features.features, (std::vector<std::string>{"ret:1", "vol:60", "imbalance"}));
  EXPECT_EQ(c.env.action_space.size(), 9u);
  EXPECT_EQ(c.env.margin_table.tiers().size(), 2u);
  EXPECT_EQ(c.env.margin_table.tiers()[1].j, 10.0);
  EXPECT_EQ(c.ensemble.hidden, (std::vector<std::size_t>{16, 8}));
  EXPECT_EQ(c.train.mode, UpdateMode::Equal);
  EXPECT_FALSE(c.train.optimal_actor);
}

TEST(Config, ExplicitStageSeedsSurviveASeedOverride) {
  auto c = from_text("[ensemble]\nseed = 40\n");
  c.apply_seed(5);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.ensemble.seed, 40u);
  EXPECT_EQ(c.train.seed, 5u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW((void)from_text("[train]\nbatchsize = 3\n"), Error);
  EXPECT_THROW((void)from_text("[train]\nbatch_size = -3\n"), Error);
  EXPECT_THROW((void)from_text("[env]\nfee_rate = cheap\n"), Error);
  EXPECT_THROW((void)from_text("[env]\nposition_choices = 4\n"), Error);
  EXPECT_THROW((void)from_text("[router]\ngamma = 1.5\n"), Error);
  EXPECT_THROW((void)from_text("[data]\nsource = ftp\n"), Error);
  EXPECT_THROW((void)from_text("[data]\nsource = csv\n"), Error);
  EXPECT_THROW((void)from_text("[data]\nregimes_order = bull\n"), Error);
  EXPECT_THROW((void)from_text("[train]\nmode = greedy\n"), Error);
  EXPECT_THROW((void)from_text("[env]\nmargin_table = 1000:0.01\n"), Error);
  EXPECT_THROW((void)from_text("[features]\nlist =\n"), Error);
  EXPECT_THROW((void)from_text("[router\n"), Error);
  try {
    (void)from_text("[ood]\nlatnet = 3\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("latnet"), std::string::npos);
  }
}

TEST(Config, RelativeDataPathsResolveAgainstTheConfigDirectory) {
  const auto c = from_text("[data]\nsource = csv\nlob = d/lob.csv\nmark = /abs/mark.csv\n", "/cfg");
  EXPECT_EQ(c.source.paths.lob, std::filesystem::path("/cfg/d/lob.csv"));
  EXPECT_EQ(c.source.paths.mark, std::filesystem::path("/abs/mark.csv"));
}

TEST(Config, ShippedConfigsParse) {
  const auto p = load_config(config_dir() / "pipeline.ini");
  EXPECT_EQ(p.synthetic.steps, 20000u);
  EXPECT_EQ(p.synthetic.regimes.size(), 2u);
  EXPECT_TRUE(p.tune_router);
  const auto d = load_config(config_dir() / "drift.ini");
  EXPECT_EQ(d.synthetic.vol_ramp_start, 0.75);
  EXPECT_GT(d.synthetic.vol_ramp_end, 1.0);
  const auto b = load_config(config_dir() / "btc_router.ini");
  EXPECT_FALSE(b.tune_router);
  EXPECT_EQ(b.router, (RouterConfig{0.99, 60, 0.5, 0.05}));
}

TEST(Config, JsonViewCoversEverySectionAndTracksValues) {
  const auto a = from_text("");
  const auto j = to_json(a);
  for (const char* s : {"pipeline", "data", "split", "features", "env", "dp", "ensemble", "pretrain", "train",
                        "segment", "ood", "router", "filter", "metrics"})
    EXPECT_TRUE(j.contains(s)) << s;
  const auto b = from_text("[train]\nbatch_size = 7\n");
  EXPECT_NE(to_json(b)["train"].dump(), j["train"].dump());
  EXPECT_EQ(to_json(b)["env"].dump(), j["env"].dump());
}
