#include <doctest.h>

#include <fstream>

#include "magmine/run_config.hpp"
#include "support.hpp"

using namespace magmine;
using nlohmann::json;

TEST_CASE("empty config resolves to documented defaults") {
  const auto c = resolve_run_config(json::object());
  CHECK(c.seed == 0);
  CHECK(c.mil.k == 3);
  CHECK(c.mil.margin == 100.0);
  CHECK(c.mil.lambda_smooth == 8e-5);
  CHECK(c.mil.batch_pairs == 16);
  CHECK(c.mil.lr == 1e-3);
  CHECK(c.mil.weight_decay == 5e-4);
  CHECK(c.mil.use_neck);
  CHECK(c.sup.lr == 1e-5);
  CHECK(c.sup.plateau_patience == 5);
  CHECK(c.sup.mode == SupMode::kTrimmedGt);
  CHECK(c.mining.pos_threshold == 0.995);
  CHECK(c.mining.neg_threshold == 0.5);
  CHECK(c.synth.dim == 32);
  CHECK(c.synth.num_abnormal == 40);
  CHECK(c.experiment.iters == 1);
  CHECK(c.mil.seed == derive_seed(0, "mil"));
  CHECK(c.synth.seed == derive_seed(0, "synth"));
  CHECK(resolve_run_config(json()).mil.seed == c.mil.seed);
}

TEST_CASE("master seed drives section seeds unless they are explicit") {
  const auto a = resolve_run_config(json{{"seed", 5}});
  CHECK(a.sup.seed == derive_seed(5, "sup"));
  CHECK(a.mining.seed == derive_seed(5, "mining"));
  const auto b = resolve_run_config(json{{"seed", 5}, {"mil", {{"seed", 77}}}});
  CHECK(b.mil.seed == 77);
  CHECK(b.sup.seed == a.sup.seed);
}

TEST_CASE("overrides are applied and echoed") {
  const auto c = resolve_run_config(json::object(), {{"mil.lr", "0.01"}, {"sup.selection", "single_snippet"},
                                                      {"mil.use_neck", "false"}, {"seed", "3"}});
  CHECK(c.mil.lr == 0.01);
  CHECK_FALSE(c.mil.use_neck);
  CHECK(c.sup.selection == Selection::kSingleSnippet);
  CHECK(c.seed == 3);
  const auto echo = run_config_to_json(c);
  CHECK(echo["mil"]["lr"] == 0.01);
  CHECK(echo["sup"]["selection"] == "single_snippet");
  CHECK(echo["mil"]["seed"] == derive_seed(3, "mil"));
  // The echo resolves back to the same configuration.
  CHECK(run_config_to_json(resolve_run_config(echo)) == echo);
}

TEST_CASE("unknown keys, type mismatches and invalid values are rejected") {
  CHECK_THROWS_AS(resolve_run_config(json{{"mil", {{"marginn", 5}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"mil", {{"k", "three"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"mil", {{"k", 2.5}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"mil", {{"use_neck", 1}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"seed", -1}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"mil", 3}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"mil", {{"k", 0}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"mining", {{"neg_threshold", 0.999}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"sup", {{"mode", "nope"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"experiment", {{"iters", 0}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json{{"experiment", {{"split", "dev"}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_run_config(json::object(), {{"mil.nope", "1"}}), ConfigError);
}

TEST_CASE("load_run_config reads files") {
  testing::ScratchDir dir("cfg");
  std::ofstream(dir / "c.json") << R"({"seed": 9, "mil": {"epochs": 4}})";
  const auto c = load_run_config((dir / "c.json").string(), {{"mil.k", "2"}});
  CHECK(c.seed == 9);
  CHECK(c.mil.epochs == 4);
  CHECK(c.mil.k == 2);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config((dir / "bad.json").string()), ConfigError);
  CHECK_THROWS_AS(load_run_config((dir / "missing.json").string()), ConfigError);
}
