#include <doctest.h>

#include <string>

#include "lre/runconfig.hpp"

using namespace lre;
using namespace lre::run;

TEST_CASE("runconfig: serialize/parse round trip is exact") {
  RunConfig cfg;
  cfg.model.hidden_dim = 48;
  cfg.model.head_count = 4;
  cfg.train.epochs = 3.5;
  cfg.train.ablation.top1 = true;
  cfg.task_mix.vid = 0.1;
  cfg.task_mix.txt = 0.4;
  cfg.curriculum_fractions = {0.0, 0.5, 1.0};
  cfg.curriculum_budgets = {0, 3, 8};
  cfg.output_dir = "runs/demo";

  const std::string text = cfg.serialize();
  auto back = RunConfig::parse(text);
  CHECK(back.serialize() == text);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.model.hidden_dim == 48);
  CHECK(back.train.ablation.top1);
  CHECK(back.task_mix.vid == doctest::Approx(0.1));
  CHECK(back.curriculum_budgets == std::vector<int>{0, 3, 8});
}

TEST_CASE("runconfig: reloading a persisted config reproduces the run plan") {
  RunConfig cfg;
  cfg.model.latent_steps = 6;
  cfg.train.stages = 3;
  cfg.train.epochs = 6;
  auto plan_a = cfg.stage_plan();
  auto back = RunConfig::parse(cfg.serialize());
  auto plan_b = back.stage_plan();
  REQUIRE(plan_a.size() == plan_b.size());
  for (std::size_t i = 0; i < plan_a.size(); ++i) {
    CHECK(plan_a[i].replaced_fraction == plan_b[i].replaced_fraction);
    CHECK(plan_a[i].latent_budget == plan_b[i].latent_budget);
    CHECK(plan_a[i].epochs == plan_b[i].epochs);
  }
}

TEST_CASE("runconfig: strict unknown-key rejection and syntax errors") {
  CHECK_THROWS_AS((void)RunConfig::parse("model.hidden_dmi = 64\n"), std::invalid_argument);
  CHECK_THROWS_AS((void)RunConfig::parse("just some words\n"), std::invalid_argument);
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("nonexistent.key", "1"), std::invalid_argument);
  // comments and blank lines are fine
  auto ok = RunConfig::parse("# comment\n\nmodel.hidden_dim = 32\n");
  CHECK(ok.model.hidden_dim == 32);
}

TEST_CASE("runconfig: ablation changes the effective plan") {
  RunConfig cfg;
  cfg.train.stages = 4;
  cfg.train.epochs = 5;
  cfg.model.latent_steps = 8;
  CHECK(cfg.stage_plan().size() == 5);
  cfg.train.ablation.no_curriculum = true;
  CHECK(cfg.stage_plan().size() == 2);
}

TEST_CASE("runconfig: validation catches broken settings") {
  RunConfig bad;
  bad.model.hidden_dim = 30;  // not divisible by heads
  bad.model.head_count = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  RunConfig bad2;
  bad2.adapter.top_k = 9;
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);

  RunConfig good;
  CHECK_NOTHROW(good.validate());
}
