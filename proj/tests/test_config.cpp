#include <doctest.h>

#include "cgflow/config.hpp"

using namespace cgflow;

TEST_CASE("empty config yields the full default recipe") {
  const RunConfig cfg = parse_config_text("", {});
  CHECK(cfg.system.name == "muller_brown");
  CHECK(cfg.system.beta == 0.1);
  CHECK(cfg.flow.type == "affine");
  CHECK(cfg.flow.hidden == std::vector<int>{64, 64});
  CHECK(cfg.flow.example_batch == 16);
  CHECK(cfg.flow.example_lr == 5e-4);
  CHECK(cfg.flow.energy_batch == 8);
  CHECK(cfg.flow.energy_lr == 5e-3);
  CHECK(cfg.flow.energy_epochs_first == 12);
  CHECK(cfg.flow.energy_epochs == 7);
  CHECK(cfg.flow.clip_norm == 20.0);
  CHECK(cfg.pmf.n_models == 10);
  CHECK(cfg.pmf.lr == 1e-3);
  CHECK(cfg.pmf.batch == 5);
  CHECK(cfg.pmf.epochs == 1000);
  CHECK(cfg.pmf.nu_lo == 0.1);
  CHECK(cfg.pmf.nu_hi == 3.0);
  CHECK(cfg.sampler.proposal_scale == 0.1);
  CHECK(cfg.sampler.threshold_kt == 0.4);
  CHECK(cfg.sampler.n_targets == 1);
  CHECK(cfg.sampler.n_parallel == 50);
  CHECK(cfg.sampler.min_len == 10);
  CHECK(cfg.sampler.max_len == 30000);
  CHECK(cfg.sampler.broaden_width == 1.0);
  CHECK(cfg.sampler.broaden_count == 65);
  CHECK(cfg.sampler.k_copies == 30);
  CHECK(cfg.sampler.train_frac == 0.8);
  CHECK(cfg.sampler.gamma == 0.3);
  CHECK(cfg.workflow.start_mc_steps == 500);
  CHECK(cfg.workflow.start_mc_scale == 0.2);
  CHECK(cfg.workflow.start_samples == 100);
  CHECK(cfg.workflow.baseline_steps == 1000000);
  CHECK(cfg.metrics.grid_points == 100);
  CHECK(cfg.metrics.grid_lo == -2.5);
  CHECK(cfg.metrics.grid_hi == 1.1);
}

TEST_CASE("overrides are applied last") {
  const RunConfig cfg =
      parse_config_text("[sampler]\nthreshold_kT = 0.2\n", {"sampler.threshold_kT=0.8"});
  CHECK(cfg.sampler.threshold_kt == 0.8);
}

TEST_CASE("unknown keys are rejected by exact path") {
  CHECK_THROWS_WITH_AS(parse_config_text("[smapler]\nscale = 1\n", {}),
                       doctest::Contains("smapler.scale"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("", {"smapler.scale=1"}),
                       doctest::Contains("smapler.scale"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[sampler]\nscales = 1\n", {}),
                       doctest::Contains("sampler.scales"), ConfigError);
}

TEST_CASE("type mismatches are config errors") {
  CHECK_THROWS_WITH_AS(parse_config_text("[system]\nbeta = fast\n", {}),
                       doctest::Contains("expected a number"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[pmf]\nepochs = 1.5\n", {}),
                       doctest::Contains("expected an integer"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("[sampler]\ndump_trajectories = maybe\n", {}),
                       doctest::Contains("expected a boolean"), ConfigError);
}

TEST_CASE("semantic validation") {
  CHECK_THROWS_AS(parse_config_text("[system]\nname = lennard_jones\n", {}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[flow]\nn_drop = 8\n", {}), ConfigError);  // == batch
  CHECK_THROWS_AS(parse_config_text("[system]\nbeta = -1\n", {}), ConfigError);
}

TEST_CASE("config text render round-trips") {
  const RunConfig cfg =
      parse_config_text("[sampler]\nmax_len = 12345\n[flow]\nhidden = 32,16\n", {"run.seed=42"});
  const std::string text = config_to_text(cfg);
  const RunConfig back = parse_config_text(text, {});
  CHECK(back.sampler.max_len == 12345);
  CHECK(back.flow.hidden == std::vector<int>{32, 16});
  CHECK(back.seed == 42);
  CHECK(config_hash(back) == config_hash(cfg));
  // A change anywhere shows in the hash.
  RunConfig other = cfg;
  other.pmf.epochs += 1;
  CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("comments and blank lines are ignored") {
  const RunConfig cfg = parse_config_text(
      "# full-line comment\n\n[sampler]\nk_copies = 12  # trailing comment\n; alt comment\n", {});
  CHECK(cfg.sampler.k_copies == 12);
}
