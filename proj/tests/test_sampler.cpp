#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>

#include "cgflow/sampler.hpp"
#include "test_support.hpp"

using namespace cgflow;

namespace {

// Three flat intervals [0,1), [1,2), [2,3) at energies 0, 1, 2; +inf outside.
double three_state_potential(const Vec& s) {
  if (s[0] < 0.0 || s[0] >= 3.0) return std::numeric_limits<double>::infinity();
  return std::floor(s[0]);
}

PmfEnsemble constant_ensemble(std::vector<double> outputs) {
  std::vector<MlpParams> models;
  for (const double v : outputs) {
    MlpParams m = MlpParams::zeros({1, 2, 1});
    m.biases[1][0] = v;
    models.push_back(std::move(m));
  }
  return PmfEnsemble(Scaler::identity(1), std::move(models));
}

}  // namespace

TEST_CASE("mc_trajectory: downhill moves always accepted, uphill suppressed") {
  Rng rng(3);
  Vec start = Vec::Zero(1);
  // Constant potential: every proposal accepted.
  const auto flat = [](const Vec&) { return 1.0; };
  const auto path = mc_trajectory(start, flat, 1.0, 0.5, 2000, rng);
  CHECK(path.n_accepted == 2000);

  // Steep uphill potential: acceptance collapses.
  const auto steep = [](const Vec& s) { return 1e9 * std::abs(s[0]); };
  Rng rng2(4);
  const auto path2 = mc_trajectory(start, steep, 1.0, 0.5, 2000, rng2);
  CHECK(path2.n_accepted < 1100);  // only the ~half of proposals moving down
  for (const double v : path2.values) CHECK(std::isfinite(v));
}

TEST_CASE("mc_trajectory: zero proposal scale never moves") {
  Rng rng(5);
  Vec start(1);
  start[0] = 0.7;
  const auto path =
      mc_trajectory(start, [](const Vec& s) { return s[0] * s[0]; }, 1.0, 0.0, 500, rng);
  for (Eigen::Index t = 0; t < path.states.cols(); ++t) CHECK(path.states(0, t) == 0.7);
}

TEST_CASE("mc_trajectory: non-finite start is an error") {
  Rng rng(7);
  Vec start(1);
  start[0] = -1.0;
  CHECK_THROWS_AS(mc_trajectory(start, three_state_potential, 1.0, 0.5, 10, rng),
                  std::invalid_argument);
}

TEST_CASE("mc_trajectory: three-state occupation matches Boltzmann weights") {
  Rng rng(11);
  Vec start(1);
  start[0] = 0.5;
  const long long n = 1000000;
  const auto path = mc_trajectory(start, three_state_potential, 1.0, 0.8, n, rng);

  std::array<double, 3> occ = {0, 0, 0};
  std::array<std::array<long long, 3>, 3> flux = {};
  int prev = 0;
  for (Eigen::Index t = 1; t < path.states.cols(); ++t) {
    const int state = std::min(2, std::max(0, static_cast<int>(path.states(0, t))));
    occ[state] += 1.0;
    flux[prev][state] += 1;
    prev = state;
  }
  const double z = std::exp(0.0) + std::exp(-1.0) + std::exp(-2.0);
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(occ[k] / n - std::exp(-double(k)) / z) < 0.01);
  }
  // Detailed balance: i->j and j->i fluxes agree within Monte-Carlo error.
  for (int i = 0; i < 3; ++i) {
    for (int j = i + 1; j < 3; ++j) {
      const double nij = static_cast<double>(flux[i][j]);
      const double nji = static_cast<double>(flux[j][i]);
      CHECK(std::abs(nij - nji) < 5.0 * std::sqrt(nij + nji + 1.0));
    }
  }
}

TEST_CASE("find_high_error: zero-uncertainty ensemble terminates at max_len") {
  const auto ensemble = constant_ensemble({1.0, 1.0, 1.0});
  HarvestConfig cfg;
  cfg.beta = 0.1;
  cfg.threshold = 4.0;
  cfg.n_parallel = 5;
  cfg.min_len = 10;
  cfg.max_len = 200;
  const HarvestResult res = find_high_error(ensemble, cfg, {Vec::Zero(1)}, 17);
  CHECK(res.terminated);
  CHECK(res.points.empty());
  CHECK(res.total_steps == 0);  // excluded from reported accounting
  CHECK(res.raw_steps == 5 * 200);
}

TEST_CASE("find_high_error: huge uncertainty triggers at exactly min_len") {
  const auto ensemble = constant_ensemble({0.0, 20.0});  // std = 10 everywhere
  HarvestConfig cfg;
  cfg.beta = 0.1;
  cfg.threshold = 4.0;
  cfg.n_parallel = 4;
  cfg.min_len = 10;
  cfg.max_len = 1000;
  cfg.n_targets = 4;
  const HarvestResult res = find_high_error(ensemble, cfg, {Vec::Zero(1)}, 23);
  CHECK(!res.terminated);
  // Every chain yields in the min_len round, never earlier.
  REQUIRE(res.points.size() == 4);
  CHECK(res.raw_steps == 4 * 10);
  CHECK(res.total_steps == res.raw_steps);
}

TEST_CASE("find_high_error: starts cycle over chains") {
  const auto ensemble = constant_ensemble({0.0, 20.0});
  HarvestConfig cfg;
  cfg.beta = 0.1;
  cfg.threshold = 4.0;
  cfg.n_parallel = 6;
  cfg.min_len = 1;
  cfg.max_len = 50;
  cfg.proposal_scale = 1e-12;
  Vec a(1), b(1);
  a[0] = -5.0;
  b[0] = 5.0;
  const HarvestResult res = find_high_error(ensemble, cfg, {a, b}, 29);
  REQUIRE(res.points.size() == 1);
  // First chain (started at a) yields; proposal scale is negligible.
  CHECK(res.points[0][0] == doctest::Approx(-5.0).epsilon(1e-6));
}

TEST_CASE("broaden: uniform interval semantics") {
  Rng rng(31);
  Vec p(1);
  p[0] = 2.0;
  const auto configs = broaden({p}, 1.0, 65, rng);
  REQUIRE(configs.size() == 65);
  for (const auto& c : configs) {
    CHECK(c[0] >= 1.5);
    CHECK(c[0] <= 2.5);
  }

  const auto tiny = broaden({p}, 1e-12, 10, rng);
  for (const auto& c : tiny) CHECK(c[0] == doctest::Approx(2.0).epsilon(1e-10));

  // Mean of many broadened samples concentrates on the point.
  const auto many = broaden({p}, 1.0, 100000, rng);
  double mean = 0.0;
  for (const auto& c : many) mean += c[0];
  mean /= static_cast<double>(many.size());
  const double sigma = 1.0 / std::sqrt(12.0);
  CHECK(std::abs(mean - 2.0) < 3.0 * sigma / std::sqrt(100000.0));
}

TEST_CASE("broaden: ball sampling in higher dimensions") {
  Rng rng(37);
  Vec p(2);
  p << 1.0, -1.0;
  const auto configs = broaden({p}, 2.0, 5000, rng);
  double max_r = 0.0;
  for (const auto& c : configs) max_r = std::max(max_r, (c - p).norm());
  CHECK(max_r <= 1.0);
  CHECK(max_r > 0.9);  // fills the ball
}

TEST_CASE("dataset: record arithmetic and split") {
  Rng rng(41);
  std::vector<Vec> configs;
  for (int i = 0; i < 65; ++i) {
    Vec s(1);
    s[0] = 0.1 * i;
    configs.push_back(s);
  }
  AlDataset ds(30, 0.8);
  ds.add_group(configs, rng);
  CHECK(ds.total_records() == 1950);
  CHECK(ds.train_record_count() == 1560);
  CHECK(ds.records_of(0, false).size() == 390);
  for (const auto& entry : ds.group(0).configs) CHECK(entry.copies.size() == 30);

  // All copies of a config share its s.
  auto recs = ds.records_of_config(0, 5, true);
  for (const auto& r : recs) CHECK((*r.s)[0] == doctest::Approx(0.5));

  AlDataset tiny(1, 0.8);
  tiny.add_group({configs[0]}, rng);
  CHECK(tiny.total_records() == 1);
}

TEST_CASE("dataset: train fraction stays near target across adds") {
  Rng rng(43);
  AlDataset ds(7, 0.8);
  for (int g = 0; g < 5; ++g) {
    std::vector<Vec> configs;
    for (int i = 0; i < 13; ++i) {
      Vec s(1);
      s[0] = g + 0.01 * i;
      configs.push_back(s);
    }
    ds.add_group(configs, rng);
    const double frac =
        static_cast<double>(ds.train_record_count()) / static_cast<double>(ds.total_records());
    CHECK(std::abs(frac - 0.8) <= 2.0 / static_cast<double>(ds.total_records()) + 1e-12);
  }
}

TEST_CASE("dataset: replay sampling") {
  Rng rng(47);
  AlDataset ds(30, 0.8);
  std::vector<Vec> group0;
  for (int i = 0; i < 40; ++i) group0.push_back(Vec::Constant(1, i));
  ds.add_group(group0, rng);
  // First iteration: no history.
  CHECK(ds.replay_sample(0, 0.3, rng).empty());

  std::vector<Vec> group1;
  for (int i = 0; i < 65; ++i) group1.push_back(Vec::Constant(1, 100 + i));
  ds.add_group(group1, rng);
  CHECK(ds.replay_sample(1, 0.0, rng).empty());
  const auto picked = ds.replay_sample(1, 0.3, rng);
  CHECK(picked.size() == 20);  // ceil(0.3 * 65)
  for (const auto& [g, c] : picked) CHECK(g == 0);
  // Distinct configs.
  for (std::size_t i = 0; i < picked.size(); ++i) {
    for (std::size_t j = i + 1; j < picked.size(); ++j) CHECK(picked[i] != picked[j]);
  }
}

TEST_CASE("dataset: json checkpoint round trip") {
  Rng rng(53);
  AlDataset ds(3, 0.8);
  std::vector<Vec> configs = {Vec::Constant(1, 0.5), Vec::Constant(1, -1.5)};
  ds.add_group(configs, rng);
  ds.group(0).configs[0].copies[1].record = {12.5, -0.75, true};

  const auto path = std::filesystem::temp_directory_path() / "cgflow_dataset_test.json";
  ds.save_json(path.string());
  const AlDataset back = AlDataset::load_json(path.string());
  REQUIRE(back.n_groups() == 1);
  CHECK(back.k_copies() == 3);
  CHECK(back.group(0).configs.size() == 2);
  CHECK(back.group(0).configs[0].copies[1].record.energy == 12.5);
  CHECK(back.group(0).configs[0].copies[1].record.log_q == -0.75);
  CHECK(back.group(0).configs[0].copies[1].record.valid);
  for (int c = 0; c < 2; ++c) {
    for (int k = 0; k < 3; ++k) {
      CHECK(back.group(0).configs[c].copies[k].train == ds.group(0).configs[c].copies[k].train);
    }
  }
  std::filesystem::remove(path);
}
