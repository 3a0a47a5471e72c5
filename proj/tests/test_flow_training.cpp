#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cgflow/flow_training.hpp"
#include "cgflow/spline_flow.hpp"
#include "test_support.hpp"

using namespace cgflow;

namespace {

// Joint samples (s, x_fg) from the correlated-Gaussian Boltzmann density.
void sample_joint(const GaussianSystem& sys, int n, Rng& rng, std::vector<Vec>& s,
                  std::vector<Vec>& x_fg) {
  const GaussianConditionalFlow cond(sys);
  const double s_std = 1.0 / std::sqrt(sys.beta());  // unit marginal covariance assumed
  for (int i = 0; i < n; ++i) {
    Vec sv(1), z(1);
    sv << s_std * normal01(rng);
    z << normal01(rng);
    double ld = 0.0;
    s.push_back(sv);
    x_fg.push_back(cond.to_fg(z, sv, ld));
  }
}

std::unique_ptr<CondAffineFlow> fresh_affine(const std::vector<Vec>& s, std::uint64_t seed) {
  Mat cols = testsupport::to_columns(s);
  Rng rng(seed);
  return std::make_unique<CondAffineFlow>(std::vector<int>{16, 16}, scaler_fit(cols), rng);
}

}  // namespace

TEST_CASE("train_by_example learns the gaussian conditional") {
  const auto sys = testsupport::correlated_gaussian(0.5, 1.0);
  const GaussianConditionalFlow exact(sys);
  Rng rng(11);
  std::vector<Vec> s, x_fg;
  sample_joint(sys, 600, rng, s, x_fg);

  auto flow = fresh_affine(s, 21);
  ExampleTrainConfig cfg;
  cfg.epochs = 400;
  cfg.batch = 16;
  cfg.lr = 2e-3;
  Rng train_rng(31);
  const double final_loss = train_by_example(*flow, x_fg, s, cfg, train_rng);
  CHECK(std::isfinite(final_loss));

  // Held-out comparison against the analytic conditional.
  std::vector<Vec> s_test, x_test;
  sample_joint(sys, 400, rng, s_test, x_test);
  double diff = 0.0;
  for (std::size_t i = 0; i < s_test.size(); ++i) {
    diff += flow->log_prob(x_test[i], s_test[i]) - exact.log_prob(x_test[i], s_test[i]);
  }
  diff /= static_cast<double>(s_test.size());
  CHECK(std::abs(diff) < 0.05);
}

TEST_CASE("train_by_example: zero learning rate leaves parameters unchanged") {
  const auto sys = testsupport::correlated_gaussian(0.5, 1.0);
  Rng rng(13);
  std::vector<Vec> s, x_fg;
  sample_joint(sys, 64, rng, s, x_fg);
  auto flow = fresh_affine(s, 5);
  const MlpParams before = flow->scale_net();
  ExampleTrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0.0;
  Rng train_rng(3);
  train_by_example(*flow, x_fg, s, cfg, train_rng);
  for (std::size_t l = 0; l < before.weights.size(); ++l) {
    CHECK((flow->scale_net().weights[l] - before.weights[l]).norm() == 0.0);
  }
}

TEST_CASE("train_by_example: non-finite loss aborts with a diagnostic") {
  const auto sys = testsupport::correlated_gaussian(0.5, 1.0);
  Rng rng(17);
  std::vector<Vec> s, x_fg;
  sample_joint(sys, 32, rng, s, x_fg);
  x_fg[3][0] = std::numeric_limits<double>::quiet_NaN();
  auto flow = fresh_affine(s, 5);
  ExampleTrainConfig cfg;
  cfg.epochs = 1;
  Rng train_rng(3);
  CHECK_THROWS_WITH_AS(train_by_example(*flow, x_fg, s, cfg, train_rng),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("train_by_energy drives the flow onto the gaussian conditional") {
  const auto sys = testsupport::correlated_gaussian(0.5, 1.0);
  const GaussianConditionalFlow exact(sys);
  Rng rng(23);
  std::vector<Vec> conditions;
  for (int i = 0; i < 40; ++i) {
    Vec sv(1);
    sv << 1.5 * normal01(rng);
    conditions.push_back(sv);
  }
  auto flow = fresh_affine(conditions, 7);
  auto copies = make_copy_set(conditions, 10);
  auto all = copies.all_records();

  EnergyTrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch = 8;
  cfg.lr = 5e-3;
  cfg.clip_norm = 20.0;
  Rng train_rng(41);
  const auto result = train_by_energy(
      *flow, [&](int, Rng&) { return all; }, sys, cfg, train_rng);
  CHECK(result.samples_drawn == 60 * 400);

  // Reverse KLD estimate against the analytic conditional.
  Rng eval_rng(49);
  double kl = 0.0;
  int n = 0;
  for (const auto& s : conditions) {
    for (int rep = 0; rep < 50; ++rep) {
      Vec z(1);
      z << normal01(eval_rng);
      double ld = 0.0;
      const Vec x = flow->to_fg(z, s, ld);
      kl += flow->log_prob(x, s) - exact.log_prob(x, s);
      ++n;
    }
  }
  kl /= n;
  CHECK(kl >= -0.01);  // reverse KLD is nonnegative up to estimator noise
  CHECK(kl < 0.05);
}

TEST_CASE("train_by_energy: records hold the latest visit") {
  const auto sys = testsupport::correlated_gaussian(0.3, 1.0);
  Rng rng(29);
  std::vector<Vec> conditions;
  for (int i = 0; i < 65; ++i) {
    Vec sv(1);
    sv << normal01(rng);
    conditions.push_back(sv);
  }
  auto flow = fresh_affine(conditions, 9);
  auto copies = make_copy_set(conditions, 30);
  auto all = copies.all_records();
  REQUIRE(all.size() == 1950);

  EnergyTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 8;
  cfg.lr = 1e-3;
  Rng train_rng(51);
  const auto res = train_by_energy(
      *flow, [&](int, Rng&) { return all; }, sys, cfg, train_rng);
  CHECK(res.samples_drawn == 1950);
  long long valid = 0;
  for (const auto& rec : all) valid += rec.slot->valid ? 1 : 0;
  CHECK(valid == 1950);

  // A second epoch overwrites values: samples are fresh draws.
  std::vector<double> before;
  for (const auto& rec : all) before.push_back(rec.slot->log_q);
  Rng train_rng2(52);
  train_by_energy(
      *flow, [&](int, Rng&) { return all; }, sys, cfg, train_rng2);
  int changed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    changed += all[i].slot->log_q != before[i] ? 1 : 0;
  }
  CHECK(changed > 1900);
}

TEST_CASE("train_by_energy: energy evaluation audit") {
  const auto sys = testsupport::correlated_gaussian(0.3, 1.0);
  const CountingSystem counted(sys);
  Rng rng(3);
  std::vector<Vec> conditions;
  for (int i = 0; i < 10; ++i) {
    Vec sv(1);
    sv << normal01(rng);
    conditions.push_back(sv);
  }
  auto flow = fresh_affine(conditions, 11);
  auto copies = make_copy_set(conditions, 4);
  auto all = copies.all_records();
  EnergyTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 8;
  Rng train_rng(5);
  train_by_energy(
      *flow, [&](int, Rng&) { return all; }, counted, cfg, train_rng);
  CHECK(counted.count() == 3 * 40);
}

TEST_CASE("train_by_energy: filter semantics with n_drop = batch - 1") {
  const auto sys = testsupport::correlated_gaussian(0.4, 1.0);
  Rng rng(37);
  std::vector<Vec> conditions;
  for (int i = 0; i < 6; ++i) {
    Vec sv(1);
    sv << normal01(rng);
    conditions.push_back(sv);
  }
  auto flow = fresh_affine(conditions, 13);
  auto copies = make_copy_set(conditions, 1);

  // Shadow the training pass exactly: same derived stream, same order of
  // draws, manual gradient of only the lowest-loss sample per batch.
  auto reference = fresh_affine(conditions, 13);
  const std::uint64_t seed = 777;
  {
    Rng shadow(seed);
    auto records = copies.all_records();
    shuffle_in_place(records, shadow);
    std::vector<AdamState> opts;
    for (auto* p : reference->param_blocks()) opts.push_back(AdamState::create(p->dims, 5e-3));
    const int batch = 3, n_drop = 2;
    for (std::size_t at = 0; at < records.size(); at += batch) {
      const std::size_t m = std::min<std::size_t>(batch, records.size() - at);
      struct S {
        double loss;
        Vec grad_fg;
        std::unique_ptr<FlowCache> cache;
      };
      std::vector<S> ss(m);
      for (std::size_t j = 0; j < m; ++j) {
        Vec z(1);
        z << normal01(shadow);
        double ld = 0.0;
        const Vec x = reference->generate(z, *records[at + j].s, ld, ss[j].cache);
        ss[j].loss = sys.beta() * sys.energy_fg(x, *records[at + j].s) - ld;
        ss[j].grad_fg = sys.beta() * sys.energy_gradient_fg(x, *records[at + j].s);
      }
      std::size_t keep = 0;
      for (std::size_t j = 1; j < m; ++j) {
        if (ss[j].loss < ss[keep].loss) keep = j;
      }
      const std::size_t expect_keep = m - std::min<std::size_t>(n_drop, m - 1);
      REQUIRE(expect_keep == 1);
      auto grads = reference->zero_grads();
      reference->generate_backward(*ss[keep].cache, ss[keep].grad_fg, -1.0, 1.0, grads);
      clip_grad_norm({grads.data(), grads.size()}, 20.0);
      auto params = reference->param_blocks();
      for (std::size_t b = 0; b < params.size(); ++b) adam_step(opts[b], *params[b], grads[b]);
    }
  }

  EnergyTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 3;
  cfg.n_drop = 2;
  cfg.lr = 5e-3;
  cfg.clip_norm = 20.0;
  Rng train_rng(seed);
  auto all = copies.all_records();
  train_by_energy(
      *flow, [&](int, Rng&) { return all; }, sys, cfg, train_rng);

  for (std::size_t l = 0; l < flow->scale_net().weights.size(); ++l) {
    CHECK((flow->scale_net().weights[l] - reference->scale_net().weights[l]).norm() < 1e-12);
    CHECK((flow->mean_net().weights[l] - reference->mean_net().weights[l]).norm() < 1e-12);
  }
}

TEST_CASE("train_by_energy: all-inf batch reports flow left support") {
  struct Forbidden final : TargetSystem {
    int full_dim() const override { return 2; }
    int cg_dim() const override { return 1; }
    int fg_dim() const override { return 1; }
    double beta() const override { return 1.0; }
    double energy(const Vec&) const override { return std::numeric_limits<double>::infinity(); }
    Vec energy_gradient(const Vec&) const override { return Vec::Zero(2); }
    void split(const Vec& x, Vec& s, Vec& fg) const override {
      s = x.head(1);
      fg = x.tail(1);
    }
    Vec reconstruct(const Vec& fg, const Vec& s) const override {
      Vec x(2);
      x << s[0], fg[0];
      return x;
    }
    Vec energy_gradient_fg(const Vec&, const Vec&) const override { return Vec::Zero(1); }
  };
  const Forbidden sys;
  std::vector<Vec> conditions(4, Vec::Zero(1));
  auto flow = fresh_affine(conditions, 15);
  auto copies = make_copy_set(conditions, 2);
  auto all = copies.all_records();
  EnergyTrainConfig cfg;
  cfg.epochs = 1;
  Rng train_rng(7);
  CHECK_THROWS_WITH_AS(train_by_energy(
                           *flow, [&](int, Rng&) { return all; }, sys, cfg, train_rng),
                       doctest::Contains("flow left support"), std::runtime_error);
}

TEST_CASE("train_by_example on the muller-brown starting region trends downward") {
  const MullerBrown mb;
  Rng rng(61);
  // Starting-style dataset: short MC around the lower minimum.
  std::vector<Vec> s, x_fg;
  Vec x(2);
  x << -0.25, 1.5;
  double e = mb.energy(x);
  for (int t = 0; t < 400; ++t) {
    Vec prop = x;
    prop[0] += 0.2 * normal01(rng);
    prop[1] += 0.2 * normal01(rng);
    const double ep = mb.energy(prop);
    if (uniform01(rng) < std::exp(-mb.beta() * (ep - e))) {
      x = prop;
      e = ep;
    }
    Vec sv, fg;
    mb.split(x, sv, fg);
    s.push_back(sv);
    x_fg.push_back(fg);
  }
  auto flow = fresh_affine(s, 19);
  ExampleTrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch = 16;
  cfg.lr = 5e-4;
  std::vector<double> losses;
  Rng train_rng(71);
  train_by_example(*flow, x_fg, s, cfg, train_rng,
                   [&](const TrainLogEntry& e) { losses.push_back(e.mean_loss); });
  REQUIRE(losses.size() == 200);
  // Monotone trend over a 50-epoch smoothing window.
  const auto window_mean = [&](int from) {
    return std::accumulate(losses.begin() + from, losses.begin() + from + 50, 0.0) / 50.0;
  };
  double prev = window_mean(0);
  for (int from = 50; from + 50 <= 200; from += 50) {
    const double cur = window_mean(from);
    CHECK(cur <= prev + 1e-6);
    prev = cur;
  }
}

TEST_CASE("energy_test_loss evaluates without mutating records") {
  const auto sys = testsupport::correlated_gaussian(0.4, 1.0);
  std::vector<Vec> conditions(8, Vec::Zero(1));
  auto flow = fresh_affine(conditions, 23);
  auto copies = make_copy_set(conditions, 3);
  auto all = copies.all_records();
  Rng rng(9);
  const double loss = energy_test_loss(*flow, all, sys, rng);
  CHECK(std::isfinite(loss));
  for (const auto& rec : all) CHECK(!rec.slot->valid);
}
