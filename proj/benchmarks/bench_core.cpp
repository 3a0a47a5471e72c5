#include <benchmark/benchmark.h>

#include "cgflow/flow_training.hpp"
#include "cgflow/pmf.hpp"
#include "cgflow/sampler.hpp"
#include "cgflow/spline_flow.hpp"
#include "cgflow/systems.hpp"

using namespace cgflow;

namespace {

void BM_MbEnergy(benchmark::State& state) {
  const MullerBrown mb;
  Vec x(2);
  x << -0.4, 1.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mb.energy(x));
    x[0] += 1e-9;  // defeat value caching
  }
}
BENCHMARK(BM_MbEnergy);

void BM_MbGradient(benchmark::State& state) {
  const MullerBrown mb;
  Vec x(2);
  x << -0.4, 1.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mb.energy_gradient(x));
    x[0] += 1e-9;
  }
}
BENCHMARK(BM_MbGradient);

void BM_MlpForwardBatch(benchmark::State& state) {
  Rng rng(1);
  const MlpParams net = init_gaussian({1, 64, 64, 1}, 0.5, rng);
  Mat in(1, state.range(0));
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = normal01(rng);
  for (auto _ : state) benchmark::DoNotOptimize(mlp_forward(net, in));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBatch)->Arg(1)->Arg(5)->Arg(50);

void BM_MlpBackwardBatch(benchmark::State& state) {
  Rng rng(2);
  const MlpParams net = init_gaussian({1, 64, 64, 1}, 0.5, rng);
  Mat in(1, state.range(0));
  Mat up(1, state.range(0));
  for (Eigen::Index i = 0; i < in.size(); ++i) {
    in.data()[i] = normal01(rng);
    up.data()[i] = normal01(rng);
  }
  MlpCache cache;
  MlpParams grad = net.zeros_like();
  for (auto _ : state) {
    mlp_forward(net, in, cache);
    grad.set_zero();
    benchmark::DoNotOptimize(mlp_backward(net, cache, up, grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpBackwardBatch)->Arg(5)->Arg(50);

void BM_EnsemblePredictBatch(benchmark::State& state) {
  std::vector<MlpParams> models;
  Rng rng(3);
  for (int m = 0; m < 10; ++m) models.push_back(init_gaussian({1, 64, 64, 1}, 0.5, rng));
  const PmfEnsemble ensemble(Scaler::identity(1), std::move(models));
  Mat in(1, state.range(0));
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = normal01(rng);
  Vec mean, sd;
  for (auto _ : state) {
    ensemble.predict_batch(in, mean, sd);
    benchmark::DoNotOptimize(mean);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EnsemblePredictBatch)->Arg(1)->Arg(50);

void BM_AffineGenerateBackward(benchmark::State& state) {
  Rng rng(4);
  CondAffineFlow flow({64, 64}, Scaler::identity(1), rng);
  Vec z(1), s(1), dx(1);
  z << 0.3;
  s << -1.0;
  dx << 0.7;
  auto grads = flow.zero_grads();
  for (auto _ : state) {
    double logdet = 0.0;
    std::unique_ptr<FlowCache> cache;
    benchmark::DoNotOptimize(flow.generate(z, s, logdet, cache));
    for (auto& g : grads) g.set_zero();
    flow.generate_backward(*cache, dx, -1.0, 1.0, grads);
  }
}
BENCHMARK(BM_AffineGenerateBackward);

void BM_SplineForward(benchmark::State& state) {
  Rng rng(5);
  RqSplineFlow::Options opts;
  RqSplineFlow flow(4, opts, Scaler::identity(2), rng);
  Vec z(4), s(2);
  z << 0.2, -0.7, 1.1, 0.4;
  s << 0.5, -0.3;
  double logdet = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow.to_fg(z, s, logdet));
    z[0] += 1e-9;
  }
}
BENCHMARK(BM_SplineForward);

void BM_GroundTruthPmf(benchmark::State& state) {
  const MullerBrown mb;
  const auto grid = linspace(-2.5, 1.1, 100);
  for (auto _ : state) benchmark::DoNotOptimize(ground_truth_pmf(mb, grid));
}
BENCHMARK(BM_GroundTruthPmf);

void BM_McTrajectory(benchmark::State& state) {
  const MullerBrown mb;
  Vec start(2);
  start << -0.25, 1.5;
  Rng rng(6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mc_trajectory(
        start, [&](const Vec& x) { return mb.energy(x); }, mb.beta(), 0.2, state.range(0), rng));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_McTrajectory)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
