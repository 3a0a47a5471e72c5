#include "cgflow/pmf.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace cgflow {

double logmeanexp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("logmeanexp: empty input");
  double mx = -std::numeric_limits<double>::infinity();
  for (const double v : values) mx = std::max(mx, v);
  if (!std::isfinite(mx)) return mx;  // all -inf, or a +inf present
  double acc = 0.0;
  for (const double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc / static_cast<double>(values.size()));
}

namespace {

std::vector<double> log_ratios(std::span<const EnergyRecordSlot> records, double beta) {
  std::vector<double> l;
  l.reserve(records.size());
  for (const auto& r : records) {
    if (!r.valid) continue;
    const double v = -beta * r.energy - r.log_q;
    if (std::isfinite(v)) l.push_back(v);
  }
  return l;
}

}  // namespace

PmfPointEstimate pmf_estimate(const Vec& s, std::span<const EnergyRecordSlot> records, double beta,
                              int n_clip) {
  std::vector<double> l = log_ratios(records, beta);
  if (l.empty()) throw std::runtime_error("pmf_estimate: no support at s");
  PmfPointEstimate est;
  est.s = s;
  est.n_samples = static_cast<int>(l.size());
  const int clip = std::min<int>(n_clip, est.n_samples - 1);
  if (clip > 0) {
    std::sort(l.begin(), l.end());
    const double floor = l[l.size() - clip];  // smallest of the clip largest
    for (std::size_t i = l.size() - clip; i < l.size(); ++i) l[i] = floor;
    est.n_clipped = clip;
  }
  est.value = -logmeanexp(l) / beta;
  return est;
}

PmfPointEstimate pmf_estimate_alt(const Vec& s, std::span<const EnergyRecordSlot> records,
                                  double beta) {
  PmfPointEstimate est;
  est.s = s;
  double acc = 0.0;
  for (const auto& r : records) {
    if (!r.valid) continue;
    const double g2 = r.energy + r.log_q / beta;
    if (!std::isfinite(g2)) continue;
    acc += g2;
    ++est.n_samples;
  }
  if (est.n_samples == 0) throw std::runtime_error("pmf_estimate_alt: no support at s");
  est.value = acc / est.n_samples;
  return est;
}

void fit_regressor(MlpParams& model, const Scaler& input_scaler, const std::vector<Vec>& inputs,
                   const std::vector<double>& targets, const RegressorConfig& cfg, Rng& rng) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw std::invalid_argument("fit_regressor: empty or mismatched data");
  }
  const std::size_t n = inputs.size();
  Mat scaled(model.in_dim(), n);
  for (std::size_t i = 0; i < n; ++i) scaled.col(i) = scaler_apply(input_scaler, inputs[i]);

  AdamState opt = AdamState::create(model.dims, cfg.lr);
  MlpParams grad = model.zeros_like();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Mat xb(model.in_dim(), cfg.batch);
  Eigen::RowVectorXd yb(cfg.batch);
  MlpCache cache;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    for (std::size_t at = 0; at < n; at += cfg.batch) {
      const std::size_t m = std::min<std::size_t>(cfg.batch, n - at);
      for (std::size_t j = 0; j < m; ++j) {
        xb.col(j) = scaled.col(order[at + j]);
        yb[j] = targets[order[at + j]];
      }
      const Mat pred = mlp_forward(model, xb.leftCols(m), cache);
      // MSE: upstream = 2 (pred - y) / m.
      const Mat up = 2.0 * (pred - yb.leftCols(m)) / static_cast<double>(m);
      grad.set_zero();
      mlp_backward(model, cache, up, grad);
      adam_step(opt, model, grad);
    }
  }
}

PmfEnsemble::PmfEnsemble(Scaler input_scaler, std::vector<MlpParams> models)
    : scaler_(std::move(input_scaler)), models_(std::move(models)) {
  if (models_.empty()) throw std::invalid_argument("PmfEnsemble: no models");
}

PmfEnsemble PmfEnsemble::train(const std::vector<Vec>& inputs, const std::vector<double>& targets,
                               const EnsembleConfig& cfg, std::uint64_t seed) {
  if (inputs.size() < 2) throw std::invalid_argument("PmfEnsemble::train: need >= 2 targets");
  if (inputs.size() != targets.size()) {
    throw std::invalid_argument("PmfEnsemble::train: inputs/targets size mismatch");
  }
  const std::size_t n = inputs.size();
  const int in_dim = static_cast<int>(inputs[0].size());
  Mat data(in_dim, n);
  for (std::size_t i = 0; i < n; ++i) data.col(i) = inputs[i];
  const Scaler scaler = scaler_fit(data);

  std::vector<int> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);

  std::vector<MlpParams> models(cfg.n_models);
  const auto train_one = [&](int m) {
    Rng rng = derive_rng(seed, "pmf-ensemble/model/" + std::to_string(m));
    const double nu = uniform_range(rng, cfg.nu_lo, cfg.nu_hi);
    models[m] = init_gaussian(dims, nu, rng);
    std::vector<Vec> xs;
    std::vector<double> ys;
    if (cfg.bagging == EnsembleConfig::Bagging::kBootstrap) {
      xs.reserve(n);
      ys.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = uniform_index(rng, n);
        xs.push_back(inputs[j]);
        ys.push_back(targets[j]);
      }
    } else {
      const std::size_t keep = std::max<std::size_t>(2, (n * 8 + 5) / 10);
      for (const std::size_t j : sample_without_replacement(rng, n, keep)) {
        xs.push_back(inputs[j]);
        ys.push_back(targets[j]);
      }
    }
    RegressorConfig rc;
    rc.lr = cfg.lr;
    rc.batch = cfg.batch;
    rc.epochs = cfg.epochs;
    fit_regressor(models[m], scaler, xs, ys, rc, rng);
  };

  const int threads = std::max(1, cfg.threads);
  if (threads <= 1 || cfg.n_models <= 1) {
    for (int m = 0; m < cfg.n_models; ++m) train_one(m);
  } else {
    // Models are fully independent; any thread layout gives identical results.
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < std::min(threads, cfg.n_models); ++t) {
      pool.emplace_back([&] {
        for (int m = next.fetch_add(1); m < cfg.n_models; m = next.fetch_add(1)) train_one(m);
      });
    }
    for (auto& th : pool) th.join();
  }
  return PmfEnsemble(scaler, std::move(models));
}

std::pair<double, double> PmfEnsemble::predict(const Vec& s) const {
  Vec mean(1), sd(1);
  predict_batch(Mat(s), mean, sd);
  return {mean[0], sd[0]};
}

void PmfEnsemble::predict_batch(const Mat& s_columns, Vec& mean_out, Vec& std_out) const {
  const Mat scaled = scaler_apply(scaler_, s_columns);
  const Eigen::Index n = s_columns.cols();
  Vec acc = Vec::Zero(n), acc2 = Vec::Zero(n);
  for (const auto& model : models_) {
    const Mat out = mlp_forward(model, scaled);
    acc += out.row(0).transpose();
    acc2 += out.row(0).transpose().cwiseAbs2();
  }
  const double inv = 1.0 / static_cast<double>(models_.size());
  mean_out = acc * inv;
  std_out = (acc2 * inv - mean_out.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
}

std::vector<double> PmfEnsemble::mean_on_grid(const std::vector<double>& s_grid) const {
  Mat cols(1, s_grid.size());
  for (std::size_t i = 0; i < s_grid.size(); ++i) cols(0, i) = s_grid[i];
  Vec mean, sd;
  predict_batch(cols, mean, sd);
  return std::vector<double>(mean.begin(), mean.end());
}

}  // namespace cgflow
