#include "cgflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cgflow {

double forward_kld_pmf(std::span<const double> model_pmf, std::span<const double> truth_pmf,
                       double beta) {
  if (model_pmf.size() != truth_pmf.size() || truth_pmf.empty()) {
    throw std::invalid_argument("forward_kld_pmf: grid size mismatch");
  }
  const auto normalize = [beta](std::span<const double> u, std::vector<double>& p) {
    const double mn = *std::min_element(u.begin(), u.end());
    double z = 0.0;
    p.resize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      p[i] = std::exp(-beta * (u[i] - mn));
      z += p[i];
    }
    for (auto& v : p) v /= z;
  };
  std::vector<double> pt, pm;
  normalize(truth_pmf, pt);
  normalize(model_pmf, pm);
  double kld = 0.0;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    if (pt[i] <= 0.0) continue;
    if (pm[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kld += pt[i] * std::log(pt[i] / pm[i]);
  }
  return kld;
}

GridSampler::GridSampler(const std::vector<double>& grid_s, const std::vector<double>& grid_u,
                         double beta)
    : grid_(grid_s) {
  if (grid_.size() < 2 || grid_.size() != grid_u.size()) {
    throw std::invalid_argument("GridSampler: bad grid");
  }
  width_ = grid_[1] - grid_[0];
  const double mn = *std::min_element(grid_u.begin(), grid_u.end());
  std::vector<double> mass(grid_.size());
  double z = 0.0;
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    mass[i] = std::exp(-beta * (grid_u[i] - mn));
    z += mass[i];
  }
  cdf_.resize(grid_.size());
  log_p_.resize(grid_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    acc += mass[i] / z;
    cdf_[i] = acc;
    log_p_[i] = std::log(mass[i] / z) - std::log(width_);
  }
  cdf_.back() = 1.0;
}

double GridSampler::sample(Rng& rng) const {
  const double u = uniform01(rng);
  const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
  const std::size_t i = std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1);
  return grid_[i] + uniform_range(rng, -width_ / 2.0, width_ / 2.0);
}

double GridSampler::log_density(double s) const {
  const double pos = (s - grid_.front()) / width_;
  const auto i = static_cast<std::ptrdiff_t>(std::llround(pos));
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(grid_.size())) {
    return -std::numeric_limits<double>::infinity();
  }
  return log_p_[i];
}

EssResult reverse_ess(const ConditionalFlow& flow, const std::vector<double>& grid_s,
                      const std::vector<double>& grid_u, const TargetSystem& system, int n,
                      int clip_count, Rng& rng) {
  if (n < 1) throw std::invalid_argument("reverse_ess: need n >= 1");
  const GridSampler sampler(grid_s, grid_u, system.beta());
  const double beta = system.beta();
  const int fg = flow.fg_dim();

  std::vector<double> log_w(n);
  Vec s(1), z(fg);
  for (int i = 0; i < n; ++i) {
    s[0] = sampler.sample(rng);
    for (int d = 0; d < fg; ++d) z[d] = normal01(rng);
    double logdet = 0.0;
    const Vec x_fg = flow.to_fg(z, s, logdet);
    const double log_q =
        -0.5 * z.squaredNorm() - 0.5 * 1.8378770664093454836 * fg - logdet + sampler.log_density(s[0]);
    const double e = system.energy(system.reconstruct(x_fg, s));
    log_w[i] = -beta * e - log_q;
  }

  double mx = -std::numeric_limits<double>::infinity();
  for (const double lw : log_w) mx = std::max(mx, lw);
  if (!std::isfinite(mx)) throw std::runtime_error("reverse_ess: all weights vanished");
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = std::exp(log_w[i] - mx);
  return ess_percent_from_weights(std::move(w), clip_count);
}

EssResult ess_percent_from_weights(std::vector<double> w, int clip_count) {
  const int n = static_cast<int>(w.size());
  EssResult result;
  result.n = n;
  if (clip_count > 0 && n > 1) {
    const int clip = std::min(clip_count, n - 1);
    std::vector<double> sorted = w;
    std::nth_element(sorted.begin(), sorted.end() - clip, sorted.end());
    const double floor = sorted[n - clip];
    for (auto& v : w) v = std::min(v, floor);
    result.clipped = clip;
  }
  double total = 0.0;
  for (const double v : w) total += v;
  if (total <= 0.0) throw std::runtime_error("ess: zero total weight");
  double sum_sq = 0.0;
  for (const double v : w) {
    const double wb = v / total;
    sum_sq += wb * wb;
  }
  result.ess_percent = 100.0 / (sum_sq * n);
  return result;
}

}  // namespace cgflow
