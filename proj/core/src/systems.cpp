#include "cgflow/systems.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cgflow {

namespace {

constexpr double kMbA[4] = {-200.0, -100.0, -170.0, 15.0};
constexpr double kMbSmallA[4] = {-1.0, -1.0, -6.5, 0.7};
constexpr double kMbB[4] = {0.0, 0.0, 11.0, 0.6};
constexpr double kMbC[4] = {-10.0, -10.0, -6.5, 0.7};
constexpr double kMbX[4] = {1.0, 0.0, -0.5, -1.0};
constexpr double kMbY[4] = {0.0, 0.5, 1.5, 1.0};

}  // namespace

double MullerBrown::energy(const Vec& x) const {
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double u = x[0] - kMbX[i];
    const double v = x[1] - kMbY[i];
    const double arg = kMbSmallA[i] * u * u + kMbB[i] * u * v + kMbC[i] * v * v;
    total += kMbA[i] * std::exp(arg);
  }
  // Terms 1-3 are bounded below; only the positive term can overflow.
  if (std::isnan(total)) return std::numeric_limits<double>::infinity();
  return total;
}

Vec MullerBrown::energy_gradient(const Vec& x) const {
  Vec g = Vec::Zero(2);
  for (int i = 0; i < 4; ++i) {
    const double u = x[0] - kMbX[i];
    const double v = x[1] - kMbY[i];
    const double e = kMbA[i] * std::exp(kMbSmallA[i] * u * u + kMbB[i] * u * v + kMbC[i] * v * v);
    g[0] += e * (2.0 * kMbSmallA[i] * u + kMbB[i] * v);
    g[1] += e * (kMbB[i] * u + 2.0 * kMbC[i] * v);
  }
  return g;
}

void MullerBrown::split(const Vec& x, Vec& s, Vec& x_fg) const {
  s.resize(1);
  x_fg.resize(1);
  s[0] = x[0] - x[1];
  x_fg[0] = x[0] + x[1];
}

Vec MullerBrown::reconstruct(const Vec& x_fg, const Vec& s) const {
  Vec x(2);
  x[0] = (s[0] + x_fg[0]) / 2.0;
  x[1] = (x_fg[0] - s[0]) / 2.0;
  return x;
}

Vec MullerBrown::energy_gradient_fg(const Vec& x_fg, const Vec& s) const {
  const Vec g = energy_gradient(reconstruct(x_fg, s));
  Vec out(1);
  out[0] = (g[0] + g[1]) / 2.0;
  return out;
}

Vec MullerBrown::global_minimum() {
  Vec x(2);
  x[0] = -0.5582236346;
  x[1] = 1.4417258418;
  return x;
}

GaussianSystem::GaussianSystem(int fg_dim, const Mat& covariance, double beta, int cg_dim)
    : cg_dim_(cg_dim), fg_dim_(fg_dim), beta_(beta), cov_(covariance) {
  const int d = cg_dim_ + fg_dim_;
  if (cov_.rows() != d || cov_.cols() != d) {
    throw std::invalid_argument("GaussianSystem: covariance shape mismatch");
  }
  Eigen::LLT<Mat> llt(cov_);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("GaussianSystem: covariance not positive definite");
  }
  precision_ = llt.solve(Mat::Identity(d, d));
  const Mat sigma_ss = cov_.topLeftCorner(cg_dim_, cg_dim_);
  const Mat sigma_fs = cov_.bottomLeftCorner(fg_dim_, cg_dim_);
  const Mat sigma_ff = cov_.bottomRightCorner(fg_dim_, fg_dim_);
  sigma_ss_inv_ = sigma_ss.llt().solve(Mat::Identity(cg_dim_, cg_dim_));
  cross_solve_ = sigma_fs * sigma_ss_inv_;
  cond_cov_ = sigma_ff - cross_solve_ * sigma_fs.transpose();
}

double GaussianSystem::energy(const Vec& x) const { return 0.5 * x.dot(precision_ * x); }

Vec GaussianSystem::energy_gradient(const Vec& x) const { return precision_ * x; }

void GaussianSystem::split(const Vec& x, Vec& s, Vec& x_fg) const {
  s = x.head(cg_dim_);
  x_fg = x.tail(fg_dim_);
}

Vec GaussianSystem::reconstruct(const Vec& x_fg, const Vec& s) const {
  Vec x(cg_dim_ + fg_dim_);
  x.head(cg_dim_) = s;
  x.tail(fg_dim_) = x_fg;
  return x;
}

Vec GaussianSystem::energy_gradient_fg(const Vec& x_fg, const Vec& s) const {
  return energy_gradient(reconstruct(x_fg, s)).tail(fg_dim_);
}

double GaussianSystem::exact_pmf(const Vec& s) const { return 0.5 * s.dot(sigma_ss_inv_ * s); }

Vec GaussianSystem::conditional_mean(const Vec& s) const { return cross_solve_ * s; }

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) out[i] = lo + i * step;
  return out;
}

std::vector<double> ground_truth_pmf(const TargetSystem& system, const std::vector<double>& s_grid,
                                     const QuadratureSpec& spec) {
  if (s_grid.empty()) throw std::invalid_argument("ground_truth_pmf: empty grid");
  if (system.fg_dim() != 1 || system.cg_dim() != 1) {
    throw std::invalid_argument("ground_truth_pmf: requires 1-D fine and CG coordinates");
  }
  if (spec.nodes < 3 || spec.nodes % 2 == 0) {
    throw std::invalid_argument("ground_truth_pmf: Simpson needs an odd node count >= 3");
  }
  const double beta = system.beta();
  const double h = (spec.window_hi - spec.window_lo) / (spec.nodes - 1);
  std::vector<double> out;
  out.reserve(s_grid.size());
  Vec s(1), x_fg(1);
  std::vector<double> f(spec.nodes);
  for (const double sv : s_grid) {
    s[0] = sv;
    double fmax = 0.0;
    for (int i = 0; i < spec.nodes; ++i) {
      x_fg[0] = spec.window_lo + i * h;
      f[i] = std::exp(-beta * system.energy_fg(x_fg, s));
      fmax = std::max(fmax, f[i]);
    }
    if (!(fmax > 0.0) || !std::isfinite(fmax)) {
      throw std::runtime_error("ground_truth_pmf: integrand degenerate at s=" + std::to_string(sv));
    }
    if (f.front() > 1e-12 * fmax || f.back() > 1e-12 * fmax) {
      throw std::runtime_error("ground_truth_pmf: integration window too small at s=" +
                               std::to_string(sv));
    }
    double acc = f.front() + f.back();
    for (int i = 1; i + 1 < spec.nodes; i += 2) acc += 4.0 * f[i];
    for (int i = 2; i + 1 < spec.nodes; i += 2) acc += 2.0 * f[i];
    const double integral = acc * h / 3.0;
    if (!std::isfinite(integral) || integral <= 0.0) {
      throw std::runtime_error("ground_truth_pmf: non-finite quadrature at s=" + std::to_string(sv));
    }
    out.push_back(-std::log(integral) / beta);
  }
  return out;
}

}  // namespace cgflow
