#pragma once

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace cgflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// An unnormalized Boltzmann target exp(-beta * E(x)) together with its
// coarse-graining split x <-> (x_fg, s). The split Jacobian is constant for
// every system here and is absorbed into PMF additive constants.
class TargetSystem {
 public:
  virtual ~TargetSystem() = default;

  virtual int full_dim() const = 0;
  virtual int cg_dim() const = 0;
  virtual int fg_dim() const = 0;
  virtual double beta() const = 0;

  // Total on finite inputs; may return +inf for forbidden regions, never NaN.
  virtual double energy(const Vec& x) const = 0;
  virtual Vec energy_gradient(const Vec& x) const = 0;

  virtual void split(const Vec& x, Vec& s, Vec& x_fg) const = 0;
  virtual Vec reconstruct(const Vec& x_fg, const Vec& s) const = 0;

  double energy_fg(const Vec& x_fg, const Vec& s) const { return energy(reconstruct(x_fg, s)); }
  // d/dx_fg of E(reconstruct(x_fg, s)); the split is linear for all systems here.
  virtual Vec energy_gradient_fg(const Vec& x_fg, const Vec& s) const = 0;
};

// Counts calls into energy(); the audit trail for reported evaluation budgets.
// energy_gradient is considered part of the same evaluation and is not counted.
class CountingSystem final : public TargetSystem {
 public:
  explicit CountingSystem(const TargetSystem& inner) : inner_(inner) {}

  int full_dim() const override { return inner_.full_dim(); }
  int cg_dim() const override { return inner_.cg_dim(); }
  int fg_dim() const override { return inner_.fg_dim(); }
  double beta() const override { return inner_.beta(); }
  double energy(const Vec& x) const override {
    ++count_;
    return inner_.energy(x);
  }
  Vec energy_gradient(const Vec& x) const override { return inner_.energy_gradient(x); }
  void split(const Vec& x, Vec& s, Vec& x_fg) const override { inner_.split(x, s, x_fg); }
  Vec reconstruct(const Vec& x_fg, const Vec& s) const override { return inner_.reconstruct(x_fg, s); }
  Vec energy_gradient_fg(const Vec& x_fg, const Vec& s) const override {
    return inner_.energy_gradient_fg(x_fg, s);
  }

  long long count() const { return count_; }
  void reset() { count_ = 0; }

 private:
  const TargetSystem& inner_;
  mutable long long count_ = 0;
};

// Two-dimensional Muller-Brown potential with the 45-degree rotated CG axis
// s = x1 - x2 and fine-grained coordinate s_perp = x1 + x2.
class MullerBrown final : public TargetSystem {
 public:
  explicit MullerBrown(double beta = 0.1) : beta_(beta) {}

  int full_dim() const override { return 2; }
  int cg_dim() const override { return 1; }
  int fg_dim() const override { return 1; }
  double beta() const override { return beta_; }

  double energy(const Vec& x) const override;
  Vec energy_gradient(const Vec& x) const override;
  void split(const Vec& x, Vec& s, Vec& x_fg) const override;
  Vec reconstruct(const Vec& x_fg, const Vec& s) const override;
  Vec energy_gradient_fg(const Vec& x_fg, const Vec& s) const override;

  // Global minimum, frozen from offline numerical minimization.
  static Vec global_minimum();

 private:
  double beta_;
};

// Joint Gaussian over (s, x_fg) with energy E(x) = x^T Sigma^{-1} x / 2 and CG
// split by slicing: s = x[0:cg_dim]. Closed forms for the PMF and the
// conditional p(x_fg | s) make this the oracle system for flow and PMF tests.
class GaussianSystem final : public TargetSystem {
 public:
  // covariance is (cg_dim + fg_dim) square, ordered [s; x_fg]; must be SPD.
  GaussianSystem(int fg_dim, const Mat& covariance, double beta = 1.0, int cg_dim = 1);

  int full_dim() const override { return cg_dim_ + fg_dim_; }
  int cg_dim() const override { return cg_dim_; }
  int fg_dim() const override { return fg_dim_; }
  double beta() const override { return beta_; }

  double energy(const Vec& x) const override;
  Vec energy_gradient(const Vec& x) const override;
  void split(const Vec& x, Vec& s, Vec& x_fg) const override;
  Vec reconstruct(const Vec& x_fg, const Vec& s) const override;
  Vec energy_gradient_fg(const Vec& x_fg, const Vec& s) const override;

  // Exact PMF -ln(marginal)/beta up to a constant: s^T Sigma_ss^{-1} s / 2.
  double exact_pmf(const Vec& s) const;
  // Schur-complement conditional of the Boltzmann density exp(-beta E):
  // x_fg | s ~ N(mean(s), cond_cov / beta).
  Vec conditional_mean(const Vec& s) const;
  const Mat& conditional_covariance() const { return cond_cov_; }

 private:
  int cg_dim_;
  int fg_dim_;
  double beta_;
  Mat cov_;
  Mat precision_;
  Mat cross_solve_;  // Sigma_fs * Sigma_ss^{-1}
  Mat cond_cov_;     // Sigma_ff - Sigma_fs Sigma_ss^{-1} Sigma_sf
  Mat sigma_ss_inv_;
};

struct QuadratureSpec {
  double window_lo = -4.0;
  double window_hi = 6.0;
  int nodes = 2001;  // composite Simpson; must be odd
};

// Ground-truth PMF for a system with one fine-grained coordinate:
// U(s) = -(1/beta) ln Integral exp(-beta E(x(s_perp, s))) ds_perp.
// Values are reported up to one shared additive constant. Throws if the
// integrand does not vanish (< 1e-12 of its max) at both window ends or the
// quadrature turns non-finite.
std::vector<double> ground_truth_pmf(const TargetSystem& system, const std::vector<double>& s_grid,
                                     const QuadratureSpec& spec = {});

// Evenly spaced grid, inclusive of both ends.
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace cgflow
