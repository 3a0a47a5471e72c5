#pragma once

#include <span>
#include <vector>

#include "cgflow/flow.hpp"

namespace cgflow {

// Forward KLD between two PMFs on a shared grid: both are converted to
// discrete distributions p_i ~ exp(-beta U_i), result is
// sum p_truth ln(p_truth / p_model). Additive PMF constants drop out.
// Returns +inf when the model leaves a truth-supported bin empty.
double forward_kld_pmf(std::span<const double> model_pmf, std::span<const double> truth_pmf,
                       double beta);

struct EssResult {
  double ess_percent = 0.0;
  int n = 0;
  int clipped = 0;
};

// 100 * (1 / sum w_bar^2) / n after clipping the clip_count largest weights
// to the smallest value among them.
EssResult ess_percent_from_weights(std::vector<double> weights, int clip_count);

// Reverse effective sample size of cascaded sampling: s from the
// grid-normalized density p(s) ~ exp(-beta U_pmf), x_fg from the flow,
// weights w = exp(-beta E(x)) / (q(x_fg|s) p(s)). The clip_count largest
// weights are clipped to the smallest among them before normalization;
// returns 100 * (1 / sum w_bar^2) / n.
EssResult reverse_ess(const ConditionalFlow& flow, const std::vector<double>& grid_s,
                      const std::vector<double>& grid_u, const TargetSystem& system, int n,
                      int clip_count, Rng& rng);

// Inverse-CDF sampler over a piecewise-constant density on a uniform grid.
class GridSampler {
 public:
  GridSampler(const std::vector<double>& grid_s, const std::vector<double>& grid_u, double beta);

  // Draws s uniform within a cell chosen with probability ~ exp(-beta U_i).
  double sample(Rng& rng) const;
  // ln of the piecewise-constant density at the cell containing s.
  double log_density(double s) const;
  double cell_width() const { return width_; }

 private:
  std::vector<double> grid_;
  std::vector<double> cdf_;
  std::vector<double> log_p_;  // per-cell log density
  double width_;
};

}  // namespace cgflow
