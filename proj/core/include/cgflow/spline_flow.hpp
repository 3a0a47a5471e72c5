#pragma once

#include <cstdint>
#include <vector>

#include "cgflow/flow.hpp"

namespace cgflow {

// Knot layout of a monotone rational-quadratic spline on [-bound, bound] with
// identity tails: K bins from softmax-normalized widths/heights (floored at
// min_frac per bin), derivatives softplus-positive at interior knots and
// pinned to 1 at the boundary so the tails join with a continuous derivative.
struct SplineBins {
  Eigen::VectorXd xk;    // K+1 x-knots
  Eigen::VectorXd yk;    // K+1 y-knots
  Eigen::VectorXd deriv; // K+1 derivatives, deriv[0] = deriv[K] = 1
  Eigen::VectorXd wp;    // softmax width probabilities (K)
  Eigen::VectorXd hp;    // softmax height probabilities (K)
  Eigen::VectorXd cwp;   // cumulative softmax width fractions at knots (K+1)
  Eigen::VectorXd chp;   // cumulative softmax height fractions at knots (K+1)
};

// raw holds [K width logits | K height logits | K-1 interior derivative raws].
SplineBins make_spline_bins(const double* raw, int n_bins, double bound);

struct RqsEval {
  bool identity = false;  // outside [-bound, bound]
  int bin = 0;
  double x = 0.0;      // input-side point (forward orientation)
  double y = 0.0;      // output-side point
  double logd = 0.0;   // ln dy/dx at x
  double theta = 0.0;
  double width = 0.0, height = 0.0, slope = 0.0, d0 = 0.0, d1 = 0.0;
};

RqsEval rqs_forward(const SplineBins& bins, double x, double bound);
// Solves the bin-local quadratic; the returned eval is expressed at the
// recovered x so the same partials serve both training directions.
RqsEval rqs_inverse(const SplineBins& bins, double y, double bound);

struct RqsPartials {
  double dy_dx = 1.0;
  double dlogd_dx = 0.0;
  Eigen::VectorXd dy_draw;     // 3K-1 raw-parameter partials of y
  Eigen::VectorXd dlogd_draw;  // 3K-1 raw-parameter partials of ln dy/dx
};

RqsPartials rqs_partials(const SplineBins& bins, const RqsEval& eval, int n_bins, double bound);

// Stack of spline coupling layers conditioned on s. Each layer transforms the
// masked dims elementwise; its parameter MLP sees [identity dims ; scaled s].
// With fg_dim == 1 every layer transforms the single dim and the MLP input is
// the conditioning alone.
class RqSplineFlow final : public ConditionalFlow {
 public:
  struct Options {
    int n_layers = 6;
    int n_bins = 8;
    double bound = 5.0;
    std::vector<int> hidden = {128, 128};
  };

  RqSplineFlow(int fg_dim, const Options& opts, const Scaler& cond_scaler, Rng& init_rng);

  struct Layer {
    std::vector<std::uint8_t> transform_mask;  // 1 = transformed dim
    MlpParams net;
  };
  RqSplineFlow(int fg_dim, int n_bins, double bound, std::vector<Layer> layers, Scaler cond_scaler);

  int fg_dim() const override { return fg_dim_; }
  int cond_dim() const override { return static_cast<int>(cond_scaler_.mean.size()); }
  std::string type_name() const override { return "rq_spline"; }

  Vec to_fg(const Vec& z, const Vec& s, double& logdet) const override;
  Vec to_latent(const Vec& x_fg, const Vec& s, double& logdet) const override;

  std::vector<MlpParams*> param_blocks() override;
  std::vector<const MlpParams*> param_blocks() const override;

  double example_loss_grad(const Vec& x_fg, const Vec& s, double weight,
                           std::vector<MlpParams>& grads) const override;
  Vec generate(const Vec& z, const Vec& s, double& logdet,
               std::unique_ptr<FlowCache>& cache) const override;
  void generate_backward(const FlowCache& cache, const Vec& dloss_dxfg, double dloss_dlogdet,
                         double weight, std::vector<MlpParams>& grads) const override;

  int n_bins() const { return n_bins_; }
  double bound() const { return bound_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const Scaler& cond_scaler() const { return cond_scaler_; }

  struct LayerState;

 private:
  Vec layer_features(const Layer& layer, const Vec& x, const Vec& cond) const;
  // Applies layer `li` at input x (forward orientation when forward=true),
  // filling `state` for backprop.
  Vec apply_layer(int li, const Vec& x, const Vec& cond, bool forward, double& logdet,
                  LayerState* state) const;

  int fg_dim_;
  int n_bins_;
  double bound_;
  std::vector<Layer> layers_;
  Scaler cond_scaler_;
};

}  // namespace cgflow
