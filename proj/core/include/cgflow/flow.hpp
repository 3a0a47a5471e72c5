#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cgflow/nnkernel.hpp"
#include "cgflow/systems.hpp"

namespace cgflow {

// Opaque per-sample state captured during a generating pass, consumed by
// generate_backward.
struct FlowCache {
  virtual ~FlowCache() = default;
};

// Invertible conditional transform q(x_fg | s) with exact log-density under a
// standard-normal latent. Both the 1-D conditional affine transform and the
// spline coupling stack implement this interface; training code is generic.
class ConditionalFlow {
 public:
  virtual ~ConditionalFlow() = default;

  virtual int fg_dim() const = 0;
  virtual int cond_dim() const = 0;
  virtual std::string type_name() const = 0;

  // Generating direction z -> x_fg; logdet = ln|det d x_fg / d z|.
  virtual Vec to_fg(const Vec& z, const Vec& s, double& logdet) const = 0;
  // Normalizing direction x_fg -> z; logdet = ln|det d z / d x_fg|.
  virtual Vec to_latent(const Vec& x_fg, const Vec& s, double& logdet) const = 0;

  // log q(x_fg | s) = log N(f(x_fg; s); 0, I) + ln|det J_{x_fg -> z}|.
  double log_prob(const Vec& x_fg, const Vec& s) const;

  virtual std::vector<MlpParams*> param_blocks() = 0;
  virtual std::vector<const MlpParams*> param_blocks() const = 0;
  std::vector<MlpParams> zero_grads() const;

  // -log q(x_fg | s); accumulates weight * d(-log q)/dtheta into grads.
  virtual double example_loss_grad(const Vec& x_fg, const Vec& s, double weight,
                                   std::vector<MlpParams>& grads) const = 0;

  // Generating pass that captures backward state.
  virtual Vec generate(const Vec& z, const Vec& s, double& logdet,
                       std::unique_ptr<FlowCache>& cache) const = 0;
  // Accumulates weight * [dL/dx_fg . dx_fg/dtheta + dL/dlogdet . dlogdet/dtheta].
  virtual void generate_backward(const FlowCache& cache, const Vec& dloss_dxfg,
                                 double dloss_dlogdet, double weight,
                                 std::vector<MlpParams>& grads) const = 0;
};

// s_perp = z * scale(s) + mean(s) with scale = exp(raw scale-net output), so
// the scale net predicts ln scale and the log-determinant is its raw output.
class CondAffineFlow final : public ConditionalFlow {
 public:
  CondAffineFlow(const std::vector<int>& hidden, const Scaler& cond_scaler, Rng& init_rng);
  CondAffineFlow(MlpParams scale_net, MlpParams mean_net, Scaler cond_scaler);

  int fg_dim() const override { return 1; }
  int cond_dim() const override { return static_cast<int>(cond_scaler_.mean.size()); }
  std::string type_name() const override { return "affine"; }

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

  double scale(const Vec& s) const;
  double mean(const Vec& s) const;
  const MlpParams& scale_net() const { return scale_net_; }
  const MlpParams& mean_net() const { return mean_net_; }
  const Scaler& cond_scaler() const { return cond_scaler_; }

 private:
  MlpParams scale_net_;
  MlpParams mean_net_;
  Scaler cond_scaler_;
};

// Exact conditional of a GaussianSystem wrapped as a flow; parameter-free.
// The zero-variance importance-ratio reference for PMF estimator tests.
class GaussianConditionalFlow final : public ConditionalFlow {
 public:
  explicit GaussianConditionalFlow(const GaussianSystem& system);

  int fg_dim() const override { return static_cast<int>(chol_.rows()); }
  int cond_dim() const override { return cond_dim_; }
  std::string type_name() const override { return "gaussian_conditional"; }

  Vec to_fg(const Vec& z, const Vec& s, double& logdet) const override;
  Vec to_latent(const Vec& x_fg, const Vec& s, double& logdet) const override;

  std::vector<MlpParams*> param_blocks() override { return {}; }
  std::vector<const MlpParams*> param_blocks() const override { return {}; }
  double example_loss_grad(const Vec& x_fg, const Vec& s, double weight,
                           std::vector<MlpParams>& grads) const override;
  Vec generate(const Vec& z, const Vec& s, double& logdet,
               std::unique_ptr<FlowCache>& cache) const override;
  void generate_backward(const FlowCache&, const Vec&, double, double,
                         std::vector<MlpParams>&) const override {}

 private:
  const GaussianSystem* system_;
  int cond_dim_;
  Mat chol_;  // Cholesky factor of cond_cov / beta
  double logdet_chol_;
};

}  // namespace cgflow
