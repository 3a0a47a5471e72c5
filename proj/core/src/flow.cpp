#include "cgflow/flow.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cgflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct AffineCache final : FlowCache {
  MlpCache scale_cache;
  MlpCache mean_cache;
  double z = 0.0;
  double raw = 0.0;
};

}  // namespace

double ConditionalFlow::log_prob(const Vec& x_fg, const Vec& s) const {
  double logdet = 0.0;
  const Vec z = to_latent(x_fg, s, logdet);
  return -0.5 * z.squaredNorm() - 0.5 * kLog2Pi * fg_dim() + logdet;
}

std::vector<MlpParams> ConditionalFlow::zero_grads() const {
  std::vector<MlpParams> grads;
  for (const MlpParams* p : param_blocks()) grads.push_back(p->zeros_like());
  return grads;
}

CondAffineFlow::CondAffineFlow(const std::vector<int>& hidden, const Scaler& cond_scaler,
                               Rng& init_rng)
    : cond_scaler_(cond_scaler) {
  std::vector<int> dims;
  dims.push_back(static_cast<int>(cond_scaler.mean.size()));
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  scale_net_ = init_default(dims, init_rng);
  mean_net_ = init_default(dims, init_rng);
}

CondAffineFlow::CondAffineFlow(MlpParams scale_net, MlpParams mean_net, Scaler cond_scaler)
    : scale_net_(std::move(scale_net)),
      mean_net_(std::move(mean_net)),
      cond_scaler_(std::move(cond_scaler)) {}

double CondAffineFlow::scale(const Vec& s) const {
  return std::exp(mlp_forward(scale_net_, scaler_apply(cond_scaler_, s))[0]);
}

double CondAffineFlow::mean(const Vec& s) const {
  return mlp_forward(mean_net_, scaler_apply(cond_scaler_, s))[0];
}

Vec CondAffineFlow::to_fg(const Vec& z, const Vec& s, double& logdet) const {
  const Vec cond = scaler_apply(cond_scaler_, s);
  const double raw = mlp_forward(scale_net_, cond)[0];
  const double mu = mlp_forward(mean_net_, cond)[0];
  logdet = raw;
  Vec out(1);
  out[0] = z[0] * std::exp(raw) + mu;
  return out;
}

Vec CondAffineFlow::to_latent(const Vec& x_fg, const Vec& s, double& logdet) const {
  const Vec cond = scaler_apply(cond_scaler_, s);
  const double raw = mlp_forward(scale_net_, cond)[0];
  const double mu = mlp_forward(mean_net_, cond)[0];
  logdet = -raw;
  Vec out(1);
  out[0] = (x_fg[0] - mu) * std::exp(-raw);
  return out;
}

std::vector<MlpParams*> CondAffineFlow::param_blocks() { return {&scale_net_, &mean_net_}; }

std::vector<const MlpParams*> CondAffineFlow::param_blocks() const {
  return {&scale_net_, &mean_net_};
}

double CondAffineFlow::example_loss_grad(const Vec& x_fg, const Vec& s, double weight,
                                         std::vector<MlpParams>& grads) const {
  const Eigen::MatrixXd cond = scaler_apply(cond_scaler_, s);
  MlpCache scale_cache, mean_cache;
  const double raw = mlp_forward(scale_net_, cond, scale_cache)(0, 0);
  const double mu = mlp_forward(mean_net_, cond, mean_cache)(0, 0);
  const double z = (x_fg[0] - mu) * std::exp(-raw);
  const double loss = 0.5 * z * z + 0.5 * kLog2Pi + raw;
  // d loss / d raw = 1 - z^2, d loss / d mu = -z / scale.
  Eigen::MatrixXd up(1, 1);
  up(0, 0) = weight * (1.0 - z * z);
  mlp_backward(scale_net_, scale_cache, up, grads[0]);
  up(0, 0) = -weight * z * std::exp(-raw);
  mlp_backward(mean_net_, mean_cache, up, grads[1]);
  return loss;
}

Vec CondAffineFlow::generate(const Vec& z, const Vec& s, double& logdet,
                             std::unique_ptr<FlowCache>& cache) const {
  auto c = std::make_unique<AffineCache>();
  const Eigen::MatrixXd cond = scaler_apply(cond_scaler_, s);
  const double raw = mlp_forward(scale_net_, cond, c->scale_cache)(0, 0);
  const double mu = mlp_forward(mean_net_, cond, c->mean_cache)(0, 0);
  c->z = z[0];
  c->raw = raw;
  logdet = raw;
  Vec out(1);
  out[0] = z[0] * std::exp(raw) + mu;
  cache = std::move(c);
  return out;
}

void CondAffineFlow::generate_backward(const FlowCache& cache, const Vec& dloss_dxfg,
                                       double dloss_dlogdet, double weight,
                                       std::vector<MlpParams>& grads) const {
  const auto& c = static_cast<const AffineCache&>(cache);
  // x_fg = z e^{raw} + mu, logdet = raw.
  Eigen::MatrixXd up(1, 1);
  up(0, 0) = weight * (dloss_dxfg[0] * c.z * std::exp(c.raw) + dloss_dlogdet);
  mlp_backward(scale_net_, c.scale_cache, up, grads[0]);
  up(0, 0) = weight * dloss_dxfg[0];
  mlp_backward(mean_net_, c.mean_cache, up, grads[1]);
}

GaussianConditionalFlow::GaussianConditionalFlow(const GaussianSystem& system)
    : system_(&system), cond_dim_(system.cg_dim()) {
  const Mat cov = system.conditional_covariance() / system.beta();
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("GaussianConditionalFlow: conditional covariance not SPD");
  }
  chol_ = llt.matrixL();
  logdet_chol_ = chol_.diagonal().array().log().sum();
}

Vec GaussianConditionalFlow::to_fg(const Vec& z, const Vec& s, double& logdet) const {
  logdet = logdet_chol_;
  return system_->conditional_mean(s) + chol_ * z;
}

Vec GaussianConditionalFlow::to_latent(const Vec& x_fg, const Vec& s, double& logdet) const {
  logdet = -logdet_chol_;
  return chol_.triangularView<Eigen::Lower>().solve(x_fg - system_->conditional_mean(s));
}

double GaussianConditionalFlow::example_loss_grad(const Vec& x_fg, const Vec& s, double,
                                                  std::vector<MlpParams>&) const {
  return -log_prob(x_fg, s);
}

Vec GaussianConditionalFlow::generate(const Vec& z, const Vec& s, double& logdet,
                                      std::unique_ptr<FlowCache>& cache) const {
  cache.reset();
  return to_fg(z, s, logdet);
}

}  // namespace cgflow
