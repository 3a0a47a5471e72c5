#include "cgflow/spline_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cgflow {

namespace {

constexpr double kMinBinFraction = 1e-3;
// softplus(kDerivOffset) == 1, so zero raw parameters give an identity spline.
const double kDerivOffset = std::log(std::numbers::e - 1.0);

double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }

struct LocalDerivs {
  // Partials of F in {y, ln y'} wrt the bin primitives.
  double theta = 0.0, slope = 0.0, d0 = 0.0, d1 = 0.0, height = 0.0, y_lo = 0.0;
};

}  // namespace

SplineBins make_spline_bins(const double* raw, int n_bins, double bound) {
  const int k = n_bins;
  SplineBins b;
  b.wp.resize(k);
  b.hp.resize(k);
  b.cwp.resize(k + 1);
  b.chp.resize(k + 1);
  b.xk.resize(k + 1);
  b.yk.resize(k + 1);
  b.deriv.resize(k + 1);

  const auto softmax_into = [&](const double* logits, Eigen::VectorXd& p) {
    double mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      p[i] = std::exp(logits[i] - mx);
      sum += p[i];
    }
    p /= sum;
  };
  softmax_into(raw, b.wp);
  softmax_into(raw + k, b.hp);

  const double alpha = 1.0 - k * kMinBinFraction;
  b.cwp[0] = 0.0;
  b.chp[0] = 0.0;
  for (int i = 1; i <= k; ++i) {
    b.cwp[i] = b.cwp[i - 1] + b.wp[i - 1];
    b.chp[i] = b.chp[i - 1] + b.hp[i - 1];
  }
  b.cwp[k] = 1.0;
  b.chp[k] = 1.0;
  for (int i = 0; i <= k; ++i) {
    b.xk[i] = -bound + 2.0 * bound * (i * kMinBinFraction + alpha * b.cwp[i]);
    b.yk[i] = -bound + 2.0 * bound * (i * kMinBinFraction + alpha * b.chp[i]);
  }
  b.deriv[0] = 1.0;
  b.deriv[k] = 1.0;
  for (int i = 1; i < k; ++i) b.deriv[i] = softplus(raw[2 * k + i - 1] + kDerivOffset);
  return b;
}

namespace {

int find_bin(const Eigen::VectorXd& knots, double v) {
  const int k = static_cast<int>(knots.size()) - 1;
  int lo = 0, hi = k;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (v < knots[mid]) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return std::clamp(lo, 0, k - 1);
}

void fill_bin(const SplineBins& bins, int k, RqsEval& e) {
  e.bin = k;
  e.width = bins.xk[k + 1] - bins.xk[k];
  e.height = bins.yk[k + 1] - bins.yk[k];
  e.slope = e.height / e.width;
  e.d0 = bins.deriv[k];
  e.d1 = bins.deriv[k + 1];
}

double eval_logd(const RqsEval& e) {
  const double t = e.theta, omt = 1.0 - e.theta;
  const double den = e.slope + (e.d1 + e.d0 - 2.0 * e.slope) * t * omt;
  const double num = e.d1 * t * t + 2.0 * e.slope * t * omt + e.d0 * omt * omt;
  return 2.0 * std::log(e.slope) + std::log(num) - 2.0 * std::log(den);
}

}  // namespace

RqsEval rqs_forward(const SplineBins& bins, double x, double bound) {
  RqsEval e;
  e.x = x;
  if (x < -bound || x > bound) {
    e.identity = true;
    e.y = x;
    e.logd = 0.0;
    return e;
  }
  fill_bin(bins, find_bin(bins.xk, x), e);
  e.theta = std::clamp((x - bins.xk[e.bin]) / e.width, 0.0, 1.0);
  const double t = e.theta, omt = 1.0 - t;
  const double a = e.slope * t * t + e.d0 * t * omt;
  const double den = e.slope + (e.d1 + e.d0 - 2.0 * e.slope) * t * omt;
  e.y = bins.yk[e.bin] + e.height * a / den;
  e.logd = eval_logd(e);
  return e;
}

RqsEval rqs_inverse(const SplineBins& bins, double y, double bound) {
  RqsEval e;
  e.y = y;
  if (y < -bound || y > bound) {
    e.identity = true;
    e.x = y;
    e.logd = 0.0;
    return e;
  }
  fill_bin(bins, find_bin(bins.yk, y), e);
  const double r = std::clamp((y - bins.yk[e.bin]) / e.height, 0.0, 1.0);
  const double mix = e.d1 + e.d0 - 2.0 * e.slope;
  const double qa = (e.slope - e.d0) + r * mix;
  const double qb = e.d0 - r * mix;
  const double qc = -r * e.slope;
  const double disc = std::sqrt(std::max(qb * qb - 4.0 * qa * qc, 0.0));
  e.theta = std::clamp(2.0 * qc / (-qb - disc), 0.0, 1.0);
  e.x = bins.xk[e.bin] + e.theta * e.width;
  e.logd = eval_logd(e);
  return e;
}

RqsPartials rqs_partials(const SplineBins& bins, const RqsEval& e, int n_bins, double bound) {
  const int k = n_bins;
  RqsPartials p;
  p.dy_draw = Eigen::VectorXd::Zero(3 * k - 1);
  p.dlogd_draw = Eigen::VectorXd::Zero(3 * k - 1);
  if (e.identity) return p;

  const double t = e.theta, omt = 1.0 - t;
  const double tt = t * omt;
  const double a = e.slope * t * t + e.d0 * tt;
  const double mix = e.d1 + e.d0 - 2.0 * e.slope;
  const double den = e.slope + mix * tt;
  const double num = e.d1 * t * t + 2.0 * e.slope * tt + e.d0 * omt * omt;
  const double da_dt = 2.0 * e.slope * t + e.d0 * (1.0 - 2.0 * t);
  const double dden_dt = mix * (1.0 - 2.0 * t);
  const double den2 = den * den;

  LocalDerivs y;
  y.theta = e.height * (da_dt * den - a * dden_dt) / den2;
  y.slope = e.height * (t * t * den - a * (1.0 - 2.0 * tt)) / den2;
  y.d0 = e.height * tt * (den - a) / den2;
  y.d1 = -e.height * a * tt / den2;
  y.height = a / den;
  y.y_lo = 1.0;

  LocalDerivs ld;
  ld.theta = (2.0 * e.d1 * t + 2.0 * e.slope * (1.0 - 2.0 * t) - 2.0 * e.d0 * omt) / num -
             2.0 * dden_dt / den;
  ld.slope = 2.0 / e.slope + 2.0 * tt / num - 2.0 * (1.0 - 2.0 * tt) / den;
  ld.d0 = omt * omt / num - 2.0 * tt / den;
  ld.d1 = t * t / num - 2.0 * tt / den;

  p.dy_dx = y.theta / e.width;
  p.dlogd_dx = ld.theta / e.width;

  // Chain primitives into the two touched knots of each coordinate.
  const auto knot_grads = [&](const LocalDerivs& f, double& gx_lo, double& gx_hi, double& gy_lo,
                              double& gy_hi) {
    gx_lo = f.theta * (t - 1.0) / e.width + f.slope * e.slope / e.width;
    gx_hi = -f.theta * t / e.width - f.slope * e.slope / e.width;
    gy_lo = f.y_lo - f.height - f.slope / e.width;
    gy_hi = f.height + f.slope / e.width;
  };
  // Knot positions depend on the softmax logits through the floored fractions.
  const double scale = 2.0 * bound * (1.0 - k * kMinBinFraction);
  const auto chain_logits = [&](double g_lo, double g_hi, const Eigen::VectorXd& probs,
                                const Eigen::VectorXd& cum, int offset, Eigen::VectorXd& out) {
    if (g_lo == 0.0 && g_hi == 0.0) return;
    const int kb = e.bin;
    for (int j = 0; j < k; ++j) {
      const double d_lo = probs[j] * ((j < kb ? 1.0 : 0.0) - cum[kb]);
      const double d_hi = probs[j] * ((j < kb + 1 ? 1.0 : 0.0) - cum[kb + 1]);
      out[offset + j] += scale * (g_lo * d_lo + g_hi * d_hi);
    }
  };
  // softplus'(rho) recovered from the derivative value itself.
  const auto chain_deriv = [&](double g0, double g1, Eigen::VectorXd& out) {
    if (e.bin >= 1) out[2 * k + e.bin - 1] += g0 * (1.0 - std::exp(-e.d0));
    if (e.bin + 1 <= k - 1) out[2 * k + e.bin] += g1 * (1.0 - std::exp(-e.d1));
  };

  double gx_lo, gx_hi, gy_lo, gy_hi;
  knot_grads(y, gx_lo, gx_hi, gy_lo, gy_hi);
  chain_logits(gx_lo, gx_hi, bins.wp, bins.cwp, 0, p.dy_draw);
  chain_logits(gy_lo, gy_hi, bins.hp, bins.chp, k, p.dy_draw);
  chain_deriv(y.d0, y.d1, p.dy_draw);

  knot_grads(ld, gx_lo, gx_hi, gy_lo, gy_hi);
  chain_logits(gx_lo, gx_hi, bins.wp, bins.cwp, 0, p.dlogd_draw);
  chain_logits(gy_lo, gy_hi, bins.hp, bins.chp, k, p.dlogd_draw);
  chain_deriv(ld.d0, ld.d1, p.dlogd_draw);

  return p;
}

struct RqSplineFlow::LayerState {
  Vec input;  // forward-orientation input
  MlpCache mlp_cache;
  Vec raw;
  std::vector<SplineBins> bins;
  std::vector<RqsEval> evals;
};

namespace {

struct SplineFlowCache final : FlowCache {
  std::vector<RqSplineFlow::LayerState> layers;
};

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

RqSplineFlow::RqSplineFlow(int fg_dim, const Options& opts, const Scaler& cond_scaler,
                           Rng& init_rng)
    : fg_dim_(fg_dim), n_bins_(opts.n_bins), bound_(opts.bound), cond_scaler_(cond_scaler) {
  if (fg_dim_ < 1) throw std::invalid_argument("RqSplineFlow: fg_dim must be >= 1");
  if (n_bins_ < 2 || n_bins_ * kMinBinFraction >= 1.0) {
    throw std::invalid_argument("RqSplineFlow: invalid bin count");
  }
  const int cdim = static_cast<int>(cond_scaler_.mean.size());
  for (int l = 0; l < opts.n_layers; ++l) {
    Layer layer;
    layer.transform_mask.resize(fg_dim_);
    int n_trans = 0;
    for (int d = 0; d < fg_dim_; ++d) {
      layer.transform_mask[d] = (fg_dim_ == 1) ? 1 : static_cast<std::uint8_t>((d + l) % 2 == 0);
      n_trans += layer.transform_mask[d];
    }
    const int n_id = fg_dim_ - n_trans;
    std::vector<int> dims;
    dims.push_back(n_id + cdim);
    dims.insert(dims.end(), opts.hidden.begin(), opts.hidden.end());
    dims.push_back(n_trans * (3 * n_bins_ - 1));
    layer.net = init_default(dims, init_rng);
    // Zero the output layer: the stack starts as the identity map.
    layer.net.weights.back().setZero();
    layer.net.biases.back().setZero();
    layers_.push_back(std::move(layer));
  }
}

RqSplineFlow::RqSplineFlow(int fg_dim, int n_bins, double bound, std::vector<Layer> layers,
                           Scaler cond_scaler)
    : fg_dim_(fg_dim),
      n_bins_(n_bins),
      bound_(bound),
      layers_(std::move(layers)),
      cond_scaler_(std::move(cond_scaler)) {}

Vec RqSplineFlow::layer_features(const Layer& layer, const Vec& x, const Vec& cond) const {
  Vec feat(layer.net.in_dim());
  int pos = 0;
  for (int d = 0; d < fg_dim_; ++d) {
    if (!layer.transform_mask[d]) feat[pos++] = x[d];
  }
  feat.tail(cond.size()) = cond;
  return feat;
}

Vec RqSplineFlow::apply_layer(int li, const Vec& x, const Vec& cond, bool forward, double& logdet,
                              LayerState* state) const {
  const Layer& layer = layers_[li];
  const Vec feat = layer_features(layer, x, cond);
  Vec raw;
  MlpCache cache;
  if (state) {
    raw = mlp_forward(layer.net, Eigen::MatrixXd(feat), cache).col(0);
  } else {
    raw = mlp_forward(layer.net, feat);
  }
  Vec out = x;
  const int stride = 3 * n_bins_ - 1;
  int ti = 0;
  std::vector<SplineBins> bins;
  std::vector<RqsEval> evals;
  for (int d = 0; d < fg_dim_; ++d) {
    if (!layer.transform_mask[d]) continue;
    SplineBins b = make_spline_bins(raw.data() + ti * stride, n_bins_, bound_);
    RqsEval e = forward ? rqs_forward(b, x[d], bound_) : rqs_inverse(b, x[d], bound_);
    out[d] = forward ? e.y : e.x;
    logdet += forward ? e.logd : -e.logd;
    if (state) {
      bins.push_back(std::move(b));
      evals.push_back(e);
    }
    ++ti;
  }
  if (state) {
    state->input = forward ? x : out;
    state->mlp_cache = std::move(cache);
    state->raw = std::move(raw);
    state->bins = std::move(bins);
    state->evals = std::move(evals);
  }
  return out;
}

Vec RqSplineFlow::to_fg(const Vec& z, const Vec& s, double& logdet) const {
  const Vec cond = scaler_apply(cond_scaler_, s);
  logdet = 0.0;
  Vec x = z;
  for (int l = 0; l < static_cast<int>(layers_.size()); ++l) {
    x = apply_layer(l, x, cond, true, logdet, nullptr);
  }
  return x;
}

Vec RqSplineFlow::to_latent(const Vec& x_fg, const Vec& s, double& logdet) const {
  const Vec cond = scaler_apply(cond_scaler_, s);
  logdet = 0.0;
  Vec x = x_fg;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    x = apply_layer(l, x, cond, false, logdet, nullptr);
  }
  return x;
}

std::vector<MlpParams*> RqSplineFlow::param_blocks() {
  std::vector<MlpParams*> out;
  for (auto& l : layers_) out.push_back(&l.net);
  return out;
}

std::vector<const MlpParams*> RqSplineFlow::param_blocks() const {
  std::vector<const MlpParams*> out;
  for (const auto& l : layers_) out.push_back(&l.net);
  return out;
}

Vec RqSplineFlow::generate(const Vec& z, const Vec& s, double& logdet,
                           std::unique_ptr<FlowCache>& cache) const {
  const Vec cond = scaler_apply(cond_scaler_, s);
  auto c = std::make_unique<SplineFlowCache>();
  c->layers.resize(layers_.size());
  logdet = 0.0;
  Vec x = z;
  for (int l = 0; l < static_cast<int>(layers_.size()); ++l) {
    x = apply_layer(l, x, cond, true, logdet, &c->layers[l]);
  }
  cache = std::move(c);
  return x;
}

void RqSplineFlow::generate_backward(const FlowCache& cache, const Vec& dloss_dxfg,
                                     double dloss_dlogdet, double weight,
                                     std::vector<MlpParams>& grads) const {
  const auto& c = static_cast<const SplineFlowCache&>(cache);
  Vec u = weight * dloss_dxfg;
  const double cld = weight * dloss_dlogdet;
  const int stride = 3 * n_bins_ - 1;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const Layer& layer = layers_[l];
    const LayerState& st = c.layers[l];
    Eigen::MatrixXd draw = Eigen::MatrixXd::Zero(layer.net.out_dim(), 1);
    Vec u_in(fg_dim_);
    int ti = 0;
    for (int d = 0; d < fg_dim_; ++d) {
      if (!layer.transform_mask[d]) {
        u_in[d] = u[d];
        continue;
      }
      const RqsPartials p = rqs_partials(st.bins[ti], st.evals[ti], n_bins_, bound_);
      draw.col(0).segment(ti * stride, stride) += u[d] * p.dy_draw + cld * p.dlogd_draw;
      u_in[d] = u[d] * p.dy_dx + cld * p.dlogd_dx;
      ++ti;
    }
    const Eigen::MatrixXd dfeat = mlp_backward(layer.net, st.mlp_cache, draw, grads[l]);
    int pos = 0;
    for (int d = 0; d < fg_dim_; ++d) {
      if (!layer.transform_mask[d]) u_in[d] += dfeat(pos++, 0);
    }
    u = std::move(u_in);
  }
}

double RqSplineFlow::example_loss_grad(const Vec& x_fg, const Vec& s, double weight,
                                       std::vector<MlpParams>& grads) const {
  const Vec cond = scaler_apply(cond_scaler_, s);
  const int n_layers = static_cast<int>(layers_.size());
  std::vector<LayerState> states(n_layers);
  double logdet_xz = 0.0;
  Vec x = x_fg;
  for (int l = n_layers - 1; l >= 0; --l) {
    x = apply_layer(l, x, cond, false, logdet_xz, &states[l]);
  }
  const Vec z = x;
  const double loss = 0.5 * z.squaredNorm() + 0.5 * kLog2Pi * fg_dim_ - logdet_xz;

  // The inverse pass ran layers L-1..0, so the chain z -> x_fg walks 0..L-1.
  // loss = 0.5|z|^2 + const + sum ln y'(x_layer), hence c = +weight below.
  Vec u = weight * z;
  const double cld = weight;
  const int stride = 3 * n_bins_ - 1;
  for (int l = 0; l < n_layers; ++l) {
    const Layer& layer = layers_[l];
    const LayerState& st = states[l];
    Eigen::MatrixXd draw = Eigen::MatrixXd::Zero(layer.net.out_dim(), 1);
    Vec u_out(fg_dim_);
    int ti = 0;
    for (int d = 0; d < fg_dim_; ++d) {
      if (!layer.transform_mask[d]) {
        u_out[d] = u[d];
        continue;
      }
      const RqsPartials p = rqs_partials(st.bins[ti], st.evals[ti], n_bins_, bound_);
      const double yprime = std::exp(st.evals[ti].logd);
      const double v = u[d] + cld * p.dlogd_dx;
      draw.col(0).segment(ti * stride, stride) += (-v / yprime) * p.dy_draw + cld * p.dlogd_draw;
      u_out[d] = v / yprime;
      ++ti;
    }
    const Eigen::MatrixXd dfeat = mlp_backward(layer.net, st.mlp_cache, draw, grads[l]);
    int pos = 0;
    for (int d = 0; d < fg_dim_; ++d) {
      if (!layer.transform_mask[d]) u_out[d] += dfeat(pos++, 0);
    }
    u = std::move(u_out);
  }
  return loss;
}

}  // namespace cgflow
