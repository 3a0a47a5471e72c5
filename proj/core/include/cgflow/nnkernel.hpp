#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "cgflow/rng.hpp"

namespace cgflow {

// Dense feed-forward network with sigmoid hidden activations and a linear
// output layer. Batched kernels take column-major sample batches (one column
// per sample). The same shape container doubles as a gradient accumulator.
struct MlpParams {
  std::vector<int> dims;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: dims[l+1] x dims[l]
  std::vector<Eigen::VectorXd> biases;   // biases[l]: dims[l+1]

  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  int n_layers() const { return static_cast<int>(weights.size()); }

  static MlpParams zeros(const std::vector<int>& dims);
  MlpParams zeros_like() const { return zeros(dims); }
  void set_zero();
  double squared_norm() const;
  void add_scaled(const MlpParams& other, double factor);
};

// All weights and biases ~ Normal(0, nu^2); used for PMF-ensemble diversity.
MlpParams init_gaussian(const std::vector<int>& dims, double nu, Rng& rng);
// Conventional default: weights ~ Normal(0, 1/fan_in), zero biases.
MlpParams init_default(const std::vector<int>& dims, Rng& rng);

struct MlpCache {
  // acts[0] is the input batch, acts[l+1] the output of layer l
  // (post-sigmoid for hidden layers, linear for the last).
  std::vector<Eigen::MatrixXd> acts;
};

Eigen::MatrixXd mlp_forward(const MlpParams& net, const Eigen::MatrixXd& input);
Eigen::MatrixXd mlp_forward(const MlpParams& net, const Eigen::MatrixXd& input, MlpCache& cache);
Eigen::VectorXd mlp_forward(const MlpParams& net, const Eigen::VectorXd& input);

// Exact reverse-mode gradients. `upstream` is dLoss/dOutput per sample;
// returns dLoss/dInput and accumulates parameter gradients into `grad`.
Eigen::MatrixXd mlp_backward(const MlpParams& net, const MlpCache& cache,
                             const Eigen::MatrixXd& upstream, MlpParams& grad);

struct AdamState {
  MlpParams m;
  MlpParams v;
  long long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState create(const std::vector<int>& dims, double lr);
};

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads);

double global_grad_norm(std::span<const MlpParams> grads);
// Scales all gradients by max_norm/norm when the global L2 norm exceeds it.
double clip_grad_norm(std::span<MlpParams> grads, double max_norm);

// Standard scaler v' = (v - mean) / std, population std with a 1e-8 floor.
struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Scaler identity(int dim);
};

Scaler scaler_fit(const Eigen::MatrixXd& data);  // columns are samples
Eigen::VectorXd scaler_apply(const Scaler& s, const Eigen::VectorXd& v);
Eigen::MatrixXd scaler_apply(const Scaler& s, const Eigen::MatrixXd& v);
Eigen::VectorXd scaler_invert(const Scaler& s, const Eigen::VectorXd& v);

// Parameter (de)serialization; 64-bit values round-trip bit-exactly.
void save_mlp(const MlpParams& net, const std::string& path);
MlpParams load_mlp(const std::string& path);

}  // namespace cgflow
