#include "cgflow/nnkernel.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cgflow {

namespace {

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) throw std::invalid_argument("MlpParams: need at least two layer dims");
  for (const int d : dims) {
    if (d <= 0) throw std::invalid_argument("MlpParams: non-positive layer dim");
  }
}

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace

MlpParams MlpParams::zeros(const std::vector<int>& dims) {
  check_dims(dims);
  MlpParams p;
  p.dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    p.weights.emplace_back(Eigen::MatrixXd::Zero(dims[l + 1], dims[l]));
    p.biases.emplace_back(Eigen::VectorXd::Zero(dims[l + 1]));
  }
  return p;
}

void MlpParams::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

double MlpParams::squared_norm() const {
  double acc = 0.0;
  for (const auto& w : weights) acc += w.squaredNorm();
  for (const auto& b : biases) acc += b.squaredNorm();
  return acc;
}

void MlpParams::add_scaled(const MlpParams& other, double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += factor * other.weights[l];
    biases[l] += factor * other.biases[l];
  }
}

MlpParams init_gaussian(const std::vector<int>& dims, double nu, Rng& rng) {
  MlpParams p = MlpParams::zeros(dims);
  for (auto& w : p.weights) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nu * normal01(rng);
  }
  for (auto& b : p.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = nu * normal01(rng);
  }
  return p;
}

MlpParams init_default(const std::vector<int>& dims, Rng& rng) {
  MlpParams p = MlpParams::zeros(dims);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double nu = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    auto& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nu * normal01(rng);
  }
  return p;
}

Eigen::MatrixXd mlp_forward(const MlpParams& net, const Eigen::MatrixXd& input, MlpCache& cache) {
  if (input.rows() != net.in_dim()) throw std::invalid_argument("mlp_forward: input dim mismatch");
  cache.acts.assign(1, input);
  Eigen::MatrixXd h = input;
  for (int l = 0; l < net.n_layers(); ++l) {
    Eigen::MatrixXd z = (net.weights[l] * h).colwise() + net.biases[l];
    h = (l + 1 == net.n_layers()) ? std::move(z) : sigmoid(z);
    cache.acts.push_back(h);
  }
  return h;
}

Eigen::MatrixXd mlp_forward(const MlpParams& net, const Eigen::MatrixXd& input) {
  if (input.rows() != net.in_dim()) throw std::invalid_argument("mlp_forward: input dim mismatch");
  Eigen::MatrixXd h = input;
  for (int l = 0; l < net.n_layers(); ++l) {
    Eigen::MatrixXd z = (net.weights[l] * h).colwise() + net.biases[l];
    h = (l + 1 == net.n_layers()) ? std::move(z) : sigmoid(z);
  }
  return h;
}

Eigen::VectorXd mlp_forward(const MlpParams& net, const Eigen::VectorXd& input) {
  return mlp_forward(net, Eigen::MatrixXd(input)).col(0);
}

Eigen::MatrixXd mlp_backward(const MlpParams& net, const MlpCache& cache,
                             const Eigen::MatrixXd& upstream, MlpParams& grad) {
  if (upstream.rows() != net.out_dim()) {
    throw std::invalid_argument("mlp_backward: upstream dim mismatch");
  }
  Eigen::MatrixXd u = upstream;
  Eigen::MatrixXd v;
  for (int l = net.n_layers() - 1; l >= 0; --l) {
    grad.weights[l].noalias() += u * cache.acts[l].transpose();
    grad.biases[l] += u.rowwise().sum();
    v.noalias() = net.weights[l].transpose() * u;
    if (l > 0) {
      const auto& a = cache.acts[l].array();
      u = (v.array() * a * (1.0 - a)).matrix();
    }
  }
  return v;
}

AdamState AdamState::create(const std::vector<int>& dims, double lr) {
  AdamState s;
  s.m = MlpParams::zeros(dims);
  s.v = MlpParams::zeros(dims);
  s.lr = lr;
  return s;
}

namespace {

void adam_update(Eigen::Ref<Eigen::MatrixXd> p, const Eigen::MatrixXd& g,
                 Eigen::Ref<Eigen::MatrixXd> m, Eigen::Ref<Eigen::MatrixXd> v,
                 const AdamState& st, double c1, double c2) {
  m.array() = st.beta1 * m.array() + (1.0 - st.beta1) * g.array();
  v.array() = st.beta2 * v.array() + (1.0 - st.beta2) * g.array().square();
  p.array() -= st.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
}

}  // namespace

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads) {
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    adam_update(params.weights[l], grads.weights[l], state.m.weights[l], state.v.weights[l], state,
                c1, c2);
    adam_update(params.biases[l], grads.biases[l], state.m.biases[l], state.v.biases[l], state, c1,
                c2);
  }
}

double global_grad_norm(std::span<const MlpParams> grads) {
  double acc = 0.0;
  for (const auto& g : grads) acc += g.squared_norm();
  return std::sqrt(acc);
}

double clip_grad_norm(std::span<MlpParams> grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (auto& w : g.weights) w *= factor;
      for (auto& b : g.biases) b *= factor;
    }
  }
  return norm;
}

Scaler Scaler::identity(int dim) {
  Scaler s;
  s.mean = Eigen::VectorXd::Zero(dim);
  s.std = Eigen::VectorXd::Ones(dim);
  return s;
}

Scaler scaler_fit(const Eigen::MatrixXd& data) {
  if (data.cols() == 0) throw std::invalid_argument("scaler_fit: empty data");
  Scaler s;
  s.mean = data.rowwise().mean();
  const Eigen::MatrixXd centered = data.colwise() - s.mean;
  s.std = (centered.array().square().rowwise().mean()).sqrt().matrix();
  s.std = s.std.cwiseMax(1e-8);
  return s;
}

Eigen::VectorXd scaler_apply(const Scaler& s, const Eigen::VectorXd& v) {
  return ((v - s.mean).array() / s.std.array()).matrix();
}

Eigen::MatrixXd scaler_apply(const Scaler& s, const Eigen::MatrixXd& v) {
  return ((v.colwise() - s.mean).array().colwise() / s.std.array()).matrix();
}

Eigen::VectorXd scaler_invert(const Scaler& s, const Eigen::VectorXd& v) {
  return (v.array() * s.std.array()).matrix() + s.mean;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.size();
  const auto cols = rows ? j[0].size() : 0;
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

void save_mlp(const MlpParams& net, const std::string& path) {
  nlohmann::json j;
  j["dims"] = net.dims;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    j["weights"].push_back(matrix_to_json(net.weights[l]));
    j["biases"].push_back(std::vector<double>(net.biases[l].begin(), net.biases[l].end()));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mlp: cannot open " + path);
  out << j.dump();
}

MlpParams load_mlp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mlp: cannot open " + path);
  nlohmann::json j;
  in >> j;
  MlpParams net = MlpParams::zeros(j.at("dims").get<std::vector<int>>());
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    net.weights[l] = matrix_from_json(j.at("weights")[l]);
    const auto b = j.at("biases")[l].get<std::vector<double>>();
    net.biases[l] = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
  }
  return net;
}

}  // namespace cgflow
