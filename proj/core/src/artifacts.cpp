#include "cgflow/artifacts.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cgflow/version.hpp"

namespace cgflow {

namespace {

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    out_.precision(17);
  }
  template <typename... Args>
  void row(Args... args) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, out_ << args), ...);
    out_ << "\n";
  }
  void header(const std::string& h) { out_ << h << "\n"; }

 private:
  std::ofstream out_;
};

nlohmann::json mlp_json(const MlpParams& net) {
  nlohmann::json j;
  j["dims"] = net.dims;
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    nlohmann::json flat = nlohmann::json::array();
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    j["weights"].push_back(std::move(flat));
    j["biases"].push_back(std::vector<double>(net.biases[l].begin(), net.biases[l].end()));
  }
  return j;
}

MlpParams mlp_from(const nlohmann::json& j) {
  MlpParams net = MlpParams::zeros(j.at("dims").get<std::vector<int>>());
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    auto& w = net.weights[l];
    const auto& flat = j.at("weights")[l];
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[i++].get<double>();
    }
    const auto b = j.at("biases")[l].get<std::vector<double>>();
    net.biases[l] = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
  }
  return net;
}

nlohmann::json scaler_json(const Scaler& s) {
  return {{"mean", std::vector<double>(s.mean.begin(), s.mean.end())},
          {"std", std::vector<double>(s.std.begin(), s.std.end())}};
}

Scaler scaler_from(const nlohmann::json& j) {
  Scaler s;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto d = j.at("std").get<std::vector<double>>();
  s.mean = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  s.std = Eigen::Map<const Eigen::VectorXd>(d.data(), d.size());
  return s;
}

void dump_to(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump();
}

nlohmann::json load_from(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace

void write_pmf_csv(const std::string& path, const std::vector<double>& s,
                   const std::vector<double>& mean, const std::vector<double>& std) {
  CsvWriter csv(path);
  csv.header("s,mean,std");
  for (std::size_t i = 0; i < s.size(); ++i) csv.row(s[i], mean[i], std[i]);
}

void write_truth_csv(const std::string& path, const std::vector<double>& s,
                     const std::vector<double>& u) {
  CsvWriter csv(path);
  csv.header("s,U");
  for (std::size_t i = 0; i < s.size(); ++i) csv.row(s[i], u[i]);
}

void write_trajectory_csv(const std::string& path, const McPath& p) {
  CsvWriter csv(path);
  csv.header("step,s,U,accepted");
  for (Eigen::Index t = 0; t < p.states.cols(); ++t) {
    csv.row(t, p.states(0, t), p.values[t], t == 0 ? 1 : int(p.accepted[t - 1]));
  }
}

void write_backmapped_csv(const std::string& path, const std::vector<Vec>& x,
                          const std::vector<double>& log_density) {
  CsvWriter csv(path);
  csv.header("x1,x2,logdensity");
  for (std::size_t i = 0; i < x.size(); ++i) csv.row(x[i][0], x[i][1], log_density[i]);
}

PmfCsv read_pmf_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  PmfCsv out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double s, m, sd;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &s, &m, &sd) != 3) {
      throw std::runtime_error("malformed pmf csv row in " + path);
    }
    out.s.push_back(s);
    out.mean.push_back(m);
    out.std.push_back(sd);
  }
  return out;
}

void save_flow(const ConditionalFlow& flow, const std::string& path) {
  nlohmann::json j;
  j["type"] = flow.type_name();
  if (const auto* affine = dynamic_cast<const CondAffineFlow*>(&flow)) {
    j["scaler"] = scaler_json(affine->cond_scaler());
    j["scale_net"] = mlp_json(affine->scale_net());
    j["mean_net"] = mlp_json(affine->mean_net());
  } else if (const auto* spline = dynamic_cast<const RqSplineFlow*>(&flow)) {
    j["scaler"] = scaler_json(spline->cond_scaler());
    j["fg_dim"] = spline->fg_dim();
    j["bins"] = spline->n_bins();
    j["bound"] = spline->bound();
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : spline->layers()) {
      j["layers"].push_back({{"mask", layer.transform_mask}, {"net", mlp_json(layer.net)}});
    }
  } else {
    throw std::runtime_error("save_flow: unsupported flow type " + flow.type_name());
  }
  dump_to(j, path);
}

std::unique_ptr<ConditionalFlow> load_flow(const std::string& path) {
  const nlohmann::json j = load_from(path);
  const std::string type = j.at("type").get<std::string>();
  if (type == "affine") {
    return std::make_unique<CondAffineFlow>(mlp_from(j.at("scale_net")), mlp_from(j.at("mean_net")),
                                            scaler_from(j.at("scaler")));
  }
  if (type == "rq_spline") {
    std::vector<RqSplineFlow::Layer> layers;
    for (const auto& jl : j.at("layers")) {
      RqSplineFlow::Layer layer;
      layer.transform_mask = jl.at("mask").get<std::vector<std::uint8_t>>();
      layer.net = mlp_from(jl.at("net"));
      layers.push_back(std::move(layer));
    }
    return std::make_unique<RqSplineFlow>(j.at("fg_dim").get<int>(), j.at("bins").get<int>(),
                                          j.at("bound").get<double>(), std::move(layers),
                                          scaler_from(j.at("scaler")));
  }
  throw std::runtime_error("load_flow: unknown flow type " + type);
}

void save_ensemble(const PmfEnsemble& ensemble, const std::string& path) {
  nlohmann::json j;
  j["scaler"] = scaler_json(ensemble.input_scaler());
  j["models"] = nlohmann::json::array();
  for (const auto& m : ensemble.models()) j["models"].push_back(mlp_json(m));
  dump_to(j, path);
}

PmfEnsemble load_ensemble(const std::string& path) {
  const nlohmann::json j = load_from(path);
  std::vector<MlpParams> models;
  for (const auto& jm : j.at("models")) models.push_back(mlp_from(jm));
  return PmfEnsemble(scaler_from(j.at("scaler")), std::move(models));
}

void write_manifest(const Manifest& m, const std::string& run_dir) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["code_version"] = m.code_version.empty() ? kVersion : m.code_version;
  j["status"] = m.status;
  j["artifacts"] = m.artifacts;
  dump_to(j, (std::filesystem::path(run_dir) / "manifest.json").string());
}

Manifest read_manifest(const std::string& run_dir) {
  const auto path = std::filesystem::path(run_dir) / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("missing artifact: manifest.json in " + run_dir);
  }
  const nlohmann::json j = load_from(path.string());
  Manifest m;
  m.command = j.at("command").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.code_version = j.at("code_version").get<std::string>();
  m.status = j.at("status").get<std::string>();
  if (j.contains("artifacts")) {
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  }
  return m;
}

}  // namespace cgflow
