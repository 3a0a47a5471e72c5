#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cgflow/flow.hpp"
#include "cgflow/pmf.hpp"
#include "cgflow/sampler.hpp"
#include "cgflow/spline_flow.hpp"

namespace cgflow {

// CSV formats below are contracts: header text and column order are fixed.
void write_pmf_csv(const std::string& path, const std::vector<double>& s,
                   const std::vector<double>& mean, const std::vector<double>& std);
void write_truth_csv(const std::string& path, const std::vector<double>& s,
                     const std::vector<double>& u);
void write_trajectory_csv(const std::string& path, const McPath& path_data);
void write_backmapped_csv(const std::string& path, const std::vector<Vec>& x,
                          const std::vector<double>& log_density);

struct PmfCsv {
  std::vector<double> s, mean, std;
};
PmfCsv read_pmf_csv(const std::string& path);

void save_flow(const ConditionalFlow& flow, const std::string& path);
std::unique_ptr<ConditionalFlow> load_flow(const std::string& path);

void save_ensemble(const PmfEnsemble& ensemble, const std::string& path);
PmfEnsemble load_ensemble(const std::string& path);

struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version;
  std::string status;  // running | completed | failed | interrupted
  std::map<std::string, std::string> artifacts;  // name -> relative path
};

void write_manifest(const Manifest& m, const std::string& run_dir);
Manifest read_manifest(const std::string& run_dir);

}  // namespace cgflow
