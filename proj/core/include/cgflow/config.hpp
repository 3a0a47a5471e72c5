#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgflow {

// Raised for malformed config files, unknown keys and type mismatches;
// the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SystemConfig {
  std::string name = "muller_brown";
  double beta = 0.1;
};

struct FlowSettings {
  std::string type = "affine";  // affine | spline
  std::vector<int> hidden = {64, 64};
  int example_epochs = 500;
  int example_batch = 16;
  double example_lr = 5e-4;
  int energy_epochs_first = 12;
  int energy_epochs = 7;
  int energy_batch = 8;
  double energy_lr = 5e-3;
  double clip_norm = 20.0;
  int n_drop = 0;
  int spline_layers = 6;
  int spline_bins = 8;
  double spline_bound = 5.0;
  std::vector<int> spline_hidden = {128, 128};
};

struct PmfSettings {
  int n_models = 10;
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  int batch = 5;
  int epochs = 1000;
  double nu_lo = 0.1;
  double nu_hi = 3.0;
  int n_clip = 0;
  std::string bagging = "bootstrap";  // bootstrap | split80
};

struct SamplerSettings {
  double proposal_scale = 0.1;
  double threshold_kt = 0.4;
  int n_targets = 1;
  int n_parallel = 50;
  int min_len = 10;
  long long max_len = 30000;
  double broaden_width = 1.0;
  int broaden_count = 65;
  int k_copies = 30;
  double train_frac = 0.8;
  double gamma = 0.3;
  bool dump_trajectories = false;
};

struct WorkflowSettings {
  int max_iterations = 50;
  double kld_threshold = 0.0;  // 0 disables the KLD stopping criterion
  int start_mc_steps = 500;
  double start_mc_scale = 0.2;
  int start_samples = 100;
  std::vector<double> start_x = {-0.25, 1.5};
  int threads = 0;  // 0 = hardware concurrency
  int grid_points = 100;
  double grid_lo = -2.5;
  double grid_hi = 1.1;
  double grid_train_frac = 0.8;
  int grid_epochs = 60;
  long long baseline_steps = 1000000;
  double baseline_scale = 0.2;
};

struct MetricsSettings {
  int grid_points = 100;
  double grid_lo = -2.5;
  double grid_hi = 1.1;
  int ess_samples = 100000;
  int ess_clip = 10;
  int ess_grid_points = 2000;
};

struct RunConfig {
  SystemConfig system;
  FlowSettings flow;
  PmfSettings pmf;
  SamplerSettings sampler;
  WorkflowSettings workflow;
  MetricsSettings metrics;
  std::uint64_t seed = 0;
  std::string out_dir;
};

// Flat-sectioned key=value text ([section] headers, '#' comments). An empty
// file yields the full Muller-Brown default recipe. Overrides are dotted
// "section.key=value" strings applied last. Unknown keys and type mismatches
// raise ConfigError naming the exact key path.
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);
RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

// Canonical text render of a resolved config; parsing it back is the identity.
std::string config_to_text(const RunConfig& cfg);

// FNV-1a hash of the resolved config text, hex-encoded; stored in manifests.
std::string config_hash(const RunConfig& cfg);

}  // namespace cgflow
