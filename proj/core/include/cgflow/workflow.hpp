#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cgflow/config.hpp"
#include "cgflow/flow.hpp"
#include "cgflow/metrics.hpp"
#include "cgflow/pmf.hpp"
#include "cgflow/sampler.hpp"

namespace cgflow {

class InterruptedError : public std::runtime_error {
 public:
  InterruptedError() : std::runtime_error("run interrupted") {}
};

struct IterationStats {
  int iteration = 0;
  long long energy_evals = 0;  // cumulative over the run
  long long mc_steps = 0;      // cumulative CG-space MC steps
  double flow_train_loss = 0.0;
  double flow_test_loss = 0.0;
  double pmf_kld = 0.0;
  int n_pmf_targets = 0;
};

struct RunReport {
  std::vector<IterationStats> iterations;
  long long total_energy_evals = 0;
  long long total_mc_steps = 0;
  double final_kld = std::numeric_limits<double>::quiet_NaN();
  std::string stop_reason;
  double wall_time_s = 0.0;

  std::string to_json() const;
  static RunReport from_json_text(const std::string& text);
  void save(const std::string& path) const;
  static RunReport load(const std::string& path);
};

struct RunHooks {
  std::function<bool()> interrupted;  // polled between phases
};

struct StoppingState {
  bool harvest_terminated = false;
  double kld = std::numeric_limits<double>::quiet_NaN();
  double kld_threshold = 0.0;  // <= 0 disables the criterion
};

// nullopt continues the workflow; otherwise the stop reason
// ("max_traj_len" | "kld_threshold").
std::optional<std::string> stopping_check(const StoppingState& state);

// The three-step active-learning cycle on the configured system: flow trained
// by energy on the newest conditions plus gamma-replay, PMF targets recomputed
// from copy records, ensemble retrained, high-error harvest extends the
// dataset. Writes run artifacts when cfg.out_dir is set.
RunReport run_active_learning(const RunConfig& cfg, const RunHooks& hooks = {});

// Grid conditioning: by-example init, then training by energy on a uniform CG
// grid (config-level 80/20 split); a single ensemble fit at the end.
RunReport run_grid_conditioning(const RunConfig& cfg, const RunHooks& hooks = {});

// Full-space Metropolis baseline; the PMF is the log-histogram of CG values
// over the metric grid, empty bins floored at 1e-12 relative mass.
RunReport run_mc_baseline(const RunConfig& cfg, const RunHooks& hooks = {});

// PMF regression targets from the valid train records of every config, with
// the shared additive constant removed (min subtraction).
struct PmfTargets {
  std::vector<Vec> s;
  std::vector<double> u;
};
PmfTargets recompute_pmf_targets(AlDataset& dataset, double beta, int n_clip);

std::unique_ptr<ConditionalFlow> make_flow(const FlowSettings& settings, int fg_dim,
                                           const Scaler& cond_scaler, Rng& init_rng);

std::unique_ptr<TargetSystem> make_system(const SystemConfig& cfg);

// Cascaded sampling behind the backmapped-density figure: s from the
// grid-normalized PMF, x_fg from the flow, full coordinates by reconstruction;
// log_density = log q(x_fg|s) + ln p(s).
struct BackmappedSamples {
  std::vector<Vec> x;
  std::vector<double> log_density;
};
BackmappedSamples sample_backmapped(const ConditionalFlow& flow, const std::vector<double>& grid_s,
                                    const std::vector<double>& grid_u, const TargetSystem& system,
                                    int n, Rng& rng);

}  // namespace cgflow
