#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cgflow/flow_training.hpp"
#include "cgflow/pmf.hpp"

namespace cgflow {

struct McPath {
  Mat states;  // dim x (n_steps + 1), column 0 is the start
  std::vector<double> values;
  std::vector<std::uint8_t> accepted;  // per proposed step
  long long n_accepted = 0;
};

// Standard Metropolis with an isotropic Gaussian proposal of the given scale;
// the path records every step (repeats on rejection). Throws when the
// potential is non-finite at the start.
McPath mc_trajectory(const Vec& start, const std::function<double(const Vec&)>& potential,
                     double beta, double proposal_scale, long long n_steps, Rng& rng);

struct HarvestConfig {
  double beta = 0.1;
  double threshold = 4.0;  // ensemble std trigger, energy units
  int n_targets = 1;
  int n_parallel = 50;
  int min_len = 10;
  long long max_len = 30000;
  double proposal_scale = 0.1;
};

struct HarvestResult {
  std::vector<Vec> points;
  // Sum of all chain lengths; zeroed when the harvest terminated, matching the
  // reported-step convention that excludes the final max-length exploration.
  long long total_steps = 0;
  long long raw_steps = 0;
  bool terminated = false;
};

// Runs n_parallel Metropolis chains on the ensemble-mean PMF in lock-step
// rounds (acceptance uses the mean only; the std enters the trigger). A chain
// yields its current point once std > threshold and its length >= min_len,
// then goes inactive. Stops after n_targets points, or with a termination
// signal when any chain reaches max_len. Starts cycle when fewer than chains.
HarvestResult find_high_error(const PmfEnsemble& ensemble, const HarvestConfig& cfg,
                              const std::vector<Vec>& starts, std::uint64_t seed,
                              std::vector<McPath>* dumps = nullptr);

// Uniform broadening around each harvested point: an interval of the given
// width in 1-D CG spaces, a ball of radius width/2 otherwise.
std::vector<Vec> broaden(const std::vector<Vec>& points, double width, int n_per_point, Rng& rng);

struct CopySlot {
  EnergyRecordSlot record;
  bool train = false;
};

struct CgConfigEntry {
  Vec s;
  std::vector<CopySlot> copies;
};

struct DatasetGroup {
  std::vector<CgConfigEntry> configs;
};

// CG configurations grouped by AL iteration, each with k copy slots holding
// the latest (energy, log q) pair plus a train/test flag per record.
class AlDataset {
 public:
  AlDataset(int k_copies, double train_frac);

  // Expands each config to k records, shuffles them and splits train/test at
  // the record level. Appends as a new iteration group.
  void add_group(const std::vector<Vec>& configs, Rng& rng);
  // Config-level split used by grid conditioning: all records of a config
  // share its flag.
  void add_group_config_split(const std::vector<Vec>& configs,
                              const std::vector<std::uint8_t>& train_mask);

  int n_groups() const { return static_cast<int>(groups_.size()); }
  DatasetGroup& group(int i) { return groups_[i]; }
  const DatasetGroup& group(int i) const { return groups_[i]; }
  int k_copies() const { return k_; }
  double train_frac() const { return train_frac_; }

  long long total_records() const;
  long long train_record_count() const;

  // ceil(gamma * N) configs uniformly from groups older than current_group,
  // N = size of the current group; empty when there is no history.
  std::vector<std::pair<int, int>> replay_sample(int current_group, double gamma, Rng& rng) const;

  std::vector<EnergyRecordRef> records_of(int group_idx, bool train_flag);
  std::vector<EnergyRecordRef> records_of_config(int group_idx, int config_idx, bool train_flag);

  void save_json(const std::string& path) const;
  static AlDataset load_json(const std::string& path);

 private:
  int k_;
  double train_frac_;
  std::vector<DatasetGroup> groups_;
};

}  // namespace cgflow
