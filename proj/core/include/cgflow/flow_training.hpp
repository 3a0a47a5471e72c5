#pragma once

#include <functional>
#include <vector>

#include "cgflow/flow.hpp"

namespace cgflow {

// Latest (energy, log q) pair of one copy slot; written on every training
// visit, invalid until first visited or when the energy came back non-finite.
struct EnergyRecordSlot {
  double energy = 0.0;
  double log_q = 0.0;
  bool valid = false;
};

// One trainable record: a CG condition plus the slot receiving its values.
struct EnergyRecordRef {
  const Vec* s = nullptr;
  EnergyRecordSlot* slot = nullptr;
};

struct TrainLogEntry {
  int iteration = 0;
  int epoch = 0;
  double mean_loss = 0.0;
  int dropped = 0;
  double grad_norm = 0.0;
};
using TrainLogFn = std::function<void(const TrainLogEntry&)>;

struct ExampleTrainConfig {
  int epochs = 500;
  int batch = 16;
  double lr = 5e-4;
  int iteration = 0;  // tag for log entries
};

// Forward-KLD training on (x_fg, s) samples; minimizes -mean log q(x_fg | s).
// Returns the last epoch's mean loss; throws on a non-finite loss.
double train_by_example(ConditionalFlow& flow, const std::vector<Vec>& x_fg,
                        const std::vector<Vec>& s, const ExampleTrainConfig& cfg, Rng& rng,
                        const TrainLogFn& log = {});

struct EnergyTrainConfig {
  int epochs = 7;
  int batch = 8;
  double lr = 5e-3;
  double clip_norm = 20.0;
  int n_drop = 0;  // highest-loss removals per batch; +inf losses always drop
  int iteration = 0;
};

struct EnergyTrainResult {
  double final_mean_loss = 0.0;
  long long samples_drawn = 0;
  long long dropped_total = 0;
};

// Supplies the records to train on for a given epoch (replay selection is the
// caller's policy); the list is reshuffled here.
using EpochRecordsFn = std::function<std::vector<EnergyRecordRef>(int epoch, Rng& rng)>;

// Reverse-KLD training by energy: per record draw z, push it through the flow,
// score loss_i = beta E(x) - ln|det J_{z->x_fg}|, drop the n_drop highest
// losses per batch (plus non-finite ones), clip the global gradient norm, and
// take an Adam step. Each visited slot receives the latest (E, log q).
EnergyTrainResult train_by_energy(ConditionalFlow& flow, const EpochRecordsFn& records_fn,
                                  const TargetSystem& system, const EnergyTrainConfig& cfg,
                                  Rng& rng, const TrainLogFn& log = {});

// Convenience for plain condition lists: k copy slots per condition.
struct EnergyCopySet {
  std::vector<Vec> conditions;
  std::vector<std::vector<EnergyRecordSlot>> slots;  // [condition][copy]

  std::vector<EnergyRecordRef> all_records();
};
EnergyCopySet make_copy_set(const std::vector<Vec>& conditions, int k);

// Mean by-energy loss over records without gradients or slot updates.
double energy_test_loss(const ConditionalFlow& flow, const std::vector<EnergyRecordRef>& records,
                        const TargetSystem& system, Rng& rng);

}  // namespace cgflow
