#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cgflow/flow_training.hpp"
#include "cgflow/nnkernel.hpp"

namespace cgflow {

struct PmfPointEstimate {
  Vec s;
  double value = 0.0;  // energy units; shared additive constant absorbed
  int n_samples = 0;
  int n_clipped = 0;
};

// Overflow-safe via max subtraction.
double logmeanexp(std::span<const double> values);

// Importance-weighted PMF at one CG point from stored (E, log q) records:
// l_i = -beta E_i - log q_i, the n_clip largest l_i clipped to the smallest
// among them, U = -(1/beta) logmeanexp(l). Throws when no finite record exists.
PmfPointEstimate pmf_estimate(const Vec& s, std::span<const EnergyRecordSlot> records, double beta,
                              int n_clip);

// Alternative estimator: arithmetic mean of G2_i = E_i + (1/beta) log q_i.
PmfPointEstimate pmf_estimate_alt(const Vec& s, std::span<const EnergyRecordSlot> records,
                                  double beta);

struct RegressorConfig {
  double lr = 1e-3;
  int batch = 64;
  int epochs = 50;
};

// Plain MSE regression of model(s) on per-sample targets; the surrogate-loss
// route that skips the per-s contraction.
void fit_regressor(MlpParams& model, const Scaler& input_scaler, const std::vector<Vec>& inputs,
                   const std::vector<double>& targets, const RegressorConfig& cfg, Rng& rng);

struct EnsembleConfig {
  int n_models = 10;
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  int batch = 5;
  int epochs = 1000;
  double nu_lo = 0.1;
  double nu_hi = 3.0;
  enum class Bagging { kBootstrap, kSplit80 } bagging = Bagging::kBootstrap;
  int threads = 1;
};

// Ensemble of independently initialized PMF regressors; the spread across
// models is the active-learning acquisition signal. Reinitialized from scratch
// on every train() call.
class PmfEnsemble {
 public:
  PmfEnsemble(Scaler input_scaler, std::vector<MlpParams> models);

  static PmfEnsemble train(const std::vector<Vec>& inputs, const std::vector<double>& targets,
                           const EnsembleConfig& cfg, std::uint64_t seed);

  // (mean, population std) across models.
  std::pair<double, double> predict(const Vec& s) const;
  void predict_batch(const Mat& s_columns, Vec& mean_out, Vec& std_out) const;
  std::vector<double> mean_on_grid(const std::vector<double>& s_grid) const;

  int n_models() const { return static_cast<int>(models_.size()); }
  int input_dim() const { return static_cast<int>(scaler_.mean.size()); }
  const Scaler& input_scaler() const { return scaler_; }
  const std::vector<MlpParams>& models() const { return models_; }

 private:
  Scaler scaler_;
  std::vector<MlpParams> models_;
};

}  // namespace cgflow
