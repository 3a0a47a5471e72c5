#include "cgflow/flow_training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cgflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Above this, exp(-beta E) underflows to exactly zero in double precision:
// the sample sits in a forbidden region and is treated like an infinite
// energy (dropped from gradients, its record rejected).
constexpr double kMaxBetaEnergy = 700.0;

Vec draw_latent(int dim, Rng& rng) {
  Vec z(dim);
  for (int i = 0; i < dim; ++i) z[i] = normal01(rng);
  return z;
}

std::vector<AdamState> make_optimizers(ConditionalFlow& flow, double lr) {
  std::vector<AdamState> opts;
  for (const MlpParams* p : flow.param_blocks()) opts.push_back(AdamState::create(p->dims, lr));
  return opts;
}

void apply_adam(std::vector<AdamState>& opts, std::vector<MlpParams*>& params,
                const std::vector<MlpParams>& grads) {
  for (std::size_t i = 0; i < params.size(); ++i) adam_step(opts[i], *params[i], grads[i]);
}

}  // namespace

double train_by_example(ConditionalFlow& flow, const std::vector<Vec>& x_fg,
                        const std::vector<Vec>& s, const ExampleTrainConfig& cfg, Rng& rng,
                        const TrainLogFn& log) {
  if (x_fg.empty() || x_fg.size() != s.size()) {
    throw std::invalid_argument("train_by_example: empty or mismatched sample set");
  }
  auto params = flow.param_blocks();
  auto opts = make_optimizers(flow, cfg.lr);
  std::vector<MlpParams> grads = flow.zero_grads();
  std::vector<std::size_t> order(x_fg.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double acc = 0.0;
    double norm = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch) {
      const std::size_t m = std::min<std::size_t>(cfg.batch, order.size() - at);
      for (auto& g : grads) g.set_zero();
      double batch_loss = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t i = order[at + j];
        batch_loss += flow.example_loss_grad(x_fg[i], s[i], 1.0 / m, grads);
      }
      batch_loss /= m;
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train_by_example: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      norm += global_grad_norm({grads.data(), grads.size()});
      for (std::size_t b = 0; b < params.size(); ++b) adam_step(opts[b], *params[b], grads[b]);
      acc += batch_loss;
      ++batches;
    }
    epoch_loss = acc / batches;
    if (log) log({cfg.iteration, epoch, epoch_loss, 0, norm / batches});
  }
  return epoch_loss;
}

EnergyTrainResult train_by_energy(ConditionalFlow& flow, const EpochRecordsFn& records_fn,
                                  const TargetSystem& system, const EnergyTrainConfig& cfg,
                                  Rng& rng, const TrainLogFn& log) {
  if (cfg.n_drop >= cfg.batch) {
    throw std::invalid_argument("train_by_energy: n_drop must be smaller than the batch size");
  }
  auto params = flow.param_blocks();
  auto opts = make_optimizers(flow, cfg.lr);
  std::vector<MlpParams> grads = flow.zero_grads();
  const double beta = system.beta();
  const int fg = flow.fg_dim();

  EnergyTrainResult result;
  struct Sample {
    double loss;
    Vec grad_fg;
    std::unique_ptr<FlowCache> cache;
    bool usable;
  };
  std::vector<Sample> batch(cfg.batch);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<EnergyRecordRef> records = records_fn(epoch, rng);
    if (records.empty()) throw std::invalid_argument("train_by_energy: no records for epoch");
    shuffle_in_place(records, rng);

    double epoch_loss = 0.0;
    long long epoch_kept = 0;
    int epoch_dropped = 0;
    double norm_acc = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < records.size(); at += cfg.batch) {
      const std::size_t m = std::min<std::size_t>(cfg.batch, records.size() - at);
      for (std::size_t j = 0; j < m; ++j) {
        const EnergyRecordRef& rec = records[at + j];
        Sample& smp = batch[j];
        const Vec z = draw_latent(fg, rng);
        double logdet = 0.0;
        const Vec x_fg = flow.generate(z, *rec.s, logdet, smp.cache);
        const double e = system.energy(system.reconstruct(x_fg, *rec.s));
        const bool in_support = std::isfinite(e) && beta * e <= kMaxBetaEnergy;
        smp.loss = beta * e - logdet;
        rec.slot->energy = e;
        rec.slot->log_q = -0.5 * z.squaredNorm() - 0.5 * kLog2Pi * fg - logdet;
        rec.slot->valid = in_support;
        ++result.samples_drawn;
        smp.usable = in_support && std::isfinite(smp.loss);
        if (smp.usable) {
          smp.grad_fg = beta * system.energy_gradient_fg(x_fg, *rec.s);
          smp.usable = smp.grad_fg.allFinite();
        }
      }
      // Filter: non-finite samples always go; then the n_drop highest losses.
      std::vector<std::size_t> kept;
      for (std::size_t j = 0; j < m; ++j) {
        if (batch[j].usable) kept.push_back(j);
      }
      if (kept.empty()) {
        throw std::runtime_error("train_by_energy: flow left support (all-batch +inf losses)");
      }
      int drop = std::min<int>(cfg.n_drop, static_cast<int>(kept.size()) - 1);
      if (drop > 0) {
        std::sort(kept.begin(), kept.end(),
                  [&](std::size_t a, std::size_t b) { return batch[a].loss < batch[b].loss; });
        kept.resize(kept.size() - drop);
      }
      epoch_dropped += static_cast<int>(m - kept.size());

      for (auto& g : grads) g.set_zero();
      const double w = 1.0 / static_cast<double>(kept.size());
      double batch_loss = 0.0;
      for (const std::size_t j : kept) {
        flow.generate_backward(*batch[j].cache, batch[j].grad_fg, -1.0, w, grads);
        batch_loss += batch[j].loss;
      }
      norm_acc += clip_grad_norm({grads.data(), grads.size()}, cfg.clip_norm);
      apply_adam(opts, params, grads);
      epoch_loss += batch_loss;
      epoch_kept += static_cast<long long>(kept.size());
      ++batches;
    }
    result.final_mean_loss = epoch_loss / static_cast<double>(epoch_kept);
    result.dropped_total += epoch_dropped;
    if (log) log({cfg.iteration, epoch, result.final_mean_loss, epoch_dropped, norm_acc / batches});
  }
  return result;
}

std::vector<EnergyRecordRef> EnergyCopySet::all_records() {
  std::vector<EnergyRecordRef> out;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    for (auto& slot : slots[i]) out.push_back({&conditions[i], &slot});
  }
  return out;
}

EnergyCopySet make_copy_set(const std::vector<Vec>& conditions, int k) {
  EnergyCopySet set;
  set.conditions = conditions;
  set.slots.assign(conditions.size(), std::vector<EnergyRecordSlot>(k));
  return set;
}

double energy_test_loss(const ConditionalFlow& flow, const std::vector<EnergyRecordRef>& records,
                        const TargetSystem& system, Rng& rng) {
  if (records.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double beta = system.beta();
  const int fg = flow.fg_dim();
  double acc = 0.0;
  long long n = 0;
  for (const auto& rec : records) {
    const Vec z = draw_latent(fg, rng);
    double logdet = 0.0;
    const Vec x_fg = flow.to_fg(z, *rec.s, logdet);
    const double loss = beta * system.energy(system.reconstruct(x_fg, *rec.s)) - logdet;
    if (std::isfinite(loss)) {
      acc += loss;
      ++n;
    }
  }
  return n ? acc / n : std::numeric_limits<double>::infinity();
}

}  // namespace cgflow
