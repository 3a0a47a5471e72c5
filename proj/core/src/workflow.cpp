#include "cgflow/workflow.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "cgflow/artifacts.hpp"
#include "cgflow/flow_training.hpp"
#include "cgflow/spline_flow.hpp"
#include "cgflow/version.hpp"

namespace cgflow {

namespace {

namespace fs = std::filesystem;

std::string itos(int v) { return std::to_string(v); }

// Run-directory side effects; inert when no out_dir is configured.
class ArtifactSink {
 public:
  ArtifactSink(const RunConfig& cfg, const std::string& command) : enabled_(!cfg.out_dir.empty()) {
    if (!enabled_) return;
    dir_ = cfg.out_dir;
    fs::create_directories(dir_);
    {
      std::ofstream out(dir_ / "config.resolved.ini");
      out << config_to_text(cfg);
    }
    manifest_.command = command;
    manifest_.config_hash = config_hash(cfg);
    manifest_.seed = cfg.seed;
    manifest_.code_version = kVersion;
    manifest_.status = "running";
    manifest_.artifacts["config"] = "config.resolved.ini";
    write_manifest(manifest_, dir_.string());
    log_.open(dir_ / "training_log.jsonl");
    manifest_.artifacts["training_log"] = "training_log.jsonl";
  }

  TrainLogFn train_log() {
    if (!enabled_) return {};
    return [this](const TrainLogEntry& e) {
      nlohmann::json j{{"iteration", e.iteration},
                       {"epoch", e.epoch},
                       {"mean_loss", e.mean_loss},
                       {"dropped", e.dropped},
                       {"grad_norm", e.grad_norm}};
      log_ << j.dump() << "\n";
    };
  }

  void log_harvest(int iteration, const HarvestResult& harvest) {
    if (!enabled_) return;
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : harvest.points) points.push_back(p[0]);
    nlohmann::json j{{"iteration", iteration},
                     {"harvest_points", points},
                     {"harvest_steps", harvest.raw_steps},
                     {"terminated", harvest.terminated}};
    log_ << j.dump() << "\n";
  }

  void add(const std::string& name, const std::string& rel) {
    if (enabled_) manifest_.artifacts[name] = rel;
  }
  fs::path path(const std::string& rel) const { return dir_ / rel; }
  bool enabled() const { return enabled_; }

  void finish(const RunReport& report) {
    if (!enabled_) return;
    report.save((dir_ / "report.json").string());
    manifest_.artifacts["report"] = "report.json";
    manifest_.status = "completed";
    write_manifest(manifest_, dir_.string());
  }

 private:
  bool enabled_;
  fs::path dir_;
  Manifest manifest_;
  std::ofstream log_;
};

void check_interrupt(const RunHooks& hooks) {
  if (hooks.interrupted && hooks.interrupted()) throw InterruptedError();
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

struct StartingData {
  std::vector<Vec> s;
  std::vector<Vec> x_fg;
  Scaler cond_scaler;
};

// Short full-space MC from the configured start; a random subset of the
// unique visited positions becomes both the by-example training set and the
// first AL conditioning group.
StartingData build_starting_dataset(const RunConfig& cfg, const TargetSystem& system) {
  Rng mc_rng = derive_rng(cfg.seed, "start-mc");
  Vec x0 = Eigen::Map<const Vec>(cfg.workflow.start_x.data(), cfg.workflow.start_x.size());
  const McPath path = mc_trajectory(
      x0, [&](const Vec& x) { return system.energy(x); }, system.beta(),
      cfg.workflow.start_mc_scale, cfg.workflow.start_mc_steps, mc_rng);

  std::vector<Vec> unique_states;
  std::map<std::vector<double>, bool> seen;
  for (Eigen::Index t = 0; t < path.states.cols(); ++t) {
    std::vector<double> key(path.states.col(t).begin(), path.states.col(t).end());
    if (seen.emplace(std::move(key), true).second) unique_states.emplace_back(path.states.col(t));
  }
  Rng pick_rng = derive_rng(cfg.seed, "start-pick");
  const std::size_t want =
      std::min<std::size_t>(cfg.workflow.start_samples, unique_states.size());
  StartingData data;
  for (const std::size_t i : sample_without_replacement(pick_rng, unique_states.size(), want)) {
    Vec s, fg;
    system.split(unique_states[i], s, fg);
    data.s.push_back(std::move(s));
    data.x_fg.push_back(std::move(fg));
  }
  Mat smat(data.s[0].size(), data.s.size());
  for (std::size_t i = 0; i < data.s.size(); ++i) smat.col(i) = data.s[i];
  data.cond_scaler = scaler_fit(smat);
  return data;
}

EnsembleConfig ensemble_config(const RunConfig& cfg) {
  EnsembleConfig ec;
  ec.n_models = cfg.pmf.n_models;
  ec.hidden = cfg.pmf.hidden;
  ec.lr = cfg.pmf.lr;
  ec.batch = cfg.pmf.batch;
  ec.epochs = cfg.pmf.epochs;
  ec.nu_lo = cfg.pmf.nu_lo;
  ec.nu_hi = cfg.pmf.nu_hi;
  ec.bagging = cfg.pmf.bagging == "split80" ? EnsembleConfig::Bagging::kSplit80
                                            : EnsembleConfig::Bagging::kBootstrap;
  ec.threads = resolve_threads(cfg.workflow.threads);
  return ec;
}

void write_iteration_pmf(ArtifactSink& art, int iteration, const std::vector<double>& grid,
                         const PmfEnsemble& ensemble) {
  if (!art.enabled()) return;
  Mat cols(1, grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) cols(0, i) = grid[i];
  Vec mean, sd;
  ensemble.predict_batch(cols, mean, sd);
  char name[64];
  std::snprintf(name, sizeof name, "pmf_iter_%03d.csv", iteration);
  write_pmf_csv(art.path(name).string(), grid, std::vector<double>(mean.begin(), mean.end()),
                std::vector<double>(sd.begin(), sd.end()));
  art.add(std::string("pmf_iter_") + itos(iteration), name);
}

void write_final_artifacts(ArtifactSink& art, const ConditionalFlow* flow,
                           const PmfEnsemble* ensemble, const AlDataset* dataset,
                           const std::vector<double>& grid, const std::vector<double>& truth) {
  if (!art.enabled()) return;
  write_truth_csv(art.path("pmf_truth.csv").string(), grid, truth);
  art.add("truth", "pmf_truth.csv");
  if (flow) {
    save_flow(*flow, art.path("flow.json").string());
    art.add("flow", "flow.json");
  }
  if (dataset) {
    dataset->save_json(art.path("dataset.json").string());
    art.add("dataset", "dataset.json");
  }
  if (ensemble) {
    save_ensemble(*ensemble, art.path("ensemble.json").string());
    art.add("ensemble", "ensemble.json");
    Mat cols(1, grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) cols(0, i) = grid[i];
    Vec mean, sd;
    ensemble->predict_batch(cols, mean, sd);
    write_pmf_csv(art.path("pmf.csv").string(), grid,
                  std::vector<double>(mean.begin(), mean.end()),
                  std::vector<double>(sd.begin(), sd.end()));
    art.add("pmf", "pmf.csv");
  }
}

}  // namespace

std::string RunReport::to_json() const {
  nlohmann::json j;
  j["iterations"] = nlohmann::json::array();
  for (const auto& it : iterations) {
    j["iterations"].push_back({{"iteration", it.iteration},
                               {"energy_evals", it.energy_evals},
                               {"mc_steps", it.mc_steps},
                               {"flow_train_loss", it.flow_train_loss},
                               {"flow_test_loss", it.flow_test_loss},
                               {"pmf_kld", it.pmf_kld},
                               {"n_pmf_targets", it.n_pmf_targets}});
  }
  j["total_energy_evals"] = total_energy_evals;
  j["total_mc_steps"] = total_mc_steps;
  j["final_kld"] = final_kld;
  j["stop_reason"] = stop_reason;
  j["wall_time_s"] = wall_time_s;
  return j.dump(2);
}

RunReport RunReport::from_json_text(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  RunReport r;
  for (const auto& ji : j.at("iterations")) {
    IterationStats it;
    it.iteration = ji.at("iteration").get<int>();
    it.energy_evals = ji.at("energy_evals").get<long long>();
    it.mc_steps = ji.at("mc_steps").get<long long>();
    it.flow_train_loss = ji.at("flow_train_loss").get<double>();
    it.flow_test_loss = ji.at("flow_test_loss").get<double>();
    it.pmf_kld = ji.at("pmf_kld").get<double>();
    it.n_pmf_targets = ji.at("n_pmf_targets").get<int>();
    r.iterations.push_back(it);
  }
  r.total_energy_evals = j.at("total_energy_evals").get<long long>();
  r.total_mc_steps = j.at("total_mc_steps").get<long long>();
  r.final_kld = j.at("final_kld").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                            : j.at("final_kld").get<double>();
  r.stop_reason = j.at("stop_reason").get<std::string>();
  r.wall_time_s = j.at("wall_time_s").get<double>();
  return r;
}

void RunReport::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << to_json();
}

RunReport RunReport::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::optional<std::string> stopping_check(const StoppingState& state) {
  if (state.harvest_terminated) return "max_traj_len";
  if (state.kld_threshold > 0.0 && std::isfinite(state.kld) && state.kld <= state.kld_threshold) {
    return "kld_threshold";
  }
  return std::nullopt;
}

PmfTargets recompute_pmf_targets(AlDataset& dataset, double beta, int n_clip) {
  PmfTargets targets;
  for (int g = 0; g < dataset.n_groups(); ++g) {
    for (auto& entry : dataset.group(g).configs) {
      std::vector<EnergyRecordSlot> slots;
      for (const auto& c : entry.copies) {
        if (c.train && c.record.valid) slots.push_back(c.record);
      }
      if (slots.empty()) continue;  // never visited (or test-only config)
      const auto est = pmf_estimate(entry.s, slots, beta, n_clip);
      targets.s.push_back(entry.s);
      targets.u.push_back(est.value);
    }
  }
  if (!targets.u.empty()) {
    const double mn = *std::min_element(targets.u.begin(), targets.u.end());
    for (auto& u : targets.u) u -= mn;
  }
  return targets;
}

std::unique_ptr<TargetSystem> make_system(const SystemConfig& cfg) {
  if (cfg.name == "muller_brown") return std::make_unique<MullerBrown>(cfg.beta);
  throw ConfigError("system.name: unknown system id '" + cfg.name + "'");
}

namespace {

// Degenerate single-condition runs fit a constant surface; the lone target is
// duplicated so the ensemble's two-target contract holds.
void pad_degenerate_targets(PmfTargets& t) {
  if (t.s.size() == 1) {
    t.s.push_back(t.s[0]);
    t.u.push_back(t.u[0]);
  }
}

}  // namespace

std::unique_ptr<ConditionalFlow> make_flow(const FlowSettings& settings, int fg_dim,
                                           const Scaler& cond_scaler, Rng& init_rng) {
  if (settings.type == "affine") {
    if (fg_dim != 1) throw ConfigError("flow.type affine requires a 1-D fine-grained space");
    return std::make_unique<CondAffineFlow>(settings.hidden, cond_scaler, init_rng);
  }
  RqSplineFlow::Options opts;
  opts.n_layers = settings.spline_layers;
  opts.n_bins = settings.spline_bins;
  opts.bound = settings.spline_bound;
  opts.hidden = settings.spline_hidden;
  return std::make_unique<RqSplineFlow>(fg_dim, opts, cond_scaler, init_rng);
}

BackmappedSamples sample_backmapped(const ConditionalFlow& flow, const std::vector<double>& grid_s,
                                    const std::vector<double>& grid_u, const TargetSystem& system,
                                    int n, Rng& rng) {
  const GridSampler sampler(grid_s, grid_u, system.beta());
  BackmappedSamples out;
  out.x.reserve(n);
  out.log_density.reserve(n);
  Vec s(1), z(flow.fg_dim());
  for (int i = 0; i < n; ++i) {
    s[0] = sampler.sample(rng);
    for (int d = 0; d < flow.fg_dim(); ++d) z[d] = normal01(rng);
    double logdet = 0.0;
    const Vec x_fg = flow.to_fg(z, s, logdet);
    const double log_q = -0.5 * z.squaredNorm() - 0.5 * 1.8378770664093454836 * flow.fg_dim() - logdet;
    out.x.push_back(system.reconstruct(x_fg, s));
    out.log_density.push_back(log_q + sampler.log_density(s[0]));
  }
  return out;
}

RunReport run_active_learning(const RunConfig& cfg, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto raw_system = make_system(cfg.system);
  CountingSystem system(*raw_system);
  const double beta = system.beta();
  const auto grid = linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.grid_points);
  // The PMF pipeline works in kBT units (U * beta): the ensemble's init
  // diversity and the 0.4 kBT trigger are calibrated to that scale.
  auto truth = ground_truth_pmf(*raw_system, grid);
  for (auto& u : truth) u *= beta;

  ArtifactSink art(cfg, "run-al");
  RunReport report;

  check_interrupt(hooks);
  const StartingData start = build_starting_dataset(cfg, system);

  Rng init_rng = derive_rng(cfg.seed, "flow-init");
  auto flow = make_flow(cfg.flow, system.fg_dim(), start.cond_scaler, init_rng);
  {
    ExampleTrainConfig ecfg;
    ecfg.epochs = cfg.flow.example_epochs;
    ecfg.batch = cfg.flow.example_batch;
    ecfg.lr = cfg.flow.example_lr;
    ecfg.iteration = 0;
    Rng ex_rng = derive_rng(cfg.seed, "train-example");
    train_by_example(*flow, start.x_fg, start.s, ecfg, ex_rng, art.train_log());
  }

  AlDataset dataset(cfg.sampler.k_copies, cfg.sampler.train_frac);
  {
    Rng ds_rng = derive_rng(cfg.seed, "dataset/0");
    dataset.add_group(start.s, ds_rng);
  }

  // First harvest round starts at the CG image of the global energy minimum.
  std::vector<Vec> prev_points;
  {
    Vec s0, fg0;
    system.split(MullerBrown::global_minimum(), s0, fg0);
    prev_points.push_back(s0);
  }

  std::optional<PmfEnsemble> ensemble;
  long long mc_steps = 0;

  for (int iter = 1; iter <= cfg.workflow.max_iterations; ++iter) {
    check_interrupt(hooks);
    const int newest = dataset.n_groups() - 1;

    EnergyTrainConfig ecfg;
    ecfg.epochs = iter == 1 ? cfg.flow.energy_epochs_first : cfg.flow.energy_epochs;
    ecfg.batch = cfg.flow.energy_batch;
    ecfg.lr = cfg.flow.energy_lr;
    ecfg.clip_norm = cfg.flow.clip_norm;
    ecfg.n_drop = cfg.flow.n_drop;
    ecfg.iteration = iter;
    Rng train_rng = derive_rng(cfg.seed, "train-energy/" + itos(iter));
    const auto records_fn = [&](int, Rng& rng) {
      auto recs = dataset.records_of(newest, true);
      for (const auto& [g, c] : dataset.replay_sample(newest, cfg.sampler.gamma, rng)) {
        const auto extra = dataset.records_of_config(g, c, true);
        recs.insert(recs.end(), extra.begin(), extra.end());
      }
      return recs;
    };
    const auto train_result =
        train_by_energy(*flow, records_fn, system, ecfg, train_rng, art.train_log());

    Rng test_rng = derive_rng(cfg.seed, "test-loss/" + itos(iter));
    const double test_loss =
        energy_test_loss(*flow, dataset.records_of(newest, false), system, test_rng);

    check_interrupt(hooks);
    PmfTargets targets = recompute_pmf_targets(dataset, beta, cfg.pmf.n_clip);
    for (auto& u : targets.u) u *= beta;  // regress in kBT units
    pad_degenerate_targets(targets);
    ensemble = PmfEnsemble::train(targets.s, targets.u, ensemble_config(cfg),
                                  derive_seed(cfg.seed, "ensemble/" + itos(iter)));
    const double kld = forward_kld_pmf(ensemble->mean_on_grid(grid), truth, 1.0);
    write_iteration_pmf(art, iter, grid, *ensemble);

    check_interrupt(hooks);
    HarvestConfig hcfg;
    hcfg.beta = 1.0;  // the ensemble PMF is already in kBT units
    hcfg.threshold = cfg.sampler.threshold_kt;
    hcfg.n_targets = cfg.sampler.n_targets;
    hcfg.n_parallel = cfg.sampler.n_parallel;
    hcfg.min_len = cfg.sampler.min_len;
    hcfg.max_len = cfg.sampler.max_len;
    hcfg.proposal_scale = cfg.sampler.proposal_scale;
    std::vector<McPath> dumps;
    const HarvestResult harvest =
        find_high_error(*ensemble, hcfg, prev_points, derive_seed(cfg.seed, "harvest/" + itos(iter)),
                        cfg.sampler.dump_trajectories ? &dumps : nullptr);
    art.log_harvest(iter, harvest);
    mc_steps += harvest.total_steps;
    if (cfg.sampler.dump_trajectories && art.enabled() && !dumps.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "trajectory_iter_%03d.csv", iter);
      write_trajectory_csv(art.path(name).string(), dumps[0]);
      art.add(std::string("trajectory_iter_") + itos(iter), name);
    }

    IterationStats stats;
    stats.iteration = iter;
    stats.energy_evals = system.count();
    stats.mc_steps = mc_steps;
    stats.flow_train_loss = train_result.final_mean_loss;
    stats.flow_test_loss = test_loss;
    stats.pmf_kld = kld;
    stats.n_pmf_targets = static_cast<int>(targets.s.size());
    report.iterations.push_back(stats);
    report.final_kld = kld;

    const auto stop = stopping_check({harvest.terminated, kld, cfg.workflow.kld_threshold});
    if (stop) {
      report.stop_reason = *stop;
      break;
    }
    if (iter == cfg.workflow.max_iterations) {
      report.stop_reason = "max_iterations";
      break;
    }

    prev_points = harvest.points;
    Rng broaden_rng = derive_rng(cfg.seed, "broaden/" + itos(iter));
    const auto new_configs =
        broaden(harvest.points, cfg.sampler.broaden_width, cfg.sampler.broaden_count, broaden_rng);
    Rng ds_rng = derive_rng(cfg.seed, "dataset/" + itos(iter));
    dataset.add_group(new_configs, ds_rng);
  }

  report.total_energy_evals = system.count();
  report.total_mc_steps = mc_steps;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_final_artifacts(art, flow.get(), ensemble ? &*ensemble : nullptr, &dataset, grid, truth);
  art.finish(report);
  return report;
}

RunReport run_grid_conditioning(const RunConfig& cfg, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto raw_system = make_system(cfg.system);
  CountingSystem system(*raw_system);
  const double beta = system.beta();
  const auto grid = linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.grid_points);
  auto truth = ground_truth_pmf(*raw_system, grid);
  for (auto& u : truth) u *= beta;  // kBT units, as in the AL workflow

  ArtifactSink art(cfg, "run-grid");
  RunReport report;

  check_interrupt(hooks);
  const StartingData start = build_starting_dataset(cfg, system);
  Rng init_rng = derive_rng(cfg.seed, "flow-init");
  auto flow = make_flow(cfg.flow, system.fg_dim(), start.cond_scaler, init_rng);
  {
    ExampleTrainConfig ecfg;
    ecfg.epochs = cfg.flow.example_epochs;
    ecfg.batch = cfg.flow.example_batch;
    ecfg.lr = cfg.flow.example_lr;
    Rng ex_rng = derive_rng(cfg.seed, "train-example");
    train_by_example(*flow, start.x_fg, start.s, ecfg, ex_rng, art.train_log());
  }

  // Uniform CG grid, split 80/20 at the config level.
  const auto grid_cond =
      linspace(cfg.workflow.grid_lo, cfg.workflow.grid_hi, cfg.workflow.grid_points);
  std::vector<Vec> conditions;
  for (const double s : grid_cond) {
    Vec v(1);
    v[0] = s;
    conditions.push_back(v);
  }
  std::vector<std::uint8_t> train_mask(conditions.size(), 0);
  {
    Rng split_rng = derive_rng(cfg.seed, "grid-split");
    const auto n_train = static_cast<std::size_t>(
        std::llround(cfg.workflow.grid_train_frac * conditions.size()));
    for (const std::size_t i :
         sample_without_replacement(split_rng, conditions.size(), n_train)) {
      train_mask[i] = 1;
    }
  }
  AlDataset dataset(cfg.sampler.k_copies, cfg.sampler.train_frac);
  dataset.add_group_config_split(conditions, train_mask);

  check_interrupt(hooks);
  EnergyTrainConfig ecfg;
  ecfg.epochs = cfg.workflow.grid_epochs;
  ecfg.batch = cfg.flow.energy_batch;
  ecfg.lr = cfg.flow.energy_lr;
  ecfg.clip_norm = cfg.flow.clip_norm;
  ecfg.n_drop = cfg.flow.n_drop;
  ecfg.iteration = 1;
  Rng train_rng = derive_rng(cfg.seed, "train-energy/1");
  const auto records_fn = [&](int, Rng&) { return dataset.records_of(0, true); };
  const auto train_result =
      train_by_energy(*flow, records_fn, system, ecfg, train_rng, art.train_log());
  Rng test_rng = derive_rng(cfg.seed, "test-loss/1");
  const double test_loss =
      energy_test_loss(*flow, dataset.records_of(0, false), system, test_rng);

  check_interrupt(hooks);
  PmfTargets targets = recompute_pmf_targets(dataset, beta, cfg.pmf.n_clip);
  for (auto& u : targets.u) u *= beta;  // regress in kBT units
  pad_degenerate_targets(targets);
  const PmfEnsemble ensemble = PmfEnsemble::train(targets.s, targets.u, ensemble_config(cfg),
                                                  derive_seed(cfg.seed, "ensemble/1"));
  const double kld = forward_kld_pmf(ensemble.mean_on_grid(grid), truth, 1.0);
  write_iteration_pmf(art, 1, grid, ensemble);

  IterationStats stats;
  stats.iteration = 1;
  stats.energy_evals = system.count();
  stats.mc_steps = 0;
  stats.flow_train_loss = train_result.final_mean_loss;
  stats.flow_test_loss = test_loss;
  stats.pmf_kld = kld;
  stats.n_pmf_targets = static_cast<int>(targets.s.size());
  report.iterations.push_back(stats);
  report.final_kld = kld;
  report.stop_reason = "grid_complete";
  report.total_energy_evals = system.count();
  report.total_mc_steps = 0;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_final_artifacts(art, flow.get(), &ensemble, &dataset, grid, truth);
  art.finish(report);
  return report;
}

RunReport run_mc_baseline(const RunConfig& cfg, const RunHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto raw_system = make_system(cfg.system);
  CountingSystem system(*raw_system);
  const double beta = system.beta();
  const auto grid = linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.grid_points);
  auto truth = ground_truth_pmf(*raw_system, grid);
  for (auto& u : truth) u *= beta;  // kBT units

  ArtifactSink art(cfg, "run-baseline");
  check_interrupt(hooks);

  Rng rng = derive_rng(cfg.seed, "baseline-mc");
  Vec x0 = Eigen::Map<const Vec>(cfg.workflow.start_x.data(), cfg.workflow.start_x.size());
  const McPath path = mc_trajectory(
      x0, [&](const Vec& x) { return system.energy(x); }, beta, cfg.workflow.baseline_scale,
      cfg.workflow.baseline_steps, rng);

  // Histogram of CG values on the metric grid; bins centered at grid points.
  const double width = grid[1] - grid[0];
  std::vector<double> counts(grid.size(), 0.0);
  Vec s, fg;
  double total = 0.0;
  for (Eigen::Index t = 0; t < path.states.cols(); ++t) {
    system.split(path.states.col(t), s, fg);
    const auto bin = static_cast<std::ptrdiff_t>(std::llround((s[0] - grid.front()) / width));
    if (bin >= 0 && bin < static_cast<std::ptrdiff_t>(grid.size())) {
      counts[bin] += 1.0;
      total += 1.0;
    }
  }
  if (total <= 0.0) throw std::runtime_error("run_mc_baseline: no CG samples on the metric grid");
  std::vector<double> model_pmf(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double mass = counts[i] > 0.0 ? counts[i] : 1e-12 * total;
    model_pmf[i] = -std::log(mass);  // kBT units
  }
  const double kld = forward_kld_pmf(model_pmf, truth, 1.0);

  RunReport report;
  report.final_kld = kld;
  report.stop_reason = "baseline_complete";
  report.total_energy_evals = system.count();
  report.total_mc_steps = 0;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (art.enabled()) {
    write_pmf_csv(art.path("pmf.csv").string(), grid, model_pmf,
                  std::vector<double>(grid.size(), 0.0));
    art.add("pmf", "pmf.csv");
    write_truth_csv(art.path("pmf_truth.csv").string(), grid, truth);
    art.add("truth", "pmf_truth.csv");
    if (cfg.sampler.dump_trajectories) {
      // CG projection of the full-space walk.
      McPath cg_path;
      cg_path.states.resize(1, path.states.cols());
      cg_path.values.resize(path.states.cols());
      cg_path.accepted = path.accepted;
      for (Eigen::Index t = 0; t < path.states.cols(); ++t) {
        system.split(path.states.col(t), s, fg);
        cg_path.states(0, t) = s[0];
        cg_path.values[t] = path.values[t];
      }
      write_trajectory_csv(art.path("trajectory_baseline.csv").string(), cg_path);
      art.add("trajectory_baseline", "trajectory_baseline.csv");
    }
  }
  art.finish(report);
  return report;
}

}  // namespace cgflow
