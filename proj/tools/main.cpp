#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <nlohmann/json.hpp>

#include "cgflow/artifacts.hpp"
#include "cgflow/config.hpp"
#include "cgflow/version.hpp"
#include "cgflow/workflow.hpp"

namespace fs = std::filesystem;
using namespace cgflow;

namespace {

std::atomic<bool> g_interrupted{false};

void handle_signal(int) { g_interrupted.store(true); }

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? parse_config_text("", args.overrides)
                                           : parse_config(args.config_path, args.overrides);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out_dir.empty()) {
    cfg.out_dir = args.out_dir;
  } else if (cfg.out_dir.empty()) {
    if (const char* root = std::getenv("CGFLOW_OUT_ROOT")) {
      cfg.out_dir = (fs::path(root) / ("run-" + std::to_string(cfg.seed))).string();
    }
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "Config file (INI); empty = defaults");
  cmd->add_option("-D,--define", args.overrides, "Override as section.key=value (repeatable)");
  cmd->add_option("-o,--out", args.out_dir, "Run output directory");
  cmd->add_option("-s,--seed", args.seed, "Master seed")->each([&](const std::string&) {
    args.seed_set = true;
  });
}

void mark_run_failed(const std::string& out_dir, const std::string& status) {
  if (out_dir.empty()) return;
  try {
    Manifest m = read_manifest(out_dir);
    m.status = status;
    write_manifest(m, out_dir);
  } catch (const std::exception&) {
    // no manifest yet; nothing to update
  }
}

int run_command(const CommonArgs& args, const std::string& name,
                RunReport (*runner)(const RunConfig&, const RunHooks&)) {
  RunConfig cfg = load_config(args);
  RunHooks hooks;
  hooks.interrupted = [] { return g_interrupted.load(); };
  try {
    const RunReport report = runner(cfg, hooks);
    std::cout << name << " finished: " << report.stop_reason
              << "  final_kld=" << report.final_kld
              << "  energy_evals=" << report.total_energy_evals
              << "  mc_steps=" << report.total_mc_steps << "  wall=" << std::fixed
              << std::setprecision(1) << report.wall_time_s << "s\n";
    if (!cfg.out_dir.empty()) std::cout << "artifacts in " << cfg.out_dir << "\n";
    return 0;
  } catch (const InterruptedError&) {
    mark_run_failed(cfg.out_dir, "interrupted");
    std::cerr << name << ": interrupted\n";
    return 1;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    mark_run_failed(cfg.out_dir, "failed");
    std::cerr << name << " failed: " << e.what() << "\n";
    return 1;
  }
}

RunConfig config_of_run(const std::string& run_dir, const Manifest& manifest) {
  const auto cfg_path = fs::path(run_dir) / "config.resolved.ini";
  if (!fs::exists(cfg_path)) {
    throw std::runtime_error("missing artifact: config.resolved.ini in " + run_dir);
  }
  RunConfig cfg = parse_config(cfg_path.string(), {});
  if (config_hash(cfg) != manifest.config_hash) {
    throw std::runtime_error("manifest config hash mismatch in " + run_dir +
                             " (config.resolved.ini was modified after the run)");
  }
  return cfg;
}

fs::path artifact_path(const std::string& run_dir, const Manifest& m, const std::string& name) {
  const auto it = m.artifacts.find(name);
  if (it == m.artifacts.end() || !fs::exists(fs::path(run_dir) / it->second)) {
    throw std::runtime_error("missing artifact: " + name + " in " + run_dir);
  }
  return fs::path(run_dir) / it->second;
}

int cmd_eval(const std::string& run_dir, std::uint64_t seed, bool seed_set) {
  const Manifest manifest = read_manifest(run_dir);
  const RunConfig cfg = config_of_run(run_dir, manifest);
  const auto system = make_system(cfg.system);
  const auto grid = linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.grid_points);
  // All PMF artifacts are in kBT units (U * beta).
  auto truth = ground_truth_pmf(*system, grid);
  for (auto& u : truth) u *= system->beta();
  const std::uint64_t eval_seed = seed_set ? seed : manifest.seed;

  double kld = std::numeric_limits<double>::quiet_NaN();
  if (manifest.artifacts.count("ensemble")) {
    const PmfEnsemble ensemble =
        load_ensemble(artifact_path(run_dir, manifest, "ensemble").string());
    kld = forward_kld_pmf(ensemble.mean_on_grid(grid), truth, 1.0);
  } else {
    const PmfCsv pmf = read_pmf_csv(artifact_path(run_dir, manifest, "pmf").string());
    kld = forward_kld_pmf(pmf.mean, truth, 1.0);
  }

  bool have_ess = false;
  EssResult ess;
  if (manifest.artifacts.count("flow") && manifest.artifacts.count("ensemble")) {
    const auto flow = load_flow(artifact_path(run_dir, manifest, "flow").string());
    const PmfEnsemble ensemble =
        load_ensemble(artifact_path(run_dir, manifest, "ensemble").string());
    const auto dense =
        linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.ess_grid_points);
    std::vector<double> dense_u = ensemble.mean_on_grid(dense);
    for (auto& u : dense_u) u /= system->beta();  // back to energy units
    Rng rng = derive_rng(eval_seed, "eval-ess");
    ess = reverse_ess(*flow, dense, dense_u, *system, cfg.metrics.ess_samples,
                      cfg.metrics.ess_clip, rng);
    have_ess = true;
  }

  std::cout << std::left << std::setw(6) << "iter" << std::setw(14) << "energy_evals"
            << std::setw(12) << "mc_steps" << std::setw(14) << "train_loss" << std::setw(14)
            << "test_loss" << std::setw(12) << "pmf_kld" << "\n";
  nlohmann::json per_iter = nlohmann::json::array();
  if (manifest.artifacts.count("report")) {
    const RunReport report = RunReport::load(artifact_path(run_dir, manifest, "report").string());
    for (const auto& it : report.iterations) {
      std::cout << std::left << std::setw(6) << it.iteration << std::setw(14) << it.energy_evals
                << std::setw(12) << it.mc_steps << std::setw(14) << std::setprecision(5)
                << it.flow_train_loss << std::setw(14) << it.flow_test_loss << std::setw(12)
                << std::setprecision(4) << it.pmf_kld << "\n";
      per_iter.push_back({{"iteration", it.iteration},
                          {"energy_evals", it.energy_evals},
                          {"mc_steps", it.mc_steps},
                          {"flow_train_loss", it.flow_train_loss},
                          {"flow_test_loss", it.flow_test_loss},
                          {"pmf_kld", it.pmf_kld}});
    }
  }
  std::cout << "\nforward KLD (PMF, " << grid.size() << "-point grid): " << std::setprecision(6)
            << kld << "\n";
  if (have_ess) {
    std::cout << "reverse ESS: " << std::setprecision(4) << ess.ess_percent << " % (" << ess.n
              << " samples, " << ess.clipped << " clipped)\n";
  } else {
    std::cout << "reverse ESS: - (run has no flow checkpoint)\n";
  }

  nlohmann::json out{{"forward_kld_pmf", kld}, {"per_iteration", per_iter}};
  if (have_ess) {
    out["reverse_ess_percent"] = ess.ess_percent;
    out["ess_samples"] = ess.n;
    out["ess_clipped"] = ess.clipped;
  }
  std::ofstream f(fs::path(run_dir) / "metrics.json");
  f << out.dump(2);
  std::cout << "wrote " << (fs::path(run_dir) / "metrics.json").string() << "\n";
  return 0;
}

int cmd_export(const std::string& run_dir, const std::string& what, const std::string& out_arg,
               int rows, std::uint64_t seed, bool seed_set) {
  const Manifest manifest = read_manifest(run_dir);
  const RunConfig cfg = config_of_run(run_dir, manifest);
  const fs::path out_dir = out_arg.empty() ? fs::path(run_dir) : fs::path(out_arg);
  fs::create_directories(out_dir);
  const std::uint64_t export_seed = seed_set ? seed : manifest.seed;

  if (what == "pmf") {
    if (manifest.artifacts.count("ensemble")) {
      const auto system = make_system(cfg.system);
      const auto grid =
          linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.grid_points);
      const PmfEnsemble ensemble =
          load_ensemble(artifact_path(run_dir, manifest, "ensemble").string());
      Mat cols(1, grid.size());
      for (std::size_t i = 0; i < grid.size(); ++i) cols(0, i) = grid[i];
      Vec mean, sd;
      ensemble.predict_batch(cols, mean, sd);
      write_pmf_csv((out_dir / "export_pmf.csv").string(), grid,
                    std::vector<double>(mean.begin(), mean.end()),
                    std::vector<double>(sd.begin(), sd.end()));
    } else {
      fs::copy_file(artifact_path(run_dir, manifest, "pmf"), out_dir / "export_pmf.csv",
                    fs::copy_options::overwrite_existing);
    }
    std::cout << "wrote " << (out_dir / "export_pmf.csv").string() << "\n";
    return 0;
  }
  if (what == "trajectory") {
    bool any = false;
    for (const auto& [name, rel] : manifest.artifacts) {
      if (name.rfind("trajectory", 0) == 0) {
        const fs::path src = fs::path(run_dir) / rel;
        const fs::path dst = out_dir / rel;
        if (!fs::exists(dst) || !fs::equivalent(src, dst)) {
          fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
        }
        std::cout << "wrote " << dst.string() << "\n";
        any = true;
      }
    }
    if (!any) {
      throw std::runtime_error(
          "trajectories not recorded for this run (set sampler.dump_trajectories=true)");
    }
    return 0;
  }
  if (what == "backmapped") {
    const auto system = make_system(cfg.system);
    const auto flow = load_flow(artifact_path(run_dir, manifest, "flow").string());
    const PmfEnsemble ensemble =
        load_ensemble(artifact_path(run_dir, manifest, "ensemble").string());
    const auto dense =
        linspace(cfg.metrics.grid_lo, cfg.metrics.grid_hi, cfg.metrics.ess_grid_points);
    std::vector<double> dense_u = ensemble.mean_on_grid(dense);
    for (auto& u : dense_u) u /= system->beta();  // energy units
    Rng rng = derive_rng(export_seed, "export-backmapped");
    const auto samples = sample_backmapped(*flow, dense, dense_u, *system, rows, rng);
    write_backmapped_csv((out_dir / "export_backmapped.csv").string(), samples.x,
                         samples.log_density);
    std::cout << "wrote " << (out_dir / "export_backmapped.csv").string() << "\n";
    return 0;
  }
  throw ConfigError("unknown export kind '" + what + "' (expected pmf|trajectory|backmapped)");
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);

  CLI::App app{"Conditional-flow coarse-graining workflows on analytic targets"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonArgs al_args, grid_args, base_args;
  auto* al = app.add_subcommand("run-al", "Active-learning workflow");
  add_common(al, al_args);
  auto* gridc = app.add_subcommand("run-grid", "Grid-conditioning workflow");
  add_common(gridc, grid_args);
  auto* base = app.add_subcommand("run-baseline", "Full-space MC histogram baseline");
  add_common(base, base_args);

  std::string eval_dir;
  std::uint64_t eval_seed = 0;
  bool eval_seed_set = false;
  auto* eval = app.add_subcommand("eval", "Recompute metrics from run artifacts");
  eval->add_option("run_dir", eval_dir, "Run directory")->required();
  eval->add_option("-s,--seed", eval_seed, "Seed for the ESS estimate")
      ->each([&](const std::string&) { eval_seed_set = true; });

  std::string export_dir, export_what, export_out;
  int export_rows = 100000;
  std::uint64_t export_seed = 0;
  bool export_seed_set = false;
  auto* exp = app.add_subcommand("export", "Export run artifacts as CSV");
  exp->add_option("run_dir", export_dir, "Run directory")->required();
  exp->add_option("-w,--what", export_what, "pmf|trajectory|backmapped")->required();
  exp->add_option("-o,--out", export_out, "Output directory (default: run dir)");
  exp->add_option("-n,--rows", export_rows, "Backmapped sample count");
  exp->add_option("-s,--seed", export_seed, "Seed for sampling exports")
      ->each([&](const std::string&) { export_seed_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (al->parsed()) return run_command(al_args, "run-al", &run_active_learning);
    if (gridc->parsed()) return run_command(grid_args, "run-grid", &run_grid_conditioning);
    if (base->parsed()) return run_command(base_args, "run-baseline", &run_mc_baseline);
    if (eval->parsed()) return cmd_eval(eval_dir, eval_seed, eval_seed_set);
    if (exp->parsed()) {
      return cmd_export(export_dir, export_what, export_out, export_rows, export_seed,
                        export_seed_set);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
