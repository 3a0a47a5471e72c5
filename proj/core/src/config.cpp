#include "cgflow/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cgflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  const auto i = static_cast<long long>(d);
  if (static_cast<double>(i) != d) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
  return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + ": expected a boolean, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<T>(parse(key, item)));
  }
  if (out.empty()) throw ConfigError("config key " + key + ": expected a list, got '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) {
      out += fmt(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeySpec {
  Setter set;
  Getter get;
};

// One registry drives parsing, validation and the canonical text render, so
// the three can never drift apart.
const std::map<std::string, KeySpec>& key_registry() {
  static const std::map<std::string, KeySpec> reg = [] {
    std::map<std::string, KeySpec> m;

#define CG_KEY(key, expr_set, expr_get)                                                   \
  m[key] = {[](RunConfig& c, const std::string& k, const std::string& v) {               \
              (void)k;                                                                    \
              (void)v;                                                                    \
              expr_set;                                                                   \
            },                                                                            \
            [](const RunConfig& c) { return expr_get; }}

    CG_KEY("system.name", c.system.name = v, c.system.name);
    CG_KEY("system.beta", c.system.beta = parse_double(k, v), fmt(c.system.beta));

    CG_KEY("flow.type", c.flow.type = v, c.flow.type);
    CG_KEY("flow.hidden", c.flow.hidden = parse_list<int>(k, v, parse_int),
           fmt_list(c.flow.hidden));
    CG_KEY("flow.example_epochs", c.flow.example_epochs = (int)parse_int(k, v),
           std::to_string(c.flow.example_epochs));
    CG_KEY("flow.example_batch", c.flow.example_batch = (int)parse_int(k, v),
           std::to_string(c.flow.example_batch));
    CG_KEY("flow.example_lr", c.flow.example_lr = parse_double(k, v), fmt(c.flow.example_lr));
    CG_KEY("flow.energy_epochs_first", c.flow.energy_epochs_first = (int)parse_int(k, v),
           std::to_string(c.flow.energy_epochs_first));
    CG_KEY("flow.energy_epochs", c.flow.energy_epochs = (int)parse_int(k, v),
           std::to_string(c.flow.energy_epochs));
    CG_KEY("flow.energy_batch", c.flow.energy_batch = (int)parse_int(k, v),
           std::to_string(c.flow.energy_batch));
    CG_KEY("flow.energy_lr", c.flow.energy_lr = parse_double(k, v), fmt(c.flow.energy_lr));
    CG_KEY("flow.clip_norm", c.flow.clip_norm = parse_double(k, v), fmt(c.flow.clip_norm));
    CG_KEY("flow.n_drop", c.flow.n_drop = (int)parse_int(k, v), std::to_string(c.flow.n_drop));
    CG_KEY("flow.spline_layers", c.flow.spline_layers = (int)parse_int(k, v),
           std::to_string(c.flow.spline_layers));
    CG_KEY("flow.spline_bins", c.flow.spline_bins = (int)parse_int(k, v),
           std::to_string(c.flow.spline_bins));
    CG_KEY("flow.spline_bound", c.flow.spline_bound = parse_double(k, v),
           fmt(c.flow.spline_bound));
    CG_KEY("flow.spline_hidden", c.flow.spline_hidden = parse_list<int>(k, v, parse_int),
           fmt_list(c.flow.spline_hidden));

    CG_KEY("pmf.n_models", c.pmf.n_models = (int)parse_int(k, v), std::to_string(c.pmf.n_models));
    CG_KEY("pmf.hidden", c.pmf.hidden = parse_list<int>(k, v, parse_int), fmt_list(c.pmf.hidden));
    CG_KEY("pmf.lr", c.pmf.lr = parse_double(k, v), fmt(c.pmf.lr));
    CG_KEY("pmf.batch", c.pmf.batch = (int)parse_int(k, v), std::to_string(c.pmf.batch));
    CG_KEY("pmf.epochs", c.pmf.epochs = (int)parse_int(k, v), std::to_string(c.pmf.epochs));
    CG_KEY("pmf.nu_lo", c.pmf.nu_lo = parse_double(k, v), fmt(c.pmf.nu_lo));
    CG_KEY("pmf.nu_hi", c.pmf.nu_hi = parse_double(k, v), fmt(c.pmf.nu_hi));
    CG_KEY("pmf.n_clip", c.pmf.n_clip = (int)parse_int(k, v), std::to_string(c.pmf.n_clip));
    CG_KEY("pmf.bagging", c.pmf.bagging = v, c.pmf.bagging);

    CG_KEY("sampler.proposal_scale", c.sampler.proposal_scale = parse_double(k, v),
           fmt(c.sampler.proposal_scale));
    CG_KEY("sampler.threshold_kT", c.sampler.threshold_kt = parse_double(k, v),
           fmt(c.sampler.threshold_kt));
    CG_KEY("sampler.n_targets", c.sampler.n_targets = (int)parse_int(k, v),
           std::to_string(c.sampler.n_targets));
    CG_KEY("sampler.n_parallel", c.sampler.n_parallel = (int)parse_int(k, v),
           std::to_string(c.sampler.n_parallel));
    CG_KEY("sampler.min_len", c.sampler.min_len = (int)parse_int(k, v),
           std::to_string(c.sampler.min_len));
    CG_KEY("sampler.max_len", c.sampler.max_len = parse_int(k, v),
           std::to_string(c.sampler.max_len));
    CG_KEY("sampler.broaden_width", c.sampler.broaden_width = parse_double(k, v),
           fmt(c.sampler.broaden_width));
    CG_KEY("sampler.broaden_count", c.sampler.broaden_count = (int)parse_int(k, v),
           std::to_string(c.sampler.broaden_count));
    CG_KEY("sampler.k_copies", c.sampler.k_copies = (int)parse_int(k, v),
           std::to_string(c.sampler.k_copies));
    CG_KEY("sampler.train_frac", c.sampler.train_frac = parse_double(k, v),
           fmt(c.sampler.train_frac));
    CG_KEY("sampler.gamma", c.sampler.gamma = parse_double(k, v), fmt(c.sampler.gamma));
    CG_KEY("sampler.dump_trajectories", c.sampler.dump_trajectories = parse_bool(k, v),
           c.sampler.dump_trajectories ? "true" : "false");

    CG_KEY("workflow.max_iterations", c.workflow.max_iterations = (int)parse_int(k, v),
           std::to_string(c.workflow.max_iterations));
    CG_KEY("workflow.kld_threshold", c.workflow.kld_threshold = parse_double(k, v),
           fmt(c.workflow.kld_threshold));
    CG_KEY("workflow.start_mc_steps", c.workflow.start_mc_steps = (int)parse_int(k, v),
           std::to_string(c.workflow.start_mc_steps));
    CG_KEY("workflow.start_mc_scale", c.workflow.start_mc_scale = parse_double(k, v),
           fmt(c.workflow.start_mc_scale));
    CG_KEY("workflow.start_samples", c.workflow.start_samples = (int)parse_int(k, v),
           std::to_string(c.workflow.start_samples));
    CG_KEY("workflow.start_x", c.workflow.start_x = parse_list<double>(k, v, parse_double),
           fmt_list(c.workflow.start_x));
    CG_KEY("workflow.threads", c.workflow.threads = (int)parse_int(k, v),
           std::to_string(c.workflow.threads));
    CG_KEY("workflow.grid_points", c.workflow.grid_points = (int)parse_int(k, v),
           std::to_string(c.workflow.grid_points));
    CG_KEY("workflow.grid_lo", c.workflow.grid_lo = parse_double(k, v), fmt(c.workflow.grid_lo));
    CG_KEY("workflow.grid_hi", c.workflow.grid_hi = parse_double(k, v), fmt(c.workflow.grid_hi));
    CG_KEY("workflow.grid_train_frac", c.workflow.grid_train_frac = parse_double(k, v),
           fmt(c.workflow.grid_train_frac));
    CG_KEY("workflow.grid_epochs", c.workflow.grid_epochs = (int)parse_int(k, v),
           std::to_string(c.workflow.grid_epochs));
    CG_KEY("workflow.baseline_steps", c.workflow.baseline_steps = parse_int(k, v),
           std::to_string(c.workflow.baseline_steps));
    CG_KEY("workflow.baseline_scale", c.workflow.baseline_scale = parse_double(k, v),
           fmt(c.workflow.baseline_scale));

    CG_KEY("metrics.grid_points", c.metrics.grid_points = (int)parse_int(k, v),
           std::to_string(c.metrics.grid_points));
    CG_KEY("metrics.grid_lo", c.metrics.grid_lo = parse_double(k, v), fmt(c.metrics.grid_lo));
    CG_KEY("metrics.grid_hi", c.metrics.grid_hi = parse_double(k, v), fmt(c.metrics.grid_hi));
    CG_KEY("metrics.ess_samples", c.metrics.ess_samples = (int)parse_int(k, v),
           std::to_string(c.metrics.ess_samples));
    CG_KEY("metrics.ess_clip", c.metrics.ess_clip = (int)parse_int(k, v),
           std::to_string(c.metrics.ess_clip));
    CG_KEY("metrics.ess_grid_points", c.metrics.ess_grid_points = (int)parse_int(k, v),
           std::to_string(c.metrics.ess_grid_points));

    CG_KEY("run.seed", c.seed = (std::uint64_t)parse_int(k, v), std::to_string(c.seed));
    CG_KEY("run.out_dir", c.out_dir = v, c.out_dir);
#undef CG_KEY
    return m;
  }();
  return reg;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& reg = key_registry();
  const auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("unknown config key: " + key);
  it->second.set(cfg, key, value);
}

void validate(const RunConfig& cfg) {
  if (cfg.system.name != "muller_brown") {
    throw ConfigError("system.name: unknown system id '" + cfg.system.name + "'");
  }
  if (cfg.flow.type != "affine" && cfg.flow.type != "spline") {
    throw ConfigError("flow.type: expected affine or spline, got '" + cfg.flow.type + "'");
  }
  if (cfg.pmf.bagging != "bootstrap" && cfg.pmf.bagging != "split80") {
    throw ConfigError("pmf.bagging: expected bootstrap or split80, got '" + cfg.pmf.bagging + "'");
  }
  if (cfg.system.beta <= 0.0) throw ConfigError("system.beta: must be positive");
  if (cfg.sampler.train_frac <= 0.0 || cfg.sampler.train_frac >= 1.0) {
    throw ConfigError("sampler.train_frac: must be in (0, 1)");
  }
  if (cfg.sampler.k_copies < 1) throw ConfigError("sampler.k_copies: must be >= 1");
  if (cfg.flow.n_drop >= cfg.flow.energy_batch) {
    throw ConfigError("flow.n_drop: must be smaller than flow.energy_batch");
  }
  if (cfg.sampler.min_len < 1 || cfg.sampler.max_len < cfg.sampler.min_len) {
    throw ConfigError("sampler.max_len: must be >= sampler.min_len >= 1");
  }
  if (cfg.workflow.start_x.size() != 2) {
    throw ConfigError("workflow.start_x: expected two components");
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key +
                        "' outside any [section]");
    }
    apply_key(cfg, section + "." + key, value);
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + ov + "': expected key=value");
    apply_key(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  validate(cfg);
  return cfg;
}

RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string config_to_text(const RunConfig& cfg) {
  const auto& reg = key_registry();
  std::string out;
  std::string section;
  // std::map iterates keys lexicographically; sections group automatically.
  for (const auto& [key, spec] : reg) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + spec.get(cfg) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = config_to_text(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace cgflow
