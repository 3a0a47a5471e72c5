#include "cgflow/sampler.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cgflow {

namespace {

bool metropolis_accept(double beta_delta_u, Rng& rng) {
  if (beta_delta_u <= 0.0) return true;
  if (std::isinf(beta_delta_u)) return false;
  return uniform01(rng) < std::exp(-beta_delta_u);
}

}  // namespace

McPath mc_trajectory(const Vec& start, const std::function<double(const Vec&)>& potential,
                     double beta, double proposal_scale, long long n_steps, Rng& rng) {
  if (n_steps < 1) throw std::invalid_argument("mc_trajectory: need at least one step");
  const double u0 = potential(start);
  if (!std::isfinite(u0)) throw std::invalid_argument("mc_trajectory: non-finite value at start");
  const int dim = static_cast<int>(start.size());

  McPath path;
  path.states.resize(dim, n_steps + 1);
  path.values.resize(n_steps + 1);
  path.accepted.resize(n_steps);
  path.states.col(0) = start;
  path.values[0] = u0;

  Vec x = start;
  Vec prop(dim);
  double u = u0;
  for (long long t = 0; t < n_steps; ++t) {
    for (int d = 0; d < dim; ++d) prop[d] = x[d] + proposal_scale * normal01(rng);
    const double up = potential(prop);
    const bool accept = metropolis_accept(beta * (up - u), rng);
    if (accept) {
      x = prop;
      u = up;
      ++path.n_accepted;
    }
    path.accepted[t] = accept;
    path.states.col(t + 1) = x;
    path.values[t + 1] = u;
  }
  return path;
}

HarvestResult find_high_error(const PmfEnsemble& ensemble, const HarvestConfig& cfg,
                              const std::vector<Vec>& starts, std::uint64_t seed,
                              std::vector<McPath>* dumps) {
  if (starts.empty()) throw std::invalid_argument("find_high_error: no start points");
  if (cfg.threshold <= 0.0) throw std::invalid_argument("find_high_error: threshold must be > 0");
  const int nc = cfg.n_parallel;
  const int dim = static_cast<int>(starts[0].size());

  std::vector<Rng> rngs;
  rngs.reserve(nc);
  for (int c = 0; c < nc; ++c) rngs.push_back(derive_rng(seed, "chain/" + std::to_string(c)));

  Mat cur(dim, nc);
  for (int c = 0; c < nc; ++c) cur.col(c) = starts[c % starts.size()];
  Vec cur_mean, cur_std;
  ensemble.predict_batch(cur, cur_mean, cur_std);
  for (int c = 0; c < nc; ++c) {
    if (!std::isfinite(cur_mean[c])) {
      throw std::invalid_argument("find_high_error: non-finite PMF at start");
    }
  }

  struct DumpBuffer {
    std::vector<Vec> states;
    std::vector<double> values;
    std::vector<std::uint8_t> accepted;
  };
  std::vector<DumpBuffer> buffers;
  if (dumps) {
    buffers.resize(nc);
    for (int c = 0; c < nc; ++c) {
      buffers[c].states.emplace_back(cur.col(c));
      buffers[c].values.push_back(cur_mean[c]);
    }
  }

  std::vector<std::uint8_t> active(nc, 1);
  std::vector<long long> lens(nc, 0);
  HarvestResult result;
  Mat props(dim, nc);
  Vec prop_mean, prop_std;
  std::vector<int> slot_of(nc);

  while (true) {
    // Chains advance in fixed-order lock-step rounds; each owns its stream.
    int n_active = 0;
    for (int c = 0; c < nc; ++c) {
      if (!active[c]) continue;
      slot_of[c] = n_active;
      for (int d = 0; d < dim; ++d) {
        props(d, n_active) = cur(d, c) + cfg.proposal_scale * normal01(rngs[c]);
      }
      ++n_active;
    }
    if (n_active == 0) break;
    ensemble.predict_batch(props.leftCols(n_active), prop_mean, prop_std);

    bool hit_max = false;
    for (int c = 0; c < nc; ++c) {
      if (!active[c]) continue;
      const int j = slot_of[c];
      const bool accept = metropolis_accept(cfg.beta * (prop_mean[j] - cur_mean[c]), rngs[c]);
      if (accept) {
        cur.col(c) = props.col(j);
        cur_mean[c] = prop_mean[j];
        cur_std[c] = prop_std[j];
      }
      ++lens[c];
      if (dumps) {
        buffers[c].states.emplace_back(cur.col(c));
        buffers[c].values.push_back(cur_mean[c]);
        buffers[c].accepted.push_back(accept);
      }
      if (lens[c] >= cfg.min_len && cur_std[c] > cfg.threshold) {
        result.points.emplace_back(cur.col(c));
        active[c] = 0;
        if (static_cast<int>(result.points.size()) >= cfg.n_targets) break;
        continue;
      }
      if (lens[c] >= cfg.max_len) hit_max = true;
    }
    if (static_cast<int>(result.points.size()) >= cfg.n_targets) break;
    if (hit_max) {
      result.terminated = true;
      break;
    }
  }

  for (const long long len : lens) result.raw_steps += len;
  result.total_steps = result.terminated ? 0 : result.raw_steps;

  if (dumps) {
    dumps->assign(nc, {});
    for (int c = 0; c < nc; ++c) {
      McPath& path = (*dumps)[c];
      path.states.resize(dim, buffers[c].states.size());
      for (std::size_t t = 0; t < buffers[c].states.size(); ++t) {
        path.states.col(t) = buffers[c].states[t];
      }
      path.values = std::move(buffers[c].values);
      path.accepted = std::move(buffers[c].accepted);
      for (const auto a : path.accepted) path.n_accepted += a;
    }
  }
  return result;
}

std::vector<Vec> broaden(const std::vector<Vec>& points, double width, int n_per_point, Rng& rng) {
  if (width <= 0.0) throw std::invalid_argument("broaden: width must be positive");
  if (n_per_point < 1) throw std::invalid_argument("broaden: n_per_point must be >= 1");
  std::vector<Vec> out;
  out.reserve(points.size() * n_per_point);
  const double radius = width / 2.0;
  for (const Vec& p : points) {
    const int dim = static_cast<int>(p.size());
    for (int i = 0; i < n_per_point; ++i) {
      Vec q(dim);
      if (dim == 1) {
        q[0] = p[0] + uniform_range(rng, -radius, radius);
      } else {
        do {
          for (int d = 0; d < dim; ++d) q[d] = uniform_range(rng, -radius, radius);
        } while (q.squaredNorm() > radius * radius);
        q += p;
      }
      out.push_back(std::move(q));
    }
  }
  return out;
}

AlDataset::AlDataset(int k_copies, double train_frac) : k_(k_copies), train_frac_(train_frac) {
  if (k_ < 1) throw std::invalid_argument("AlDataset: k_copies must be >= 1");
  if (train_frac_ <= 0.0 || train_frac_ >= 1.0) {
    throw std::invalid_argument("AlDataset: train_frac must be in (0, 1)");
  }
}

void AlDataset::add_group(const std::vector<Vec>& configs, Rng& rng) {
  DatasetGroup g;
  g.configs.reserve(configs.size());
  for (const Vec& s : configs) g.configs.push_back({s, std::vector<CopySlot>(k_)});
  const std::size_t n_records = configs.size() * static_cast<std::size_t>(k_);
  std::vector<std::size_t> order(n_records);
  for (std::size_t i = 0; i < n_records; ++i) order[i] = i;
  shuffle_in_place(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac_ * n_records));
  for (std::size_t i = 0; i < n_train; ++i) {
    g.configs[order[i] / k_].copies[order[i] % k_].train = true;
  }
  groups_.push_back(std::move(g));
}

void AlDataset::add_group_config_split(const std::vector<Vec>& configs,
                                       const std::vector<std::uint8_t>& train_mask) {
  if (configs.size() != train_mask.size()) {
    throw std::invalid_argument("add_group_config_split: mask size mismatch");
  }
  DatasetGroup g;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    CgConfigEntry entry{configs[i], std::vector<CopySlot>(k_)};
    for (auto& c : entry.copies) c.train = train_mask[i];
    g.configs.push_back(std::move(entry));
  }
  groups_.push_back(std::move(g));
}

long long AlDataset::total_records() const {
  long long n = 0;
  for (const auto& g : groups_) n += static_cast<long long>(g.configs.size()) * k_;
  return n;
}

long long AlDataset::train_record_count() const {
  long long n = 0;
  for (const auto& g : groups_) {
    for (const auto& c : g.configs) {
      for (const auto& slot : c.copies) n += slot.train ? 1 : 0;
    }
  }
  return n;
}

std::vector<std::pair<int, int>> AlDataset::replay_sample(int current_group, double gamma,
                                                          Rng& rng) const {
  std::vector<std::pair<int, int>> pool;
  for (int gi = 0; gi < current_group && gi < n_groups(); ++gi) {
    for (int ci = 0; ci < static_cast<int>(groups_[gi].configs.size()); ++ci) {
      pool.emplace_back(gi, ci);
    }
  }
  if (pool.empty() || gamma <= 0.0) return {};
  const std::size_t want =
      static_cast<std::size_t>(std::ceil(gamma * groups_[current_group].configs.size()));
  std::vector<std::pair<int, int>> out;
  for (const std::size_t i : sample_without_replacement(rng, pool.size(), want)) {
    out.push_back(pool[i]);
  }
  return out;
}

std::vector<EnergyRecordRef> AlDataset::records_of(int group_idx, bool train_flag) {
  std::vector<EnergyRecordRef> out;
  for (auto& c : groups_[group_idx].configs) {
    for (auto& slot : c.copies) {
      if (slot.train == train_flag) out.push_back({&c.s, &slot.record});
    }
  }
  return out;
}

std::vector<EnergyRecordRef> AlDataset::records_of_config(int group_idx, int config_idx,
                                                          bool train_flag) {
  std::vector<EnergyRecordRef> out;
  auto& c = groups_[group_idx].configs[config_idx];
  for (auto& slot : c.copies) {
    if (slot.train == train_flag) out.push_back({&c.s, &slot.record});
  }
  return out;
}

void AlDataset::save_json(const std::string& path) const {
  nlohmann::json j;
  j["k"] = k_;
  j["train_frac"] = train_frac_;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups_) {
    nlohmann::json jg = nlohmann::json::array();
    for (const auto& c : g.configs) {
      nlohmann::json jc;
      jc["s"] = std::vector<double>(c.s.begin(), c.s.end());
      nlohmann::json copies = nlohmann::json::array();
      for (const auto& slot : c.copies) {
        copies.push_back({{"e", slot.record.energy},
                          {"logq", slot.record.log_q},
                          {"valid", slot.record.valid},
                          {"train", slot.train}});
      }
      jc["copies"] = std::move(copies);
      jg.push_back(std::move(jc));
    }
    j["groups"].push_back(std::move(jg));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("AlDataset::save_json: cannot open " + path);
  out << j.dump();
}

AlDataset AlDataset::load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("AlDataset::load_json: cannot open " + path);
  nlohmann::json j;
  in >> j;
  AlDataset ds(j.at("k").get<int>(), j.at("train_frac").get<double>());
  for (const auto& jg : j.at("groups")) {
    DatasetGroup g;
    for (const auto& jc : jg) {
      CgConfigEntry entry;
      const auto sv = jc.at("s").get<std::vector<double>>();
      entry.s = Eigen::Map<const Vec>(sv.data(), sv.size());
      for (const auto& jslot : jc.at("copies")) {
        CopySlot slot;
        slot.record.energy = jslot.at("e").get<double>();
        slot.record.log_q = jslot.at("logq").get<double>();
        slot.record.valid = jslot.at("valid").get<bool>();
        slot.train = jslot.at("train").get<bool>();
        entry.copies.push_back(slot);
      }
      g.configs.push_back(std::move(entry));
    }
    ds.groups_.push_back(std::move(g));
  }
  return ds;
}

}  // namespace cgflow
