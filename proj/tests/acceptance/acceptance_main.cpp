// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Runs the full-scale Muller-Brown experiments, so expect tens of
// minutes of wall time.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cgflow/flow_training.hpp"
#include "cgflow/metrics.hpp"
#include "cgflow/pmf.hpp"
#include "cgflow/sampler.hpp"
#include "cgflow/spline_flow.hpp"
#include "cgflow/workflow.hpp"

using namespace cgflow;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s  (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// Criterion 1: MB active learning with the published hyperparameters.
// Criterion 2 reuses the AL median KLD for the baseline separation.
double g_al_median_kld = std::numeric_limits<double>::quiet_NaN();

void criterion_1_al_reproduction() {
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<double> klds;
  bool evals_ok = true, steps_ok = true, time_ok = true;
  std::string detail;
  for (const auto seed : seeds) {
    RunConfig cfg = parse_config_text("", {});
    cfg.seed = seed;
    const RunReport rep = run_active_learning(cfg);
    klds.push_back(rep.final_kld);
    evals_ok &= rep.total_energy_evals >= 50000 && rep.total_energy_evals <= 300000;
    steps_ok &= rep.total_mc_steps >= 100000 && rep.total_mc_steps <= 1600000;
    time_ok &= rep.wall_time_s <= 2700.0;
    detail += fmt("seed %llu: kld=%.3e evals=%lld steps=%lld wall=%.0fs [%s]; ",
                  static_cast<unsigned long long>(seed), rep.final_kld, rep.total_energy_evals,
                  rep.total_mc_steps, rep.wall_time_s, rep.stop_reason.c_str());
  }
  const double worst = *std::max_element(klds.begin(), klds.end());
  g_al_median_kld = median(klds);
  const bool pass =
      worst <= 1e-3 && g_al_median_kld <= 5e-4 && evals_ok && steps_ok && time_ok;
  report(1, pass, "MB active-learning reproduction over 3 seeds",
         detail + fmt("worst kld=%.3e median=%.3e", worst, g_al_median_kld));
}

void criterion_2_baseline_separation() {
  RunConfig cfg = parse_config_text("", {});
  cfg.seed = 1;
  cfg.workflow.baseline_steps = 1000000;
  const RunReport rep = run_mc_baseline(cfg);
  const bool pass = rep.final_kld >= 5e-3 && rep.final_kld >= 5.0 * g_al_median_kld;
  report(2, pass, "full-space MC baseline at 1e6 steps is >= 5x worse",
         fmt("baseline kld=%.3e vs AL median=%.3e", rep.final_kld, g_al_median_kld));
}

void criterion_3_grid_conditioning() {
  RunConfig cfg = parse_config_text("", {});
  cfg.seed = 5;
  const RunReport rep = run_grid_conditioning(cfg);
  report(3, rep.final_kld <= 1e-3, "grid conditioning on the 100-point grid",
         fmt("kld=%.3e evals=%lld", rep.final_kld, rep.total_energy_evals));
}

void criterion_4_pmf_oracle() {
  Mat cov(2, 2);
  cov << 1.0, 0.5, 0.5, 1.0;
  const GaussianSystem sys(1, cov, 1.0);
  const GaussianConditionalFlow flow(sys);
  Rng rng(404);
  const auto grid = linspace(-2.0, 2.0, 50);
  double sup_main = 0.0, sup_alt = 0.0;
  std::vector<double> est_main, est_alt, exact;
  Vec s(1), z(1);
  for (const double sv : grid) {
    s[0] = sv;
    std::vector<EnergyRecordSlot> records(10000);
    for (auto& rec : records) {
      z[0] = normal01(rng);
      double logdet = 0.0;
      const Vec x_fg = flow.to_fg(z, s, logdet);
      rec.energy = sys.energy_fg(x_fg, s);
      rec.log_q = -0.5 * z[0] * z[0] - 0.5 * std::log(2 * std::numbers::pi) - logdet;
      rec.valid = true;
    }
    est_main.push_back(pmf_estimate(s, records, sys.beta(), 0).value);
    est_alt.push_back(pmf_estimate_alt(s, records, sys.beta()).value);
    exact.push_back(sys.exact_pmf(s));
  }
  const auto align = [](std::vector<double> v) {
    const double mn = *std::min_element(v.begin(), v.end());
    for (auto& x : v) x -= mn;
    return v;
  };
  const auto em = align(est_main), ea = align(est_alt), ex = align(exact);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    sup_main = std::max(sup_main, std::abs(em[i] - ex[i]));
    sup_alt = std::max(sup_alt, std::abs(ea[i] - ex[i]));
  }
  report(4, sup_main <= 0.02 && sup_alt <= 0.02,
         "conditional-gaussian PMF oracle recovery at 1e4 samples",
         fmt("sup main=%.4f alt=%.4f", sup_main, sup_alt));
}

void criterion_5_flow_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  std::string detail;

  // Invertibility: affine exact, spline < 1e-8 inside the bound.
  {
    Rng init(91);
    const CondAffineFlow affine({64, 64}, Scaler::identity(1), init);
    RqSplineFlow::Options opts;
    opts.n_layers = 6;
    opts.hidden = {32, 32};
    Rng init2(92);
    RqSplineFlow spline(3, opts, Scaler::identity(1), init2);
    // Moderate random parameters on top of the identity initialization.
    {
      Rng jitter(93);
      for (auto* block : spline.param_blocks()) {
        auto& w = block->weights.back();
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.15 * normal01(jitter);
      }
    }
    Rng rng(94);
    double worst_affine = 0.0, worst_spline = 0.0, worst_logdet = 0.0;
    for (int i = 0; i < 10000; ++i) {
      Vec z1(1), s1(1);
      z1 << normal01(rng);
      s1 << normal01(rng);
      double lf = 0.0, li = 0.0;
      const Vec x1 = affine.to_fg(z1, s1, lf);
      worst_affine = std::max(worst_affine, std::abs(affine.to_latent(x1, s1, li)[0] - z1[0]));
      worst_logdet = std::max(worst_logdet, std::abs(lf + li));

      Vec z3(3), s3(1);
      for (int d = 0; d < 3; ++d) z3[d] = uniform_range(rng, -4.9, 4.9);
      s3 << normal01(rng);
      const Vec x3 = spline.to_fg(z3, s3, lf);
      worst_spline =
          std::max(worst_spline, (spline.to_latent(x3, s3, li) - z3).lpNorm<Eigen::Infinity>());
      worst_logdet = std::max(worst_logdet, std::abs(lf + li));
    }
    pass &= worst_affine < 1e-8 && worst_spline < 1e-8;
    detail += fmt("invert affine=%.1e spline=%.1e logdet=%.1e; ", worst_affine, worst_spline,
                  worst_logdet);

    // Log-det against a numerical Jacobian.
    double worst_jac = 0.0;
    const double h = 1e-6;
    for (int trial = 0; trial < 25; ++trial) {
      Vec z(3), s(1);
      for (int d = 0; d < 3; ++d) z[d] = uniform_range(rng, -4.0, 4.0);
      s << normal01(rng);
      double logdet = 0.0;
      spline.to_fg(z, s, logdet);
      Mat jac(3, 3);
      for (int d = 0; d < 3; ++d) {
        Vec zp = z, zm = z;
        zp[d] += h;
        zm[d] -= h;
        double tmp = 0.0;
        jac.col(d) = (spline.to_fg(zp, s, tmp) - spline.to_fg(zm, s, tmp)) / (2 * h);
      }
      worst_jac = std::max(worst_jac, std::abs(logdet - std::log(std::abs(jac.determinant()))));
    }
    pass &= worst_jac < 1e-4;
    detail += fmt("jacobian=%.1e; ", worst_jac);

    // Density normalization by quadrature, both flow types.
    const auto integrate = [](const ConditionalFlow& f, const Vec& s, double lo, double hi) {
      // Adaptive Simpson handles the spline's derivative kinks.
      struct R {
        const ConditionalFlow& f;
        const Vec& s;
        double operator()(double a, double m, double b, double fa, double fm, double fb,
                          double whole, double tol, int depth) const {
          const double lm = (a + m) / 2, rm = (m + b) / 2;
          const double flm = den(lm), frm = den(rm);
          const double left = (m - a) / 6 * (fa + 4 * flm + fm);
          const double right = (b - m) / 6 * (fm + 4 * frm + fb);
          if (depth <= 0 || std::abs(left + right - whole) < 15 * tol) {
            return left + right + (left + right - whole) / 15;
          }
          return operator()(a, lm, m, fa, flm, fm, left, tol / 2, depth - 1) +
                 operator()(m, rm, b, fm, frm, fb, right, tol / 2, depth - 1);
        }
        double den(double v) const {
          Vec x(1);
          x[0] = v;
          return std::exp(f.log_prob(x, s));
        }
      } r{f, s};
      const double m = (lo + hi) / 2;
      const double fa = r.den(lo), fm = r.den(m), fb = r.den(hi);
      return r(lo, m, hi, fa, fm, fb, (hi - lo) / 6 * (fa + 4 * fm + fb), 1e-10, 26);
    };
    Rng init3(95);
    RqSplineFlow::Options opts1;
    opts1.n_layers = 4;
    opts1.hidden = {16, 16};
    RqSplineFlow spline1(1, opts1, Scaler::identity(1), init3);
    {
      Rng jitter(96);
      for (auto* block : spline1.param_blocks()) {
        auto& w = block->weights.back();
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.2 * normal01(jitter);
      }
    }
    double worst_norm = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      Vec s(1);
      s << normal01(rng);
      const double mu = affine.mean(s);
      const double sc = affine.scale(s);
      worst_norm = std::max(
          worst_norm, std::abs(integrate(affine, s, mu - 10 * sc, mu + 10 * sc) - 1.0));
      worst_norm = std::max(worst_norm, std::abs(integrate(spline1, s, -9.0, 9.0) - 1.0));
    }
    pass &= worst_norm < 1e-6;
    detail += fmt("normalization=%.1e; ", worst_norm);
  }

  // Gradient checks: analytic MLP gradients against central differences.
  {
    Rng rng(97);
    double worst = 0.0;
    const double h = 1e-5;
    for (int trial = 0; trial < 100; ++trial) {
      Rng init(1000 + trial);
      MlpParams net = init_gaussian({2, 6, 2}, 0.8, init);
      Eigen::MatrixXd in(2, 1), up(2, 1);
      in << normal01(rng), normal01(rng);
      up << normal01(rng), normal01(rng);
      MlpCache cache;
      mlp_forward(net, in, cache);
      MlpParams grad = net.zeros_like();
      mlp_backward(net, cache, up, grad);
      const auto loss = [&] { return (up.transpose() * mlp_forward(net, in))(0, 0); };
      for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) {
          const double orig = net.weights[l].data()[i];
          net.weights[l].data()[i] = orig + h;
          const double lp = loss();
          net.weights[l].data()[i] = orig - h;
          const double lm = loss();
          net.weights[l].data()[i] = orig;
          const double fd = (lp - lm) / (2 * h);
          const double scale = std::max({1.0, std::abs(fd)});
          worst = std::max(worst, std::abs(fd - grad.weights[l].data()[i]) / scale);
        }
      }
    }
    pass &= worst < 1e-4;
    detail += fmt("gradcheck=%.1e; ", worst);
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  pass &= secs < 300.0;
  report(5, pass, "flow property suite", detail + fmt("wall=%.0fs", secs));
}

void criterion_6_surrogate_decomposition() {
  // G(s, z) = a(s) + noise(z): fit H by uncontracted MSE, then decompose the
  // empirical loss at 1e5 samples.
  Rng rng(606);
  const auto a = [](double s) { return std::sin(1.5 * s) + 0.3 * s * s; };
  const int n = 100000;
  std::vector<Vec> inputs;
  std::vector<double> g_values;
  inputs.reserve(n);
  g_values.reserve(n);
  for (int i = 0; i < n; ++i) {
    Vec s(1);
    s[0] = uniform_range(rng, -2.0, 2.0);
    inputs.push_back(s);
    g_values.push_back(a(s[0]) + 0.5 * normal01(rng));
  }
  Mat cols(1, n);
  for (int i = 0; i < n; ++i) cols(0, i) = inputs[i][0];
  const Scaler scaler = scaler_fit(cols);
  Rng init(607);
  MlpParams model = init_gaussian({1, 32, 32, 1}, 0.5, init);
  RegressorConfig cfg;
  cfg.epochs = 40;
  cfg.batch = 64;
  cfg.lr = 3e-3;
  Rng train_rng(608);
  fit_regressor(model, scaler, inputs, g_values, cfg, train_rng);

  double chi_total = 0.0, chi_noise = 0.0, chi_exp = 0.0, chi_mixed = 0.0;
  for (int i = 0; i < n; ++i) {
    const double h_val = mlp_forward(model, scaler_apply(scaler, inputs[i]))[0];
    const double mean_g = a(inputs[i][0]);
    const double d_total = g_values[i] - h_val;
    const double d_noise = g_values[i] - mean_g;
    const double d_exp = mean_g - h_val;
    chi_total += d_total * d_total;
    chi_noise += d_noise * d_noise;
    chi_exp += d_exp * d_exp;
    chi_mixed += 2.0 * d_noise * d_exp;
  }
  const double ratio = std::abs(chi_mixed) / chi_total;
  const bool decomposes = std::abs(chi_total - (chi_noise + chi_exp + chi_mixed)) <
                          1e-9 * std::abs(chi_total);
  report(6, ratio < 0.02 && decomposes, "surrogate-loss mixed term vanishes at 1e5 samples",
         fmt("|mixed|/total=%.5f noise/total=%.3f exp/total=%.4f", ratio, chi_noise / chi_total,
             chi_exp / chi_total));
}

void criterion_7_sampler_correctness() {
  // Detailed-balance occupation on a discretized 3-well PMF.
  Rng rng(707);
  const auto well = [](const Vec& s) {
    if (s[0] < 0.0 || s[0] >= 3.0) return std::numeric_limits<double>::infinity();
    const double u[3] = {0.0, 1.3, 0.6};
    return u[static_cast<int>(s[0])];
  };
  Vec start(1);
  start[0] = 0.5;
  const long long n = 1000000;
  const auto path = mc_trajectory(start, well, 1.0, 0.8, n, rng);
  double occ[3] = {0, 0, 0};
  for (Eigen::Index t = 1; t < path.states.cols(); ++t) {
    occ[std::min(2, std::max(0, static_cast<int>(path.states(0, t))))] += 1.0;
  }
  const double w[3] = {std::exp(-0.0), std::exp(-1.3), std::exp(-0.6)};
  const double z = w[0] + w[1] + w[2];
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(occ[k] / n - w[k] / z));

  // Dataset arithmetic.
  Rng ds_rng(708);
  AlDataset ds(30, 0.8);
  std::vector<Vec> configs(65, Vec::Zero(1));
  ds.add_group(configs, ds_rng);
  const bool arithmetic = ds.total_records() == 1950 && ds.train_record_count() == 1560 &&
                          ds.records_of(0, false).size() == 390;
  report(7, worst < 0.01 && arithmetic, "sampler occupation and dataset arithmetic",
         fmt("occupation err=%.4f records=%lld train=%lld", worst, ds.total_records(),
             ds.train_record_count()));
}

void criterion_8_documented_out_of_scope() {
  // The alanine dipeptide numbers need an external force field; the README
  // documents that they are out of scope rather than substituting values.
  std::ifstream in(std::string(CGFLOW_SOURCE_DIR) + "/README.md");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string readme = ss.str();
  const bool documented = readme.find("alanine dipeptide") != std::string::npos &&
                          (readme.find("out of scope") != std::string::npos ||
                           readme.find("not reproduced") != std::string::npos);
  report(8, documented, "alanine dipeptide results documented as out of scope",
         documented ? "README.md states the limitation" : "README.md lacks the statement");
}

}  // namespace

int main() {
  std::printf("acceptance suite: full-scale runs ahead, expect tens of minutes\n");
  criterion_5_flow_properties();
  criterion_6_surrogate_decomposition();
  criterion_7_sampler_correctness();
  criterion_4_pmf_oracle();
  criterion_8_documented_out_of_scope();
  criterion_1_al_reproduction();
  criterion_2_baseline_separation();
  criterion_3_grid_conditioning();
  std::printf("%s\n", g_failures ? "ACCEPTANCE: FAILURES PRESENT" : "ACCEPTANCE: ALL PASS");
  return g_failures ? 1 : 0;
}
