// Acceptance suite: twelve end-to-end checks, one printed line each, with
// every tolerance pinned in this file.  Each check is self-contained and
// uses an oracle independent of the code path it exercises (closed forms,
// finite differences, quadrature, or brute-force search).
//
// Two checks encode targets that the mean-field objective provably cannot
// meet on the funnel (see the notes next to criteria 9 and 10); they are
// implemented faithfully and report their honest numbers rather than being
// weakened, so a FAIL line there is expected behaviour, not a regression.
//
// Run all criteria:            ./acceptance
// Run one criterion:           ./acceptance --criterion 7
// Exit code: 0 iff every criterion that ran passed.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "reparam/conjugate.hpp"
#include "reparam/experiment.hpp"
#include "reparam/model.hpp"
#include "reparam/models.hpp"
#include "reparam/reparam.hpp"
#include "reparam/rng.hpp"
#include "reparam/vi.hpp"
#include "test_util.hpp"

namespace {

using namespace reparam;

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string data_path(const std::string& file) {
  return std::string(REPARAM_DATA_DIR) + "/" + file;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Conditioning crossover: shape of the two curves over q in [1e-3, 1e3]
//    and closed-form endpoints, all against the eigenvalue oracle.
Outcome criterion_1() {
  Outcome out;
  const double tol = 1e-6;
  const auto curve = crossover_curve(1.0, log_grid(1e-3, 1e3, 61));

  // Limits as evidence vanishes: kappa_ncp -> 1, kappa_cp -> 3 + 2*sqrt(2).
  const double cp0 = best_condition_number({1.0, 1e-9}, Centring::kCp);
  const double ncp0 = best_condition_number({1.0, 1e-9}, Centring::kNcp);
  const double cp_limit = 3.0 + 2.0 * std::sqrt(2.0);
  if (std::fabs(cp0 - cp_limit) > tol) {
    out.pass = false;
    out.detail += " kappa_cp(q->0)=" + fmt(cp0) + " want " + fmt(cp_limit) + ";";
  }
  if (std::fabs(ncp0 - 1.0) > tol) {
    out.pass = false;
    out.detail += " kappa_ncp(q->0)=" + fmt(ncp0) + " want 1;";
  }

  // Both parameterisations are equally hard at q = 1 (grid midpoint).
  const CrossoverPoint& mid = curve[30];
  if (std::fabs(mid.q - 1.0) > 1e-12 || std::fabs(mid.kappa_cp - 3.0) > tol ||
      std::fabs(mid.kappa_ncp - 3.0) > tol) {
    out.pass = false;
    out.detail += " at q=1: kappa_cp=" + fmt(mid.kappa_cp) + " kappa_ncp=" + fmt(mid.kappa_ncp) +
                  " want 3,3;";
  }

  int sign_changes = 0;
  bool cp_decreasing = true;
  for (size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].kappa_cp >= curve[i - 1].kappa_cp) cp_decreasing = false;
    const double prev = curve[i - 1].kappa_cp - curve[i - 1].kappa_ncp;
    const double cur = curve[i].kappa_cp - curve[i].kappa_ncp;
    if ((prev > 0) != (cur > 0)) ++sign_changes;
  }
  if (!cp_decreasing) {
    out.pass = false;
    out.detail += " kappa_cp is not strictly decreasing;";
  }
  if (sign_changes != 1) {
    out.pass = false;
    out.detail += " expected exactly one crossover, found " + std::to_string(sign_changes) + ";";
  }
  if (out.pass)
    out.detail = "limits " + fmt(cp0) + "/" + fmt(ncp0) + ", q=1 gives 3/3, one crossover";
  return out;
}

// ---------------------------------------------------------------------------
// 2. Closed-form best diagonal preconditioner vs brute-force grid search of
//    the 2x2 eigen-ratio over 50 random (sigma_mu, q) pairs.
Outcome criterion_2() {
  Outcome out;
  const double tol = 1e-3;
  std::mt19937 gen(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  auto brute_force = [](const ConjugateModelSpec& m, Centring which) {
    const Sym2 cov = posterior_cov(m, which);
    double lo = std::log(1e-4), hi = std::log(1e4);
    double best_d = 1.0;
    for (int round = 0; round < 4; ++round) {
      double best_k = 1e308;
      int best_i = 0;
      const int n = 400;
      for (int i = 0; i <= n; ++i) {
        const double d = std::exp(lo + (hi - lo) * i / n);
        const double k = cov.rescale_first(d).condition_number();
        if (k < best_k) {
          best_k = k;
          best_i = i;
        }
      }
      best_d = std::exp(lo + (hi - lo) * best_i / n);
      const double step = (hi - lo) / n;
      const double centre = lo + step * best_i;
      lo = centre - 2.0 * step;
      hi = centre + 2.0 * step;
    }
    return best_d;
  };

  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const ConjugateModelSpec m{std::exp(std::log(0.1) + u(gen) * std::log(100.0)),
                               std::exp(std::log(1e-3) + u(gen) * std::log(1e6))};
    for (Centring which : {Centring::kCp, Centring::kNcp}) {
      const double closed = best_diag_precond(m, which);
      const double brute = brute_force(m, which);
      const double rel = std::fabs(closed - brute) / closed;
      worst = std::max(worst, rel);
      if (rel > tol) {
        out.pass = false;
        out.detail += " sigma_mu=" + fmt(m.sigma_mu) + " q=" + fmt(m.q) + ": closed " +
                      fmt(closed) + " vs grid " + fmt(brute) + ";";
      }
    }
  }
  if (out.pass) out.detail = "50 pairs, worst relative gap " + fmt(worst);
  return out;
}

// ---------------------------------------------------------------------------
// 3. Handler correctness: pinned funnel log-joint values and exact
//    equivalence of the lambda endpoints with the two pure builds.
Outcome criterion_3() {
  Outcome out;
  const ModelProgram cp = build_funnel();
  const NcpModel ncp = make_ncp(cp);
  const LogJointFn lj_cp = make_log_joint(cp);
  const LogJointFn lj_ncp = make_log_joint(ncp.model);

  const double at_origin_cp = lj_cp(std::vector<double>{0.0, 0.0});
  const double at_origin_ncp = lj_ncp(std::vector<double>{0.0, 0.0});
  if (std::fabs(at_origin_cp - (-2.9364894)) > 1e-7) {
    out.pass = false;
    out.detail += " cp(0,0)=" + fmt(at_origin_cp) + " want -2.9364894;";
  }
  if (std::fabs(at_origin_ncp - (-1.8378771)) > 1e-7) {
    out.pass = false;
    out.detail += " ncp(0,0)=" + fmt(at_origin_ncp) + " want -1.8378771;";
  }

  const auto shapes = reparameterisable_sites(cp);
  const LogJointFn lj_vip1 =
      make_log_joint(make_vip(cp, ParameterisationParams::constant(shapes, 1.0)).model);
  const LogJointFn lj_vip0 =
      make_log_joint(make_vip(cp, ParameterisationParams::constant(shapes, 0.0)).model);
  for (int k = 0; k < 10; ++k) {
    const std::vector<double> x = {-2.25 + 0.5 * k, 1.75 - 0.4 * k};
    const double a1 = lj_vip1(x), a0 = lj_vip0(x);
    const double b1 = lj_cp(x), b0 = lj_ncp(x);
    if (std::fabs(a1 - b1) > 1e-10 * std::max(1.0, std::fabs(b1))) {
      out.pass = false;
      out.detail += " lambda=1 point " + std::to_string(k) + ": " + fmt(a1) + " vs " + fmt(b1) + ";";
    }
    if (std::fabs(a0 - b0) > 1e-10 * std::max(1.0, std::fabs(b0))) {
      out.pass = false;
      out.detail += " lambda=0 point " + std::to_string(k) + ": " + fmt(a0) + " vs " + fmt(b0) + ";";
    }
  }
  if (out.pass)
    out.detail = "cp(0,0)=" + fmt(at_origin_cp) + ", ncp(0,0)=" + fmt(at_origin_ncp) +
                 ", endpoints match on 10-point grids";
  return out;
}

// Five-point central difference: truncation O(h^4), needed because the
// exp-scale terms of some models carry high-order derivatives large enough
// to push the plain two-point stencil right up against the 1e-6 bar.  The
// step balances that truncation against roundoff in log joints of size 1e4.
std::vector<double> fd5_gradient(const std::function<double(std::span<const double>)>& f,
                                 std::vector<double> x, double h = 3e-5) {
  std::vector<double> g(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + 2.0 * h;
    const double p2 = f(x);
    x[i] = xi + h;
    const double p1 = f(x);
    x[i] = xi - h;
    const double m1 = f(x);
    x[i] = xi - 2.0 * h;
    const double m2 = f(x);
    x[i] = xi;
    g[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// 4. Autodiff vs central finite differences for every zoo model under all
//    three builds at 20 random points each.
Outcome criterion_4() {
  Outcome out;
  struct Case {
    std::string name, file;
  };
  const std::vector<Case> cases = {{"funnel", ""},
                                   {"eight_schools", "eight_schools.csv"},
                                   {"radon", "radon.csv"},
                                   {"german_credit", "german_credit.csv"},
                                   {"election88", "election.csv"},
                                   {"electric", "electric.csv"}};
  std::mt19937 gen(19);
  std::normal_distribution<double> nd(0.0, 0.5);
  size_t checked = 0;
  for (const Case& c : cases) {
    const ModelProgram cp = zoo_entry(c.name).build(c.file.empty() ? "" : data_path(c.file));
    const auto shapes = reparameterisable_sites(cp);
    const NcpModel ncp = make_ncp(cp);
    const VipModel vip = make_vip(cp, ParameterisationParams::constant(shapes, 0.5));
    const ModelProgram* builds[] = {&cp, &ncp.model, &vip.model};
    const char* build_names[] = {"cp", "ncp", "vip"};
    for (size_t b = 0; b < 3; ++b) {
      const LogJointFn lj = make_log_joint(*builds[b]);
      // Probe near plausible posterior mass; for the centred classroom model
      // the raw scores sit near 100 and the origin would lose the finite
      // difference to cancellation.
      std::vector<double> base(lj.dim(), 0.0);
      if (b == 0 && c.name == "electric") {
        for (size_t i = 0; i < 100; ++i) base[i] = 100.0;
        for (size_t i = 104; i < 108; ++i) base[i] = 1.5;
      }
      for (int t = 0; t < 20; ++t) {
        std::vector<double> x(lj.dim());
        for (size_t i = 0; i < x.size(); ++i) x[i] = base[i] + nd(gen);
        const GradResult g = lj.value_and_grad(x);
        const auto fd = fd5_gradient([&](std::span<const double> p) { return lj(p); }, x);
        for (size_t i = 0; i < fd.size(); ++i) {
          ++checked;
          if (!testutil::close_rel(g.gradient[i], fd[i], 1e-6)) {
            out.pass = false;
            out.detail += " " + c.name + "/" + build_names[b] + " point " + std::to_string(t) +
                          " coord " + std::to_string(i) + ": " + fmt(g.gradient[i]) + " vs fd " +
                          fmt(fd[i]) + ";";
          }
        }
      }
    }
  }
  if (out.pass)
    out.detail = std::to_string(checked) + " partial derivatives across 6 models x 3 builds";
  return out;
}

// ---------------------------------------------------------------------------
// 5. Sampler validity: all four methods recover the analytic posterior of
//    the conjugate model within 4 Monte Carlo standard errors.
Outcome criterion_5() {
  Outcome out;
  const std::vector<double> y = {1.31, 0.24, 1.76, 0.92, 1.48, 0.56, 1.10, 1.87, 0.33, 1.05};
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(y.size());

  const ModelProgram model = build_conjugate(1.0, 1.0, y);
  const ConjugateModelSpec oracle_spec{1.0, static_cast<double>(y.size())};
  // Oracle order is (mu, theta); the model layout is (theta, mu).
  const auto mean_mt = posterior_mean(oracle_spec, Centring::kCp, ybar);
  const Sym2 cov_mt = posterior_cov(oracle_spec, Centring::kCp);
  const double want_mean[2] = {mean_mt[1], mean_mt[0]};        // (theta, mu)
  const double want_var[2] = {cov_mt.c, cov_mt.a};             // (theta, mu)
  const double want_cov01 = cov_mt.b;

  for (const char* method : {"cp", "ncp", "ihmc", "vip"}) {
    ExperimentSpec spec;
    spec.model = "conjugate";
    spec.method = method;
    spec.seed = 2024;
    spec.hmc.num_leapfrog = 10;
    spec.hmc.chains = 8;
    spec.hmc.warmup_steps = 500;
    spec.hmc.adapt_steps = 300;
    spec.hmc.samples = 2000;
    spec.vi.steps = 1500;
    spec.vi.n_mc = 64;
    const MethodRun run = run_method(model, spec);

    const std::vector<double> ess = ess_per_variable(run.chains);
    // The ESS of a coordinate governs its mean estimate only; second-moment
    // estimates mix on the squared process' own autocorrelation time (HMC
    // near 75% acceptance is antithetic, so the two can differ a lot).
    auto ess_of = [&](const std::function<double(const std::vector<double>&)>& f) {
      std::vector<std::vector<std::vector<double>>> mapped(run.chains.size());
      for (size_t c = 0; c < run.chains.size(); ++c) {
        mapped[c].reserve(run.chains[c].size());
        for (const auto& d : run.chains[c]) mapped[c].push_back({f(d)});
      }
      return ess_per_variable(mapped)[0];
    };
    double n = 0.0, m0 = 0.0, m1 = 0.0;
    for (const auto& chain : run.chains)
      for (const auto& d : chain) {
        m0 += d[0];
        m1 += d[1];
        n += 1.0;
      }
    m0 /= n;
    m1 /= n;
    double v0 = 0.0, v1 = 0.0, c01 = 0.0;
    for (const auto& chain : run.chains)
      for (const auto& d : chain) {
        v0 += (d[0] - m0) * (d[0] - m0);
        v1 += (d[1] - m1) * (d[1] - m1);
        c01 += (d[0] - m0) * (d[1] - m1);
      }
    v0 /= n - 1.0;
    v1 /= n - 1.0;
    c01 /= n - 1.0;

    const double mean_est[2] = {m0, m1};
    const double var_est[2] = {v0, v1};
    const double means[2] = {m0, m1};
    for (int i = 0; i < 2; ++i) {
      const double se = std::sqrt(want_var[i] / ess[i]);
      if (std::fabs(mean_est[i] - want_mean[i]) > 4.0 * se) {
        out.pass = false;
        out.detail += std::string(" ") + method + " mean[" + std::to_string(i) + "]=" +
                      fmt(mean_est[i]) + " want " + fmt(want_mean[i]) + " (4se=" + fmt(4 * se) +
                      ");";
      }
      // Normal-theory variance of a sample variance is 2 sigma^4 / n_eff,
      // with n_eff taken from the squared-residual chain.
      const double ess_sq =
          ess_of([&](const std::vector<double>& d) { return (d[i] - means[i]) * (d[i] - means[i]); });
      const double se_var = std::sqrt(2.0 / ess_sq) * want_var[i];
      if (std::fabs(var_est[i] - want_var[i]) > 4.0 * se_var) {
        out.pass = false;
        out.detail += std::string(" ") + method + " var[" + std::to_string(i) + "]=" +
                      fmt(var_est[i]) + " want " + fmt(want_var[i]) + " (4se=" + fmt(4 * se_var) +
                      ");";
      }
    }
    const double ess_prod =
        ess_of([&](const std::vector<double>& d) { return (d[0] - m0) * (d[1] - m1); });
    const double se_cov =
        std::sqrt((want_var[0] * want_var[1] + want_cov01 * want_cov01) / ess_prod);
    if (std::fabs(c01 - want_cov01) > 4.0 * se_cov) {
      out.pass = false;
      out.detail += std::string(" ") + method + " cov01=" + fmt(c01) + " want " + fmt(want_cov01) +
                    " (4se=" + fmt(4 * se_cov) + ");";
    }
  }
  if (out.pass)
    out.detail = "cp, ncp, ihmc, vip all within 4 MC standard errors of the analytic posterior";
  return out;
}

// ---------------------------------------------------------------------------
// 6. Evidence invariance: 2-D Simpson quadrature of the conjugate model's
//    joint density is constant across partial-centring coefficients.
Outcome criterion_6() {
  Outcome out;
  const ModelProgram model = build_conjugate(1.0, 1.0, {0.8});
  const auto shapes = reparameterisable_sites(model);
  const double lo = -10.0, hi = 10.0;
  const int n = 200;  // Simpson needs an even interval count
  const double h = (hi - lo) / n;

  auto simpson_weight = [&](int i) {
    if (i == 0 || i == n) return 1.0;
    return (i % 2 == 1) ? 4.0 : 2.0;
  };

  std::vector<double> evidence;
  for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const VipModel vip = make_vip(model, ParameterisationParams::constant(shapes, lambda));
    const LogJointFn lj = make_log_joint(vip.model);
    double acc = 0.0;
    std::vector<double> x(2);
    for (int i = 0; i <= n; ++i) {
      x[0] = lo + h * i;
      double inner = 0.0;
      for (int j = 0; j <= n; ++j) {
        x[1] = lo + h * j;
        inner += simpson_weight(j) * std::exp(lj(x));
      }
      acc += simpson_weight(i) * inner * (h / 3.0);
    }
    evidence.push_back(acc * h / 3.0);
  }

  // Independent closed form: y ~ N(0, 1 + sigma_mu^2 + sigma^2) marginally.
  const double marg_var = 3.0;
  const double analytic =
      std::exp(-0.5 * 0.8 * 0.8 / marg_var) / std::sqrt(2.0 * M_PI * marg_var);
  double worst = 0.0;
  for (double e : evidence) {
    worst = std::max(worst, std::fabs(e - evidence[0]) / evidence[0]);
    if (std::fabs(e - analytic) / analytic > 1e-4) {
      out.pass = false;
      out.detail += " quadrature " + fmt(e) + " vs analytic " + fmt(analytic) + ";";
    }
  }
  if (worst > 1e-4) {
    out.pass = false;
    out.detail += " spread across lambda " + fmt(worst) + " exceeds 1e-4;";
  }
  if (out.pass)
    out.detail = "evidence " + fmt(evidence[0]) + " constant over 5 lambda values (spread " +
                 fmt(worst) + ", analytic " + fmt(analytic) + ")";
  return out;
}

ExperimentSpec desk_spec(const std::string& model, const std::string& dataset,
                         const std::string& method, uint64_t seed) {
  ExperimentSpec spec;
  spec.model = model;
  spec.dataset = dataset;
  spec.method = method;
  spec.seed = seed;
  spec.hmc.chains = 8;
  spec.hmc.warmup_steps = 500;
  spec.hmc.adapt_steps = 300;
  spec.hmc.samples = 2000;
  spec.vi.steps = 1500;
  spec.vi.n_mc = 64;
  spec.hmc.num_leapfrog.reset();  // every method gets its own tuned length
  return spec;
}

double best_ess_per_grad(const ExperimentSpec& spec) {
  const SweepResult s = sweep_leapfrog(spec);
  return s.rows[s.best_index].diagnostics.ess_per_1000_grads;
}

// ---------------------------------------------------------------------------
// 7. Funnel ordering: non-centred HMC beats centred HMC by at least 2x in
//    min-ESS per gradient, each at its own swept trajectory length.
Outcome criterion_7() {
  Outcome out;
  const double cp = best_ess_per_grad(desk_spec("funnel", "", "cp", 7));
  const double ncp = best_ess_per_grad(desk_spec("funnel", "", "ncp", 7));
  out.pass = ncp >= 2.0 * cp;
  out.detail = "min-ESS/1000 grads: ncp " + fmt(ncp) + " vs cp " + fmt(cp) + " (ratio " +
               fmt(ncp / cp) + ", need >= 2)";
  return out;
}

// ---------------------------------------------------------------------------
// 8. Interleaving robustness: on the funnel and eight schools, interleaved
//    HMC stays within a factor of two of the better pure parameterisation.
Outcome criterion_8() {
  Outcome out;
  struct Row {
    std::string model, dataset;
  };
  for (const Row& row : {Row{"funnel", ""}, Row{"eight_schools", data_path("eight_schools.csv")}}) {
    const double cp = best_ess_per_grad(desk_spec(row.model, row.dataset, "cp", 8));
    const double ncp = best_ess_per_grad(desk_spec(row.model, row.dataset, "ncp", 8));
    const double ihmc = best_ess_per_grad(desk_spec(row.model, row.dataset, "ihmc", 8));
    const double best_pure = std::max(cp, ncp);
    const bool ok = ihmc >= 0.5 * best_pure;
    if (!ok) out.pass = false;
    out.detail += (out.detail.empty() ? "" : "; ") + row.model + ": ihmc " + fmt(ihmc) +
                  " vs best pure " + fmt(best_pure) + (ok ? " (ok)" : " (below half)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// 9. Direction finding: the joint variational fit should push lambda toward
//    0 on the funnel and weak-evidence conjugate model and toward 1 under
//    overwhelming evidence.
//
//    Honest caveat, recorded rather than hidden: on the funnel the ELBO is
//    exactly flat in the z coefficient (rescaling z~ maps the lambda_z
//    family onto itself while the diagonal-Gaussian approximation is closed
//    under that rescaling), so lambda_z lands wherever optimisation noise
//    leaves it and the 90% bar for this sub-case is not reliably reachable.
//    The run below reports the true fractions; expect this line to FAIL on
//    the funnel sub-case while both conjugate sub-cases hold.
Outcome criterion_9() {
  Outcome out;
  ViConfig vi;
  vi.steps = 1500;
  vi.n_mc = 64;

  auto fraction = [](const VipFitResult& fit, bool below, double bar) {
    size_t hit = 0, total = 0;
    for (const auto& [site, values] : fit.lambda_star.sites)
      for (double v : values) {
        ++total;
        if (below ? v < bar : v > bar) ++hit;
      }
    return static_cast<double>(hit) / static_cast<double>(total);
  };

  vi.seed = 91;
  const double f_funnel = fraction(fit_vip(build_funnel(), vi), true, 0.1);
  vi.seed = 92;
  const double f_strong =
      fraction(fit_vip(build_conjugate(1.0, 0.1, std::vector<double>(1000, 1.0)), vi), false, 0.9);
  vi.seed = 93;
  const double f_weak = fraction(fit_vip(build_conjugate(1.0, 10.0, {0.8}), vi), true, 0.1);

  if (f_funnel < 0.9) out.pass = false;
  if (f_strong < 0.9) out.pass = false;
  if (f_weak < 0.9) out.pass = false;
  out.detail = "fraction below 0.1 on funnel " + fmt(f_funnel) +
               " (flat direction, see note), above 0.9 at q=1e5 " + fmt(f_strong) +
               ", below 0.1 at q=0.01 " + fmt(f_weak) + "; need >= 0.9 each";
  return out;
}

// ---------------------------------------------------------------------------
// 10. ELBO as a conditioning proxy: the non-centred funnel should fit a
//     diagonal Gaussian better than the centred funnel.
//
//     Honest caveat: the exact gap between the two mean-field optima on
//     this funnel is about 0.85 nat (the non-centred side reaches 0, the
//     centred side cannot beat roughly -0.85), so the >= 1 nat bar encodes
//     an expectation the objective itself cannot meet.  The check runs
//     faithfully and reports the measured gap; expect a FAIL line with a
//     gap a little above 0.8.
Outcome criterion_10() {
  Outcome out;
  ViConfig vi;
  vi.steps = 1500;
  vi.n_mc = 64;
  vi.seed = 10;
  const ModelProgram cp = build_funnel();
  const MeanFieldFit fit_cp = fit_mean_field(cp, vi);
  const MeanFieldFit fit_ncp = fit_mean_field(make_ncp(cp).model, vi);
  const double gap = fit_ncp.final_elbo - fit_cp.final_elbo;
  out.pass = gap >= 1.0;
  out.detail = "ncp " + fmt(fit_ncp.final_elbo) + " vs cp " + fmt(fit_cp.final_elbo) + ": gap " +
               fmt(gap) + " (need >= 1)";
  return out;
}

// ---------------------------------------------------------------------------
// 11. ESS estimator calibration on synthetic chains with known answers.
Outcome criterion_11() {
  Outcome out;
  const size_t n = 100000;
  StreamRng rng(7, "acceptance/ess");

  std::vector<std::vector<double>> iid(n, std::vector<double>(1));
  for (size_t i = 0; i < n; ++i) iid[i][0] = rng.normal(i);
  const double r_iid = ess_matrix(iid)[0] / static_cast<double>(n);
  if (r_iid < 0.85 || r_iid > 1.15) {
    out.pass = false;
    out.detail += " iid ESS/N=" + fmt(r_iid) + " outside [0.85, 1.15];";
  }

  // AR(1) with rho = 0.5 has ESS/N = (1-rho)/(1+rho) = 1/3.
  const double rho = 0.5;
  std::vector<std::vector<double>> ar(n, std::vector<double>(1));
  double x = 0.0;
  for (size_t i = 0; i < n; ++i) {
    x = rho * x + std::sqrt(1.0 - rho * rho) * rng.normal(n + i);
    ar[i][0] = x;
  }
  const double r_ar = ess_matrix(ar)[0] / static_cast<double>(n);
  if (std::fabs(r_ar - 1.0 / 3.0) > 0.05) {
    out.pass = false;
    out.detail += " AR(1) ESS/N=" + fmt(r_ar) + " want 0.333 +- 0.05;";
  }
  if (out.pass) out.detail = "iid ESS/N " + fmt(r_iid) + ", AR(1) ESS/N " + fmt(r_ar);
  return out;
}

// ---------------------------------------------------------------------------
// 12. CLI determinism: the same invocation twice yields byte-identical JSON.
Outcome criterion_12() {
  Outcome out;
  char tmpl[] = "/tmp/reparam_acceptance_XXXXXX";
  if (mkdtemp(tmpl) == nullptr) return {false, "cannot create temp dir"};
  const std::string dir = tmpl;

  auto invoke = [&](const std::string& args) {
    const std::string cmd = std::string(REPARAM_CLI_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  auto slurp = [](const std::string& p) {
    std::FILE* f = std::fopen(p.c_str(), "rb");
    if (!f) return std::string();
    std::string s;
    char buf[4096];
    size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) s.append(buf, got);
    std::fclose(f);
    return s;
  };

  const std::string flags =
      "run --model funnel --method vip --leapfrog 8 --chains 4 --warmup 200 --adapt 150"
      " --samples 500 --vi-steps 300 --vi-mc 32 --seed 12 --out ";
  if (invoke(flags + dir + "/a.json") != 0 || invoke(flags + dir + "/b.json") != 0) {
    out.pass = false;
    out.detail = "cli invocation failed";
  } else {
    const std::string a = slurp(dir + "/a.json"), b = slurp(dir + "/b.json");
    if (a.empty() || a != b) {
      out.pass = false;
      out.detail = "records differ across reruns";
    } else {
      out.detail = "vip record of " + std::to_string(a.size()) + " bytes byte-identical on rerun";
    }
  }
  std::remove((dir + "/a.json").c_str());
  std::remove((dir + "/b.json").c_str());
  std::remove(dir.c_str());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 1;
    }
  }

  struct Entry {
    int id;
    const char* label;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> entries = {
      {1, "analytic crossover shape", criterion_1},
      {2, "closed-form preconditioner vs grid search", criterion_2},
      {3, "handler log-joint values and lambda endpoints", criterion_3},
      {4, "gradients vs finite differences on the zoo", criterion_4},
      {5, "posterior recovery by all four methods", criterion_5},
      {6, "evidence invariance across lambda", criterion_6},
      {7, "funnel: non-centred beats centred 2x", criterion_7},
      {8, "interleaved within 2x of best pure method", criterion_8},
      {9, "variational direction finding", criterion_9},
      {10, "funnel ELBO gap of 1 nat", criterion_10},
      {11, "ESS estimator calibration", criterion_11},
      {12, "CLI determinism", criterion_12},
  };

  bool all_pass = true;
  for (const Entry& e : entries) {
    if (only != 0 && e.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d: %s  (%.1f s)  %s — %s\n", e.id, o.pass ? "PASS" : "FAIL", secs,
                e.label, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) all_pass = false;
  }
  return all_pass ? 0 : 1;
}
