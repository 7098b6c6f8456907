#pragma once

// Mean-field variational inference and coefficient tuning.
//
// The variational family replaces every latent Normal site with an
// independent Normal whose location and (softplus-unconstrained) scale are
// live parameters shared through a store, and swallows observed sites, so
// the guide's log joint is exactly log q(z; theta).  ELBO gradients are
// pathwise: each Monte Carlo draw is z = mu + softplus(rho) * eps with eps
// fixed by the seed, and one reverse sweep per step differentiates the
// averaged bound with respect to every bound parameter, including the
// partial-centring coefficients when those are tape inputs too.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reparam/autodiff.hpp"
#include "reparam/errors.hpp"
#include "reparam/hmc.hpp"
#include "reparam/model.hpp"
#include "reparam/reparam.hpp"
#include "reparam/rng.hpp"

namespace reparam {

// softplus(kUnitScaleRho) == 1, the initial unconstrained scale.
inline const double kUnitScaleRho = std::log(std::exp(1.0) - 1.0);

// Live parameters of the mean-field family, keyed by the guided model's
// latent sites in layout order.  sigma = softplus(rho) keeps scales
// positive without constrained-support machinery.  During optimisation the
// bound values are tape inputs; bind_const detaches them again.
struct VariationalParams {
  std::vector<std::pair<std::string, int>> sites;
  std::map<std::string, Vals> mu, rho;

  size_t latent_dim() const {
    size_t n = 0;
    for (const auto& s : sites) n += static_cast<size_t>(s.second);
    return n;
  }

  size_t param_dim() const { return 2 * latent_dim(); }

  void init() {
    mu.clear();
    rho.clear();
    for (const auto& [name, len] : sites) {
      mu[name] = Vals(static_cast<size_t>(len), Var(0.0));
      rho[name] = Vals(static_cast<size_t>(len), Var(kUnitScaleRho));
    }
  }

  // theta = [all mu | all rho], flattened in site order.
  void bind_flat(std::span<const Var> theta) {
    const size_t n = latent_dim();
    if (theta.size() != 2 * n)
      throw DimensionMismatch("variational parameter vector must have length " +
                              std::to_string(2 * n));
    size_t off = 0;
    for (const auto& [name, len] : sites) {
      mu[name] = Vals(theta.begin() + off, theta.begin() + off + len);
      rho[name] = Vals(theta.begin() + n + off, theta.begin() + n + off + len);
      off += static_cast<size_t>(len);
    }
  }

  void bind_const(std::span<const double> theta) {
    Vals v;
    v.reserve(theta.size());
    for (double x : theta) v.push_back(Var(x));
    bind_flat(v);
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(param_dim());
    for (const auto& [name, len] : sites)
      for (const Var& x : mu.at(name)) out.push_back(x.v);
    for (const auto& [name, len] : sites)
      for (const Var& x : rho.at(name)) out.push_back(x.v);
    return out;
  }

  std::vector<double> means() const {
    std::vector<double> out;
    out.reserve(latent_dim());
    for (const auto& [name, len] : sites)
      for (const Var& x : mu.at(name)) out.push_back(x.v);
    return out;
  }

  std::vector<double> sigmas() const {
    std::vector<double> out;
    out.reserve(latent_dim());
    for (const auto& [name, len] : sites)
      for (const Var& x : rho.at(name)) out.push_back(softplus(x.v));
    return out;
  }
};

struct VariationalModel {
  ModelProgram model;  // the guide Q
  std::shared_ptr<VariationalParams> params;
};

// Builds the mean-field guide for `model`: latent Normal sites draw from
// N(mu, softplus(rho)) with parameters from the shared store, observed
// sites return their values without contributing a density term.  The
// guide handler sits innermost so it sees sites after any reparameterising
// rewrite, i.e. in the same coordinates the target log joint uses.
inline VariationalModel make_variational(const ModelProgram& model) {
  LogJointFn probe = make_log_joint(model);
  auto params = std::make_shared<VariationalParams>();
  for (const auto& slot : probe.layout().slots)
    params->sites.emplace_back(slot.name, static_cast<int>(slot.len));
  params->init();

  ModelProgram q = model;
  q.handlers.push_back([params](SiteRequest req, const NextFn& next, Executor&) -> Vals {
    if (req.is_observed()) {
      Vals v;
      v.reserve(req.observed->size());
      for (double x : *req.observed) v.push_back(Var(x));
      return v;
    }
    if (req.dist.kind != DistKind::kNormal)
      throw InvalidDistribution("mean-field family covers Normal latents only (site '" +
                                req.name + "')");
    const auto mu_it = params->mu.find(req.name);
    const auto rho_it = params->rho.find(req.name);
    if (mu_it == params->mu.end() || rho_it == params->rho.end())
      throw UnknownSite("no variational parameters for site '" + req.name + "'");
    Vals scale;
    scale.reserve(rho_it->second.size());
    for (const Var& r : rho_it->second) scale.push_back(softplus(r));
    req.dist = Dist::normal_vec(req.dist.len, mu_it->second, std::move(scale));
    return next(std::move(req));
  });
  return {std::move(q), std::move(params)};
}

namespace detail {

// Averaged pathwise ELBO sample as a Var on the active tape.  Parameters
// (and any coefficient store inside logp) must already be bound; epsilon
// draws are a pure function of (seed, draw, coordinate).
inline Var elbo_average(const LogJointFn& logp, const LogJointFn& logq,
                        const VariationalParams& params, int n_mc, uint64_t seed) {
  if (n_mc < 1) throw DimensionMismatch("ELBO estimation needs at least one draw");
  const size_t n = logp.dim();
  if (logq.dim() != n || params.latent_dim() != n)
    throw DimensionMismatch("guide layout does not match the target layout");

  Vals mu_flat, sigma_flat;
  mu_flat.reserve(n);
  sigma_flat.reserve(n);
  for (const auto& [name, len] : params.sites) {
    for (const Var& m : params.mu.at(name)) mu_flat.push_back(m);
    for (const Var& r : params.rho.at(name)) sigma_flat.push_back(softplus(r));
  }

  StreamRng rng(seed, "vi/eps");
  Var acc(0.0);
  Vals z(n);
  for (int k = 0; k < n_mc; ++k) {
    for (size_t i = 0; i < n; ++i) {
      const double eps = rng.normal(static_cast<uint64_t>(k) * n + i);
      z[i] = mu_flat[i] + sigma_flat[i] * Var(eps);
    }
    acc += logp.eval(z) - logq.eval(z);
  }
  return acc / Var(static_cast<double>(n_mc));
}

inline uint64_t vi_step_seed(uint64_t seed, int step) {
  // Deterministic and shared across the learning-rate sweep.
  return seed + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(step + 1);
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double mean_of_tail(const std::vector<double>& v, size_t window) {
  const size_t w = std::min(window, v.size());
  double s = 0.0;
  for (size_t i = v.size() - w; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(w);
}

}  // namespace detail

struct ElboEstimate {
  double value = 0.0;
  std::vector<double> grad;  // w.r.t. [mu | rho]
};

// One fixed-seed estimate of the bound and its pathwise gradient with
// respect to the guide's flat parameter vector.
inline ElboEstimate elbo_estimate(const LogJointFn& logp, VariationalModel& q, int n_mc,
                                  uint64_t seed) {
  LogJointFn logq = make_log_joint(q.model);
  const std::vector<double> theta = q.params->flat();
  GradResult r = grad(
      [&](std::span<const Var> th) {
        q.params->bind_flat(th);
        return detail::elbo_average(logp, logq, *q.params, n_mc, seed);
      },
      theta);
  q.params->bind_const(theta);  // detach from the dead tape
  return {r.value, std::move(r.gradient)};
}

struct JointElboEstimate {
  double value = 0.0;
  std::vector<double> grad_theta;         // w.r.t. [mu | rho]
  std::vector<double> grad_lambda_tilde;  // w.r.t. the pre-sigmoid coefficients
};

// Fixed-seed bound and gradients for a guide over a coefficient-tunable
// target: lambda = sigmoid(lambda_tilde) is bound into the store so the
// reverse sweep reaches the centring coefficients as well as theta.
inline JointElboEstimate elbo_estimate(const LogJointFn& logp, VariationalModel& q,
                                       LambdaStore& store, std::span<const double> lambda_tilde,
                                       int n_mc, uint64_t seed) {
  LogJointFn logq = make_log_joint(q.model);
  const size_t pd = q.params->param_dim();
  const size_t ld = store.dim();
  if (lambda_tilde.size() != ld)
    throw DimensionMismatch("expected one unconstrained coefficient per tunable element");

  std::vector<double> x = q.params->flat();
  x.insert(x.end(), lambda_tilde.begin(), lambda_tilde.end());
  GradResult r = grad(
      [&](std::span<const Var> in) {
        q.params->bind_flat(in.subspan(0, pd));
        Vals lam;
        lam.reserve(ld);
        for (size_t j = 0; j < ld; ++j) lam.push_back(sigmoid(in[pd + j]));
        store.bind_flat(lam);
        return detail::elbo_average(logp, logq, *q.params, n_mc, seed);
      },
      x);
  q.params->bind_const(std::span<const double>(x.data(), pd));
  Vals lam;
  lam.reserve(ld);
  for (size_t j = 0; j < ld; ++j) lam.push_back(Var(sigmoid(x[pd + j])));
  store.bind_flat(lam);

  JointElboEstimate out;
  out.value = r.value;
  out.grad_theta.assign(r.gradient.begin(), r.gradient.begin() + static_cast<long>(pd));
  out.grad_lambda_tilde.assign(r.gradient.begin() + static_cast<long>(pd), r.gradient.end());
  return out;
}

// Adam in ascent form with bias correction and the step-count learning-rate
// schedule: lr for steps 1-1000, lr/5 for 1001-2000, lr/20 afterwards.
struct AdamState {
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t t = 0;
  std::vector<double> m, v;
};

inline void adam_step(AdamState& st, std::vector<double>& params,
                      const std::vector<double>& grad_) {
  if (params.size() != grad_.size())
    throw DimensionMismatch("Adam parameter and gradient lengths differ");
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size())
    throw DimensionMismatch("Adam state does not match the parameter length");
  ++st.t;
  const double lr_t = st.t <= 1000 ? st.lr : (st.t <= 2000 ? st.lr / 5.0 : st.lr / 20.0);
  const double b1c = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double b2c = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad_[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad_[i] * grad_[i];
    params[i] += lr_t * (st.m[i] / b1c) / (std::sqrt(st.v[i] / b2c) + st.eps);
  }
}

struct ViConfig {
  int steps = 3000;
  int n_mc = 256;
  std::vector<double> lr_grid = {0.02, 0.05, 0.1, 0.2, 0.4};
  uint64_t seed = 0;

  void check() const {
    if (steps < 1 || n_mc < 1) throw SchemaError("vi config: steps and n_mc must be positive");
    if (lr_grid.empty()) throw SchemaError("vi config: learning-rate grid is empty");
    for (double lr : lr_grid)
      if (!(lr > 0.0)) throw SchemaError("vi config: learning rates must be positive");
  }
};

struct MeanFieldFit {
  std::vector<std::pair<std::string, int>> sites;  // guided layout
  std::vector<double> mean;                        // flat, layout order
  std::vector<double> sigma;                       // flat, strictly positive
  double final_elbo = -std::numeric_limits<double>::infinity();
  std::vector<double> elbo_trace;                  // winning branch, one entry per step
  double lr = 0.0;
  uint64_t density_evals = 0;  // target-density evaluations spent (all branches)
};

// Fits the mean-field family by stochastic gradient ascent, one branch per
// learning rate with shared per-step Monte Carlo seeds, and returns the
// branch with the best final bound (mean of the last 100 estimates).
// Branches whose estimate or gradient goes non-finite are discarded; if
// every branch fails the optimisation throws.
inline MeanFieldFit fit_mean_field(const ModelProgram& model, const ViConfig& cfg) {
  cfg.check();
  const LogJointFn logp = make_log_joint(model);
  MeanFieldFit best;
  bool any = false;
  uint64_t evals = 0;

  for (double lr : cfg.lr_grid) {
    VariationalModel q = make_variational(model);
    const LogJointFn logq = make_log_joint(q.model);
    std::vector<double> theta = q.params->flat();
    AdamState st;
    st.lr = lr;
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(cfg.steps));
    bool failed = false;

    for (int s = 0; s < cfg.steps; ++s) {
      GradResult g;
      try {
        g = grad(
            [&](std::span<const Var> th) {
              q.params->bind_flat(th);
              return detail::elbo_average(logp, logq, *q.params, cfg.n_mc,
                                          detail::vi_step_seed(cfg.seed, s));
            },
            theta);
      } catch (const NonFiniteEvaluation&) {
        failed = true;
        break;
      }
      evals += static_cast<uint64_t>(cfg.n_mc);
      q.params->bind_const(theta);
      if (!detail::all_finite(g.gradient)) {
        failed = true;
        break;
      }
      trace.push_back(g.value);
      adam_step(st, theta, g.gradient);
    }
    if (failed || trace.empty()) continue;

    q.params->bind_const(theta);
    const double final_elbo = detail::mean_of_tail(trace, 100);
    any = true;
    if (final_elbo > best.final_elbo) {
      best.sites = q.params->sites;
      best.mean = q.params->means();
      best.sigma = q.params->sigmas();
      best.final_elbo = final_elbo;
      best.elbo_trace = std::move(trace);
      best.lr = lr;
    }
  }
  if (!any) throw OptimisationFailed("every mean-field learning-rate branch went non-finite");
  best.density_evals = evals;
  return best;
}

struct VipFitResult {
  ParameterisationParams lambda_star;              // per original site, in (0, 1)
  std::vector<std::pair<std::string, int>> theta_sites;  // transformed layout
  std::vector<double> theta_mean;
  std::vector<double> theta_sigma;
  std::vector<double> elbo_trace;
  double final_elbo = -std::numeric_limits<double>::infinity();
  double lr = 0.0;
  uint64_t density_evals = 0;
};

// Jointly tunes the variational parameters and the partial-centring
// coefficients: lambda = sigmoid(lambda_tilde) stays strictly inside (0, 1)
// and rides the same Adam vector as theta.  Sweep and selection mirror
// fit_mean_field.
inline VipFitResult fit_vip(const ModelProgram& model, const ViConfig& cfg) {
  cfg.check();
  const auto shapes = reparameterisable_sites(model);
  if (shapes.empty())
    throw InvalidParameterisation("the model has no site whose centring can be tuned");

  VipFitResult best;
  bool any = false;
  uint64_t evals = 0;

  for (double lr : cfg.lr_grid) {
    VipModel vip = make_vip(model, ParameterisationParams::constant(shapes, 0.5));
    const LogJointFn logp = make_log_joint(vip.model);
    VariationalModel q = make_variational(vip.model);
    const LogJointFn logq = make_log_joint(q.model);

    const size_t pd = q.params->param_dim();
    const size_t ld = vip.store->dim();
    std::vector<double> x = q.params->flat();
    x.resize(pd + ld, 0.0);  // lambda_tilde starts at the sigmoid midpoint

    auto rebind_const = [&](const std::vector<double>& vals) {
      q.params->bind_const(std::span<const double>(vals.data(), pd));
      Vals lam;
      lam.reserve(ld);
      for (size_t j = 0; j < ld; ++j) lam.push_back(Var(sigmoid(vals[pd + j])));
      vip.store->bind_flat(lam);
    };

    AdamState st;
    st.lr = lr;
    std::vector<double> trace;
    trace.reserve(static_cast<size_t>(cfg.steps));
    bool failed = false;

    for (int s = 0; s < cfg.steps; ++s) {
      GradResult g;
      try {
        g = grad(
            [&](std::span<const Var> in) {
              q.params->bind_flat(in.subspan(0, pd));
              Vals lam;
              lam.reserve(ld);
              for (size_t j = 0; j < ld; ++j) lam.push_back(sigmoid(in[pd + j]));
              vip.store->bind_flat(lam);
              return detail::elbo_average(logp, logq, *q.params, cfg.n_mc,
                                          detail::vi_step_seed(cfg.seed, s));
            },
            x);
      } catch (const NonFiniteEvaluation&) {
        failed = true;
        break;
      }
      evals += static_cast<uint64_t>(cfg.n_mc);
      rebind_const(x);
      if (!detail::all_finite(g.gradient)) {
        failed = true;
        break;
      }
      trace.push_back(g.value);
      adam_step(st, x, g.gradient);
    }
    if (failed || trace.empty()) continue;

    rebind_const(x);
    const double final_elbo = detail::mean_of_tail(trace, 100);
    any = true;
    if (final_elbo > best.final_elbo) {
      best.lambda_star = vip.store->snapshot();
      best.theta_sites = q.params->sites;
      best.theta_mean = q.params->means();
      best.theta_sigma = q.params->sigmas();
      best.final_elbo = final_elbo;
      best.elbo_trace = std::move(trace);
      best.lr = lr;
    }
  }
  if (!any) throw OptimisationFailed("every coefficient-tuning learning-rate branch went non-finite");
  best.density_evals = evals;
  return best;
}

struct VipHmcRun {
  VipFitResult fit;
  std::vector<std::vector<std::vector<double>>> chains;  // original-space draws
  std::vector<std::vector<double>> inits;                // transformed-space starts
  HmcRun hmc;                                            // transformed-space run
  uint64_t density_evals = 0;                            // VI preprocessing cost
};

// Samples the lambda-reparameterised model with HMC, starting chains from
// the fitted variational distribution and preconditioning with its scales,
// then maps every draw back to the original coordinates.
inline VipHmcRun vip_hmc_frozen(const ModelProgram& model, const ParameterisationParams& lambda,
                                std::span<const double> q_mean, std::span<const double> q_sigma,
                                const HmcConfig& cfg, const std::string& stream_tag = "hmc") {
  cfg.check();
  VipModel vip = make_vip(model, lambda);
  const LogJointFn lj = make_log_joint(vip.model);
  const size_t n = lj.dim();
  if (q_mean.size() != n || q_sigma.size() != n)
    throw DimensionMismatch("variational moments do not match the transformed layout");

  VipHmcRun out;
  out.inits.reserve(static_cast<size_t>(cfg.chains));
  for (int c = 0; c < cfg.chains; ++c) {
    StreamRng rng(cfg.seed, "vip/init/chain/" + std::to_string(c));
    std::vector<double> z(n);
    for (size_t i = 0; i < n; ++i) z[i] = q_mean[i] + q_sigma[i] * rng.normal(i);
    out.inits.push_back(std::move(z));
  }
  const std::vector<double> precond(q_sigma.begin(), q_sigma.end());
  out.hmc = run_hmc(lj, cfg, out.inits, precond, stream_tag);

  out.chains.resize(out.hmc.chains.size());
  for (size_t c = 0; c < out.hmc.chains.size(); ++c) {
    out.chains[c].reserve(out.hmc.chains[c].size());
    for (const auto& draw : out.hmc.chains[c])
      out.chains[c].push_back(vip.bijection.forward(draw));
  }
  return out;
}

inline VipHmcRun vip_hmc(const ModelProgram& model, const HmcConfig& cfg, const ViConfig& vi) {
  VipFitResult fit = fit_vip(model, vi);
  VipHmcRun run = vip_hmc_frozen(model, fit.lambda_star, fit.theta_mean, fit.theta_sigma, cfg);
  run.density_evals = fit.density_evals;
  run.fit = std::move(fit);
  return run;
}

}  // namespace reparam
