#pragma once

// Hamiltonian Monte Carlo with a diagonal preconditioner.
//
// The preconditioner c enters as the mass matrix M = diag(c)^-2: momenta
// are drawn with standard deviation 1/c_i, the kinetic energy is
// (1/2) sum p_i^2 c_i^2 and the position drift is eps * c_i^2 * p_i, so a
// large c_i means wide moves in coordinate i.  The gradient at the current
// position is cached between steps: one transition with L leapfrog steps
// costs exactly L evaluations, plus one when a chain first starts.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "reparam/autodiff.hpp"
#include "reparam/errors.hpp"
#include "reparam/ess.hpp"
#include "reparam/model.hpp"
#include "reparam/reparam.hpp"
#include "reparam/rng.hpp"

namespace reparam {

struct HmcConfig {
  std::optional<int> num_leapfrog = 10;  // nullopt = resolved by the harness sweep
  double target_accept = 0.75;
  double adapt_rate = 0.02;
  int warmup_steps = 500;
  int adapt_steps = 300;
  int samples = 2000;
  int chains = 4;
  uint64_t seed = 0;
  double init_step_size = 0.1;

  void check() const {
    if (num_leapfrog && *num_leapfrog < 1)
      throw SchemaError("hmc config: num_leapfrog must be at least 1");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw SchemaError("hmc config: target_accept must lie in (0, 1)");
    if (!(adapt_rate >= 0.0)) throw SchemaError("hmc config: adapt_rate must be non-negative");
    if (warmup_steps < 0 || samples < 0)
      throw SchemaError("hmc config: warmup_steps and samples must be non-negative");
    if (adapt_steps < 0 || adapt_steps > warmup_steps)
      throw SchemaError("hmc config: adapt_steps must lie in [0, warmup_steps]");
    if (chains < 1) throw SchemaError("hmc config: chains must be at least 1");
    if (!(init_step_size > 0.0)) throw SchemaError("hmc config: init_step_size must be positive");
  }
};

// Multiplicative step-size update targeting an acceptance probability:
// up by e^rate when alpha exceeds the target, down when it falls short,
// unchanged at equality.
inline double adapt_step_size(double s, double alpha, double target = 0.75,
                              double rate = 0.02) {
  if (alpha > target) return s * std::exp(rate);
  if (alpha < target) return s * std::exp(-rate);
  return s;
}

namespace detail {

// L leapfrog steps in place.  grad_q must hold the gradient at q on entry
// and holds the gradient at the final position on exit; gradf is called
// exactly L times, once per new position.
template <typename GradF>
inline void leapfrog_inplace(GradF&& gradf, std::vector<double>& q, std::vector<double>& p,
                             std::vector<double>& grad_q, double eps, int L,
                             std::span<const double> precond) {
  const size_t n = q.size();
  for (int step = 0; step < L; ++step) {
    for (size_t i = 0; i < n; ++i) p[i] += 0.5 * eps * grad_q[i];
    for (size_t i = 0; i < n; ++i) q[i] += eps * precond[i] * precond[i] * p[i];
    grad_q = gradf(q);
    for (size_t i = 0; i < n; ++i) p[i] += 0.5 * eps * grad_q[i];
  }
}

inline double kinetic_energy(std::span<const double> p, std::span<const double> precond) {
  double k = 0.0;
  for (size_t i = 0; i < p.size(); ++i) k += 0.5 * p[i] * p[i] * precond[i] * precond[i];
  return k;
}

inline void check_precond(std::span<const double> precond, size_t dim) {
  if (precond.size() != dim)
    throw DimensionMismatch("preconditioner length does not match the latent dimension");
  for (double c : precond)
    if (!(c > 0.0) || !std::isfinite(c))
      throw InvalidDistribution("preconditioner entries must be positive and finite");
}

// Warmup step-size schedule.  Raw per-transition acceptance probabilities
// are nearly always 1 below the integrator's stability threshold and
// collapse just above it, so driving the multiplicative update with them
// directly equilibrates at the cliff edge, where the mean acceptance is far
// below the target.  The controller instead smooths acceptance with an
// exponential moving average and, once that average first drops below the
// target (the search phase always starts from a small step, so the first
// meaningful crossing is downward), shrinks the update rate geometrically so
// the step size settles instead of oscillating across the cliff.
struct StepSizeController {
  double ema;
  double rate;
  double target;
  int steps_seen = 0;
  bool crossed = false;

  StepSizeController(double target_accept, double base_rate)
      : ema(target_accept), rate(base_rate), target(target_accept) {}

  double update(double step_size, double alpha) {
    ema = 0.9 * ema + 0.1 * alpha;
    ++steps_seen;
    if (!crossed && steps_seen >= 10 && ema < target) crossed = true;
    if (crossed) rate *= 0.985;
    return adapt_step_size(step_size, ema, target, rate);
  }
};

// Runs fn(i) for i in [0, n) on up to REPARAM_THREADS workers (default:
// hardware concurrency).  Results must be written to disjoint slots.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("REPARAM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) workers = cap;
  }
  workers = std::min(std::max(workers, 1), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Standalone integrator matching the cost law L+1 (initial gradient plus
// one per step).  gradf(q) returns the gradient of log p at q.
template <typename GradF>
inline std::pair<std::vector<double>, std::vector<double>> leapfrog(
    GradF&& gradf, std::vector<double> q, std::vector<double> p, double eps, int L,
    std::span<const double> precond) {
  if (L < 1) throw SchemaError("leapfrog: L must be at least 1");
  if (!(eps > 0.0)) throw SchemaError("leapfrog: eps must be positive");
  detail::check_precond(precond, q.size());
  std::vector<double> g = gradf(q);
  detail::leapfrog_inplace(gradf, q, p, g, eps, L, precond);
  return {std::move(q), std::move(p)};
}

struct ChainState {
  std::vector<double> position;
  double step_size;
  std::vector<double> precond;
  StreamRng momentum_rng;
  StreamRng accept_rng;
  uint64_t step_index = 0;
  GradResult cache;
  bool cached = false;

  ChainState(std::vector<double> pos, double eps, std::vector<double> pre, uint64_t seed,
             const std::string& stream)
      : position(std::move(pos)),
        step_size(eps),
        precond(std::move(pre)),
        momentum_rng(seed, stream + "/momentum"),
        accept_rng(seed, stream + "/accept") {
    detail::check_precond(precond, position.size());
  }
};

// One Metropolis-corrected transition.  Returns the acceptance probability
// alpha = min(1, exp(-dH)); a trajectory that leaves the support or goes
// non-finite rejects with alpha = 0.
inline double hmc_step(const LogJointFn& logp, ChainState& st, int L) {
  const size_t n = st.position.size();
  if (!st.cached) {
    st.cache = logp.value_and_grad(st.position);
    st.cached = true;
  }

  std::vector<double> p(n);
  for (size_t i = 0; i < n; ++i)
    p[i] = st.momentum_rng.normal(st.step_index * n + i) / st.precond[i];
  const double h0 = -st.cache.value + detail::kinetic_energy(p, st.precond);

  std::vector<double> q = st.position;
  std::vector<double> g = st.cache.gradient;
  double end_value = 0.0;
  bool ok = true;
  try {
    auto gradf = [&](const std::vector<double>& pos) {
      GradResult r = logp.value_and_grad(pos);
      end_value = r.value;
      return std::move(r.gradient);
    };
    detail::leapfrog_inplace(gradf, q, p, g, st.step_size, L, st.precond);
  } catch (const NonFiniteEvaluation&) {
    ok = false;
  } catch (const InvalidDistribution&) {
    ok = false;
  }

  double alpha = 0.0;
  if (ok) {
    const double dh = (-end_value + detail::kinetic_energy(p, st.precond)) - h0;
    alpha = std::isfinite(dh) ? std::min(1.0, std::exp(-dh)) : 0.0;
  }
  if (ok && st.accept_rng.uniform(st.step_index) < alpha) {
    st.position = std::move(q);
    st.cache = GradResult{end_value, std::move(g)};
  }
  ++st.step_index;
  return alpha;
}

struct HmcRun {
  std::vector<std::vector<std::vector<double>>> chains;  // [chain][draw][coordinate]
  std::vector<double> accept_rates;                      // post-warmup mean per chain
  std::vector<double> step_sizes;                        // final adapted value per chain
  std::vector<uint64_t> grad_evals_per_chain;            // charged cost model
  uint64_t grad_evals = 0;                               // total charged cost
  int leapfrog = 0;
};

// Runs cfg.chains independent chains.  Chain c starts from
// inits[c % inits.size()]; step size adapts during the first adapt_steps of
// warmup and is then frozen; warmup draws are discarded.  The charged
// gradient cost is 1 + (warmup + samples) * L per chain.
inline HmcRun run_hmc(const LogJointFn& logp, const HmcConfig& cfg,
                      const std::vector<std::vector<double>>& inits,
                      const std::vector<double>& precond,
                      const std::string& stream_tag = "hmc") {
  cfg.check();
  if (!cfg.num_leapfrog)
    throw SchemaError("hmc config: leapfrog 'auto' must be resolved by the sweep first");
  const int L = *cfg.num_leapfrog;
  const size_t dim = logp.dim();
  detail::check_precond(precond, dim);
  if (inits.empty()) throw DimensionMismatch("run_hmc needs at least one initial position");
  for (const auto& init : inits)
    if (init.size() != dim)
      throw DimensionMismatch("initial position length does not match the latent dimension");

  HmcRun out;
  out.leapfrog = L;
  out.chains.resize(static_cast<size_t>(cfg.chains));
  out.accept_rates.resize(static_cast<size_t>(cfg.chains), 0.0);
  out.step_sizes.resize(static_cast<size_t>(cfg.chains), 0.0);
  out.grad_evals_per_chain.resize(static_cast<size_t>(cfg.chains), 0);

  detail::parallel_for(cfg.chains, [&](int c) {
    ChainState st(inits[static_cast<size_t>(c) % inits.size()], cfg.init_step_size, precond,
                  cfg.seed, stream_tag + "/chain/" + std::to_string(c));
    detail::StepSizeController ctl(cfg.target_accept, cfg.adapt_rate);
    for (int s = 0; s < cfg.warmup_steps; ++s) {
      const double a = hmc_step(logp, st, L);
      if (s < cfg.adapt_steps) st.step_size = ctl.update(st.step_size, a);
    }
    double accept = 0.0;
    auto& draws = out.chains[static_cast<size_t>(c)];
    draws.reserve(static_cast<size_t>(cfg.samples));
    for (int s = 0; s < cfg.samples; ++s) {
      accept += hmc_step(logp, st, L);
      draws.push_back(st.position);
    }
    out.accept_rates[static_cast<size_t>(c)] = cfg.samples > 0 ? accept / cfg.samples : 0.0;
    out.step_sizes[static_cast<size_t>(c)] = st.step_size;
    out.grad_evals_per_chain[static_cast<size_t>(c)] =
        1 + static_cast<uint64_t>(cfg.warmup_steps + cfg.samples) * static_cast<uint64_t>(L);
  });
  for (uint64_t g : out.grad_evals_per_chain) out.grad_evals += g;
  return out;
}

struct InterleavedRun {
  std::vector<std::vector<std::vector<double>>> chains;  // original-space draws
  std::vector<double> accept_rates;                      // mean over both kernels
  std::vector<double> cp_step_sizes;
  std::vector<double> ncp_step_sizes;
  std::vector<uint64_t> grad_evals_per_chain;
  uint64_t grad_evals = 0;
  int leapfrog = 0;
};

// Alternates one transition in the original (centred) coordinates with one
// in the non-centred coordinates of make_ncp, mapping through the bijection
// between them, and emits every draw in the original space.  Each kernel
// keeps its own step size and preconditioner; the leapfrog length is
// shared.  The charged cost per chain is 2 * (1 + (warmup + samples) * L).
inline InterleavedRun interleaved_hmc(const ModelProgram& model_cp, const HmcConfig& cfg,
                                      const std::vector<std::vector<double>>& inits,
                                      const std::vector<double>& precond_cp,
                                      const std::vector<double>& precond_ncp) {
  cfg.check();
  if (!cfg.num_leapfrog)
    throw SchemaError("hmc config: leapfrog 'auto' must be resolved by the sweep first");
  const int L = *cfg.num_leapfrog;

  const NcpModel ncp = make_ncp(model_cp);
  const LogJointFn lp_cp = make_log_joint(model_cp);
  const LogJointFn lp_ncp = make_log_joint(ncp.model);
  const size_t dim = lp_cp.dim();
  detail::check_precond(precond_cp, dim);
  detail::check_precond(precond_ncp, dim);
  if (inits.empty()) throw DimensionMismatch("interleaved_hmc needs at least one initial position");
  for (const auto& init : inits)
    if (init.size() != dim)
      throw DimensionMismatch("initial position length does not match the latent dimension");

  InterleavedRun out;
  out.leapfrog = L;
  out.chains.resize(static_cast<size_t>(cfg.chains));
  out.accept_rates.resize(static_cast<size_t>(cfg.chains), 0.0);
  out.cp_step_sizes.resize(static_cast<size_t>(cfg.chains), 0.0);
  out.ncp_step_sizes.resize(static_cast<size_t>(cfg.chains), 0.0);
  out.grad_evals_per_chain.resize(static_cast<size_t>(cfg.chains), 0);

  detail::parallel_for(cfg.chains, [&](int c) {
    const std::string tag = "ihmc/chain/" + std::to_string(c);
    std::vector<double> z = inits[static_cast<size_t>(c) % inits.size()];
    ChainState cp_state(z, cfg.init_step_size, precond_cp, cfg.seed, tag + "/cp");
    ChainState ncp_state(ncp.bijection.inverse(z), cfg.init_step_size, precond_ncp, cfg.seed,
                         tag + "/ncp");
    detail::StepSizeController cp_ctl(cfg.target_accept, cfg.adapt_rate);
    detail::StepSizeController ncp_ctl(cfg.target_accept, cfg.adapt_rate);
    double accept = 0.0;
    auto& draws = out.chains[static_cast<size_t>(c)];
    draws.reserve(static_cast<size_t>(cfg.samples));
    const int total = cfg.warmup_steps + cfg.samples;
    for (int s = 0; s < total; ++s) {
      cp_state.position = z;
      cp_state.cached = false;
      const double a_cp = hmc_step(lp_cp, cp_state, L);

      ncp_state.position = ncp.bijection.inverse(cp_state.position);
      ncp_state.cached = false;
      const double a_ncp = hmc_step(lp_ncp, ncp_state, L);

      z = ncp.bijection.forward(ncp_state.position);
      if (s < cfg.adapt_steps) {
        cp_state.step_size = cp_ctl.update(cp_state.step_size, a_cp);
        ncp_state.step_size = ncp_ctl.update(ncp_state.step_size, a_ncp);
      }
      if (s >= cfg.warmup_steps) {
        accept += 0.5 * (a_cp + a_ncp);
        draws.push_back(z);
      }
    }
    out.accept_rates[static_cast<size_t>(c)] = cfg.samples > 0 ? accept / cfg.samples : 0.0;
    out.cp_step_sizes[static_cast<size_t>(c)] = cp_state.step_size;
    out.ncp_step_sizes[static_cast<size_t>(c)] = ncp_state.step_size;
    out.grad_evals_per_chain[static_cast<size_t>(c)] =
        2 * (1 + static_cast<uint64_t>(total) * static_cast<uint64_t>(L));
  });
  for (uint64_t g : out.grad_evals_per_chain) out.grad_evals += g;
  return out;
}

struct ChainDiagnostics {
  std::vector<double> ess_per_variable;
  double min_ess = 0.0;
  uint64_t grad_evals = 0;
  double ess_per_1000_grads = 0.0;
  double accept_rate = 0.0;
  // Between-chain standard error of the per-chain min-ESS per 1000
  // gradients (each chain scored against its own charged cost).
  double stderr_ess_per_1000 = 0.0;
};

inline ChainDiagnostics compute_diagnostics(
    const std::vector<std::vector<std::vector<double>>>& chains,
    const std::vector<uint64_t>& grad_evals_per_chain, uint64_t grad_evals_total,
    const std::vector<double>& accept_rates) {
  ChainDiagnostics d;
  d.ess_per_variable = ess_per_variable(chains);
  d.min_ess = 0.0;
  if (!d.ess_per_variable.empty()) {
    d.min_ess = d.ess_per_variable.front();
    for (double e : d.ess_per_variable) d.min_ess = std::min(d.min_ess, e);
  }
  d.grad_evals = grad_evals_total;
  d.ess_per_1000_grads = grad_evals_total > 0 ? 1000.0 * d.min_ess / grad_evals_total : 0.0;
  if (!accept_rates.empty()) {
    for (double a : accept_rates) d.accept_rate += a;
    d.accept_rate /= static_cast<double>(accept_rates.size());
  }

  std::vector<double> per_chain;
  for (size_t c = 0; c < chains.size(); ++c) {
    if (c >= grad_evals_per_chain.size() || grad_evals_per_chain[c] == 0) continue;
    const std::vector<double> e = ess_matrix(chains[c]);
    if (e.empty()) continue;
    double lo = e.front();
    for (double v : e) lo = std::min(lo, v);
    per_chain.push_back(1000.0 * lo / static_cast<double>(grad_evals_per_chain[c]));
  }
  if (per_chain.size() >= 2) {
    double mean = 0.0;
    for (double v : per_chain) mean += v;
    mean /= static_cast<double>(per_chain.size());
    double ss = 0.0;
    for (double v : per_chain) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(per_chain.size() - 1));
    d.stderr_ess_per_1000 = sd / std::sqrt(static_cast<double>(per_chain.size()));
  }
  return d;
}

}  // namespace reparam
