#pragma once

// Batch experiment pipelines: one entry point per sampling method, every
// method reporting draws in the original model coordinates, plus the
// serialisation surface (JSON record of truth, CSV aggregation rows) and
// the leapfrog sweep that replaces hand-tuned trajectory lengths.
//
// Cost accounting: grad_evals counts the sampler's charged gradient
// evaluations only.  Variational preprocessing work is recorded separately
// as vi_density_evals so ESS-per-gradient comparisons stay between
// samplers, not between optimisers.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "reparam/ess.hpp"
#include "reparam/hmc.hpp"
#include "reparam/model.hpp"
#include "reparam/models.hpp"
#include "reparam/reparam.hpp"
#include "reparam/rng.hpp"
#include "reparam/vi.hpp"

namespace reparam {

struct ExperimentSpec {
  std::string model;    // zoo entry name
  std::string dataset;  // CSV path; empty for data-free models
  std::string method;   // cp | ncp | ihmc | vip
  HmcConfig hmc;        // num_leapfrog empty = resolve with sweep_leapfrog
  ViConfig vi;
  uint64_t seed = 0;

  void check() const {
    if (method != "cp" && method != "ncp" && method != "ihmc" && method != "vip")
      throw SchemaError("method must be one of cp, ncp, ihmc, vip (got '" + method + "')");
    if (model.empty()) throw SchemaError("experiment needs a model name");
    hmc.check();
    vi.check();
  }
};

struct MethodRun {
  std::vector<std::vector<std::vector<double>>> chains;  // original-space draws
  std::vector<uint64_t> grad_evals_per_chain;
  uint64_t grad_evals = 0;
  std::vector<double> accept_rates;
  int leapfrog = 0;
  double vi_elbo = -std::numeric_limits<double>::infinity();
  double vi_elbo_cp = 0.0, vi_elbo_ncp = 0.0;  // ihmc runs two fits
  uint64_t vi_density_evals = 0;
  ParameterisationParams lambda_star;  // non-empty for vip only
};

namespace detail {

// Chain starts drawn from the fitted guide, one named stream per chain so
// chain count changes never perturb other chains' draws.
inline std::vector<std::vector<double>> guide_inits(const std::vector<double>& mean,
                                                    const std::vector<double>& sigma, int chains,
                                                    uint64_t seed) {
  std::vector<std::vector<double>> inits;
  inits.reserve(static_cast<size_t>(chains));
  for (int c = 0; c < chains; ++c) {
    StreamRng rng(seed, "init/chain/" + std::to_string(c));
    std::vector<double> z(mean.size());
    for (size_t i = 0; i < z.size(); ++i) z[i] = mean[i] + sigma[i] * rng.normal(i);
    inits.push_back(std::move(z));
  }
  return inits;
}

}  // namespace detail

// Runs one method end to end: mean-field preprocessing for chain starts and
// diagonal preconditioning, then sampling, then mapping every draw back to
// the original coordinates.
inline MethodRun run_method(const ModelProgram& model, const ExperimentSpec& spec) {
  spec.check();
  HmcConfig hmc = spec.hmc;
  hmc.seed = spec.seed;
  ViConfig vi = spec.vi;
  vi.seed = spec.seed;

  MethodRun out;
  if (spec.method == "cp") {
    const MeanFieldFit fit = fit_mean_field(model, vi);
    const LogJointFn logp = make_log_joint(model);
    const auto inits = detail::guide_inits(fit.mean, fit.sigma, hmc.chains, spec.seed);
    HmcRun run = run_hmc(logp, hmc, inits, fit.sigma, "hmc");
    out.chains = std::move(run.chains);
    out.grad_evals_per_chain = std::move(run.grad_evals_per_chain);
    out.grad_evals = run.grad_evals;
    out.accept_rates = std::move(run.accept_rates);
    out.leapfrog = run.leapfrog;
    out.vi_elbo = fit.final_elbo;
    out.vi_density_evals = fit.density_evals;
  } else if (spec.method == "ncp") {
    const NcpModel ncp = make_ncp(model);
    const MeanFieldFit fit = fit_mean_field(ncp.model, vi);
    const LogJointFn logp = make_log_joint(ncp.model);
    const auto inits = detail::guide_inits(fit.mean, fit.sigma, hmc.chains, spec.seed);
    HmcRun run = run_hmc(logp, hmc, inits, fit.sigma, "hmc");
    out.chains.resize(run.chains.size());
    for (size_t c = 0; c < run.chains.size(); ++c) {
      out.chains[c].reserve(run.chains[c].size());
      for (const auto& draw : run.chains[c]) out.chains[c].push_back(ncp.bijection.forward(draw));
    }
    out.grad_evals_per_chain = std::move(run.grad_evals_per_chain);
    out.grad_evals = run.grad_evals;
    out.accept_rates = std::move(run.accept_rates);
    out.leapfrog = run.leapfrog;
    out.vi_elbo = fit.final_elbo;
    out.vi_density_evals = fit.density_evals;
  } else if (spec.method == "ihmc") {
    const NcpModel ncp = make_ncp(model);
    const MeanFieldFit fit_cp = fit_mean_field(model, vi);
    const MeanFieldFit fit_ncp = fit_mean_field(ncp.model, vi);
    const auto inits = detail::guide_inits(fit_cp.mean, fit_cp.sigma, hmc.chains, spec.seed);
    InterleavedRun run = interleaved_hmc(model, hmc, inits, fit_cp.sigma, fit_ncp.sigma);
    out.chains = std::move(run.chains);
    out.grad_evals_per_chain = std::move(run.grad_evals_per_chain);
    out.grad_evals = run.grad_evals;
    out.accept_rates = std::move(run.accept_rates);
    out.leapfrog = run.leapfrog;
    out.vi_elbo_cp = fit_cp.final_elbo;
    out.vi_elbo_ncp = fit_ncp.final_elbo;
    out.vi_elbo = std::max(fit_cp.final_elbo, fit_ncp.final_elbo);
    out.vi_density_evals = fit_cp.density_evals + fit_ncp.density_evals;
  } else {  // vip
    VipHmcRun run = vip_hmc(model, hmc, vi);
    out.chains = std::move(run.chains);
    out.grad_evals_per_chain = std::move(run.hmc.grad_evals_per_chain);
    out.grad_evals = run.hmc.grad_evals;
    out.accept_rates = std::move(run.hmc.accept_rates);
    out.leapfrog = run.hmc.leapfrog;
    out.vi_elbo = run.fit.final_elbo;
    out.vi_density_evals = run.fit.density_evals;
    out.lambda_star = std::move(run.fit.lambda_star);
  }
  return out;
}

struct ResultRecord {
  ExperimentSpec spec;  // leapfrog resolved
  ChainDiagnostics diagnostics;
  std::vector<std::pair<std::string, double>> ess_table;  // per coordinate
  double vi_elbo = 0.0;
  double vi_elbo_cp = 0.0, vi_elbo_ncp = 0.0;
  uint64_t vi_density_evals = 0;
  ParameterisationParams lambda_star;
};

// One full experiment: build the model, run the method, attach diagnostics
// computed on the original-space draws.  The leapfrog length must already
// be resolved (see sweep_leapfrog).
inline ResultRecord run_experiment(const ExperimentSpec& spec) {
  spec.check();
  if (!spec.hmc.num_leapfrog)
    throw SchemaError("experiment: leapfrog 'auto' must be resolved by the sweep first");
  const ZooEntry& entry = zoo_entry(spec.model);
  if (entry.needs_data && spec.dataset.empty())
    throw SchemaError("model '" + spec.model + "' needs a dataset (--data)");
  const ModelProgram model = entry.build(spec.dataset);
  const MethodRun run = run_method(model, spec);

  ResultRecord rec;
  rec.spec = spec;
  rec.diagnostics = compute_diagnostics(run.chains, run.grad_evals_per_chain, run.grad_evals,
                                        run.accept_rates);
  const std::vector<std::string> names = make_log_joint(model).layout().element_names();
  for (size_t i = 0; i < rec.diagnostics.ess_per_variable.size(); ++i)
    rec.ess_table.emplace_back(i < names.size() ? names[i] : "coordinate " + std::to_string(i),
                               rec.diagnostics.ess_per_variable[i]);
  rec.vi_elbo = run.vi_elbo;
  rec.vi_elbo_cp = run.vi_elbo_cp;
  rec.vi_elbo_ncp = run.vi_elbo_ncp;
  rec.vi_density_evals = run.vi_density_evals;
  rec.lambda_star = run.lambda_star;
  return rec;
}

inline const std::vector<int>& leapfrog_grid() {
  static const std::vector<int> grid = {1, 2, 4, 8, 16, 32, 64, 128};
  return grid;
}

struct SweepResult {
  std::vector<ResultRecord> rows;  // one per grid entry, grid order
  size_t best_index = 0;           // argmax ESS per 1000 gradients
};

// Oracle tuning of the trajectory length: run the full pipeline at every
// grid value and keep the one with the best ESS per gradient.  Ties go to
// the shorter trajectory.
inline SweepResult sweep_leapfrog(const ExperimentSpec& base) {
  SweepResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (int L : leapfrog_grid()) {
    ExperimentSpec spec = base;
    spec.hmc.num_leapfrog = L;
    out.rows.push_back(run_experiment(spec));
    const double score = out.rows.back().diagnostics.ess_per_1000_grads;
    if (score > best) {
      best = score;
      out.best_index = out.rows.size() - 1;
    }
  }
  return out;
}

// --- serialisation ---------------------------------------------------------

inline nlohmann::json record_to_json(const ResultRecord& rec) {
  nlohmann::json j;
  j["spec"] = {
      {"model", rec.spec.model},
      {"dataset", rec.spec.dataset},
      {"method", rec.spec.method},
      {"seed", rec.spec.seed},
      {"chains", rec.spec.hmc.chains},
      {"warmup", rec.spec.hmc.warmup_steps},
      {"adapt", rec.spec.hmc.adapt_steps},
      {"samples", rec.spec.hmc.samples},
      {"leapfrog", rec.spec.hmc.num_leapfrog ? *rec.spec.hmc.num_leapfrog : 0},
      {"vi_steps", rec.spec.vi.steps},
      {"vi_mc", rec.spec.vi.n_mc},
  };
  j["diagnostics"] = {
      {"min_ess", rec.diagnostics.min_ess},
      {"grad_evals", rec.diagnostics.grad_evals},
      {"ess_per_1000_grads", rec.diagnostics.ess_per_1000_grads},
      {"stderr_ess_per_1000_grads", rec.diagnostics.stderr_ess_per_1000},
      {"accept_rate", rec.diagnostics.accept_rate},
  };
  nlohmann::json ess = nlohmann::json::array();
  for (const auto& [name, value] : rec.ess_table)
    ess.push_back({{"coordinate", name}, {"ess", value}});
  j["ess"] = std::move(ess);
  nlohmann::json vi;
  vi["final_elbo"] = rec.vi_elbo;
  vi["density_evals"] = rec.vi_density_evals;
  if (rec.spec.method == "ihmc") {
    vi["final_elbo_cp"] = rec.vi_elbo_cp;
    vi["final_elbo_ncp"] = rec.vi_elbo_ncp;
  }
  if (!rec.lambda_star.sites.empty()) {
    // An array keeps the model's site order; JSON objects would sort keys.
    nlohmann::json lam = nlohmann::json::array();
    for (const auto& [site, values] : rec.lambda_star.sites)
      lam.push_back({{"site", site}, {"lambda", values}});
    vi["lambda_star"] = std::move(lam);
  }
  j["vi"] = std::move(vi);
  return j;
}

inline std::string csv_header() {
  return "model,method,seed,min_ess,grad_evals,ess_per_1000_grads,stderr,elbo";
}

inline std::string csv_number(double v) {
  // Shortest round-trip form, matching the JSON emitter's determinism.
  return nlohmann::json(v).dump();
}

inline std::string csv_row(const ResultRecord& rec) {
  std::string row;
  row += rec.spec.model;
  row += ',';
  row += rec.spec.method;
  row += ',';
  row += std::to_string(rec.spec.seed);
  row += ',';
  row += csv_number(rec.diagnostics.min_ess);
  row += ',';
  row += std::to_string(rec.diagnostics.grad_evals);
  row += ',';
  row += csv_number(rec.diagnostics.ess_per_1000_grads);
  row += ',';
  row += csv_number(rec.diagnostics.stderr_ess_per_1000);
  row += ',';
  row += csv_number(rec.vi_elbo);
  return row;
}

}  // namespace reparam
