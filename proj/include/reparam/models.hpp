#pragma once

// The benchmark model zoo.
//
// Every builder returns a plain centred ModelProgram with all likelihood
// sites conditioned on the dataset, so the reparameterising handlers can be
// layered on afterwards.  Plates become vector sites (one site per plate,
// elementwise-independent), and every positive scale is expressed as
// exp(log_scale) of a latent Normal so the posterior is unconstrained.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reparam/dataset.hpp"
#include "reparam/errors.hpp"
#include "reparam/model.hpp"

namespace reparam {

// Neal's funnel: z ~ N(0, 3), x ~ N(0, exp(z/2)).  No data; the "posterior"
// is the prior, whose geometry defeats centred samplers.
inline ModelProgram build_funnel() {
  ModelProgram m;
  m.body = [](Executor& ex) {
    Var z = ex.sample("z", Var(0.0), Var(3.0));
    ex.sample("x", Var(0.0), exp(z * Var(0.5)));
  };
  return m;
}

// Conjugate two-level Gaussian model:
//   theta ~ N(0, 1), mu ~ N(theta, sigma_mu), y_n ~ N(mu, sigma).
// The posterior is Gaussian with known covariance, which makes this the
// calibration target for the analytic conditioning oracle.
inline ModelProgram build_conjugate(double sigma_mu, double sigma, std::vector<double> y) {
  if (!(sigma_mu > 0.0) || !(sigma > 0.0))
    throw InvalidDistribution("conjugate model scales must be positive");
  if (y.empty()) throw DimensionMismatch("conjugate model needs at least one observation");
  ModelProgram m;
  const int n = static_cast<int>(y.size());
  m.body = [sigma_mu, sigma, n](Executor& ex) {
    Var theta = ex.sample("theta", Var(0.0), Var(1.0));
    Var mu = ex.sample("mu", theta, Var(sigma_mu));
    ex.sample_vec("y", n, {mu}, {Var(sigma)});
  };
  m.data["y"] = std::move(y);
  return m;
}

// Eight schools: mu ~ N(0, 5), log_tau ~ N(0, 5), theta_i ~ N(mu, tau),
// y_i ~ N(theta_i, sigma_i) with per-school measurement noise from the data.
inline ModelProgram build_eight_schools(const DatasetBundle& d) {
  auto y = std::make_shared<std::vector<double>>(d.col("y"));
  auto sigma = std::make_shared<std::vector<double>>(d.col("sigma"));
  const int n = static_cast<int>(y->size());
  ModelProgram m;
  m.body = [sigma, n](Executor& ex) {
    Var mu = ex.sample("mu", Var(0.0), Var(5.0));
    Var log_tau = ex.sample("log_tau", Var(0.0), Var(5.0));
    Var tau = exp(log_tau);
    Vals theta = ex.sample_vec("theta", n, {mu}, {tau});
    Vals sd;
    sd.reserve(sigma->size());
    for (double s : *sigma) sd.push_back(Var(s));
    ex.sample_vec("y", n, std::move(theta), std::move(sd));
  };
  m.data["y"] = *y;
  return m;
}

// Radon (one state): county effects around a uranium regression, with a
// floor coefficient at home level.
//   mu, a, b ~ N(0, 1); m_c ~ N(mu + a*u_c, 1);
//   log_sigma_y ~ N(0, 1); log_radon_i ~ N(m_county(i) + b*floor_i, sigma_y).
// The home-level noise scale has no canonical prior in the source equations;
// it gets the same log-Normal(0, 1) treatment as the other scales here.
inline ModelProgram build_radon(const DatasetBundle& d) {
  const auto& county = d.col("county_idx");
  const auto& uranium = d.col("uranium");
  auto floor_col = std::make_shared<std::vector<double>>(d.col("floor"));
  auto county_idx = std::make_shared<std::vector<size_t>>();
  county_idx->reserve(county.size());
  int n_counties = 0;
  for (double c : county) {
    county_idx->push_back(static_cast<size_t>(c));
    n_counties = std::max(n_counties, static_cast<int>(c) + 1);
  }
  // County-level uranium reading: first occurrence per county.
  auto u = std::make_shared<std::vector<double>>(static_cast<size_t>(n_counties), 0.0);
  {
    std::vector<bool> seen(static_cast<size_t>(n_counties), false);
    for (size_t r = 0; r < county.size(); ++r) {
      const size_t c = (*county_idx)[r];
      if (!seen[c]) {
        (*u)[c] = uranium[r];
        seen[c] = true;
      }
    }
  }
  const int rows = static_cast<int>(d.rows());
  ModelProgram m;
  m.body = [u, county_idx, floor_col, n_counties, rows](Executor& ex) {
    Var mu = ex.sample("mu", Var(0.0), Var(1.0));
    Var a = ex.sample("a", Var(0.0), Var(1.0));
    Var b = ex.sample("b", Var(0.0), Var(1.0));
    Vals county_loc;
    county_loc.reserve(u->size());
    for (double uc : *u) county_loc.push_back(mu + a * Var(uc));
    Vals me = ex.sample_vec("m", n_counties, std::move(county_loc), {Var(1.0)});
    Var log_sigma_y = ex.sample("log_sigma_y", Var(0.0), Var(1.0));
    Var sigma_y = exp(log_sigma_y);
    Vals loc;
    loc.reserve(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r)
      loc.push_back(me[(*county_idx)[static_cast<size_t>(r)]] +
                    b * Var((*floor_col)[static_cast<size_t>(r)]));
    ex.sample_vec("log_radon", rows, std::move(loc), {sigma_y});
  };
  m.data["log_radon"] = d.col("log_radon");
  return m;
}

// German credit, hierarchical logistic regression with per-feature scales:
//   log_tau0 ~ N(0, 10); log_tau_j ~ N(log_tau0, 1); beta_j ~ N(0, tau_j);
//   label_i ~ Bernoulli(sigmoid(x_i . beta)).
// Features are standardised by the loader.
inline ModelProgram build_german_credit(const DatasetBundle& d) {
  const auto feats = d.feature_cols(1);
  const int k = static_cast<int>(feats.size());
  const int rows = static_cast<int>(d.rows());
  auto x = std::make_shared<std::vector<std::vector<double>>>();  // row-major
  x->reserve(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    std::vector<double> row;
    row.reserve(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) row.push_back((*feats[static_cast<size_t>(c)])[static_cast<size_t>(r)]);
    x->push_back(std::move(row));
  }
  ModelProgram m;
  m.body = [x, k, rows](Executor& ex) {
    Var log_tau0 = ex.sample("log_tau0", Var(0.0), Var(10.0));
    Vals log_tau = ex.sample_vec("log_tau", k, {log_tau0}, {Var(1.0)});
    Vals tau;
    tau.reserve(log_tau.size());
    for (const Var& lt : log_tau) tau.push_back(exp(lt));
    Vals beta = ex.sample_vec("beta", k, {Var(0.0)}, std::move(tau));
    Vals logits;
    logits.reserve(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r)
      logits.push_back(dot(std::span<const Var>(beta.data(), beta.size()),
                           std::span<const double>((*x)[static_cast<size_t>(r)].data(),
                                                   (*x)[static_cast<size_t>(r)].size())));
    ex.sample_bernoulli_logit("label", std::move(logits));
  };
  m.data["label"] = d.col("label");
  return m;
}

// Election '88, hierarchical logistic regression with state effects:
//   beta_d ~ N(0, 100); mu ~ N(0, 100); log_tau ~ N(0, 10);
//   alpha_s ~ N(mu, tau); outcome_i ~ Bernoulli(sigmoid(alpha_state(i) + x_i . beta)).
inline ModelProgram build_election88(const DatasetBundle& d) {
  const auto feats = d.feature_cols(2);
  const int k = static_cast<int>(feats.size());
  const int rows = static_cast<int>(d.rows());
  auto state = std::make_shared<std::vector<size_t>>();
  state->reserve(static_cast<size_t>(rows));
  int n_states = 0;
  for (double s : d.col("state_idx")) {
    state->push_back(static_cast<size_t>(s));
    n_states = std::max(n_states, static_cast<int>(s) + 1);
  }
  auto x = std::make_shared<std::vector<std::vector<double>>>();
  x->reserve(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    std::vector<double> row;
    row.reserve(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) row.push_back((*feats[static_cast<size_t>(c)])[static_cast<size_t>(r)]);
    x->push_back(std::move(row));
  }
  ModelProgram m;
  m.body = [x, state, k, rows, n_states](Executor& ex) {
    Vals beta = ex.sample_vec("beta", k, {Var(0.0)}, {Var(100.0)});
    Var mu = ex.sample("mu", Var(0.0), Var(100.0));
    Var log_tau = ex.sample("log_tau", Var(0.0), Var(10.0));
    Vals alpha = ex.sample_vec("alpha", n_states, {mu}, {exp(log_tau)});
    Vals logits;
    logits.reserve(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      const size_t ri = static_cast<size_t>(r);
      logits.push_back(alpha[(*state)[ri]] +
                       dot(std::span<const Var>(beta.data(), beta.size()),
                           std::span<const double>((*x)[ri].data(), (*x)[ri].size())));
    }
    ex.sample_bernoulli_logit("outcome", std::move(logits));
  };
  m.data["outcome"] = d.col("outcome");
  return m;
}

// Electric Company: paired-classroom treatment effects per grade.
//   mu_g ~ N(0, 1); a_p ~ N(mu_grade(p), 1); b_g ~ N(0, 100);
//   log_sigma_g ~ N(0, 1); score_i ~ N(a_pair(i) + b_grade(i)*treated_i, sigma_grade(i)).
inline ModelProgram build_electric(const DatasetBundle& d) {
  const int rows = static_cast<int>(d.rows());
  auto pair = std::make_shared<std::vector<size_t>>();
  auto grade = std::make_shared<std::vector<size_t>>();
  auto treated = std::make_shared<std::vector<double>>(d.col("treated"));
  int n_pairs = 0, n_grades = 0;
  for (double p : d.col("pair_idx")) {
    pair->push_back(static_cast<size_t>(p));
    n_pairs = std::max(n_pairs, static_cast<int>(p) + 1);
  }
  for (double g : d.col("grade_idx")) {
    grade->push_back(static_cast<size_t>(g));
    n_grades = std::max(n_grades, static_cast<int>(g) + 1);
  }
  // Grade of each pair (validated consistent across the pair's rows).
  auto pair_grade = std::make_shared<std::vector<size_t>>(static_cast<size_t>(n_pairs), 0);
  {
    std::vector<bool> seen(static_cast<size_t>(n_pairs), false);
    for (size_t r = 0; r < pair->size(); ++r) {
      const size_t p = (*pair)[r];
      if (!seen[p]) {
        (*pair_grade)[p] = (*grade)[r];
        seen[p] = true;
      } else if ((*pair_grade)[p] != (*grade)[r]) {
        throw SchemaError("pair " + std::to_string(p) + " spans two grades");
      }
    }
  }
  ModelProgram m;
  m.body = [pair, grade, treated, pair_grade, n_pairs, n_grades, rows](Executor& ex) {
    Vals mu_g = ex.sample_vec("mu_grade", n_grades, {Var(0.0)}, {Var(1.0)});
    Vals pair_loc;
    pair_loc.reserve(static_cast<size_t>(n_pairs));
    for (int p = 0; p < n_pairs; ++p)
      pair_loc.push_back(mu_g[(*pair_grade)[static_cast<size_t>(p)]]);
    Vals a = ex.sample_vec("a_pair", n_pairs, std::move(pair_loc), {Var(1.0)});
    Vals b = ex.sample_vec("b_grade", n_grades, {Var(0.0)}, {Var(100.0)});
    Vals log_sigma = ex.sample_vec("log_sigma_grade", n_grades, {Var(0.0)}, {Var(1.0)});
    Vals loc, scale;
    loc.reserve(static_cast<size_t>(rows));
    scale.reserve(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      const size_t ri = static_cast<size_t>(r);
      loc.push_back(a[(*pair)[ri]] + b[(*grade)[ri]] * Var((*treated)[ri]));
      scale.push_back(exp(log_sigma[(*grade)[ri]]));
    }
    ex.sample_vec("score", rows, std::move(loc), std::move(scale));
  };
  m.data["score"] = d.col("score");
  return m;
}

// Registry connecting CLI model names to builders and dataset schemas.
struct ZooEntry {
  std::string name;
  bool needs_data = true;
  std::function<ModelProgram(const std::string& data_path)> build;
};

inline const std::vector<ZooEntry>& model_zoo() {
  static const std::vector<ZooEntry> zoo = {
      {"funnel", false, [](const std::string&) { return build_funnel(); }},
      {"eight_schools", true,
       [](const std::string& p) { return build_eight_schools(load_dataset("eight_schools", p)); }},
      {"radon", true, [](const std::string& p) { return build_radon(load_dataset("radon", p)); }},
      {"german_credit", true,
       [](const std::string& p) { return build_german_credit(load_dataset("german_credit", p)); }},
      {"election88", true,
       [](const std::string& p) { return build_election88(load_dataset("election88", p)); }},
      {"electric", true,
       [](const std::string& p) { return build_electric(load_dataset("electric", p)); }},
  };
  return zoo;
}

inline const ZooEntry& zoo_entry(const std::string& name) {
  for (const ZooEntry& e : model_zoo())
    if (e.name == name) return e;
  throw UnknownSite("model '" + name + "' is not in the zoo");
}

}  // namespace reparam
