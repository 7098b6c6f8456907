#pragma once

// Effective sample size from MCMC output.
//
// Per chain: autocovariances by direct summation, truncated with Geyer's
// initial-monotone-positive-sequence rule (sum adjacent-lag pairs while
// they stay positive, clamp each pair to at most the previous one), giving
// the integrated autocorrelation time tau and ESS = n / tau.  Multiple
// chains combine by summing their per-chain ESS.  A zero-variance series
// has ESS 0 by convention.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "reparam/errors.hpp"

namespace reparam {

inline double ess_series(std::span<const double> x) {
  const size_t n = x.size();
  if (n < 4) return 0.0;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo == *hi) return 0.0;  // zero-variance convention

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);

  auto gamma = [&](size_t k) {
    double s = 0.0;
    for (size_t t = 0; t + k < n; ++t) s += (x[t] - mean) * (x[t + k] - mean);
    return s / static_cast<double>(n);
  };

  const double g0 = gamma(0);
  if (!(g0 > 0.0) || !std::isfinite(g0)) return 0.0;

  double pair_sum = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = gamma(2 * m) + gamma(2 * m + 1);
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev);
    pair_sum += pair;
    prev = pair;
  }

  // tau = 1 + 2 sum_{k>=1} rho_k = 2 * (pair sum) / gamma_0 - 1.
  const double tau = std::max(2.0 * pair_sum / g0 - 1.0, 1e-3);
  return static_cast<double>(n) / tau;
}

// Per-variable ESS of one chain given draws[t][v].
inline std::vector<double> ess_matrix(const std::vector<std::vector<double>>& draws) {
  if (draws.empty()) return {};
  const size_t dim = draws.front().size();
  std::vector<double> series(draws.size());
  std::vector<double> out(dim, 0.0);
  for (size_t v = 0; v < dim; ++v) {
    for (size_t t = 0; t < draws.size(); ++t) {
      if (draws[t].size() != dim) throw DimensionMismatch("ragged sample matrix");
      series[t] = draws[t][v];
    }
    out[v] = ess_series(series);
  }
  return out;
}

// Per-variable ESS summed across chains, chains[c][t][v].
inline std::vector<double> ess_per_variable(
    const std::vector<std::vector<std::vector<double>>>& chains) {
  std::vector<double> total;
  for (const auto& chain : chains) {
    std::vector<double> one = ess_matrix(chain);
    if (one.empty()) continue;
    if (total.empty()) total.assign(one.size(), 0.0);
    if (one.size() != total.size()) throw DimensionMismatch("chains disagree on dimension");
    for (size_t v = 0; v < one.size(); ++v) total[v] += one[v];
  }
  return total;
}

}  // namespace reparam
