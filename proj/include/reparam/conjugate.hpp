#pragma once

// Closed-form posterior geometry of the conjugate two-level Gaussian model
//
//   theta ~ N(0, 1),  mu ~ N(theta, sigma_mu),  y_n ~ N(mu, sigma),  n = 1..N
//
// summarised by the data strength q = N / sigma^2.  The centred (CP)
// coordinates are (mu, theta); the non-centred (NCP) coordinates are
// (mu_tilde, theta) with mu = theta + sigma_mu * mu_tilde.  All posteriors
// are Gaussian, so preconditioned HMC difficulty reduces to the condition
// number of the posterior covariance after the best diagonal rescaling.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "reparam/errors.hpp"

namespace reparam {

enum class Centring { kCp, kNcp };

struct ConjugateModelSpec {
  double sigma_mu = 1.0;
  double q = 1.0;  // N / sigma^2

  void check() const {
    if (!(sigma_mu > 0.0) || !std::isfinite(sigma_mu))
      throw InvalidDistribution("conjugate model: sigma_mu must be positive");
    if (!(q >= 0.0) || !std::isfinite(q))
      throw InvalidDistribution("conjugate model: q must be non-negative");
  }
};

// Symmetric 2x2 matrix [[a, b], [b, c]].
struct Sym2 {
  double a = 0.0, b = 0.0, c = 0.0;

  std::array<double, 2> eigenvalues() const {
    const double mid = 0.5 * (a + c);
    const double delta = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    return {mid - delta, mid + delta};
  }

  double condition_number() const {
    const auto [lo, hi] = eigenvalues();
    if (!(lo > 0.0)) throw NonFiniteEvaluation("covariance is not positive definite");
    return hi / lo;
  }

  // D * M * D with D = diag(d, 1).
  Sym2 rescale_first(double d) const { return {d * d * a, d * b, c}; }

  std::array<double, 2> mul(const std::array<double, 2>& v) const {
    return {a * v[0] + b * v[1], b * v[0] + c * v[1]};
  }
};

// Posterior covariance in (mu, theta) or (mu_tilde, theta) coordinates.
inline Sym2 posterior_cov(const ConjugateModelSpec& m, Centring which) {
  m.check();
  const double s2 = m.sigma_mu * m.sigma_mu;
  const double q = m.q;
  const double denom = s2 * q + q + 1.0;
  if (which == Centring::kCp)
    return {(1.0 + s2) / denom, 1.0 / denom, (q * s2 + 1.0) / denom};
  return {(q + 1.0) / denom, -m.sigma_mu * q / denom, (s2 * q + 1.0) / denom};
}

// Posterior mean [mu, theta] (CP) or [mu_tilde, theta] (NCP) given the
// sufficient statistic ybar = mean(y).  The Gaussian log joint is
// -(v'Av - 2b'v)/2 + const with b_cp = (q*ybar, 0) and b_ncp = J' b_cp,
// so the mean is V b.
inline std::array<double, 2> posterior_mean(const ConjugateModelSpec& m, Centring which,
                                            double ybar) {
  const Sym2 v = posterior_cov(m, which);
  if (which == Centring::kCp) return v.mul({m.q * ybar, 0.0});
  return v.mul({m.sigma_mu * m.q * ybar, m.q * ybar});
}

// The diagonal preconditioner diag(d, 1) minimising the condition number
// of the posterior covariance, in closed form.
inline double best_diag_precond(const ConjugateModelSpec& m, Centring which) {
  m.check();
  const double s2 = m.sigma_mu * m.sigma_mu;
  const double q = m.q;
  if (which == Centring::kCp) return std::sqrt((s2 * q + 1.0) / (s2 + 1.0));
  return std::sqrt((s2 * q + 1.0) / (q + 1.0));
}

// Condition number of the posterior covariance after rescaling the first
// coordinate by d (computed numerically from the 2x2 eigenvalues).
inline double condition_number(const ConjugateModelSpec& m, Centring which, double d) {
  if (!(d > 0.0) || !std::isfinite(d))
    throw InvalidDistribution("preconditioner entry must be positive");
  return posterior_cov(m, which).rescale_first(d).condition_number();
}

// Condition number at the best diagonal preconditioner.
inline double best_condition_number(const ConjugateModelSpec& m, Centring which) {
  return condition_number(m, which, best_diag_precond(m, which));
}

struct CrossoverPoint {
  double q = 0.0;
  double kappa_cp = 0.0;
  double kappa_ncp = 0.0;
};

// kappa_cp and kappa_ncp at the best diagonal preconditioner over a grid of
// data strengths: the two curves cross exactly once, at the point where
// neither full centring nor full non-centring dominates.
inline std::vector<CrossoverPoint> crossover_curve(double sigma_mu,
                                                   const std::vector<double>& q_grid) {
  std::vector<CrossoverPoint> out;
  out.reserve(q_grid.size());
  for (double q : q_grid) {
    ConjugateModelSpec m{sigma_mu, q};
    out.push_back({q, best_condition_number(m, Centring::kCp),
                   best_condition_number(m, Centring::kNcp)});
  }
  return out;
}

// Log-spaced grid helper, inclusive of both endpoints.
inline std::vector<double> log_grid(double lo, double hi, int points) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2)
    throw DimensionMismatch("log_grid requires 0 < lo < hi and at least 2 points");
  std::vector<double> g;
  g.reserve(static_cast<size_t>(points));
  const double llo = std::log10(lo), lhi = std::log10(hi);
  for (int i = 0; i < points; ++i)
    g.push_back(std::pow(10.0, llo + (lhi - llo) * i / (points - 1)));
  return g;
}

}  // namespace reparam
