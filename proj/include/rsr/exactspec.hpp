#pragma once

// Closed-form asymptotics of the random spectral radius for structured
// families, exact finite-n moments, and a brute-force enumeration oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rsr/error.hpp"
#include "rsr/family.hpp"
#include "rsr/linalg.hpp"
#include "rsr/scaled_product.hpp"

namespace rsr {

/// Law-of-large-numbers / CLT constants of a structured family.
/// Coordinates are 0-based.
struct AsymptoticSummary {
  RealVector mu;               // mu_j = sum_i p_i log|lambda_j^(i)|
  RealVector rho_components;   // exp(mu_j)
  double rho_infinity = 0.0;   // max_j rho_components
  std::vector<int> maximizers; // J, ascending
  RealVector sigma_components; // rho_j * sqrt(Var Z^(j))
  std::optional<double> sigma_infinity;  // only when |J| == 1
  RealMatrix covariance;       // Sigma restricted to J (|J| x |J|)
  double tie_tolerance = 0.0;

  bool unique_maximizer() const { return maximizers.size() == 1; }
};

/// Default tie band 1e-12 * max(1, |mu*|).
inline double default_tie_tolerance(double mu_star) { return 1e-12 * std::max(1.0, std::abs(mu_star)); }

/// Summary from a d x m table of log-moduli (entry (j, i) = Z^(j) value
/// under matrix i). Used directly by the perturbation module, whose atoms
/// are not logs of a plain profile.
inline AsymptoticSummary asymptotic_summary_from_logs(const RealMatrix& logs, std::span<const double> weights,
                                                      std::optional<double> tie_tol = std::nullopt) {
  const Eigen::Index d = logs.rows();
  const Eigen::Index m = logs.cols();
  if (static_cast<std::size_t>(m) != weights.size()) {
    fail(ErrorKind::InvalidInput, "dimension_mismatch", "profile width and weight count differ");
  }
  if (!logs.allFinite()) {
    fail(ErrorKind::InvalidInput, "zero_modulus", "spectral profile has a zero (or non-finite) modulus");
  }
  const Eigen::Map<const RealVector> p(weights.data(), m);

  AsymptoticSummary s;
  s.mu = logs * p;
  const double mu_star = s.mu.maxCoeff();
  s.tie_tolerance = tie_tol.value_or(default_tie_tolerance(mu_star));
  for (Eigen::Index j = 0; j < d; ++j)
    if (s.mu[j] >= mu_star - s.tie_tolerance) s.maximizers.push_back(static_cast<int>(j));

  s.rho_components = s.mu.array().exp();
  s.rho_infinity = std::exp(mu_star);

  // Central second moments of the atoms: Sigma(l, h) = sum_i p_i z_l z_h - mu_l mu_h,
  // evaluated on centered values to avoid cancellation.
  const RealMatrix centered = logs.colwise() - s.mu;
  s.sigma_components.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (centered.row(j).array().square() * p.transpose().array()).sum();
    s.sigma_components[j] = s.rho_components[j] * std::sqrt(std::max(0.0, var));
  }
  const auto k = static_cast<Eigen::Index>(s.maximizers.size());
  s.covariance.resize(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a; b < k; ++b) {
      const auto ja = s.maximizers[static_cast<std::size_t>(a)];
      const auto jb = s.maximizers[static_cast<std::size_t>(b)];
      const double c = (centered.row(ja).array() * centered.row(jb).array() * p.transpose().array()).sum();
      s.covariance(a, b) = c;
      s.covariance(b, a) = c;
    }
  }
  if (s.unique_maximizer()) s.sigma_infinity = s.sigma_components[s.maximizers.front()];
  return s;
}

/// LLN/CLT summary for a profile with weights. All moduli must be positive.
inline AsymptoticSummary asymptotic_summary(const SpectralProfile& profile, std::span<const double> weights,
                                            std::optional<double> tie_tol = std::nullopt) {
  if ((profile.moduli.array() <= 0.0).any()) {
    fail(ErrorKind::InvalidInput, "zero_modulus", "spectral profile has a zero modulus; log is undefined");
  }
  return asymptotic_summary_from_logs(profile.moduli.array().log().matrix(), weights, tie_tol);
}

/// Coordinates outside J whose mu lies within 5/sqrt(n) of mu*; at such n
/// the finite-sample law sits between the Gaussian and max-of-Gaussian
/// regimes, and reports show both.
inline std::vector<int> near_tie_coordinates(const AsymptoticSummary& s, long long n) {
  std::vector<int> out;
  const double mu_star = std::log(s.rho_infinity);
  const double band = 5.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index j = 0; j < s.mu.size(); ++j) {
    const bool in_j = std::find(s.maximizers.begin(), s.maximizers.end(), static_cast<int>(j)) != s.maximizers.end();
    if (!in_j && mu_star - s.mu[j] < band) out.push_back(static_cast<int>(j));
  }
  return out;
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Exact E[rho_n] and Var(rho_n) when rho_n is the geometric mean of n
/// i.i.d. draws of the moduli (aligned dominance, or one component):
///   E = (sum_i p_i |l_i|^{1/n})^n,  Var = (sum_i p_i |l_i|^{2/n})^n - E^2.
/// Evaluated in log space; the variance uses
///   S2 - S1^2 = sum_{i<k} p_i p_k (e^{x_i} - e^{x_k})^2,  x_i = log|l_i| / n,
/// so no digits are lost to cancellation.
inline Moments exact_moments_aligned(std::span<const double> moduli, std::span<const double> weights, long long n) {
  if (n < 1) fail(ErrorKind::Usage, "precondition", "n must be at least 1");
  if (moduli.size() != weights.size()) {
    fail(ErrorKind::InvalidInput, "dimension_mismatch", "moduli and weights differ in length");
  }
  const double nd = static_cast<double>(n);
  std::vector<double> x(moduli.size());
  double xmax = -INFINITY;
  for (std::size_t i = 0; i < moduli.size(); ++i) {
    if (!(moduli[i] > 0.0)) fail(ErrorKind::InvalidInput, "zero_modulus", "modulus must be positive");
    x[i] = std::log(moduli[i]) / nd;
    if (weights[i] > 0.0) xmax = std::max(xmax, x[i]);
  }
  // S1 = e^{xmax} * sum p_i e^{x_i - xmax}
  double s1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s1 += weights[i] * std::exp(x[i] - xmax);
  const double log_s1 = xmax + std::log(s1);
  double spread = 0.0;  // (S2 - S1^2) / e^{2 xmax}
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t k = i + 1; k < x.size(); ++k) {
      const double diff = std::exp(x[k] - xmax) * std::expm1(x[i] - x[k]);
      spread += weights[i] * weights[k] * diff * diff;
    }
  }
  Moments out;
  out.mean = std::exp(nd * log_s1);
  // log(S2 / S1^2) = log1p(spread / (S1 / e^{xmax})^2)
  const double log_ratio = std::log1p(spread / (s1 * s1));
  out.variance = out.mean * out.mean * std::expm1(nd * log_ratio);
  return out;
}

/// rho(A_{w_1} ... A_{w_n})^{1/n} along the plain matrix route (scaled
/// accumulation + dense eigensolver). Shared by the oracle and the sampler.
struct LogRho {
  double log_rho = 0.0;  // log rho(Pi); -inf for a nilpotent product
  double rho_n = 0.0;
};

namespace detail {

inline LogRho matrix_route_log_rho(const MatrixFamily& f, std::span<const int> word) {
  ScaledProduct prod(f.dimension());
  for (int idx : word) prod.multiply(f.matrix(idx));
  LogRho out;
  out.log_rho = prod.log_spectral_radius();
  out.rho_n = std::exp(out.log_rho / static_cast<double>(word.size()));
  return out;
}

}  // namespace detail

/// Enumerates all m^n words, weighting each by prod p_{w_k}; uses the full
/// matrix/eigensolver route regardless of structure. Guarded at m^n <= 2^24.
inline Moments brute_force_moments(const MatrixFamily& f, int n) {
  if (n < 1) fail(ErrorKind::Usage, "precondition", "n must be at least 1");
  const int m = f.size();
  double words = 1.0;
  for (int k = 0; k < n; ++k) words *= m;
  if (words > static_cast<double>(1u << 24)) {
    fail(ErrorKind::Numerical, "budget_exceeded", "m^n exceeds the enumeration budget 2^24");
  }
  const auto total = static_cast<std::uint64_t>(words);
  std::vector<int> word(static_cast<std::size_t>(n), 0);
  std::vector<double> values;
  std::vector<double> probs;
  values.reserve(total);
  probs.reserve(total);
  for (std::uint64_t code = 0; code < total; ++code) {
    std::uint64_t c = code;
    double prob = 1.0;
    for (int k = 0; k < n; ++k) {
      word[static_cast<std::size_t>(k)] = static_cast<int>(c % static_cast<std::uint64_t>(m));
      c /= static_cast<std::uint64_t>(m);
      prob *= f.weights()[static_cast<std::size_t>(word[static_cast<std::size_t>(k)])];
    }
    if (prob == 0.0) continue;
    values.push_back(detail::matrix_route_log_rho(f, word).rho_n);
    probs.push_back(prob);
  }
  // Neumaier summation: plain accumulation over millions of words drifts past 1e-12.
  auto compensated = [&](auto term) {
    double sum = 0.0, comp = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double t = term(k);
      const double s = sum + t;
      comp += std::abs(sum) >= std::abs(t) ? (sum - s) + t : (t - s) + sum;
      sum = s;
    }
    return sum + comp;
  };
  Moments out;
  out.mean = compensated([&](std::size_t k) { return probs[k] * values[k]; });
  out.variance = compensated([&](std::size_t k) {
    const double dv = values[k] - out.mean;
    return probs[k] * dv * dv;
  });
  return out;
}

}  // namespace rsr
