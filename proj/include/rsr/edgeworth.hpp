#pragma once

// Hermite and Sigma-Hermite polynomials, cumulants of finite-support laws,
// and Edgeworth corrections to the law and moments of rho_n.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rsr/error.hpp"
#include "rsr/gaussmax.hpp"
#include "rsr/linalg.hpp"
#include "rsr/parallel.hpp"
#include "rsr/rng.hpp"

namespace rsr {

/// Probabilists' Hermite polynomial He_k(x), k <= 8.
inline double hermite(int k, double x) {
  if (k < 0 || k > 8) fail(ErrorKind::Usage, "precondition", "hermite order must lie in [0, 8]");
  if (k == 0) return 1.0;
  double prev = 1.0, cur = x;
  for (int j = 1; j < k; ++j) {
    const double next = x * cur - j * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// A multi-index is a count vector alpha = (alpha_1, ..., alpha_s).
using MultiIndex = std::vector<int>;

inline int order(const MultiIndex& a) {
  int t = 0;
  for (int v : a) t += v;
  return t;
}

/// All count vectors over s coordinates with |alpha| = k, in lexicographic
/// order of the sorted index tuple.
inline std::vector<MultiIndex> multi_indices(int s, int k) {
  std::vector<MultiIndex> out;
  std::vector<int> idx(static_cast<std::size_t>(k), 0);
  // nondecreasing tuples i_1 <= ... <= i_k
  auto emit = [&] {
    MultiIndex a(static_cast<std::size_t>(s), 0);
    for (int i : idx) ++a[static_cast<std::size_t>(i)];
    out.push_back(std::move(a));
  };
  if (k == 0) {
    out.emplace_back(static_cast<std::size_t>(s), 0);
    return out;
  }
  for (;;) {
    emit();
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == s - 1) --pos;
    if (pos < 0) break;
    const int v = idx[static_cast<std::size_t>(pos)] + 1;
    for (int p = pos; p < k; ++p) idx[static_cast<std::size_t>(p)] = v;
  }
  return out;
}

/// Number of ordered index tuples that collapse to alpha: |alpha|! / alpha!.
inline double multinomial(const MultiIndex& a) {
  double r = std::tgamma(order(a) + 1.0);
  for (int v : a) r /= std::tgamma(v + 1.0);
  return r;
}

/// Sigma-Hermite polynomials H_alpha(u) = (-1)^|alpha| d^alpha phi_Sigma / phi_Sigma.
/// With v = Sigma^{-1} u and P = Sigma^{-1}, H for the flattened index list
/// (a, rest) satisfies H(a, rest) = v_a H(rest) - sum_{b in rest} P_ab H(rest \ b),
/// which sums over partial pairings of the indices.
class SigmaHermite {
 public:
  explicit SigmaHermite(const RealMatrix& sigma) {
    if (sigma.rows() != sigma.cols() || sigma.rows() < 1) {
      fail(ErrorKind::InvalidInput, "dimension_mismatch", "covariance must be square");
    }
    Eigen::LLT<RealMatrix> llt(sigma);
    if (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array() <= 1e-150).any()) {
      fail(ErrorKind::Numerical, "singular_covariance", "Sigma-Hermite polynomials need a positive definite covariance");
    }
    precision_ = llt.solve(RealMatrix::Identity(sigma.rows(), sigma.cols()));
    precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
  }

  int dimension() const { return static_cast<int>(precision_.rows()); }
  const RealMatrix& precision() const { return precision_; }

  double operator()(const MultiIndex& alpha, const RealVector& u) const {
    if (static_cast<int>(alpha.size()) != dimension() || u.size() != dimension()) {
      fail(ErrorKind::Usage, "precondition", "multi-index and point must match the covariance dimension");
    }
    if (order(alpha) > 6) fail(ErrorKind::Usage, "precondition", "Sigma-Hermite order must be at most 6");
    std::vector<int> flat;
    for (int j = 0; j < dimension(); ++j)
      for (int c = 0; c < alpha[static_cast<std::size_t>(j)]; ++c) flat.push_back(j);
    return eval_flat(flat, precision_ * u);
  }

  double eval_flat(const std::vector<int>& flat, const RealVector& v) const {
    if (flat.empty()) return 1.0;
    const int a = flat.front();
    std::vector<int> rest(flat.begin() + 1, flat.end());
    double out = v[a] * eval_flat(rest, v);
    for (std::size_t b = 0; b < rest.size(); ++b) {
      std::vector<int> r2;
      r2.reserve(rest.size() - 1);
      for (std::size_t c = 0; c < rest.size(); ++c)
        if (c != b) r2.push_back(rest[c]);
      out -= precision_(a, rest[b]) * eval_flat(r2, v);
    }
    return out;
  }

 private:
  RealMatrix precision_;
};

inline double sigma_hermite(const MultiIndex& alpha, const RealVector& u, const RealMatrix& sigma) {
  return SigmaHermite(sigma)(alpha, u);
}

// ---------------------------------------------------------------------------
// Cumulants
// ---------------------------------------------------------------------------

enum class CumulantSource { FiniteSupport, ModelMGF };

struct ScalarCumulants {
  std::array<double, 7> kappa{};  // kappa[r] for r = 2..6; entries 0, 1 unused
  double mean = 0.0;
  CumulantSource source = CumulantSource::FiniteSupport;

  double operator[](int r) const { return kappa.at(static_cast<std::size_t>(r)); }
  double sd() const { return std::sqrt(std::max(0.0, kappa[2])); }
};

namespace detail {

inline void validate_probabilities(std::span<const double> probs) {
  if (probs.empty()) fail(ErrorKind::InvalidInput, "invalid_probabilities", "empty atom list");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) fail(ErrorKind::InvalidInput, "invalid_probabilities", "negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) fail(ErrorKind::InvalidInput, "invalid_probabilities", "probabilities must sum to 1");
}

}  // namespace detail

/// Cumulants kappa_2..kappa_6 of a discrete law with the given atoms,
/// from exact central moments.
inline ScalarCumulants cumulants_finite_support(std::span<const double> values, std::span<const double> probs) {
  if (values.size() != probs.size()) fail(ErrorKind::InvalidInput, "dimension_mismatch", "atom and probability counts differ");
  detail::validate_probabilities(probs);
  ScalarCumulants c;
  for (std::size_t i = 0; i < values.size(); ++i) c.mean += probs[i] * values[i];
  std::array<double, 7> mu{};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - c.mean;
    double pw = d * d;
    for (int r = 2; r <= 6; ++r) {
      mu[static_cast<std::size_t>(r)] += probs[i] * pw;
      pw *= d;
    }
  }
  c.kappa[2] = mu[2];
  c.kappa[3] = mu[3];
  c.kappa[4] = mu[4] - 3.0 * mu[2] * mu[2];
  c.kappa[5] = mu[5] - 10.0 * mu[3] * mu[2];
  c.kappa[6] = mu[6] - 15.0 * mu[4] * mu[2] - 10.0 * mu[3] * mu[3] + 30.0 * mu[2] * mu[2] * mu[2];
  c.source = CumulantSource::FiniteSupport;
  return c;
}

/// Joint cumulants of orders 2..4 of a discrete random vector.
struct MultiCumulants {
  int s = 0;
  RealVector mean;
  RealMatrix covariance;
  std::map<MultiIndex, double> kappa_alpha;  // |alpha| in {2, 3, 4}

  double kappa(const MultiIndex& a) const {
    const auto it = kappa_alpha.find(a);
    if (it == kappa_alpha.end()) fail(ErrorKind::Usage, "precondition", "cumulant order not available");
    return it->second;
  }
};

/// atoms: s x m matrix, column i is the value taken with probability probs[i].
inline MultiCumulants cumulants_finite_support(const RealMatrix& atoms, std::span<const double> probs) {
  if (static_cast<std::size_t>(atoms.cols()) != probs.size()) {
    fail(ErrorKind::InvalidInput, "dimension_mismatch", "atom and probability counts differ");
  }
  detail::validate_probabilities(probs);
  const Eigen::Map<const RealVector> p(probs.data(), static_cast<Eigen::Index>(probs.size()));
  MultiCumulants c;
  c.s = static_cast<int>(atoms.rows());
  c.mean = atoms * p;
  const RealMatrix centered = atoms.colwise() - c.mean;
  c.covariance = centered * p.asDiagonal() * centered.transpose();

  auto central = [&](const std::vector<int>& idx) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < centered.cols(); ++i) {
      double t = p[i];
      for (int j : idx) t *= centered(j, i);
      acc += t;
    }
    return acc;
  };
  auto flatten = [](const MultiIndex& a) {
    std::vector<int> idx;
    for (std::size_t j = 0; j < a.size(); ++j)
      for (int k = 0; k < a[j]; ++k) idx.push_back(static_cast<int>(j));
    return idx;
  };
  for (int k = 2; k <= 4; ++k) {
    for (const auto& a : multi_indices(c.s, k)) {
      const auto idx = flatten(a);
      double v = central(idx);
      if (k == 4) {
        const auto& S = c.covariance;
        v -= S(idx[0], idx[1]) * S(idx[2], idx[3]) + S(idx[0], idx[2]) * S(idx[1], idx[3]) +
             S(idx[0], idx[3]) * S(idx[1], idx[2]);
      }
      c.kappa_alpha[a] = v;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Univariate expansions
// ---------------------------------------------------------------------------

struct DensityCdf {
  double pdf = 0.0;
  double cdf = 0.0;
};

/// Edgeworth density and CDF of the standardized sum at x, to order 1/n.
/// Values are returned raw; the truncated density may be negative.
inline DensityCdf edgeworth_univ_density_cdf(double x, long long n, const ScalarCumulants& c) {
  if (!(c[2] > 0.0)) fail(ErrorKind::Usage, "precondition", "kappa_2 must be positive");
  if (n < 1) fail(ErrorKind::Usage, "precondition", "n must be at least 1");
  const double sigma = std::sqrt(c[2]);
  const double s3 = sigma * sigma * sigma;
  const double s4 = s3 * sigma;
  const double s6 = s3 * s3;
  const double rn = std::sqrt(static_cast<double>(n));
  const double nn = static_cast<double>(n);
  const double phi = normal_pdf(x);
  const double k3 = c[3], k4 = c[4];
  DensityCdf out;
  out.pdf = phi * (1.0 + k3 * hermite(3, x) / (6.0 * s3 * rn) +
                   (k4 * hermite(4, x) / (24.0 * s4) + k3 * k3 * hermite(6, x) / (72.0 * s6)) / nn);
  out.cdf = normal_cdf(x) - phi * (k3 * hermite(2, x) / (6.0 * s3 * rn) +
                                   (k4 * hermite(3, x) / (24.0 * s4) + k3 * k3 * hermite(5, x) / (72.0 * s6)) / nn);
  return out;
}

struct MomentPrediction {
  double mean = 0.0;
  double scaled_variance = 0.0;  // n Var(rho_n)
};

/// Unique-maximizer expansions of E[rho_n] and n Var(rho_n).
inline MomentPrediction moment_expansions_univ(double rho_inf, const ScalarCumulants& c, long long n) {
  if (n < 1) fail(ErrorKind::Usage, "precondition", "n must be at least 1");
  const double nn = static_cast<double>(n);
  const double k2 = c[2], k3 = c[3];
  MomentPrediction out;
  out.mean = rho_inf * (1.0 + k2 / (2.0 * nn) + (k3 / 6.0 + k2 * k2 / 8.0) / (nn * nn));
  out.scaled_variance = rho_inf * rho_inf * (k2 + (2.0 * k3 + 3.0 * k2 * k2) / (2.0 * nn));
  return out;
}

// ---------------------------------------------------------------------------
// Multivariate (several maximizers)
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of one correction integral.
struct McEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

struct GaussMaxCorrection {
  MultiIndex alpha;
  McEstimate h;           // E[M H_alpha(U)]
  McEstimate r;           // E[M^2 H_alpha(U)]
  McEstimate r_centered;  // E[(M^2 - m1 M) H_alpha(U)]
};

struct CorrectionOptions {
  std::size_t draws = 4'000'000;
  std::uint64_t seed = 0;
  unsigned workers = 0;
  std::optional<double> target_standard_error;  // fail if any estimate is noisier
};

/// h_alpha, r_alpha for all |alpha| = 3 over the coordinates of sigma, by
/// Monte Carlo with U = L N(0, I) and M = max_j U_j.
inline std::vector<GaussMaxCorrection> gauss_max_corrections(const RealMatrix& sigma, const CorrectionOptions& opt = {}) {
  const SigmaHermite herm(sigma);
  const int s = herm.dimension();
  const auto alphas = multi_indices(s, 3);
  const std::size_t na = alphas.size();
  if (opt.draws < 2) fail(ErrorKind::Usage, "budget_too_small", "need at least two draws");
  const RealMatrix l = Eigen::LLT<RealMatrix>(sigma).matrixL();
  std::vector<std::vector<int>> flats(na);
  for (std::size_t k = 0; k < na; ++k)
    for (int j = 0; j < s; ++j)
      for (int c = 0; c < alphas[k][static_cast<std::size_t>(j)]; ++c) flats[k].push_back(j);

  // Per block: sum of M, and for each alpha sums of x = M H, x^2, y = M^2 H,
  // y^2 and x y (the last for the centered combination).
  constexpr std::size_t kBlock = 1 << 15;
  const std::size_t blocks = (opt.draws + kBlock - 1) / kBlock;
  struct Sums {
    double m = 0.0;
    std::vector<double> a, aa, b, bb, ab;
  };
  std::vector<Sums> part(blocks);
  parallel_blocks(opt.draws, kBlock, opt.workers, [&](std::size_t blk, std::size_t begin, std::size_t end) {
    Sums acc;
    acc.a.assign(na, 0.0);
    acc.aa = acc.b = acc.bb = acc.ab = acc.a;
    RealVector z(s);
    for (std::size_t i = begin; i < end; ++i) {
      CounterRng rng(opt.seed, i, 0x48657243);
      std::normal_distribution<double> normal;
      for (int k = 0; k < s; ++k) z[k] = normal(rng);
      const RealVector u = l * z;
      const RealVector v = herm.precision() * u;
      const double m = u.maxCoeff();
      acc.m += m;
      for (std::size_t k = 0; k < na; ++k) {
        const double h = herm.eval_flat(flats[k], v);
        const double x = m * h, y = m * m * h;
        acc.a[k] += x;
        acc.aa[k] += x * x;
        acc.b[k] += y;
        acc.bb[k] += y * y;
        acc.ab[k] += x * y;
      }
    }
    part[blk] = std::move(acc);
  });

  Sums tot;
  tot.a.assign(na, 0.0);
  tot.aa = tot.b = tot.bb = tot.ab = tot.a;
  for (const auto& p : part) {
    tot.m += p.m;
    for (std::size_t k = 0; k < na; ++k) {
      tot.a[k] += p.a[k];
      tot.aa[k] += p.aa[k];
      tot.b[k] += p.b[k];
      tot.bb[k] += p.bb[k];
      tot.ab[k] += p.ab[k];
    }
  }
  const double nn = static_cast<double>(opt.draws);
  const double m1 = tot.m / nn;
  auto se = [&](double sum, double sum_sq) {
    const double mean = sum / nn;
    return std::sqrt(std::max(0.0, sum_sq / nn - mean * mean) / (nn - 1.0));
  };

  std::vector<GaussMaxCorrection> out;
  out.reserve(na);
  for (std::size_t k = 0; k < na; ++k) {
    GaussMaxCorrection c;
    c.alpha = alphas[k];
    c.h = {tot.a[k] / nn, se(tot.a[k], tot.aa[k])};
    c.r = {tot.b[k] / nn, se(tot.b[k], tot.bb[k])};
    // (M^2 - m1 M) H = y - m1 x, with m1 treated as known
    const double sum = tot.b[k] - m1 * tot.a[k];
    const double sum_sq = tot.bb[k] - 2.0 * m1 * tot.ab[k] + m1 * m1 * tot.aa[k];
    c.r_centered = {sum / nn, se(sum, sum_sq)};
    if (opt.target_standard_error) {
      const double worst = std::max({c.h.standard_error, c.r.standard_error, c.r_centered.standard_error});
      if (worst > *opt.target_standard_error) {
        fail(ErrorKind::Numerical, "budget_too_small", "Monte Carlo budget too small for the requested standard error");
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Correction sums over ordered index triples, sum_{i,j,k} kappa_ijk X_ijk,
/// i.e. over multi-indices weighted by 3!/alpha!.
struct MultiCorrectionSums {
  double kappa_h = 0.0;         // sum kappa_alpha h_alpha
  double kappa_r = 0.0;         // sum kappa_alpha r_alpha
  double kappa_r_centered = 0.0;  // sum kappa_alpha E[(M^2 - m1 M) H_alpha]
};

inline MultiCorrectionSums correction_sums(const MultiCumulants& mc, const std::vector<GaussMaxCorrection>& corr) {
  MultiCorrectionSums s;
  for (const auto& c : corr) {
    const double w = multinomial(c.alpha) * mc.kappa(c.alpha);
    s.kappa_h += w * c.h.value;
    s.kappa_r += w * c.r.value;
    s.kappa_r_centered += w * c.r_centered.value;
  }
  return s;
}

/// Several-maximizer expansions:
///   E[rho_n]    = rho [1 + m1/sqrt(n) + (m2/2 + (1/6) sum kappa h)/n]
///   n Var(rho_n) = rho^2 [v0 + (v1 + (1/6) sum kappa (r - 2 m1 h))/sqrt(n)]
inline MomentPrediction moment_expansions_multi(double rho_inf, const GaussMaxMoments& mm, const MultiCumulants& mc,
                                                const std::vector<GaussMaxCorrection>& corr, long long n) {
  if (n < 1) fail(ErrorKind::Usage, "precondition", "n must be at least 1");
  if (mc.s < 2 || mm.effective_dimension < 2) {
    fail(ErrorKind::Numerical, "regime_mismatch", "several-maximizer expansion needs at least two distinct coordinates");
  }
  const auto sums = correction_sums(mc, corr);
  const double rn = std::sqrt(static_cast<double>(n));
  const double nn = static_cast<double>(n);
  MomentPrediction out;
  out.mean = rho_inf * (1.0 + mm.m1 / rn + (mm.m2 / 2.0 + sums.kappa_h / 6.0) / nn);
  out.scaled_variance =
      rho_inf * rho_inf * (mm.v0 + (mm.v1 + (sums.kappa_r - 2.0 * mm.m1 * sums.kappa_h) / 6.0) / rn);
  return out;
}

}  // namespace rsr
