#pragma once

// Perturbation expansions for A_i(eps) = D_i + eps * Delta_i with diagonal
// D_i: single-matrix eigenvalues, product terms Pi^(0/1/2), eigenvalues of
// products to second order and first-order eps-perturbed asymptotics.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "rsr/error.hpp"
#include "rsr/exactspec.hpp"
#include "rsr/family.hpp"
#include "rsr/linalg.hpp"

namespace rsr {

/// How perturbation directions are scaled on construction.
enum class DeltaScaling {
  Normalize,  // divide each Delta by its Frobenius norm
  AsGiven     // keep the matrices untouched (worked examples use unit entries)
};

/// Diagonal base family plus one perturbation direction per member.
class PerturbedFamily {
 public:
  static PerturbedFamily create(MatrixFamily base, std::vector<ComplexMatrix> deltas, double epsilon = 0.0,
                                DeltaScaling scaling = DeltaScaling::Normalize) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail(ErrorKind::Usage, "precondition", "epsilon must be >= 0");
    if (static_cast<int>(deltas.size()) != base.size()) {
      fail(ErrorKind::InvalidInput, "dimension_mismatch", "need one perturbation per family member");
    }
    const auto cls = classify_structure(base);
    if (cls.tag != StructureTag::Diagonal) {
      fail(ErrorKind::InvalidInput, "not_diagonal", "perturbation base must be a diagonal family with nonzero entries");
    }
    std::vector<double> raw_norms;
    std::vector<ComplexMatrix> raw = deltas;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      auto& dl = deltas[i];
      if (dl.rows() != base.dimension() || dl.cols() != base.dimension()) {
        fail(ErrorKind::InvalidInput, "dimension_mismatch", "perturbation " + std::to_string(i + 1) + " has the wrong size");
      }
      if (!dl.allFinite()) fail(ErrorKind::InvalidInput, "non_finite", "perturbation has a non-finite entry");
      const double nrm = dl.norm();
      raw_norms.push_back(nrm);
      if (scaling == DeltaScaling::Normalize) {
        if (!(nrm > 0.0)) fail(ErrorKind::InvalidInput, "zero_delta", "cannot normalize a zero perturbation");
        dl /= nrm;
      }
    }
    for (int i = 0; i < base.size(); ++i) {
      const ComplexVector diag = base.matrix(i).diagonal();
      if (!spectrum_is_simple(diag, 1e-8)) {
        fail(ErrorKind::InvalidInput, "degenerate_spectrum", "base matrix " + std::to_string(i + 1) + " has a repeated eigenvalue");
      }
    }
    PerturbedFamily pf(std::move(base));
    pf.deltas_ = std::move(deltas);
    pf.raw_norms_ = std::move(raw_norms);
    pf.raw_deltas_ = std::move(raw);
    pf.epsilon_ = epsilon;
    pf.scaling_ = scaling;
    return pf;
  }

  const MatrixFamily& base() const { return base_; }
  const std::vector<ComplexMatrix>& deltas() const { return deltas_; }
  const ComplexMatrix& delta(int i) const { return deltas_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& raw_delta_norms() const { return raw_norms_; }
  /// Deltas exactly as supplied, before any normalization.
  const ComplexMatrix& raw_delta(int i) const { return raw_deltas_[static_cast<std::size_t>(i)]; }
  double epsilon() const { return epsilon_; }
  DeltaScaling scaling() const { return scaling_; }
  int size() const { return base_.size(); }
  int dimension() const { return base_.dimension(); }

  Complex lambda(int matrix, int j) const { return base_.matrix(matrix)(j, j); }

  /// A_i(eps) for an explicit eps.
  ComplexMatrix perturbed(int i, double eps) const { return base_.matrix(i) + eps * delta(i); }

  PerturbedFamily with_epsilon(double eps) const {
    PerturbedFamily copy = *this;
    if (!(eps >= 0.0)) fail(ErrorKind::Usage, "precondition", "epsilon must be >= 0");
    copy.epsilon_ = eps;
    return copy;
  }

 private:
  explicit PerturbedFamily(MatrixFamily base) : base_(std::move(base)) {}
  MatrixFamily base_;
  std::vector<ComplexMatrix> deltas_;
  std::vector<double> raw_norms_;
  std::vector<ComplexMatrix> raw_deltas_;
  double epsilon_ = 0.0;
  DeltaScaling scaling_ = DeltaScaling::Normalize;
};

// ---------------------------------------------------------------------------
// Single matrix
// ---------------------------------------------------------------------------

struct EigenvalueExpansion {
  Complex lambda0, lambda1, lambda2;  // coefficients of eps^0, eps^1, eps^2
  Complex a, b;                       // a_k = u_k^t Delta v_k, b_k = u_k^t Delta v_k^(1)
  double log_modulus0 = 0.0;          // log|lambda_k|
  double log_modulus1 = 0.0;          // Re(a / lambda)
  double log_modulus2 = 0.0;          // Re(b / lambda - a^2 / (2 lambda^2))

  Complex value(double eps) const { return lambda0 + eps * (lambda1 + eps * lambda2); }
};

/// Rayleigh-Schrodinger coefficients for every eigenvalue of A + eps Delta.
/// Left eigenvectors are the rows of V^{-1}, so u_k^t v_k = 1. order = 1
/// leaves the second-order fields at zero.
inline std::vector<EigenvalueExpansion> eigen_perturb_single(const ComplexMatrix& a, const ComplexMatrix& delta,
                                                             int order = 2) {
  if (order != 1 && order != 2) fail(ErrorKind::Usage, "precondition", "order must be 1 or 2");
  if (a.rows() != a.cols() || delta.rows() != a.rows() || delta.cols() != a.cols()) {
    fail(ErrorKind::InvalidInput, "dimension_mismatch", "A and Delta must be square and of equal size");
  }
  const auto dec = eigen_decompose(a);
  const Eigen::Index d = a.rows();
  const double scale = dec.values.cwiseAbs().maxCoeff();
  if (!spectrum_is_simple(dec.values, 1e-8)) {
    fail(ErrorKind::Numerical, "degenerate_spectrum", "eigenvalues are not simple within the gap tolerance");
  }
  for (Eigen::Index k = 0; k < d; ++k) {
    if (std::abs(dec.values[k]) <= 1e-14 * std::max(scale, 1e-300)) {
      fail(ErrorKind::Numerical, "zero_eigenvalue", "eigenvalues must be nonzero");
    }
  }
  const ComplexMatrix b = dec.left * delta * dec.right;  // b(j, k) = u_j^t Delta v_k
  std::vector<EigenvalueExpansion> out(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    auto& e = out[static_cast<std::size_t>(k)];
    const Complex lam = dec.values[k];
    e.lambda0 = lam;
    e.a = b(k, k);
    e.lambda1 = e.a;
    if (order == 2) {
      Complex acc = 0.0;
      for (Eigen::Index j = 0; j < d; ++j)
        if (j != k) acc += b(k, j) * b(j, k) / (lam - dec.values[j]);
      e.b = acc;
      e.lambda2 = acc;
    }
    e.log_modulus0 = std::log(std::abs(lam));
    e.log_modulus1 = (e.a / lam).real();
    e.log_modulus2 = (e.b / lam - e.a * e.a / (2.0 * lam * lam)).real();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

struct ProductExpansion {
  ComplexMatrix pi0, pi1, pi2;
  std::vector<int> word;  // 0-based member indices, factors left to right
};

namespace detail {

inline void validate_word(const PerturbedFamily& pf, std::span<const int> word) {
  if (word.empty()) fail(ErrorKind::Usage, "precondition", "word must be non-empty");
  for (int i : word)
    if (i < 0 || i >= pf.size()) fail(ErrorKind::Usage, "precondition", "word index out of range");
}

}  // namespace detail

/// Pi(eps, w) = Pi0 + eps Pi1 + eps^2 Pi2 + O(eps^3) for the word
/// A_{w_1} ... A_{w_n}. Pi2 uses the running sum
/// R_{q+1} = R_q A_{w_q} + P_{q-1} Delta_{w_q} (prefix-weighted first-order
/// factors), so the double sum costs O(n) matrix products.
inline ProductExpansion product_expansion_terms(const PerturbedFamily& pf, std::span<const int> word) {
  detail::validate_word(pf, word);
  const auto n = word.size();
  const Eigen::Index d = pf.dimension();
  std::vector<ComplexMatrix> suffix(n + 1);  // suffix[k] = A_{w_k} ... A_{w_{n-1}} (0-based)
  suffix[n] = ComplexMatrix::Identity(d, d);
  for (std::size_t k = n; k-- > 0;) suffix[k] = pf.base().matrix(word[k]) * suffix[k + 1];

  ProductExpansion out;
  out.word.assign(word.begin(), word.end());
  out.pi1 = ComplexMatrix::Zero(d, d);
  out.pi2 = ComplexMatrix::Zero(d, d);
  ComplexMatrix prefix = ComplexMatrix::Identity(d, d);  // A_{w_0} ... A_{w_{k-1}}
  ComplexMatrix running = ComplexMatrix::Zero(d, d);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& dl = pf.delta(word[k]);
    const auto& a = pf.base().matrix(word[k]);
    out.pi1 += prefix * dl * suffix[k + 1];
    out.pi2 += running * dl * suffix[k + 1];
    running = (running * a + prefix * dl).eval();
    prefix = (prefix * a).eval();
  }
  out.pi0 = prefix;
  return out;
}

/// Coefficients of Lambda_i(eps, w), the eigenvalue of the product that
/// continues the i-th diagonal entry.
struct ProductEigenExpansion {
  int index = 0;
  Complex lambda0, lambda1, lambda2;
  double log_modulus1 = 0.0;  // Re(lambda1 / lambda0)
  double log_modulus2 = 0.0;  // Re(lambda2 / lambda0 - (lambda1 / lambda0)^2 / 2)
  std::optional<std::string> lambda2_rational;  // exact value when inputs are integers

  Complex value(double eps) const { return lambda0 + eps * (lambda1 + eps * lambda2); }
};

namespace detail {

using Rational = boost::multiprecision::cpp_rational;
using RationalMatrix = std::vector<std::vector<Rational>>;

inline std::optional<Rational> as_integer(Complex z) {
  if (z.imag() != 0.0) return std::nullopt;
  const double r = std::round(z.real());
  if (std::abs(z.real() - r) > 0.0 || std::abs(r) > 1e9) return std::nullopt;
  return Rational(static_cast<long long>(r));
}

inline std::optional<RationalMatrix> to_rational(const ComplexMatrix& a) {
  RationalMatrix m(static_cast<std::size_t>(a.rows()), std::vector<Rational>(static_cast<std::size_t>(a.cols())));
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      auto v = as_integer(a(r, c));
      if (!v) return std::nullopt;
      m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = *v;
    }
  return m;
}

inline RationalMatrix rmul(const RationalMatrix& x, const RationalMatrix& y) {
  const std::size_t n = x.size(), k = y.size(), m = y.front().size();
  RationalMatrix z(n, std::vector<Rational>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      if (x[i][l] == 0) continue;
      for (std::size_t j = 0; j < m; ++j) z[i][j] += x[i][l] * y[l][j];
    }
  return z;
}

inline RationalMatrix radd(RationalMatrix x, const RationalMatrix& y) {
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += y[i][j];
  return x;
}

inline RationalMatrix ridentity(std::size_t d) {
  RationalMatrix m(d, std::vector<Rational>(d));
  for (std::size_t i = 0; i < d; ++i) m[i][i] = 1;
  return m;
}

// Lambda_i^(2) in exact arithmetic for integer base and raw deltas. With
// normalized deltas of a common squared norm c (rational), the value is
// divided by c; otherwise no exact value exists in general.
inline std::optional<std::string> rational_lambda2(const PerturbedFamily& pf, std::span<const int> word, int i) {
  const std::size_t d = static_cast<std::size_t>(pf.dimension());
  std::vector<RationalMatrix> as, ds;
  Rational norm_sq = 0;
  for (int k = 0; k < pf.size(); ++k) {
    auto a = to_rational(pf.base().matrix(k));
    auto dl = to_rational(pf.raw_delta(k));
    if (!a || !dl) return std::nullopt;
    Rational sq = 0;
    for (const auto& row : *dl)
      for (const auto& v : row) sq += v * v;
    if (pf.scaling() == DeltaScaling::Normalize) {
      if (k == 0) norm_sq = sq;
      else if (sq != norm_sq) return std::nullopt;
    }
    as.push_back(std::move(*a));
    ds.push_back(std::move(*dl));
  }
  const std::size_t n = word.size();
  std::vector<RationalMatrix> suffix(n + 1);
  suffix[n] = ridentity(d);
  for (std::size_t k = n; k-- > 0;) suffix[k] = rmul(as[static_cast<std::size_t>(word[k])], suffix[k + 1]);
  RationalMatrix prefix = ridentity(d);
  RationalMatrix running(d, std::vector<Rational>(d));
  RationalMatrix pi1(d, std::vector<Rational>(d)), pi2(d, std::vector<Rational>(d));
  for (std::size_t k = 0; k < n; ++k) {
    const auto& dl = ds[static_cast<std::size_t>(word[k])];
    const auto& a = as[static_cast<std::size_t>(word[k])];
    pi1 = radd(pi1, rmul(rmul(prefix, dl), suffix[k + 1]));
    pi2 = radd(pi2, rmul(rmul(running, dl), suffix[k + 1]));
    running = radd(rmul(running, a), rmul(prefix, dl));
    prefix = rmul(prefix, a);
  }
  const auto ii = static_cast<std::size_t>(i);
  Rational value = pi2[ii][ii];
  for (std::size_t j = 0; j < d; ++j) {
    if (j == ii) continue;
    const Rational gap = prefix[ii][ii] - prefix[j][j];
    if (gap == 0) return std::nullopt;
    value += pi1[j][ii] * pi1[ii][j] / gap;
  }
  if (pf.scaling() == DeltaScaling::Normalize) value /= norm_sq;
  return value.str();
}

}  // namespace detail

/// Lambda_i = Lambda_i^(0) + eps Lambda_i^(1) + eps^2 Lambda_i^(2) + O(eps^3):
///   Lambda^(0) = prod_k lambda_i^(w_k)
///   Lambda^(1) = Lambda^(0) sum_l Delta^(w_l)_ii / lambda_i^(w_l)
///   Lambda^(2) = (Pi2)_ii + sum_{j != i} (Pi1)_ji (Pi1)_ij / (Lambda_i^(0) - Lambda_j^(0))
inline ProductEigenExpansion eigenvalue_product_expansion(const PerturbedFamily& pf, std::span<const int> word, int i) {
  detail::validate_word(pf, word);
  const int d = pf.dimension();
  if (i < 0 || i >= d) fail(ErrorKind::Usage, "precondition", "eigenvalue index out of range");
  const auto terms = product_expansion_terms(pf, word);

  ComplexVector lam0(d);
  for (int j = 0; j < d; ++j) {
    Complex p = 1.0;
    for (int w : word) p *= pf.lambda(w, j);
    lam0[j] = p;
  }
  const double scale = lam0.cwiseAbs().maxCoeff();
  for (int j = 0; j < d; ++j) {
    if (j != i && std::abs(lam0[i] - lam0[j]) <= 1e-10 * scale) {
      fail(ErrorKind::Numerical, "degenerate_spectrum", "unperturbed product eigenvalue is not simple");
    }
  }

  ProductEigenExpansion out;
  out.index = i;
  out.lambda0 = lam0[i];
  Complex ratio_sum = 0.0;
  for (int w : word) ratio_sum += pf.delta(w)(i, i) / pf.lambda(w, i);
  out.lambda1 = lam0[i] * ratio_sum;
  Complex second = terms.pi2(i, i);
  for (int j = 0; j < d; ++j)
    if (j != i) second += terms.pi1(j, i) * terms.pi1(i, j) / (lam0[i] - lam0[j]);
  out.lambda2 = second;
  const Complex r1 = out.lambda1 / out.lambda0;
  out.log_modulus1 = r1.real();
  out.log_modulus2 = (out.lambda2 / out.lambda0 - 0.5 * r1 * r1).real();
  out.lambda2_rational = detail::rational_lambda2(pf, word, i);
  return out;
}

/// Exact eigenvalue of Pi(eps, w) continuing Lambda_i: the eigenvalue
/// closest to the second-order prediction.
inline Complex exact_product_eigenvalue(const PerturbedFamily& pf, std::span<const int> word,
                                        const ProductEigenExpansion& e, double eps) {
  ComplexMatrix prod = ComplexMatrix::Identity(pf.dimension(), pf.dimension());
  for (int w : word) prod = (prod * pf.perturbed(w, eps)).eval();
  const ComplexVector ev = eigenvalues(prod);
  const Complex target = e.value(eps);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < ev.size(); ++k)
    if (std::abs(ev[k] - target) < std::abs(ev[best] - target)) best = k;
  return ev[best];
}

// ---------------------------------------------------------------------------
// Asymptotics
// ---------------------------------------------------------------------------

struct PerturbedAsymptotics {
  AsymptoticSummary summary;
  double epsilon = 0.0;
  double epsilon_max = 0.0;  // min(gap bound, first eps where J changes)
  double gap_bound = 0.0;    // min over members of the smallest eigenvalue gap / 4
  double regime_bound = 0.0;  // first eps > 0 where J(eps) != J(0); inf if none
};

/// First-order eps-perturbed LLN/CLT constants. Atom (j, i) is
/// log|lambda_j^(i)| + eps Re(Delta^(i)_jj / lambda_j^(i)).
inline PerturbedAsymptotics perturbed_asymptotics(const PerturbedFamily& pf) {
  const int d = pf.dimension(), m = pf.size();
  RealMatrix base_logs(d, m), slope(d, m);
  double gap = INFINITY;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) {
      const Complex lam = pf.lambda(i, j);
      base_logs(j, i) = std::log(std::abs(lam));
      slope(j, i) = (pf.delta(i)(j, j) / lam).real();
      for (int k = j + 1; k < d; ++k) gap = std::min(gap, std::abs(lam - pf.lambda(i, k)));
    }
  }
  const auto& w = pf.base().weights();
  const auto s0 = asymptotic_summary_from_logs(base_logs, w);

  // mu_j(eps) = mu_j + eps c_j is linear, so crossings are explicit.
  const Eigen::Map<const RealVector> p(w.data(), m);
  const RealVector mu = base_logs * p;
  const RealVector c = slope * p;
  double regime = INFINITY;
  const double tie = s0.tie_tolerance;
  for (int a : s0.maximizers) {
    for (int j = 0; j < d; ++j) {
      const bool j_in = std::find(s0.maximizers.begin(), s0.maximizers.end(), j) != s0.maximizers.end();
      if (j_in) {
        if (std::abs(c[j] - c[a]) > tie) regime = 0.0;  // a tie splits at once
      } else if (c[j] > c[a]) {
        regime = std::min(regime, (mu[a] - mu[j]) / (c[j] - c[a]));
      }
    }
  }

  PerturbedAsymptotics out;
  out.epsilon = pf.epsilon();
  out.gap_bound = gap / 4.0;
  out.regime_bound = regime;
  out.epsilon_max = std::min(out.gap_bound, regime);
  out.summary = asymptotic_summary_from_logs(base_logs + pf.epsilon() * slope, w, s0.tie_tolerance);
  if (out.summary.maximizers != s0.maximizers) {
    fail(ErrorKind::Numerical, "regime_change", "maximizer set at this epsilon differs from the unperturbed one");
  }
  if (pf.epsilon() > out.gap_bound) {
    fail(ErrorKind::Usage, "precondition", "epsilon exceeds a quarter of the smallest eigenvalue gap");
  }
  return out;
}

}  // namespace rsr
