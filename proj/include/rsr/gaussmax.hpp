#pragma once

// Law of the largest coordinate of a centered Gaussian vector: CDF, moments
// and the Gaussian orthant probabilities underneath.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "rsr/error.hpp"
#include "rsr/linalg.hpp"
#include "rsr/parallel.hpp"
#include "rsr/rng.hpp"

namespace rsr {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * (0.5 * std::numbers::sqrt2)); }

inline double normal_quantile(double p) {
  p = std::clamp(p, 1e-300, 1.0 - 1e-16);
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

namespace detail {

// Gauss-Legendre half-rules (6, 12, 20 points) for the bivariate integral.
struct GlRule {
  const double* w;
  const double* x;
  int half;
};

inline GlRule gl_rule(double abs_r) {
  static constexpr double w6[] = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
  static constexpr double x6[] = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
  static constexpr double w12[] = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                   0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
  static constexpr double x12[] = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                   0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
  static constexpr double w20[] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                   0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                   0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                   0.1527533871307259};
  static constexpr double x20[] = {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                                   0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                                   0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                                   0.07652652113349733};
  if (abs_r < 0.3) return {w6, x6, 3};
  if (abs_r < 0.75) return {w12, x12, 6};
  return {w20, x20, 10};
}

}  // namespace detail

/// P(X > dh, Y > dk) for standard bivariate normals with correlation r
/// (Drezner-Wesolowsky with Genz's refinements; absolute error ~1e-15).
inline double bvn_upper(double dh, double dk, double r) {
  constexpr double tp = 2.0 * std::numbers::pi;
  if (dh == INFINITY || dk == INFINITY) return 0.0;
  if (dh == -INFINITY) return dk == -INFINITY ? 1.0 : normal_cdf(-dk);
  if (dk == -INFINITY) return normal_cdf(-dh);
  if (r == 0.0) return normal_cdf(-dh) * normal_cdf(-dk);

  const auto rule = detail::gl_rule(std::abs(r));
  double h = dh, k = dk, hk = h * k, bvn = 0.0;

  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r) / 2.0;
    for (int i = 0; i < rule.half; ++i) {
      for (double sgn : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (1.0 + sgn * rule.x[i]));
        bvn += rule.w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / tp + normal_cdf(-h) * normal_cdf(-k);
  } else {
    if (r < 0.0) {
      k = -k;
      hk = -hk;
    }
    if (std::abs(r) < 1.0) {
      const double as = (1.0 - r) * (1.0 + r);
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      double asr = -(bs / as + hk) / 2.0;
      if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(tp) * normal_cdf(-b / a);
        bvn -= std::exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a /= 2.0;
      double sum = 0.0;
      for (int i = 0; i < rule.half; ++i) {
        for (double sgn : {-1.0, 1.0}) {
          const double xs = std::pow(a * (1.0 + sgn * rule.x[i]), 2);
          asr = -(bs / xs + hk) / 2.0;
          if (asr <= -100.0) continue;
          const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
          const double rs = std::sqrt(1.0 - xs);
          const double ep = std::exp(-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
          sum += rule.w[i] * std::exp(asr) * (sp - ep);
        }
      }
      bvn = (a * sum - bvn) / tp;
    }
    if (r > 0.0) {
      bvn += normal_cdf(-std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double l = h < 0.0 ? normal_cdf(k) - normal_cdf(h) : normal_cdf(-h) - normal_cdf(-k);
      bvn = l - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

/// P(X < a, Y < b) for standard bivariate normals with correlation r.
inline double bvn_cdf(double a, double b, double r) { return bvn_upper(-a, -b, r); }

struct Probability {
  double value = 0.0;
  double error = 0.0;  // absolute error estimate (standard error for QMC)
};

struct MvnOptions {
  double target_error = 1e-6;
  std::size_t max_points = 1u << 22;  // per shift
  int shifts = 12;
  std::uint64_t seed = 0x5eed;
};

namespace detail {

inline double symmetric_scale(const RealMatrix& s) { return std::max(1.0, s.cwiseAbs().maxCoeff()); }

inline void validate_covariance(const RealMatrix& s) {
  if (s.rows() != s.cols() || s.rows() < 1) fail(ErrorKind::InvalidInput, "dimension_mismatch", "covariance must be square");
  if (!s.allFinite()) fail(ErrorKind::InvalidInput, "non_finite", "covariance has non-finite entries");
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * symmetric_scale(s)) {
    fail(ErrorKind::InvalidInput, "asymmetric_covariance", "covariance is not symmetric");
  }
  const RealMatrix sym = 0.5 * (s + s.transpose());
  const double trace = std::max(sym.trace(), 0.0);
  const double lo = Eigen::SelfAdjointEigenSolver<RealMatrix>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (lo < -1e-10 * std::max(trace, 1e-300)) {
    fail(ErrorKind::InvalidInput, "indefinite_covariance", "covariance is not positive semidefinite");
  }
}

// Cholesky factor tolerant of zero pivots (rank-deficient PSD input).
inline RealMatrix psd_cholesky(const RealMatrix& s) {
  const Eigen::Index n = s.rows();
  RealMatrix l = RealMatrix::Zero(n, n);
  const double tol = 1e-12 * std::max(1e-300, s.diagonal().maxCoeff());
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = s(j, j) - l.row(j).head(j).squaredNorm();
    if (d <= tol) continue;  // pivot collapses; column stays zero
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) l(i, j) = (s(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  return l;
}

inline constexpr std::array<int, 8> kSmallPrimes = {2, 3, 5, 7, 11, 13, 17, 19};

}  // namespace detail

/// P(G_1 < x_1, ..., G_s < x_s) for G ~ N(0, sigma). s = 1 uses erfc, s = 2
/// the bivariate algorithm, s >= 3 randomized lattice QMC on the
/// separation-of-variables integrand.
inline Probability mvn_cdf(const RealVector& x, const RealMatrix& sigma, const MvnOptions& opt = {}) {
  detail::validate_covariance(sigma);
  const Eigen::Index s = sigma.rows();
  if (x.size() != s) fail(ErrorKind::InvalidInput, "dimension_mismatch", "point and covariance differ in size");
  if (s > 8) fail(ErrorKind::Usage, "precondition", "mvn_cdf supports s <= 8");

  // Identical coordinates (equal variance, covariance equal to it) are one
  // variable; keep it once with the smallest threshold.
  {
    const double tol = 1e-12 * detail::symmetric_scale(sigma);
    std::vector<Eigen::Index> keep;
    RealVector xr = x;
    for (Eigen::Index j = 0; j < s; ++j) {
      bool dup = false;
      for (Eigen::Index k : keep) {
        if (std::abs(sigma(j, j) - sigma(k, k)) <= tol && std::abs(sigma(j, k) - sigma(j, j)) <= tol) {
          xr[k] = std::min(xr[k], x[j]);
          dup = true;
          break;
        }
      }
      if (!dup) keep.push_back(j);
    }
    if (static_cast<Eigen::Index>(keep.size()) < s) {
      const auto r = static_cast<Eigen::Index>(keep.size());
      RealVector xs(r);
      RealMatrix ss(r, r);
      for (Eigen::Index a = 0; a < r; ++a) {
        xs[a] = xr[keep[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < r; ++b) ss(a, b) = sigma(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
      }
      return mvn_cdf(xs, ss, opt);
    }
  }

  auto standardized = [&](Eigen::Index j) -> double {
    const double v = sigma(j, j);
    if (v <= 0.0) return x[j] >= 0.0 ? INFINITY : -INFINITY;
    return x[j] / std::sqrt(v);
  };
  if (s == 1) return {normal_cdf(standardized(0)), 0.0};
  if (s == 2) {
    const double v0 = sigma(0, 0), v1 = sigma(1, 1);
    if (v0 <= 0.0 || v1 <= 0.0) return {normal_cdf(standardized(0)) * normal_cdf(standardized(1)), 0.0};
    const double r = std::clamp(sigma(0, 1) / std::sqrt(v0 * v1), -1.0, 1.0);
    return {bvn_cdf(standardized(0), standardized(1), r), 1e-15};
  }

  const RealMatrix l = detail::psd_cholesky(sigma);
  std::array<double, 8> gen{};
  for (Eigen::Index j = 0; j + 1 < s; ++j) {
    const double q = std::sqrt(static_cast<double>(detail::kSmallPrimes[static_cast<std::size_t>(j)]));
    gen[static_cast<std::size_t>(j)] = q - std::floor(q);
  }

  auto integrand = [&](const std::array<double, 8>& w) {
    std::array<double, 8> y{};
    double f = 1.0;
    for (Eigen::Index i = 0; i < s; ++i) {
      double c = x[i];
      for (Eigen::Index j = 0; j < i; ++j) c -= l(i, j) * y[static_cast<std::size_t>(j)];
      double e;
      if (l(i, i) > 0.0) {
        e = normal_cdf(c / l(i, i));
      } else {
        e = c >= 0.0 ? 1.0 : 0.0;
      }
      f *= e;
      if (f == 0.0) return 0.0;
      if (i + 1 < s) y[static_cast<std::size_t>(i)] = normal_quantile(w[static_cast<std::size_t>(i)] * e);
    }
    return f;
  };

  std::size_t points = 1024;
  Probability out;
  for (;;) {
    std::vector<double> shift_means(static_cast<std::size_t>(opt.shifts));
    for (int k = 0; k < opt.shifts; ++k) {
      CounterRng rng(opt.seed, static_cast<std::uint64_t>(k), 0x4d564e);
      std::array<double, 8> delta{};
      for (Eigen::Index j = 0; j + 1 < s; ++j) delta[static_cast<std::size_t>(j)] = rng.uniform();
      double acc = 0.0;
      for (std::size_t p = 1; p <= points; ++p) {
        std::array<double, 8> w{};
        for (Eigen::Index j = 0; j + 1 < s; ++j) {
          const auto jj = static_cast<std::size_t>(j);
          double t = static_cast<double>(p) * gen[jj] + delta[jj];
          t -= std::floor(t);
          w[jj] = std::abs(2.0 * t - 1.0);  // baker's transform
        }
        acc += integrand(w);
      }
      shift_means[static_cast<std::size_t>(k)] = acc / static_cast<double>(points);
    }
    double mean = 0.0;
    for (double v : shift_means) mean += v;
    mean /= opt.shifts;
    double var = 0.0;
    for (double v : shift_means) var += (v - mean) * (v - mean);
    var /= (opt.shifts - 1.0) * opt.shifts;
    out = {std::clamp(mean, 0.0, 1.0), std::sqrt(var)};
    if (out.error <= opt.target_error || points >= opt.max_points) break;
    points *= 2;
  }
  return out;
}

/// Covariance of the Gaussian vector whose maximum is studied.
struct GaussMaxSpec {
  RealMatrix covariance;

  explicit GaussMaxSpec(RealMatrix cov) : covariance(std::move(cov)) { detail::validate_covariance(covariance); }

  int s() const { return static_cast<int>(covariance.rows()); }
};

/// Drops coordinates that are exact copies of an earlier one (equal
/// variance and unit correlation): the max over copies is the same variable.
inline RealMatrix dedup_covariance(const RealMatrix& sigma, std::vector<int>* kept = nullptr) {
  const Eigen::Index s = sigma.rows();
  const double tol = 1e-12 * detail::symmetric_scale(sigma);
  std::vector<int> keep;
  for (Eigen::Index j = 0; j < s; ++j) {
    bool dup = false;
    for (int k : keep) {
      if (std::abs(sigma(j, j) - sigma(k, k)) <= tol && std::abs(sigma(j, k) - sigma(j, j)) <= tol) {
        dup = true;
        break;
      }
    }
    if (!dup) keep.push_back(static_cast<int>(j));
  }
  RealMatrix out(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = 0; b < keep.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = sigma(keep[a], keep[b]);
  if (kept) *kept = keep;
  return out;
}

inline bool is_diagonal(const RealMatrix& s) {
  const double tol = 1e-14 * detail::symmetric_scale(s);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (i != j && std::abs(s(i, j)) > tol) return false;
  return true;
}

/// Common variance and correlation when sigma is equicorrelated.
inline std::optional<std::pair<double, double>> equicorrelation(const RealMatrix& s) {
  const double tol = 1e-12 * detail::symmetric_scale(s);
  const double v = s(0, 0);
  if (!(v > 0.0)) return std::nullopt;
  const double c = s.rows() > 1 ? s(0, 1) : 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (std::abs(s(i, i) - v) > tol) return std::nullopt;
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (i != j && std::abs(s(i, j) - c) > tol) return std::nullopt;
  }
  return std::make_pair(v, c / v);
}

/// M_s(x; sigma) = P(max_j G_j <= x).
inline double max_gauss_cdf(double x, const GaussMaxSpec& spec, const MvnOptions& opt = {}) {
  const RealMatrix s = dedup_covariance(spec.covariance);
  if (is_diagonal(s)) {
    double p = 1.0;
    for (Eigen::Index j = 0; j < s.rows(); ++j) p *= s(j, j) > 0.0 ? normal_cdf(x / std::sqrt(s(j, j))) : (x >= 0.0 ? 1.0 : 0.0);
    return p;
  }
  return mvn_cdf(RealVector::Constant(s.rows(), x), s, opt).value;
}

/// M_s tabulated on a grid and linearly interpolated; for repeated
/// evaluation (KS distances over 10^5 points) when s >= 3.
class MaxGaussCdfTable {
 public:
  MaxGaussCdfTable(const GaussMaxSpec& spec, int points = 1601, const MvnOptions& opt = {}) {
    const double sd = std::sqrt(spec.covariance.diagonal().maxCoeff());
    lo_ = -8.0 * sd;
    hi_ = 8.0 * sd;
    values_.resize(static_cast<std::size_t>(points));
    double running = 0.0;
    for (int k = 0; k < points; ++k) {
      const double x = lo_ + (hi_ - lo_) * k / (points - 1.0);
      running = std::max(running, max_gauss_cdf(x, spec, opt));  // keep monotone under QMC noise
      values_[static_cast<std::size_t>(k)] = running;
    }
  }

  double operator()(double x) const {
    if (x <= lo_) return 0.0;
    if (x >= hi_) return 1.0;
    const double t = (x - lo_) / (hi_ - lo_) * (static_cast<double>(values_.size()) - 1.0);
    const auto k = std::min(static_cast<std::size_t>(t), values_.size() - 2);
    const double f = t - static_cast<double>(k);
    return values_[k] + f * (values_[k + 1] - values_[k]);
  }

 private:
  double lo_ = 0.0, hi_ = 0.0;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

enum class GaussMaxMethod { ClosedForm, Quadrature, MonteCarlo };

inline const char* to_string(GaussMaxMethod m) {
  switch (m) {
    case GaussMaxMethod::ClosedForm: return "closed_form";
    case GaussMaxMethod::Quadrature: return "quadrature";
    case GaussMaxMethod::MonteCarlo: return "monte_carlo";
  }
  return "unknown";
}

struct GaussMaxMoments {
  double m1 = 0.0, m2 = 0.0, m3 = 0.0;
  double v0 = 0.0;  // m2 - m1^2
  double v1 = 0.0;  // m3 - m1 m2
  GaussMaxMethod method = GaussMaxMethod::Quadrature;
  double error_estimate = 0.0;
  int effective_dimension = 0;  // s after dedup
};

enum class MomentMethodPreference { Auto, Quadrature, MonteCarlo };

struct GaussMaxOptions {
  MomentMethodPreference preference = MomentMethodPreference::Auto;
  std::size_t mc_draws = 10'000'000;
  std::uint64_t seed = 0;
  unsigned workers = 0;
};

namespace detail {

inline void finish_moments(GaussMaxMoments& m) {
  m.v0 = std::max(0.0, m.m2 - m.m1 * m.m1);
  m.v1 = m.m3 - m.m1 * m.m2;
}

// Integrates x^k f(x) for k = 0..3 over [-L, 0] and [0, L].
template <class Density>
std::array<double, 4> density_moments(Density&& f, double half_width, double* err) {
  using boost::math::quadrature::gauss_kronrod;
  std::array<double, 4> out{};
  double total_err = 0.0;
  for (int k = 0; k < 4; ++k) {
    auto g = [&](double x) { return std::pow(x, k) * f(x); };
    double e1 = 0.0, e2 = 0.0;
    out[static_cast<std::size_t>(k)] = gauss_kronrod<double, 61>::integrate(g, -half_width, 0.0, 15, 1e-14, &e1) +
                                       gauss_kronrod<double, 61>::integrate(g, 0.0, half_width, 15, 1e-14, &e2);
    total_err = std::max(total_err, e1 + e2);
  }
  if (err) *err = total_err;
  return out;
}

// Max of s i.i.d. standard normals: raw moments E[W^k], k = 1..3.
inline std::array<double, 4> iid_max_moments(int s, double* err) {
  auto f = [s](double x) { return s * normal_pdf(x) * std::pow(normal_cdf(x), s - 1); };
  return density_moments(f, 10.0, err);
}

// Density of the max for s <= 3 with positive definite sigma:
// f(x) = sum_j phi_j(x) P(G_k < x, k != j | G_j = x).
inline double max_density(const RealMatrix& s, double x) {
  const Eigen::Index n = s.rows();
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double sd = std::sqrt(s(j, j));
    const double phi = normal_pdf(x / sd) / sd;
    if (phi == 0.0) continue;
    std::vector<Eigen::Index> others;
    for (Eigen::Index k = 0; k < n; ++k)
      if (k != j) others.push_back(k);
    // Conditional law of the others given G_j = x.
    std::vector<double> mean, var;
    for (auto k : others) {
      mean.push_back(s(k, j) / s(j, j) * x);
      var.push_back(std::max(0.0, s(k, k) - s(k, j) * s(k, j) / s(j, j)));
    }
    auto z = [&](std::size_t a) -> double {
      const double c = x - mean[a];
      if (var[a] <= 0.0) return c >= 0.0 ? INFINITY : -INFINITY;
      return c / std::sqrt(var[a]);
    };
    double cond = 1.0;
    if (others.size() == 1) {
      cond = normal_cdf(z(0));
    } else if (others.size() == 2) {
      const auto a = others[0], b = others[1];
      const double cov = s(a, b) - s(a, j) * s(b, j) / s(j, j);
      const double den = std::sqrt(var[0] * var[1]);
      const double r = den > 0.0 ? std::clamp(cov / den, -1.0, 1.0) : 0.0;
      cond = bvn_cdf(z(0), z(1), r);
    }
    total += phi * cond;
  }
  return total;
}

inline GaussMaxMoments monte_carlo_moments(const RealMatrix& s, const GaussMaxOptions& opt) {
  const Eigen::Index n = s.rows();
  const RealMatrix l = psd_cholesky(s);
  constexpr std::size_t kBlock = 1 << 16;
  const std::size_t blocks = (opt.mc_draws + kBlock - 1) / kBlock;
  struct Acc {
    double m1 = 0, m2 = 0, m3 = 0;
  };
  std::vector<Acc> partial(blocks);
  std::vector<MomentAccumulator> acc(blocks);
  parallel_blocks(opt.mc_draws, kBlock, opt.workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
    RealVector z(n);
    MomentAccumulator a;
    Acc p;
    for (std::size_t i = begin; i < end; ++i) {
      CounterRng rng(opt.seed, i, 0x47617573);
      std::normal_distribution<double> normal;
      for (Eigen::Index k = 0; k < n; ++k) z[k] = normal(rng);
      const double m = (l * z).maxCoeff();
      a.add(m);
      p.m1 += m;
      p.m2 += m * m;
      p.m3 += m * m * m;
    }
    partial[b] = p;
    acc[b] = a;
  });
  Acc total;
  MomentAccumulator all;
  for (std::size_t b = 0; b < blocks; ++b) {
    total.m1 += partial[b].m1;
    total.m2 += partial[b].m2;
    total.m3 += partial[b].m3;
    all.merge(acc[b]);
  }
  const double nn = static_cast<double>(opt.mc_draws);
  GaussMaxMoments out;
  out.m1 = total.m1 / nn;
  out.m2 = total.m2 / nn;
  out.m3 = total.m3 / nn;
  out.method = GaussMaxMethod::MonteCarlo;
  out.error_estimate = all.standard_error_of_mean();
  return out;
}

}  // namespace detail

/// Closed-form mean where one is known; used for tagging and cross-checks.
inline std::optional<double> closed_form_m1(const RealMatrix& s) {
  if (s.rows() == 1) return 0.0;
  if (s.rows() == 2) {
    return std::sqrt(std::max(0.0, s(0, 0) + s(1, 1) - 2.0 * s(0, 1)) / (2.0 * std::numbers::pi));
  }
  if (s.rows() == 3) {
    if (is_diagonal(s)) {
      double acc = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int h = i + 1; h < 3; ++h) acc += std::sqrt(s(i, i) + s(h, h));
      return acc / (2.0 * std::sqrt(2.0 * std::numbers::pi));
    }
    if (auto eq = equicorrelation(s)) {
      return std::sqrt(eq->first) * std::sqrt(1.0 - eq->second) * 3.0 / (2.0 * std::sqrt(std::numbers::pi));
    }
  }
  return std::nullopt;
}

inline std::optional<double> closed_form_v0(const RealMatrix& s) {
  if (s.rows() == 1) return s(0, 0);
  auto eq = equicorrelation(s);
  if (!eq) return std::nullopt;
  const auto [v, r] = *eq;
  if (s.rows() == 2) return v * (1.0 - (1.0 - r) / std::numbers::pi);
  if (s.rows() == 3) {
    const double pi = std::numbers::pi;
    return v * (r + (1.0 - r) * (2.0 * std::sqrt(3.0) + 4.0 * pi - 9.0) / (4.0 * pi));
  }
  return std::nullopt;
}

/// m_k = E[M^k], k = 1..3, with M = max_j G_j.
/// Auto: closed form when both m1 and v0 have one (m3 by quadrature), then
/// one-dimensional quadrature for independent or nonnegatively
/// equicorrelated coordinates (any s), density quadrature for s <= 3, and
/// Monte Carlo otherwise.
inline GaussMaxMoments max_gauss_moments(const GaussMaxSpec& spec, const GaussMaxOptions& opt = {}) {
  const RealMatrix s = dedup_covariance(spec.covariance);
  const int dim = static_cast<int>(s.rows());
  GaussMaxMoments out;

  if (dim == 1) {
    out.m1 = 0.0;
    out.m2 = s(0, 0);
    out.m3 = 0.0;
    out.method = GaussMaxMethod::ClosedForm;
    detail::finish_moments(out);
    out.effective_dimension = 1;
    return out;
  }

  const bool positive_definite = (s.diagonal().array() > 0.0).all() &&
                                 Eigen::LLT<RealMatrix>(s).info() == Eigen::Success;
  const auto eq = equicorrelation(s);
  const bool want_mc = opt.preference == MomentMethodPreference::MonteCarlo;

  if (!want_mc && eq && eq->second >= 0.0) {
    // M = sigma (sqrt(r) Z + sqrt(1 - r) W), W the max of dim i.i.d. normals.
    double err = 0.0;
    const auto w = detail::iid_max_moments(dim, &err);
    const double sd = std::sqrt(eq->first), r = eq->second, c = std::sqrt(1.0 - r);
    out.m1 = sd * c * w[1];
    out.m2 = eq->first * (r + (1.0 - r) * w[2]);
    out.m3 = sd * eq->first * (c * c * c * w[3] + 3.0 * r * c * w[1]);
    out.error_estimate = err * std::max(1.0, eq->first * sd);
    out.method = GaussMaxMethod::Quadrature;
  } else if (!want_mc && is_diagonal(s) && positive_definite) {
    auto f = [&](double x) {
      double total = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double sdj = std::sqrt(s(j, j));
        double term = normal_pdf(x / sdj) / sdj;
        for (int k = 0; k < dim; ++k)
          if (k != j) term *= normal_cdf(x / std::sqrt(s(k, k)));
        total += term;
      }
      return total;
    };
    double err = 0.0;
    const auto m = detail::density_moments(f, 10.0 * std::sqrt(s.diagonal().maxCoeff()), &err);
    out.m1 = m[1];
    out.m2 = m[2];
    out.m3 = m[3];
    out.error_estimate = err;
    out.method = GaussMaxMethod::Quadrature;
  } else if (!want_mc && dim <= 3 && positive_definite) {
    double err = 0.0;
    const auto m = detail::density_moments([&](double x) { return detail::max_density(s, x); },
                                           10.0 * std::sqrt(s.diagonal().maxCoeff()), &err);
    out.m1 = m[1];
    out.m2 = m[2];
    out.m3 = m[3];
    out.error_estimate = err;
    out.method = GaussMaxMethod::Quadrature;
  } else {
    if (opt.preference == MomentMethodPreference::Quadrature) {
      fail(ErrorKind::Usage, "precondition", "no quadrature route for this covariance");
    }
    out = detail::monte_carlo_moments(s, opt);
  }

  if (opt.preference == MomentMethodPreference::Auto) {
    const auto c1 = closed_form_m1(s);
    const auto c0 = closed_form_v0(s);
    if (c1 && c0) {
      out.m1 = *c1;
      out.m2 = *c0 + *c1 * *c1;
      out.method = GaussMaxMethod::ClosedForm;
    }
  }
  detail::finish_moments(out);
  out.effective_dimension = dim;
  return out;
}

}  // namespace rsr
