#include <gtest/gtest.h>

#include <numbers>

#include "rsr/edgeworth.hpp"
#include "rsr/mc.hpp"

using namespace rsr;

namespace {

// Golub-Welsch nodes and weights for the standard normal measure.
struct GaussHermite {
  std::vector<double> x, w;
  explicit GaussHermite(int n) {
    RealMatrix j = RealMatrix::Zero(n, n);
    for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<RealMatrix> es(j);
    for (int k = 0; k < n; ++k) {
      x.push_back(es.eigenvalues()[k]);
      w.push_back(es.eigenvectors()(0, k) * es.eigenvectors()(0, k));
    }
  }
};

double factorial(int k) { return std::tgamma(k + 1.0); }

RealMatrix cov2(double a, double b, double c) {
  RealMatrix s(2, 2);
  s << a, c, c, b;
  return s;
}

}  // namespace

TEST(Hermite, Values) {
  EXPECT_EQ(hermite(0, 3.7), 1.0);
  EXPECT_EQ(hermite(1, 3.7), 3.7);
  EXPECT_EQ(hermite(3, 2.0), 2.0);
  EXPECT_EQ(hermite(6, 1.0), 16.0);
  EXPECT_NEAR(hermite(8, 0.5), std::pow(0.5, 8) - 28 * std::pow(0.5, 6) + 210 * std::pow(0.5, 4) - 420 * 0.25 + 105, 1e-12);
  EXPECT_THROW(hermite(9, 1.0), Error);
}

TEST(Hermite, Orthogonality) {
  const GaussHermite q(20);
  for (int j = 0; j <= 6; ++j)
    for (int k = 0; k <= 6; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < q.x.size(); ++i) s += q.w[i] * hermite(j, q.x[i]) * hermite(k, q.x[i]);
      EXPECT_NEAR(s, j == k ? factorial(k) : 0.0, 1e-10) << j << "," << k;
    }
}

TEST(Hermite, DerivativeIdentity) {
  const double h = 1e-5;
  for (int k = 1; k <= 6; ++k)
    for (double x : {-2.3, -0.7, 0.0, 0.4, 1.9}) {
      auto g = [&](double t) { return normal_pdf(t) * hermite(k - 1, t); };
      const double d = (g(x + h) - g(x - h)) / (2 * h);
      EXPECT_NEAR(d, -normal_pdf(x) * hermite(k, x), 1e-6);
    }
}

TEST(MultiIndex, Enumeration) {
  EXPECT_EQ(multi_indices(3, 3).size(), 10u);
  EXPECT_EQ(multi_indices(2, 4).size(), 5u);
  EXPECT_EQ(multinomial({2, 1}), 3.0);
  EXPECT_EQ(multinomial({1, 1, 1}), 6.0);
}

TEST(SigmaHermite, Examples) {
  const RealMatrix s = cov2(2.0, 1.0, 0.6);
  const SigmaHermite h(s);
  RealVector u(2);
  u << 0.7, -1.3;
  const RealVector v = h.precision() * u;
  EXPECT_NEAR(h({1, 0}, u), v[0], 1e-14);
  EXPECT_NEAR(h({0, 1}, u), v[1], 1e-14);
  RealVector z(2);
  z << 2.0, 0.0;
  EXPECT_NEAR(sigma_hermite({3, 0}, z, RealMatrix::Identity(2, 2)), 2.0, 1e-14);
}

TEST(SigmaHermite, LowOrderClosedForms) {
  const RealMatrix s = cov2(1.5, 0.8, -0.4);
  const SigmaHermite h(s);
  const RealMatrix p = h.precision();
  RealVector u(2);
  u << -0.4, 1.1;
  const RealVector v = p * u;
  EXPECT_NEAR(h({2, 0}, u), v[0] * v[0] - p(0, 0), 1e-13);
  EXPECT_NEAR(h({1, 1}, u), v[0] * v[1] - p(0, 1), 1e-13);
  EXPECT_NEAR(h({2, 1}, u), v[0] * v[0] * v[1] - p(0, 0) * v[1] - 2 * p(0, 1) * v[0], 1e-13);
  EXPECT_NEAR(h({0, 3}, u), std::pow(v[1], 3) - 3 * p(1, 1) * v[1], 1e-13);
}

TEST(SigmaHermite, IdentityFactorizes) {
  const SigmaHermite h(RealMatrix::Identity(3, 3));
  RealVector u(3);
  u << 0.3, -1.2, 2.1;
  for (int k = 0; k <= 6; ++k)
    for (const auto& a : multi_indices(3, k)) {
      const double expect = hermite(a[0], u[0]) * hermite(a[1], u[1]) * hermite(a[2], u[2]);
      EXPECT_NEAR(h(a, u), expect, 1e-12 * std::max(1.0, std::abs(expect)));
    }
}

TEST(SigmaHermite, CenteredUnderItsGaussian) {
  // E[H_alpha(U)] = 0 for U ~ N(0, Sigma), |alpha| >= 1, by tensor Gauss-Hermite (exact for polynomials).
  const RealMatrix s = cov2(1.3, 0.7, 0.5);
  const SigmaHermite h(s);
  const RealMatrix l = Eigen::LLT<RealMatrix>(s).matrixL();
  const GaussHermite q(12);
  for (int k = 1; k <= 6; ++k)
    for (const auto& a : multi_indices(2, k)) {
      double e = 0.0;
      for (std::size_t i = 0; i < q.x.size(); ++i)
        for (std::size_t j = 0; j < q.x.size(); ++j) {
          RealVector z(2);
          z << q.x[i], q.x[j];
          e += q.w[i] * q.w[j] * h(a, l * z);
        }
      EXPECT_NEAR(e, 0.0, 1e-10);
    }
}

TEST(SigmaHermite, SingularRejected) { EXPECT_THROW(SigmaHermite(cov2(1, 1, 1)), Error); }

TEST(Cumulants, Examples) {
  const auto pm = cumulants_finite_support(std::vector<double>{2.5}, std::vector<double>{1.0});
  EXPECT_EQ(pm.mean, 2.5);
  for (int r = 2; r <= 6; ++r) EXPECT_EQ(pm[r], 0.0);
  const double a = 1.7;
  const auto tp = cumulants_finite_support(std::vector<double>{-a, a}, std::vector<double>{0.5, 0.5});
  EXPECT_NEAR(tp[2], a * a, 1e-14);
  EXPECT_NEAR(tp[3], 0.0, 1e-14);
  EXPECT_NEAR(tp[4], -2 * std::pow(a, 4), 1e-12);
  EXPECT_THROW(cumulants_finite_support(std::vector<double>{0, 1}, std::vector<double>{0.5, 0.6}), Error);
}

TEST(Cumulants, BernoulliOracle) {
  // kappa_r of Bernoulli(p): p q, p q (q - p), p q (1 - 6 p q)
  const double p = 0.3, q = 0.7;
  const auto c = cumulants_finite_support(std::vector<double>{0, 1}, std::vector<double>{q, p});
  EXPECT_NEAR(c[2], p * q, 1e-15);
  EXPECT_NEAR(c[3], p * q * (q - p), 1e-15);
  EXPECT_NEAR(c[4], p * q * (1 - 6 * p * q), 1e-15);
  EXPECT_NEAR(c[5], p * q * (q - p) * (1 - 12 * p * q), 1e-15);
  EXPECT_NEAR(c[6], p * q * (1 - 30 * p * q * (1 - 4 * p * q)), 1e-15);
}

TEST(Cumulants, ScalingAndAdditivity) {
  const std::vector<double> x{-0.3, 0.4, 1.9, 2.2}, px{0.1, 0.4, 0.3, 0.2};
  const std::vector<double> y{0.5, -1.0, 3.0}, py{0.5, 0.25, 0.25};
  const auto cx = cumulants_finite_support(x, px);
  const double c = -1.7;
  std::vector<double> xs;
  for (double v : x) xs.push_back(c * v);
  const auto cs = cumulants_finite_support(xs, px);
  for (int r = 2; r <= 6; ++r) EXPECT_NEAR(cs[r], std::pow(c, r) * cx[r], 1e-12 * std::abs(std::pow(c, r) * cx[r]) + 1e-14);

  std::vector<double> sum, ps;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) {
      sum.push_back(x[i] + y[j]);
      ps.push_back(px[i] * py[j]);
    }
  const auto cy = cumulants_finite_support(y, py), cz = cumulants_finite_support(sum, ps);
  for (int r = 2; r <= 6; ++r) EXPECT_NEAR(cz[r], cx[r] + cy[r], 1e-10 * std::max(1.0, std::abs(cz[r])));
}

TEST(Cumulants, MultivariateIndependentCoordinates) {
  const std::vector<double> x{-0.3, 0.4, 1.9}, px{0.2, 0.5, 0.3};
  const std::vector<double> y{0.5, -1.0}, py{0.6, 0.4};
  RealMatrix atoms(2, 6);
  std::vector<double> p;
  int k = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j, ++k) {
      atoms(0, k) = x[i];
      atoms(1, k) = y[j];
      p.push_back(px[i] * py[j]);
    }
  const auto mc = cumulants_finite_support(atoms, p);
  const auto cx = cumulants_finite_support(x, px), cy = cumulants_finite_support(y, py);
  EXPECT_NEAR(mc.kappa({3, 0}), cx[3], 1e-13);
  EXPECT_NEAR(mc.kappa({0, 4}), cy[4], 1e-13);
  EXPECT_NEAR(mc.kappa({2, 1}), 0.0, 1e-13);
  EXPECT_NEAR(mc.kappa({2, 2}), 0.0, 1e-13);
  EXPECT_NEAR(mc.covariance(0, 1), 0.0, 1e-14);
  EXPECT_NEAR(mc.covariance(0, 0), cx[2], 1e-14);
}

TEST(Cumulants, MultivariateSymmetricUnderSwap) {
  RealMatrix atoms(2, 3), swapped(2, 3);
  atoms << 0.1, 0.5, -0.4, 0.9, -0.2, 0.3;
  swapped.row(0) = atoms.row(1);
  swapped.row(1) = atoms.row(0);
  const std::vector<double> p{0.3, 0.3, 0.4};
  const auto a = cumulants_finite_support(atoms, p), b = cumulants_finite_support(swapped, p);
  EXPECT_NEAR(a.kappa({2, 1}), b.kappa({1, 2}), 1e-15);
  EXPECT_NEAR(a.kappa({3, 1}), b.kappa({1, 3}), 1e-15);
}

TEST(EdgeworthUniv, GaussianCaseExact) {
  ScalarCumulants c;
  c.kappa[2] = 2.0;
  for (double x : {-1.5, 0.0, 0.8}) {
    const auto r = edgeworth_univ_density_cdf(x, 10, c);
    EXPECT_DOUBLE_EQ(r.pdf, normal_pdf(x));
    EXPECT_DOUBLE_EQ(r.cdf, normal_cdf(x));
  }
  ScalarCumulants bad;
  EXPECT_THROW(edgeworth_univ_density_cdf(0.0, 10, bad), Error);
}

TEST(EdgeworthUniv, LargeNLimitAndCdfDerivative) {
  const auto c = model_cumulants(BenchmarkModel::pure_exponential(0.0, 0.5));
  for (double x : {-1.0, 0.3, 2.0}) {
    const auto far = edgeworth_univ_density_cdf(x, 1'000'000'000'000LL, c);
    EXPECT_NEAR(far.pdf, normal_pdf(x), 1e-6);
    EXPECT_NEAR(far.cdf, normal_cdf(x), 1e-6);
    const double h = 1e-5;
    const double d = (edgeworth_univ_density_cdf(x + h, 30, c).cdf - edgeworth_univ_density_cdf(x - h, 30, c).cdf) / (2 * h);
    EXPECT_NEAR(d, edgeworth_univ_density_cdf(x, 30, c).pdf, 1e-6);
  }
}

TEST(EdgeworthUniv, MatchesExponentialSumsAtN400) {
  // standardized sum of n centered Exp(1) is (Gamma(n) - n) / sqrt(n)
  const long long n = 400;
  const auto c = model_cumulants(BenchmarkModel::pure_exponential(0.0, 1.0));
  const std::size_t count = 1'000'000;
  std::vector<double> z(count);
  for (std::size_t i = 0; i < count; ++i) {
    CounterRng rng(31, i);
    std::gamma_distribution<double> g(static_cast<double>(n), 1.0);
    z[i] = (g(rng) - n) / std::sqrt(static_cast<double>(n));
  }
  const double d = ks_distance(z, [&](double x) { return edgeworth_univ_density_cdf(x, n, c).cdf; });
  EXPECT_LE(d, 3e-3);
}

TEST(MomentExpansionsUniv, PointMass) {
  ScalarCumulants c;
  const auto p = moment_expansions_univ(2.5, c, 7);
  EXPECT_EQ(p.mean, 2.5);
  EXPECT_EQ(p.scaled_variance, 0.0);
}

TEST(GaussMaxCorrections, UnivariateIsZero) {
  CorrectionOptions opt;
  opt.draws = 400000;
  const auto c = gauss_max_corrections(RealMatrix::Identity(1, 1), opt);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_LE(std::abs(c[0].h.value), 4 * c[0].h.standard_error);
  EXPECT_LE(std::abs(c[0].r.value), 4 * c[0].r.standard_error);
}

TEST(GaussMaxCorrections, TwoCoordinatesGiveZeroH) {
  // Gaussian integration by parts: h_alpha = E[d^alpha M], and third derivatives of
  // max(u1, u2) are multiples of delta'(u1 - u2), whose mean vanishes.
  CorrectionOptions opt;
  opt.draws = 400000;
  opt.seed = 3;
  for (const RealMatrix& s : {RealMatrix(RealMatrix::Identity(2, 2)), cov2(1.0, 2.0, 0.5)}) {
    for (const auto& c : gauss_max_corrections(s, opt)) {
      EXPECT_LE(std::abs(c.h.value), 4 * c.h.standard_error) << c.alpha[0] << c.alpha[1];
    }
  }
}

TEST(GaussMaxCorrections, ExchangeableCoordinatesAndSeedConsistency) {
  RealMatrix s = RealMatrix::Identity(3, 3);
  s(0, 1) = s(1, 0) = 0.3;
  s(0, 2) = s(2, 0) = s(1, 2) = s(2, 1) = 0.3;
  CorrectionOptions a, b;
  a.draws = b.draws = 400000;
  a.seed = 1;
  b.seed = 2;
  const auto ca = gauss_max_corrections(s, a), cb = gauss_max_corrections(s, b);
  ASSERT_EQ(ca.size(), cb.size());
  for (std::size_t k = 0; k < ca.size(); ++k) {
    const double se = std::hypot(ca[k].r.standard_error, cb[k].r.standard_error);
    EXPECT_LE(std::abs(ca[k].r.value - cb[k].r.value), 4 * se);
    const double seh = std::hypot(ca[k].h.standard_error, cb[k].h.standard_error);
    EXPECT_LE(std::abs(ca[k].h.value - cb[k].h.value), 4 * seh);
  }
  auto find = [&](const MultiIndex& a) {
    for (const auto& c : ca)
      if (c.alpha == a) return c;
    throw std::runtime_error("missing");
  };
  const auto x = find({3, 0, 0}), y = find({0, 3, 0});
  EXPECT_LE(std::abs(x.h.value - y.h.value), 4 * std::hypot(x.h.standard_error, y.h.standard_error));
}

TEST(GaussMaxCorrections, BudgetGuard) {
  CorrectionOptions opt;
  opt.draws = 1000;
  opt.target_standard_error = 1e-6;
  EXPECT_THROW(gauss_max_corrections(RealMatrix::Identity(2, 2), opt), Error);
}

TEST(MomentExpansionsMulti, GaussianComponents) {
  const RealMatrix s = cov2(1.0, 2.0, 0.5);
  const auto mm = max_gauss_moments(GaussMaxSpec(s));
  MultiCumulants mc;
  mc.s = 2;
  mc.covariance = s;
  for (const auto& a : multi_indices(2, 3)) mc.kappa_alpha[a] = 0.0;
  CorrectionOptions opt;
  opt.draws = 10000;
  const auto corr = gauss_max_corrections(s, opt);
  const auto p = moment_expansions_multi(1.5, mm, mc, corr, 100);
  EXPECT_NEAR(p.mean, 1.5 * (1 + mm.m1 / 10 + mm.m2 / 200), 1e-14);
  EXPECT_NEAR(p.scaled_variance, 2.25 * (mm.v0 + mm.v1 / 10), 1e-14);
}

TEST(MomentExpansionsMulti, RegimeGuard) {
  const RealMatrix s = cov2(1.0, 1.0, 1.0);
  const auto mm = max_gauss_moments(GaussMaxSpec(s));
  MultiCumulants mc;
  mc.s = 2;
  mc.covariance = s;
  EXPECT_THROW(moment_expansions_multi(1.0, mm, mc, {}, 100), Error);
}

TEST(CorrectionSums, OrderedTripleWeighting) {
  MultiCumulants mc;
  mc.s = 2;
  mc.kappa_alpha[{2, 1}] = 0.5;
  GaussMaxCorrection c;
  c.alpha = {2, 1};
  c.h.value = 2.0;
  c.r.value = 3.0;
  const auto s = correction_sums(mc, {c});
  // (2,1) stands for three ordered triples (1,1,2), (1,2,1), (2,1,1)
  EXPECT_EQ(s.kappa_h, 3.0);
  EXPECT_EQ(s.kappa_r, 4.5);
}
