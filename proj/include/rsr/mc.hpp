#pragma once

// Experiment engine: exact MGF benchmarks, KS distances, histograms and the
// four validation protocols (CLT histogram, univariate Edgeworth,
// several-maximizer Edgeworth, commutator-gap study).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rsr/edgeworth.hpp"
#include "rsr/error.hpp"
#include "rsr/exactspec.hpp"
#include "rsr/family.hpp"
#include "rsr/fit.hpp"
#include "rsr/gaussmax.hpp"
#include "rsr/parallel.hpp"
#include "rsr/rng.hpp"
#include "rsr/sampler.hpp"
#include "rsr/version.hpp"

namespace rsr {

// ---------------------------------------------------------------------------
// Benchmark models
// ---------------------------------------------------------------------------

enum class ModelKind { PureExponential, GaussianExponentialMixture, MultivariateMixture };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::PureExponential: return "pure_exponential";
    case ModelKind::GaussianExponentialMixture: return "mixture";
    case ModelKind::MultivariateMixture: return "multivariate_mixture";
  }
  return "unknown";
}

/// Z = mu + tau N(0,1) + s (Exp(1) - 1) in the scalar kinds (tau = 0 for
/// the pure exponential), and Z = mu 1 + tau L G + q . (Exp(1) - 1) with
/// R = L L^t a correlation matrix in the multivariate kind.
struct BenchmarkModel {
  ModelKind kind = ModelKind::PureExponential;
  double mu = 0.0;
  double s = 0.0;
  double tau = 0.0;
  RealMatrix correlation;  // multivariate only
  RealVector q;            // multivariate only

  static BenchmarkModel pure_exponential(double mu, double s) {
    BenchmarkModel m;
    m.kind = ModelKind::PureExponential;
    m.mu = mu;
    m.s = s;
    m.validate();
    return m;
  }

  /// s = 0 is allowed here and gives the Gaussian branch.
  static BenchmarkModel mixture(double mu, double s, double tau) {
    BenchmarkModel m;
    m.kind = ModelKind::GaussianExponentialMixture;
    m.mu = mu;
    m.s = s;
    m.tau = tau;
    m.validate();
    return m;
  }

  static BenchmarkModel multivariate(double mu, double tau, RealMatrix correlation, RealVector q) {
    BenchmarkModel m;
    m.kind = ModelKind::MultivariateMixture;
    m.mu = mu;
    m.tau = tau;
    m.correlation = std::move(correlation);
    m.q = std::move(q);
    m.validate();
    return m;
  }

  bool scalar() const { return kind != ModelKind::MultivariateMixture; }
  int dimension() const { return scalar() ? 1 : static_cast<int>(q.size()); }

  void validate() const {
    if (!std::isfinite(mu) || !std::isfinite(s) || !std::isfinite(tau)) {
      fail(ErrorKind::InvalidInput, "non_finite", "model parameters must be finite");
    }
    if (tau < 0.0) fail(ErrorKind::InvalidInput, "invalid_model", "tau must be nonnegative");
    switch (kind) {
      case ModelKind::PureExponential:
        if (!(s > 0.0)) fail(ErrorKind::InvalidInput, "invalid_model", "s must be positive");
        break;
      case ModelKind::GaussianExponentialMixture:
        if (!(s >= 0.0)) fail(ErrorKind::InvalidInput, "invalid_model", "s must be nonnegative");
        break;
      case ModelKind::MultivariateMixture: {
        const auto k = q.size();
        if (k < 1 || correlation.rows() != k || correlation.cols() != k) {
          fail(ErrorKind::InvalidInput, "dimension_mismatch", "correlation must be k x k for k = len(q)");
        }
        if ((q.array() < 0.0).any()) fail(ErrorKind::InvalidInput, "invalid_model", "q must be nonnegative");
        for (Eigen::Index i = 0; i < k; ++i)
          if (std::abs(correlation(i, i) - 1.0) > 1e-12) {
            fail(ErrorKind::InvalidInput, "invalid_model", "correlation matrix needs a unit diagonal");
          }
        detail::validate_covariance(correlation);
        break;
      }
    }
  }

  /// Factor L with R = L L^t (zero pivots allowed).
  RealMatrix cholesky() const { return detail::psd_cholesky(correlation); }

  /// Covariance tau^2 R + diag(q^2) of the multivariate kind.
  RealMatrix covariance() const {
    RealMatrix c = tau * tau * correlation;
    c.diagonal() += q.array().square().matrix();
    return c;
  }
};

inline json model_to_json(const BenchmarkModel& m) {
  json j;
  j["kind"] = to_string(m.kind);
  j["mu"] = m.mu;
  if (m.scalar()) {
    j["s"] = m.s;
    j["tau"] = m.tau;
  } else {
    j["tau"] = m.tau;
    j["q"] = std::vector<double>(m.q.data(), m.q.data() + m.q.size());
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.correlation.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.correlation.cols()));
      for (Eigen::Index c = 0; c < m.correlation.cols(); ++c) row[static_cast<std::size_t>(c)] = m.correlation(r, c);
      rows.push_back(row);
    }
    j["correlation"] = rows;
  }
  return j;
}

inline BenchmarkModel model_from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const double mu = j.value("mu", 0.0);
    if (kind == "pure_exponential") return BenchmarkModel::pure_exponential(mu, j.at("s").get<double>());
    if (kind == "mixture") return BenchmarkModel::mixture(mu, j.at("s").get<double>(), j.at("tau").get<double>());
    if (kind == "multivariate_mixture") {
      const auto qv = j.at("q").get<std::vector<double>>();
      const auto k = static_cast<Eigen::Index>(qv.size());
      RealMatrix r = RealMatrix::Identity(k, k);
      if (j.contains("correlation")) {
        const auto rows = j.at("correlation").get<std::vector<std::vector<double>>>();
        if (static_cast<Eigen::Index>(rows.size()) != k) fail(ErrorKind::InvalidInput, "dimension_mismatch", "correlation size");
        for (Eigen::Index a = 0; a < k; ++a) {
          if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(a)].size()) != k) {
            fail(ErrorKind::InvalidInput, "dimension_mismatch", "correlation size");
          }
          for (Eigen::Index b = 0; b < k; ++b) r(a, b) = rows[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        }
      } else if (j.contains("rho")) {
        const double rho = j.at("rho").get<double>();
        r.setConstant(rho);
        r.diagonal().setOnes();
      }
      RealVector q = Eigen::Map<const RealVector>(qv.data(), k);
      return BenchmarkModel::multivariate(mu, j.at("tau").get<double>(), r, q);
    }
    fail(ErrorKind::InvalidInput, "invalid_model", "unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, "malformed", std::string("model description: ") + e.what());
  }
}

namespace detail {

// g(y) = -y - log(1 - y) = sum_{k >= 2} y^k / k, with the series near 0.
inline double exp_log_excess(double y) {
  if (std::abs(y) < 1e-2) {
    double term = y * y, sum = 0.0;
    for (int k = 2; k < 40; ++k) {
      sum += term / k;
      term *= y;
      if (std::abs(term) < 1e-20 * std::abs(sum)) break;
    }
    return sum;
  }
  return -y - std::log1p(-y);
}

}  // namespace detail

/// log M_Z(t) for the scalar kinds; requires s t < 1.
inline double log_mgf(const BenchmarkModel& m, double t) {
  if (!m.scalar()) fail(ErrorKind::Usage, "precondition", "log_mgf needs a scalar model");
  if (m.s * t >= 1.0) fail(ErrorKind::Usage, "precondition", "MGF is infinite for s t >= 1");
  return m.mu * t + 0.5 * m.tau * m.tau * t * t + detail::exp_log_excess(m.s * t);
}

struct Benchmark {
  double mean = 0.0;             // E[rho_n] = M(1/n)^n
  double scaled_variance = 0.0;  // n [M(2/n)^n - M(1/n)^{2n}]
};

/// Exact moments of rho_n = exp(S_n / n), evaluated in log space:
///   log E = mu + tau^2/(2n) + n g(s/n)
///   log E2 - 2 log E = tau^2/n + n log1p(y^2 / (1 - 2y)),  y = s/n
/// so the variance comes from expm1 of a small quantity.
inline Benchmark mgf_benchmarks(const BenchmarkModel& m, long long n) {
  if (!m.scalar()) fail(ErrorKind::Usage, "precondition", "benchmarks need a scalar model");
  const double nn = static_cast<double>(n);
  if (!(nn > 2.0 * m.s) || n < 1) fail(ErrorKind::Usage, "precondition", "benchmarks need n > 2s");
  const double y = m.s / nn;
  const double log_e = m.mu + m.tau * m.tau / (2.0 * nn) + nn * detail::exp_log_excess(y);
  const double log_ratio = m.tau * m.tau / nn + nn * std::log1p(y * y / (1.0 - 2.0 * y));
  Benchmark b;
  b.mean = std::exp(log_e);
  b.scaled_variance = nn * b.mean * b.mean * std::expm1(log_ratio);
  return b;
}

/// kappa_2..kappa_6 of the scalar kinds: kappa_2 = s^2 + tau^2 and
/// kappa_r = (r - 1)! s^r for r >= 3.
inline ScalarCumulants model_cumulants(const BenchmarkModel& m) {
  if (!m.scalar()) fail(ErrorKind::Usage, "precondition", "model_cumulants needs a scalar model");
  ScalarCumulants c;
  c.mean = m.mu;
  c.source = CumulantSource::ModelMGF;
  double fact = 1.0, pw = m.s * m.s;
  c.kappa[2] = pw + m.tau * m.tau;
  for (int r = 3; r <= 6; ++r) {
    fact *= (r - 1);
    pw *= m.s;
    c.kappa[static_cast<std::size_t>(r)] = fact * pw;
  }
  return c;
}

/// Joint cumulants of the multivariate kind: covariance tau^2 R + diag(q^2),
/// pure third and fourth cumulants 2 q_i^3 and 6 q_i^4, all mixed ones zero.
inline MultiCumulants model_multi_cumulants(const BenchmarkModel& m) {
  if (m.scalar()) fail(ErrorKind::Usage, "precondition", "model_multi_cumulants needs the multivariate kind");
  MultiCumulants c;
  c.s = m.dimension();
  c.mean = RealVector::Constant(c.s, m.mu);
  c.covariance = m.covariance();
  for (int k = 2; k <= 4; ++k) {
    for (const auto& a : multi_indices(c.s, k)) {
      double v = 0.0;
      if (k == 2) {
        std::vector<int> idx;
        for (int j = 0; j < c.s; ++j)
          for (int t = 0; t < a[static_cast<std::size_t>(j)]; ++t) idx.push_back(j);
        v = c.covariance(idx[0], idx[1]);
      } else {
        for (int j = 0; j < c.s; ++j) {
          if (a[static_cast<std::size_t>(j)] == k) v = (k == 3 ? 2.0 : 6.0) * std::pow(m.q[j], k);
        }
      }
      c.kappa_alpha[a] = v;
    }
  }
  return c;
}

/// Exact draws of rho_n = exp(S_n / n) for the scalar kinds, using
/// sum of n Exp(1) ~ Gamma(n, 1) and sum of n N(0, tau^2) ~ N(0, n tau^2).
inline std::vector<double> sample_model_rho_n(const BenchmarkModel& m, long long n, std::size_t count,
                                              std::uint64_t seed, unsigned workers = 0) {
  if (!m.scalar()) fail(ErrorKind::Usage, "precondition", "needs a scalar model");
  if (n < 1 || count < 1) fail(ErrorKind::Usage, "precondition", "n and count must be positive");
  const double nn = static_cast<double>(n);
  std::vector<double> out(count);
  parallel_blocks(count, 4096, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      CounterRng rng(seed, i, 0x4d6f64);
      std::gamma_distribution<double> gamma(nn, 1.0);
      std::normal_distribution<double> normal;
      double sum = nn * m.mu;
      if (m.s > 0.0) sum += m.s * (gamma(rng) - nn);
      if (m.tau > 0.0) sum += m.tau * std::sqrt(nn) * normal(rng);
      out[i] = std::exp(sum / nn);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// sup_x |F_N(x) - F(x)| evaluated at the sorted sample points.
inline double ks_distance(std::span<const double> values, const std::function<double(double)>& cdf) {
  if (values.empty()) fail(ErrorKind::Usage, "empty_input", "KS distance needs at least one sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = cdf(v[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

enum class BinRule { FreedmanDiaconis, Sturges };

struct Histogram {
  std::vector<double> edges;  // size bins + 1, strictly increasing
  std::vector<std::size_t> counts;
  BinRule rule = BinRule::FreedmanDiaconis;
};

namespace detail {

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Freedman-Diaconis bins (width 2 IQR N^{-1/3}); Sturges' rule when the
/// IQR is zero; a single unit bin when all values coincide.
inline Histogram histogram(std::span<const double> values, BinRule rule = BinRule::FreedmanDiaconis) {
  if (values.empty()) fail(ErrorKind::Usage, "empty_input", "histogram needs at least one value");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double lo = v.front(), hi = v.back();
  const double n = static_cast<double>(v.size());
  Histogram h;
  if (hi == lo) {
    h.rule = BinRule::Sturges;
    h.edges = {lo - 0.5, lo + 0.5};
    h.counts = {v.size()};
    return h;
  }
  std::size_t bins = 0;
  const double iqr = detail::quantile_sorted(v, 0.75) - detail::quantile_sorted(v, 0.25);
  if (rule == BinRule::FreedmanDiaconis && iqr > 0.0) {
    const double width = 2.0 * iqr / std::cbrt(n);
    bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
    h.rule = BinRule::FreedmanDiaconis;
  } else {
    bins = static_cast<std::size_t>(std::ceil(std::log2(n))) + 1;
    h.rule = BinRule::Sturges;
  }
  bins = std::clamp<std::size_t>(bins, 1, 100000);
  h.edges.resize(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k) h.edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double x : v) {
    auto k = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(k, bins - 1)];
  }
  return h;
}

inline void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "left,right,count\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    out << format_double(h.edges[k]) << "," << format_double(h.edges[k + 1]) << "," << h.counts[k] << "\n";
  }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ReportRow {
  long long n = 0;
  std::string quantity;
  double parameter = std::numeric_limits<double>::quiet_NaN();  // e.g. target gamma
  double predicted = 0.0;
  double empirical = 0.0;
  double relative_error = 0.0;
  double standard_error = 0.0;  // of the empirical value; 0 when exact
};

inline ReportRow make_row(long long n, std::string quantity, double predicted, double empirical,
                          double standard_error = 0.0) {
  ReportRow r;
  r.n = n;
  r.quantity = std::move(quantity);
  r.predicted = predicted;
  r.empirical = empirical;
  r.relative_error = std::abs(empirical - predicted) / std::abs(predicted);
  r.standard_error = standard_error;
  return r;
}

struct ExperimentReport {
  std::string protocol;
  json config;
  std::uint64_t seed = 0;
  std::vector<ReportRow> rows;
  json summary = json::object();
  double wall_time_seconds = 0.0;  // kept out of serialized output

  void sort_rows() {
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.n < b.n; });
  }
};

namespace detail {

inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace detail

/// Structured document. Keys are sorted and floats use the shortest
/// round-trip form, so equal reports serialize to equal bytes.
inline json report_to_json(const ExperimentReport& r) {
  json j;
  j["protocol"] = r.protocol;
  j["seed"] = r.seed;
  j["tool_version"] = kToolVersion;
  j["config"] = r.config;
  j["summary"] = r.summary;
  json rows = json::array();
  for (const auto& row : r.rows) {
    json x;
    x["n"] = row.n;
    x["quantity"] = row.quantity;
    x["parameter"] = detail::number_or_null(row.parameter);
    x["predicted"] = detail::number_or_null(row.predicted);
    x["empirical"] = detail::number_or_null(row.empirical);
    x["relative_error"] = detail::number_or_null(row.relative_error);
    x["standard_error"] = detail::number_or_null(row.standard_error);
    rows.push_back(std::move(x));
  }
  j["rows"] = std::move(rows);
  return j;
}

inline void write_report_csv(std::ostream& out, const ExperimentReport& r) {
  out << "# protocol=" << r.protocol << ",seed=" << r.seed << ",tool_version=" << kToolVersion << "\n";
  out << "n,quantity,parameter,predicted,empirical,relative_error,standard_error\n";
  auto f = [](double x) { return std::isfinite(x) ? format_double(x) : std::string(); };
  for (const auto& row : r.rows) {
    out << row.n << "," << row.quantity << "," << f(row.parameter) << "," << f(row.predicted) << ","
        << f(row.empirical) << "," << f(row.relative_error) << "," << f(row.standard_error) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T config_value(const json& cfg, const char* key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, "malformed", std::string("config field '") + key + "': " + e.what());
  }
}

template <class T>
T config_required(const json& cfg, const char* key) {
  if (!cfg.contains(key)) fail(ErrorKind::InvalidInput, "malformed", std::string("config needs '") + key + "'");
  return config_value<T>(cfg, key, T{});
}

inline MatrixFamily family_from_config(const json& cfg) {
  if (!cfg.contains("family")) fail(ErrorKind::InvalidInput, "malformed", "config needs 'family'");
  return parse_family(cfg.at("family").dump());
}

}  // namespace detail

/// (a) Standardize rho_n samples with the asymptotic constants and measure
/// the KS distance to the limit law: Phi for a unique maximizer, M_s
/// otherwise. Config: family, n, count.
inline ExperimentReport run_clt_check(const json& cfg, std::uint64_t seed, unsigned workers = 0) {
  const auto f = detail::family_from_config(cfg);
  const auto n = detail::config_value<long long>(cfg, "n", 800);
  const auto count = detail::config_value<std::size_t>(cfg, "count", 100000);
  const auto cls = classify_structure(f);
  if (!cls.structured()) {
    fail(ErrorKind::Usage, "structure_mismatch", "CLT check needs a diagonal or triangular family");
  }
  const auto summary = asymptotic_summary(spectral_profile(f, cls), f.weights());
  const auto samples = sample_rho_n(f, n, count, seed, workers);
  const double rn = std::sqrt(static_cast<double>(n));
  const double rho = summary.rho_infinity;

  ExperimentReport rep;
  rep.protocol = "clt";
  rep.config = cfg;
  rep.seed = seed;
  rep.summary["family_hash"] = samples.family_hash;
  rep.summary["rho_infinity"] = rho;
  rep.summary["zero_samples"] = samples.zero_samples;
  // Coordinates are 1-based in reports.
  auto one_based = [](std::vector<int> v) {
    for (int& x : v) ++x;
    return v;
  };
  rep.summary["maximizers"] = one_based(summary.maximizers);
  rep.summary["near_tie_coordinates"] = one_based(near_tie_coordinates(summary, n));

  MomentAccumulator acc(rho);
  for (double v : samples.values) acc.add(v);

  std::vector<double> z(samples.values.size());
  if (summary.unique_maximizer()) {
    const double sigma = *summary.sigma_infinity;
    if (!(sigma > 0.0)) fail(ErrorKind::Numerical, "degenerate_variance", "sigma_infinity is zero; nothing to standardize");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rn * (samples.values[i] - rho) / sigma;
    rep.summary["limit_law"] = "normal";
    rep.summary["sigma_infinity"] = sigma;
    rep.summary["ks_distance"] = ks_distance(z, normal_cdf);
    const auto profile = spectral_profile(f, cls);
    const int j = summary.maximizers.front();
    std::vector<double> logs(static_cast<std::size_t>(f.size()));
    for (int i = 0; i < f.size(); ++i) logs[static_cast<std::size_t>(i)] = std::log(profile.moduli(j, i));
    const auto c = cumulants_finite_support(logs, f.weights());
    const auto pred = moment_expansions_univ(rho, c, n);
    rep.rows.push_back(make_row(n, "mean", pred.mean, acc.mean(), acc.standard_error_of_mean()));
    rep.rows.push_back(make_row(n, "scaled_variance", pred.scaled_variance, static_cast<double>(n) * acc.variance(),
                                static_cast<double>(n) * acc.standard_error_of_variance()));
  } else {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rn * (samples.values[i] - rho) / rho;
    const GaussMaxSpec spec(summary.covariance);
    rep.summary["limit_law"] = "max_gaussian";
    const auto mm = max_gauss_moments(spec);
    const RealMatrix reduced = dedup_covariance(summary.covariance);
    double ks;
    if (reduced.rows() <= 2 || is_diagonal(reduced)) {
      ks = ks_distance(z, [&](double x) { return max_gauss_cdf(x, spec); });
    } else {
      const MaxGaussCdfTable table(spec);
      ks = ks_distance(z, [&](double x) { return table(x); });
    }
    rep.summary["ks_distance"] = ks;
    rep.summary["m1"] = mm.m1;
    rep.summary["v0"] = mm.v0;
    // Leading-order terms only; the 1/n corrections live in edgeworth-multi.
    rep.rows.push_back(make_row(n, "mean_leading", rho * (1.0 + mm.m1 / rn), acc.mean(), acc.standard_error_of_mean()));
    rep.rows.push_back(make_row(n, "scaled_variance_leading", rho * rho * mm.v0, static_cast<double>(n) * acc.variance(),
                                static_cast<double>(n) * acc.standard_error_of_variance()));
  }
  const auto h = histogram(z);
  rep.summary["histogram"] = {{"edges", h.edges}, {"counts", h.counts}};
  rep.sort_rows();
  return rep;
}

/// (b) Closed-form comparison of the unique-maximizer expansions with the
/// exact MGF benchmarks over an n ladder; reports the log-log decay rate
/// of both relative errors. Config: model, n_ladder.
inline ExperimentReport run_edgeworth_univ(const json& cfg, std::uint64_t seed) {
  const auto model = model_from_json(detail::config_required<json>(cfg, "model"));
  if (!model.scalar()) fail(ErrorKind::Usage, "structure_mismatch", "univariate protocol needs a scalar model");
  auto ladder = detail::config_value<std::vector<long long>>(cfg, "n_ladder", {50, 100, 200, 400, 800, 1600, 3200});
  if (ladder.size() < 2) fail(ErrorKind::Usage, "precondition", "n ladder needs at least two values");
  std::sort(ladder.begin(), ladder.end());
  const auto c = model_cumulants(model);
  const double rho = std::exp(model.mu);

  ExperimentReport rep;
  rep.protocol = "edgeworth-univ";
  rep.config = cfg;
  rep.seed = seed;
  std::vector<double> ns, mean_err, var_err;
  for (long long n : ladder) {
    const auto exact = mgf_benchmarks(model, n);
    const auto pred = moment_expansions_univ(rho, c, n);
    auto rm = make_row(n, "mean", pred.mean, exact.mean);
    auto rv = make_row(n, "scaled_variance", pred.scaled_variance, exact.scaled_variance);
    ns.push_back(static_cast<double>(n));
    mean_err.push_back(rm.relative_error);
    var_err.push_back(rv.relative_error);
    rep.rows.push_back(rm);
    rep.rows.push_back(rv);
  }
  // Slopes are reported as decay rates: error ~ n^{-rate}.
  rep.summary["mean_error_decay_rate"] = -loglog_slope(ns, mean_err);
  rep.summary["variance_error_decay_rate"] = -loglog_slope(ns, var_err);
  rep.summary["kappa"] = {c[2], c[3], c[4], c[5], c[6]};
  rep.sort_rows();
  return rep;
}

/// (c) Several-maximizer model: Monte Carlo mean and n Var of rho_n
/// against the expansions. Draws use S_n exactly:
/// S = tau L N(0, I) + q . (Gamma(n, 1) - n) / sqrt(n), rho_n = e^mu exp(max S / sqrt(n)).
/// Config: model, n_values, count, correction_draws.
inline ExperimentReport run_edgeworth_multi(const json& cfg, std::uint64_t seed, unsigned workers = 0) {
  const auto model = model_from_json(detail::config_required<json>(cfg, "model"));
  if (model.scalar()) fail(ErrorKind::Usage, "structure_mismatch", "multivariate protocol needs the multivariate model");
  auto ns = detail::config_value<std::vector<long long>>(cfg, "n_values", {100, 1000});
  std::sort(ns.begin(), ns.end());
  const auto count = detail::config_value<std::size_t>(cfg, "count", 10'000'000);
  const auto corr_draws = detail::config_value<std::size_t>(cfg, "correction_draws", 4'000'000);
  if (count < 2) fail(ErrorKind::Usage, "precondition", "count must be at least 2");

  const RealMatrix sigma = model.covariance();
  const GaussMaxSpec spec(sigma);
  GaussMaxOptions gopt;
  gopt.seed = seed;
  gopt.workers = workers;
  const auto mm = max_gauss_moments(spec, gopt);
  const auto cum = model_multi_cumulants(model);
  CorrectionOptions copt;
  copt.draws = corr_draws;
  copt.seed = seed ^ 0x636f7272ULL;
  copt.workers = workers;
  const auto corr = gauss_max_corrections(sigma, copt);
  const auto sums = correction_sums(cum, corr);
  const double rho = std::exp(model.mu);
  const RealMatrix l = model.cholesky();
  const int k = model.dimension();

  ExperimentReport rep;
  rep.protocol = "edgeworth-multi";
  rep.config = cfg;
  rep.seed = seed;
  rep.summary["m1"] = mm.m1;
  rep.summary["m2"] = mm.m2;
  rep.summary["m3"] = mm.m3;
  rep.summary["v0"] = mm.v0;
  rep.summary["v1"] = mm.v1;
  rep.summary["moment_method"] = to_string(mm.method);
  rep.summary["sum_kappa_h"] = sums.kappa_h;
  rep.summary["sum_kappa_r"] = sums.kappa_r;
  rep.summary["sum_kappa_r_centered"] = sums.kappa_r_centered;
  json zs = json::array();

  for (std::size_t idx = 0; idx < ns.size(); ++idx) {
    const long long n = ns[idx];
    const double nn = static_cast<double>(n), rn = std::sqrt(nn);
    const auto pred = moment_expansions_multi(rho, mm, cum, corr, n);
    constexpr std::size_t kBlock = 1 << 16;
    const std::size_t blocks = (count + kBlock - 1) / kBlock;
    std::vector<MomentAccumulator> part(blocks, MomentAccumulator(pred.mean));
    const std::uint64_t stream_seed = stream_key(seed, static_cast<std::uint64_t>(n), 0x4d756c74);
    parallel_blocks(count, kBlock, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
      MomentAccumulator acc(pred.mean);
      RealVector g(k), e(k);
      for (std::size_t i = begin; i < end; ++i) {
        CounterRng rng(stream_seed, i, 0x53);
        std::normal_distribution<double> normal;
        std::gamma_distribution<double> gamma(nn, 1.0);
        for (int j = 0; j < k; ++j) g[j] = normal(rng);
        for (int j = 0; j < k; ++j) e[j] = model.q[j] > 0.0 ? gamma(rng) - nn : 0.0;
        const RealVector s = model.tau * (l * g) + model.q.cwiseProduct(e) / rn;
        acc.add(rho * std::exp(s.maxCoeff() / rn));
      }
      part[b] = acc;
    });
    MomentAccumulator all(pred.mean);
    for (const auto& p : part) all.merge(p);
    const auto rm = make_row(n, "mean", pred.mean, all.mean(), all.standard_error_of_mean());
    const auto rv = make_row(n, "scaled_variance", pred.scaled_variance, nn * all.variance(),
                             nn * all.standard_error_of_variance());
    zs.push_back({{"n", n},
                  {"mean_z", (rm.empirical - rm.predicted) / rm.standard_error},
                  {"scaled_variance_z", (rv.empirical - rv.predicted) / rv.standard_error}});
    rep.rows.push_back(rm);
    rep.rows.push_back(rv);
  }
  rep.summary["z_scores"] = zs;
  rep.sort_rows();
  return rep;
}

/// Near-identity similarity S = I + t E applied to a diagonal family.
struct SynthesizedFamily {
  MatrixFamily family;
  double gamma = 0.0;  // achieved commutator gap
  double t = 0.0;      // similarity scale
};

/// Conjugates each D_i by its own S_i(t) = I + t E_i (E_i random with unit
/// Frobenius norm) and tunes t by bisection so that the commutator gap hits
/// `target_gamma`. Eigenvalues are preserved, so the diagonal-surrogate
/// prediction is the same for every t.
inline SynthesizedFamily synthesize_general_family(const MatrixFamily& diagonal_base, double target_gamma,
                                                   std::uint64_t seed) {
  if (!(target_gamma > 0.0)) fail(ErrorKind::Usage, "precondition", "target gamma must be positive");
  if (classify_structure(diagonal_base).tag != StructureTag::Diagonal) {
    fail(ErrorKind::Usage, "precondition", "synthesis needs a diagonal base family");
  }
  const int d = diagonal_base.dimension(), m = diagonal_base.size();
  std::vector<ComplexMatrix> dirs;
  for (int i = 0; i < m; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i), 0x53796e);
    std::normal_distribution<double> normal;
    ComplexMatrix e(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) e(r, c) = normal(rng);
    dirs.push_back(e / e.norm());
  }
  auto build = [&](double t) {
    std::vector<ComplexMatrix> mats;
    for (int i = 0; i < m; ++i) {
      const ComplexMatrix s = ComplexMatrix::Identity(d, d) + t * dirs[static_cast<std::size_t>(i)];
      mats.push_back(s * diagonal_base.matrix(i) * s.inverse());
    }
    return MatrixFamily::create(std::move(mats), diagonal_base.weights(), diagonal_base.label());
  };
  auto gap_at = [&](double t) { return commutator_gap(build(t)); };
  // t < 1 keeps every S_i invertible since |E_i| = 1.
  constexpr double kMaxT = 0.9;
  double lo = 0.0, hi = std::min(target_gamma, kMaxT);
  while (gap_at(hi) < target_gamma) {
    if (hi >= kMaxT) fail(ErrorKind::Numerical, "synthesis_failed", "cannot reach the requested commutator gap");
    lo = hi;
    hi = std::min(2.0 * hi, kMaxT);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gap_at(mid) < target_gamma ? lo : hi) = mid;
  }
  SynthesizedFamily out{build(hi), 0.0, hi};
  out.gamma = commutator_gap(out.family);
  return out;
}

/// Diagonal base used when the study synthesizes its own families: three
/// 3 x 3 diagonal matrices with entries in [0.5, 3] and weights (0.3, 0.3, 0.4).
inline MatrixFamily default_gamma_base(std::uint64_t seed) {
  CounterRng rng(seed, 0, 0x42617365);
  std::vector<ComplexMatrix> mats;
  for (int i = 0; i < 3; ++i) {
    ComplexMatrix a = ComplexMatrix::Zero(3, 3);
    for (int j = 0; j < 3; ++j) a(j, j) = 0.5 + 2.5 * rng.uniform();
    mats.push_back(a);
  }
  return MatrixFamily::create(std::move(mats), {0.3, 0.3, 0.4}, "gamma-study base");
}

/// (d) General families: empirical rho_inf at two lengths against the
/// diagonal-surrogate prediction, next to the commutator gap gamma. The
/// empirical value is exp(mean log rho_n). Config: gammas (synthesize) or
/// families (ingest), n_pair, count, base (optional diagonal family).
inline ExperimentReport run_gamma_study(const json& cfg, std::uint64_t seed, unsigned workers = 0) {
  auto n_pair = detail::config_value<std::vector<long long>>(cfg, "n_pair", {100, 400});
  if (n_pair.size() != 2) fail(ErrorKind::Usage, "precondition", "n_pair needs exactly two lengths");
  std::sort(n_pair.begin(), n_pair.end());
  const auto count = detail::config_value<std::size_t>(cfg, "count", 10000);

  std::vector<MatrixFamily> families;
  std::vector<double> targets;
  if (cfg.contains("families")) {
    for (const auto& doc : cfg.at("families")) {
      families.push_back(parse_family(doc.dump()));
      targets.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  } else {
    const auto gammas = detail::config_value<std::vector<double>>(cfg, "gammas", {1e-3, 1e-2, 1e-1});
    const MatrixFamily base = cfg.contains("base") ? parse_family(cfg.at("base").dump()) : default_gamma_base(seed);
    for (std::size_t g = 0; g < gammas.size(); ++g) {
      families.push_back(synthesize_general_family(base, gammas[g], stream_key(seed, g, 0x47)).family);
      targets.push_back(gammas[g]);
    }
  }

  ExperimentReport rep;
  rep.protocol = "gamma-study";
  rep.config = cfg;
  rep.seed = seed;
  json fam = json::array();
  for (std::size_t k = 0; k < families.size(); ++k) {
    const auto& f = families[k];
    const double gamma = commutator_gap(f);
    const auto cls = classify_structure(f);
    const auto surrogate = asymptotic_summary(spectral_profile(f, cls), f.weights());
    const double param = std::isfinite(targets[k]) ? targets[k] : gamma;
    json entry;
    entry["family_hash"] = family_hash(f);
    entry["gamma"] = gamma;
    entry["structure"] = to_string(cls.tag);
    entry["surrogate_rho_infinity"] = surrogate.rho_infinity;
    std::vector<double> disc;
    for (std::size_t t = 0; t < 2; ++t) {
      const long long n = n_pair[t];
      const auto samples = sample_rho_n(f, n, count, stream_key(seed, k * 2 + t, 0x4761), workers);
      MomentAccumulator acc;
      for (double lr : samples.log_rho) acc.add(lr / static_cast<double>(n));
      const double est = std::exp(acc.mean());
      auto row = make_row(n, "rho_infinity", surrogate.rho_infinity, est, est * acc.standard_error_of_mean());
      row.parameter = param;
      disc.push_back(std::abs(est - surrogate.rho_infinity));
      rep.rows.push_back(row);
    }
    entry["discrepancy"] = disc;
    entry["discrepancy_over_gamma"] = {disc[0] / gamma, disc[1] / gamma};
    fam.push_back(entry);
  }
  rep.summary["families"] = fam;
  rep.sort_rows();
  return rep;
}

enum class Protocol { CltHistogram, EdgeworthUniv, EdgeworthMulti, GammaStudy };

inline ExperimentReport run_experiment(Protocol p, const json& config, std::uint64_t seed, unsigned workers = 0) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  switch (p) {
    case Protocol::CltHistogram: rep = run_clt_check(config, seed, workers); break;
    case Protocol::EdgeworthUniv: rep = run_edgeworth_univ(config, seed); break;
    case Protocol::EdgeworthMulti: rep = run_edgeworth_multi(config, seed, workers); break;
    case Protocol::GammaStudy: rep = run_gamma_study(config, seed, workers); break;
  }
  rep.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace rsr
