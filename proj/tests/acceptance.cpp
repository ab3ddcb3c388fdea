// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>

#include "helpers.hpp"
#include "rsr/rsr.hpp"

using namespace rsr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s %d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

json load_json(const std::string& name) { return json::parse(read_text_file(rsr::test::data_path(name))); }

json clt_config(const std::string& file) {
  return {{"family", load_json(file)}, {"n", 800}, {"count", 100000}};
}

json gamma_config() { return {{"gammas", {1e-3, 1e-2, 1e-1}}, {"n_pair", {100, 400}}, {"count", 10000}}; }

// Diagonal family with every coordinate's ordering shared by all members,
// so the dominant coordinate is the same everywhere.
MatrixFamily aligned_family(int d, std::uint64_t seed) {
  CounterRng rng(seed, 0, 0x416c);
  std::vector<ComplexMatrix> mats;
  for (int i = 0; i < 2; ++i) {
    ComplexMatrix a = ComplexMatrix::Zero(d, d);
    double top = 0.6 + 2.4 * rng.uniform();
    a(0, 0) = top;
    for (int j = 1; j < d; ++j) a(j, j) = top * (0.1 + 0.8 * rng.uniform());
    mats.push_back(a);
  }
  const double w = 0.2 + 0.6 * rng.uniform();
  return MatrixFamily::create(std::move(mats), {w, 1.0 - w});
}

ComplexMatrix gaussian_matrix(int d, std::uint64_t seed) {
  CounterRng rng(seed, 3, 0x4465);
  std::normal_distribution<double> nd;
  ComplexMatrix a(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) a(r, c) = nd(rng);
  return a;
}

}  // namespace

int main() {
  criterion(1, "exact moments match brute-force enumeration", [] {
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const auto f = aligned_family(2 + k % 2, 1000 + k);
      const auto s = asymptotic_summary(spectral_profile(f), f.weights());
      if (!s.unique_maximizer()) return Outcome{false, "family without unique maximizer"};
      const auto prof = spectral_profile(f);
      std::vector<double> top{prof.moduli(0, 0), prof.moduli(0, 1)};
      for (int n = 1; n <= 12; ++n) {
        const auto ex = exact_moments_aligned(top, f.weights(), n);
        const auto bf = brute_force_moments(f, n);
        worst = std::max(worst, rsr::test::rel_diff(ex.mean, bf.mean));
        worst = std::max(worst, rsr::test::rel_diff(ex.variance, bf.variance));
      }
    }
    return Outcome{worst <= 1e-12, fmt("max relative difference %.3g (tol 1e-12)", worst)};
  });

  criterion(2, "worked perturbation example", [] {
    const auto f = load_family(rsr::test::data_path("worked_example.json"));
    const auto ds = parse_matrix_list(read_text_file(rsr::test::data_path("worked_example_deltas.json")));
    const auto pf = PerturbedFamily::create(f, ds, 0.0, DeltaScaling::AsGiven);
    const std::vector<int> w1{0, 0, 1, 1}, w2{0, 1, 0, 1};
    const auto a = eigenvalue_product_expansion(pf, w1, 0), b = eigenvalue_product_expansion(pf, w2, 0);
    bool ok = std::abs(a.lambda0 - 9.0) <= 9e-12 && std::abs(b.lambda0 - 9.0) <= 9e-12;
    ok = ok && std::abs(a.lambda1) <= 1e-12 && std::abs(b.lambda1) <= 1e-12;
    ok = ok && std::abs(a.lambda2 - (-1803.0 / 91.0)) <= 1e-12 * 1803.0 / 91.0;
    ok = ok && std::abs(b.lambda2 - (-138.0 / 7.0)) <= 1e-12 * 138.0 / 7.0;
    ok = ok && a.lambda2_rational == std::optional<std::string>("-1803/91");
    ok = ok && b.lambda2_rational == std::optional<std::string>("-138/7");
    return Outcome{ok, fmt("Lambda2 = %.15g (%s), %.15g (%s)", a.lambda2.real(), a.lambda2_rational.value_or("-").c_str(),
                           b.lambda2.real(), b.lambda2_rational.value_or("-").c_str())};
  });

  criterion(3, "second-order expansion residual is O(eps^3)", [] {
    std::vector<double> eps;
    for (int k = 0; k <= 4; ++k) eps.push_back(std::pow(10.0, -1.0 - 0.5 * k));
    double worst = INFINITY;
    int cases = 0;
    for (std::uint64_t seed = 1; cases < 10; ++seed) {
      const auto base = rsr::test::random_diagonal(3, 2, seed, 0.5, 3.0);
      // keep cases whose eigenvalues are separated well beyond eps = 0.1
      bool separated = true;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = j + 1; k < 3; ++k) separated = separated && std::abs(base.matrix(i)(j, j) - base.matrix(i)(k, k)) > 0.3;
      if (!separated) continue;
      const auto pf = PerturbedFamily::create(base, {gaussian_matrix(3, seed), gaussian_matrix(3, seed + 500)});
      const auto word = sample_word(2, base.weights(), 2 + seed % 4, seed, 0).indices;
      int top = 0;
      const auto t = product_expansion_terms(pf, word);
      for (int j = 1; j < 3; ++j)
        if (std::abs(t.pi0(j, j)) > std::abs(t.pi0(top, top))) top = j;
      // the expansion needs a simple product eigenvalue; skip near-degenerate words
      bool simple = true;
      for (int j = 0; j < 3; ++j)
        if (j != top) simple = simple && std::abs(t.pi0(top, top) - t.pi0(j, j)) > 0.1 * std::abs(t.pi0(top, top));
      if (!simple) continue;
      const auto e = eigenvalue_product_expansion(pf, word, top);
      std::vector<double> res;
      for (double x : eps) res.push_back(std::abs(exact_product_eigenvalue(pf, word, e, x) - e.value(x)));
      worst = std::min(worst, loglog_slope(eps, res));
      ++cases;
    }
    return Outcome{worst >= 2.8, fmt("minimum slope %.3f over %d cases (need >= 2.8)", worst, cases)};
  });

  criterion(4, "max-of-Gaussian constants", [] {
    const auto m3 = max_gauss_moments(GaussMaxSpec(RealMatrix::Identity(3, 3)));
    const auto m4 = max_gauss_moments(GaussMaxSpec(RealMatrix::Identity(4, 4)));
    const double pi = std::numbers::pi;
    const double m1_ref = 3.0 / (2.0 * std::sqrt(pi));
    const double v0_ref = (2.0 * std::sqrt(3.0) + 4.0 * pi - 9.0) / (4.0 * pi);
    const double e1 = std::abs(m3.m1 - m1_ref), e2 = std::abs(m3.v0 - v0_ref);
    const double e3 = std::abs(m4.m1 - 1.029375), e4 = std::abs(m4.v0 - 0.491715);
    const bool ok = e1 <= 1e-6 && e2 <= 1e-6 && e3 <= 1e-4 && e4 <= 1e-3;
    return Outcome{ok, fmt("m1(3) err %.2g, v0(3) err %.2g, c4 = %.7f, v4 = %.7f", e1, e2, m4.m1, m4.v0)};
  });

  criterion(5, "univariate expansion error decay", [] {
    bool ok = true;
    std::string detail;
    for (const auto& m : {BenchmarkModel::pure_exponential(0.05, 0.2), BenchmarkModel::mixture(0.05, 0.2, 0.1)}) {
      json cfg = {{"model", model_to_json(m)}, {"n_ladder", {50, 100, 200, 400, 800, 1600, 3200}}};
      const auto rep = run_edgeworth_univ(cfg, 0);
      const double a = rep.summary["mean_error_decay_rate"], b = rep.summary["variance_error_decay_rate"];
      ok = ok && a >= 2.0 && b >= 0.8;
      detail += fmt("%s: mean %.2f, nVar %.2f; ", to_string(m.kind), a, b);
    }
    return Outcome{ok, detail + "(need >= 2.0, >= 0.8)"};
  });

  criterion(6, "CLT convergence in KS distance", [] {
    const auto a = run_clt_check(clt_config("clt_unique.json"), 2024);
    const auto b = run_clt_check(clt_config("clt_two_max.json"), 2024);
    const double ka = a.summary["ks_distance"], kb = b.summary["ks_distance"];
    const bool ok = a.summary["limit_law"] == "normal" && b.summary["limit_law"] == "max_gaussian" && ka <= 0.015 && kb <= 0.02;
    return Outcome{ok, fmt("unique %.4f (<= 0.015), two maximizers %.4f (<= 0.02)", ka, kb)};
  });

  criterion(7, "several-maximizer expansions vs Monte Carlo", [] {
    const auto rep = run_edgeworth_multi(load_json("multivariate.json"), 2024);
    bool ok = true;
    std::string detail;
    for (const auto& z : rep.summary["z_scores"]) {
      const double zm = z["mean_z"], zv = z["scaled_variance_z"];
      ok = ok && std::abs(zm) <= 4.0 && std::abs(zv) <= 6.0;
      detail += fmt("n=%lld: mean z %.2f, nVar z %.2f; ", z["n"].get<long long>(), zm, zv);
    }
    return Outcome{ok, detail + "(limits 4 and 6 SE)"};
  });

  criterion(8, "discrepancy tracks the commutator gap", [] {
    const auto rep = run_gamma_study(gamma_config(), 2024);
    bool ok = true;
    std::string detail;
    for (const auto& f : rep.summary["families"]) {
      const double g = f["gamma"], d100 = f["discrepancy"][0], d400 = f["discrepancy"][1];
      const bool within = d400 >= g / 10.0 && d400 <= 10.0 * g;
      const bool no_shrink = d100 <= 3.0 * d400;
      ok = ok && within && no_shrink;
      detail += fmt("gamma %.1e: disc %.2e -> %.2e (ratio to gamma %.3g); ", g, d100, d400, d400 / g);
    }
    return Outcome{ok, detail};
  });

  criterion(9, "reports identical on 1 and 8 workers", [] {
    const std::pair<Protocol, json> runs[] = {
        {Protocol::CltHistogram, clt_config("clt_unique.json")},
        {Protocol::CltHistogram, clt_config("clt_two_max.json")},
        {Protocol::EdgeworthUniv, json{{"model", model_to_json(BenchmarkModel::pure_exponential(0.05, 0.2))}}},
        {Protocol::EdgeworthMulti, [] {
           auto c = load_json("multivariate.json");
           c["count"] = 1000000;
           return c;
         }()},
        {Protocol::GammaStudy, gamma_config()},
    };
    int same = 0, total = 0;
    for (const auto& [p, cfg] : runs) {
      const auto r1 = run_experiment(p, cfg, 99, 1), r8 = run_experiment(p, cfg, 99, 8);
      std::ostringstream c1, c8;
      write_report_csv(c1, r1);
      write_report_csv(c8, r8);
      same += report_to_json(r1).dump() == report_to_json(r8).dump() && c1.str() == c8.str();
      ++total;
    }
    const auto f = load_family(rsr::test::data_path("clt_unique.json"));
    std::ostringstream s1, s8;
    write_samples_binary(s1, sample_rho_n(f, 200, 20000, 5, 1));
    write_samples_binary(s8, sample_rho_n(f, 200, 20000, 5, 8));
    same += s1.str() == s8.str();
    ++total;
    return Outcome{same == total, fmt("%d of %d artifacts bitwise identical", same, total)};
  });

  criterion(10, "invariant suites", [] {
    std::vector<std::string> broken;
    // Hermite orthogonality by Gauss-Hermite quadrature, and the derivative identity
    {
      const int q = 20;
      RealMatrix jac = RealMatrix::Zero(q, q);
      for (int k = 1; k < q; ++k) jac(k, k - 1) = jac(k - 1, k) = std::sqrt(static_cast<double>(k));
      Eigen::SelfAdjointEigenSolver<RealMatrix> es(jac);
      for (int a = 0; a <= 6; ++a)
        for (int b = 0; b <= 6; ++b) {
          double s = 0.0;
          for (int k = 0; k < q; ++k) {
            const double x = es.eigenvalues()[k], w = es.eigenvectors()(0, k) * es.eigenvectors()(0, k);
            s += w * hermite(a, x) * hermite(b, x);
          }
          if (std::abs(s - (a == b ? std::tgamma(a + 1.0) : 0.0)) > 1e-10) broken.push_back("hermite orthogonality");
        }
      for (int k = 1; k <= 6; ++k) {
        const double x = 0.37, h = 1e-5;
        auto g = [&](double t) { return normal_pdf(t) * hermite(k - 1, t); };
        if (std::abs((g(x + h) - g(x - h)) / (2 * h) + normal_pdf(x) * hermite(k, x)) > 1e-6) broken.push_back("hermite derivative");
      }
    }
    // cumulant scaling and additivity
    {
      const std::vector<double> x{-0.3, 0.4, 1.9}, px{0.2, 0.5, 0.3}, y{0.5, -1.0}, py{0.6, 0.4};
      const auto cx = cumulants_finite_support(x, px), cy = cumulants_finite_support(y, py);
      std::vector<double> sx, sum, ps;
      for (double v : x) sx.push_back(2.5 * v);
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) sum.push_back(x[i] + y[j]), ps.push_back(px[i] * py[j]);
      const auto cs = cumulants_finite_support(sx, px), cz = cumulants_finite_support(sum, ps);
      for (int r = 2; r <= 6; ++r) {
        if (std::abs(cs[r] - std::pow(2.5, r) * cx[r]) > 1e-10 * std::max(1.0, std::abs(cs[r]))) broken.push_back("cumulant scaling");
        if (std::abs(cz[r] - cx[r] - cy[r]) > 1e-10 * std::max(1.0, std::abs(cz[r]))) broken.push_back("cumulant additivity");
      }
    }
    // cyclic invariance of rho_n on general families
    {
      const auto f = rsr::test::random_general(3, 3, 8);
      const ProductEvaluator ev(f);
      for (std::uint64_t k = 0; k < 20; ++k) {
        auto w = sample_word(3, f.weights(), 30, 8, k).indices;
        const double a = ev.evaluate(w).rho_n;
        std::rotate(w.begin(), w.begin() + static_cast<long>(k % w.size()), w.end());
        if (rsr::test::rel_diff(ev.evaluate(w).rho_n, a) > 1e-10) broken.push_back("cyclic invariance");
      }
    }
    // order independence of the first two expansion coefficients
    {
      const auto base = rsr::test::random_diagonal(3, 2, 4, 0.5, 3.0);
      const auto pf = PerturbedFamily::create(base, {gaussian_matrix(3, 1), gaussian_matrix(3, 2)});
      const std::vector<int> w1{0, 0, 1, 1, 0}, w2{1, 0, 0, 1, 0};
      for (int i = 0; i < 3; ++i) {
        const auto a = eigenvalue_product_expansion(pf, w1, i), b = eigenvalue_product_expansion(pf, w2, i);
        if (std::abs(a.lambda0 - b.lambda0) > 1e-12 * std::abs(a.lambda0) ||
            std::abs(a.lambda1 - b.lambda1) > 1e-12 * std::max(1.0, std::abs(a.lambda1))) {
          broken.push_back("order independence");
        }
      }
    }
    // limiting covariance is symmetric and positive semidefinite
    {
      const auto f = load_family(rsr::test::data_path("clt_two_max.json"));
      const auto s = asymptotic_summary(spectral_profile(f), f.weights());
      const RealMatrix& c = s.covariance;
      const double lo = Eigen::SelfAdjointEigenSolver<RealMatrix>(c).eigenvalues().minCoeff();
      if ((c - c.transpose()).cwiseAbs().maxCoeff() > 0.0 || lo < -1e-12) broken.push_back("covariance");
    }
    std::string detail = broken.empty() ? "all identities hold" : "broken:";
    for (const auto& b : broken) detail += " " + b;
    return Outcome{broken.empty(), detail};
  });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
