#pragma once

// Command-line front end. `run` parses argv, executes one subcommand and
// writes its artifact; the tools/ binary is a thin wrapper around it.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rsr/error.hpp"
#include "rsr/exactspec.hpp"
#include "rsr/family.hpp"
#include "rsr/fit.hpp"
#include "rsr/mc.hpp"
#include "rsr/perturb.hpp"
#include "rsr/sampler.hpp"

namespace rsr::cli {

namespace detail {

inline json complex_pair(Complex z) { return json::array({z.real(), z.imag()}); }

inline json real_vector(const RealVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json real_matrix(const RealMatrix& a) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) rows.push_back(real_vector(a.row(r).transpose()));
  return rows;
}

inline std::vector<int> one_based(std::vector<int> v) {
  for (int& x : v) ++x;
  return v;
}

inline json summary_to_json(const AsymptoticSummary& s) {
  json j;
  j["mu"] = real_vector(s.mu);
  j["rho_components"] = real_vector(s.rho_components);
  j["rho_infinity"] = s.rho_infinity;
  j["maximizers"] = one_based(s.maximizers);
  j["sigma_components"] = real_vector(s.sigma_components);
  j["sigma_infinity"] = s.sigma_infinity ? json(*s.sigma_infinity) : json(nullptr);
  j["covariance"] = real_matrix(s.covariance);
  j["tie_tolerance"] = s.tie_tolerance;
  return j;
}

// Same coordinate strictly dominates in every member's profile column.
inline std::optional<int> aligned_dominant(const SpectralProfile& p) {
  std::optional<int> common;
  for (int i = 0; i < p.size(); ++i) {
    Eigen::Index best;
    const double top = p.moduli.col(i).maxCoeff(&best);
    for (int j = 0; j < p.dimension(); ++j)
      if (j != best && p.moduli(j, i) >= top) return std::nullopt;
    if (common && *common != static_cast<int>(best)) return std::nullopt;
    common = static_cast<int>(best);
  }
  return common;
}

inline std::vector<int> parse_word(const std::string& text, int m) {
  std::vector<int> word;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      fail(ErrorKind::Usage, "bad_word", "word entries must be integers: '" + text + "'");
    }
    if (used != tok.size() || v < 1 || v > m) {
      fail(ErrorKind::Usage, "bad_word", "word entries must lie in 1.." + std::to_string(m));
    }
    word.push_back(v - 1);
  }
  if (word.empty()) fail(ErrorKind::Usage, "bad_word", "word must be non-empty");
  return word;
}

/// Where and how an artifact is written. The artifact itself never holds
/// the wall time; that goes to `<out>.run.json` (or stderr without --out).
struct Sink {
  std::string path;  // empty: stdout
  std::ostream* out;
  std::ostream* err;

  void write(const std::string& body, json run_record) const {
    if (path.empty()) {
      *out << body;
      *err << run_record.dump() << "\n";
      return;
    }
    write_file(path, body);
    write_file(path + ".run.json", run_record.dump(2) + "\n");
  }

  static void write_file(const std::string& p, const std::string& body) {
    std::ofstream f(p, std::ios::binary);
    if (!f) fail(ErrorKind::InvalidInput, "io_error", "cannot open '" + p + "' for writing");
    f << body;
    if (!f) fail(ErrorKind::InvalidInput, "io_error", "failed writing '" + p + "'");
  }
};

inline std::string report_body(const ExperimentReport& r, const std::string& format) {
  std::ostringstream os;
  if (format == "csv") {
    write_report_csv(os, r);
  } else {
    os << report_to_json(r).dump(2) << "\n";
  }
  return os.str();
}

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::InvalidInput: return 3;
    case ErrorKind::Numerical: return 4;
  }
  return 4;
}

inline void error_record(std::ostream& err, const std::string& kind, const std::string& code, const std::string& msg) {
  json j;
  j["error"] = {{"kind", kind}, {"code", code}, {"message", msg}};
  j["tool_version"] = kToolVersion;
  err << j.dump() << "\n";
}

}  // namespace detail

/// Runs one command line. Returns the process exit status:
/// 0 ok, 2 usage, 3 invalid input, 4 numerical failure.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Random spectral radius of weighted matrix families: analysis, sampling, expansions, experiments.\n"
               "Coordinates and word letters are 1-based everywhere."};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed_opt;
  unsigned workers = 0;
  std::string out_path, format = "json";
  auto add_common = [&](CLI::App* sub, bool random) {
    if (random) sub->add_option("--seed", seed_opt, "RNG seed (generated and recorded if omitted)");
    sub->add_option("--workers", workers, "worker threads (default: RSR_WORKERS or hardware)");
    sub->add_option("-o,--out", out_path, "output file (default: stdout); run metadata goes to <out>.run.json");
  };
  auto add_format = [&](CLI::App* sub) {
    sub->add_option("--format", format, "report format")->check(CLI::IsMember({"json", "csv"}));
  };

  // analyze
  std::string family_path;
  std::optional<long long> analyze_n;
  double tie_tol = -1.0;
  auto* analyze = app.add_subcommand("analyze", "structure, commutator gap and asymptotic constants of a family");
  analyze->add_option("FAMILY", family_path, "family document")->required();
  analyze->add_option("--n", analyze_n, "also report exact moments of rho_n at this length (aligned dominance only)");
  analyze->add_option("--tie-tol", tie_tol, "maximizer tie tolerance (default 1e-12 max(1, |mu*|))");
  add_common(analyze, false);

  // sample
  long long n = 800;
  std::size_t count = 100000;
  std::string sample_format = "csv";
  auto* sample = app.add_subcommand("sample", "draw rho_n samples");
  sample->add_option("FAMILY", family_path, "family document")->required();
  sample->add_option("--n", n, "word length")->required()->check(CLI::PositiveNumber);
  sample->add_option("--count", count, "number of samples")->required()->check(CLI::PositiveNumber);
  sample->add_option("--format", sample_format, "csv or binary (little-endian float64)")
      ->check(CLI::IsMember({"csv", "binary"}));
  add_common(sample, true);

  // clt-check
  std::string histogram_path;
  auto* clt = app.add_subcommand("clt-check", "standardize rho_n and measure KS distance to the limit law");
  clt->add_option("FAMILY", family_path, "family document")->required();
  clt->add_option("--n", n, "word length")->check(CLI::PositiveNumber);
  clt->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  clt->add_option("--histogram", histogram_path, "write a histogram CSV of the standardized samples");
  add_common(clt, true);
  add_format(clt);

  // edgeworth-univ
  std::string model_kind = "pure_exponential";
  double mu = 0.0, s_par = 0.2, tau = 0.0;
  std::vector<long long> ladder{50, 100, 200, 400, 800, 1600, 3200};
  auto* eu = app.add_subcommand("edgeworth-univ", "expansions vs exact MGF benchmarks over an n ladder");
  eu->add_option("--model", model_kind, "pure_exponential or mixture")
      ->check(CLI::IsMember({"pure_exponential", "mixture"}));
  eu->add_option("--mu", mu, "location");
  eu->add_option("--s", s_par, "exponential scale");
  eu->add_option("--tau", tau, "Gaussian scale (mixture)");
  eu->add_option("--n-ladder", ladder, "comma-separated lengths")->delimiter(',');
  add_common(eu, true);
  add_format(eu);

  // edgeworth-multi
  std::string config_path;
  std::optional<std::size_t> multi_count;
  std::vector<long long> n_values;
  auto* em = app.add_subcommand("edgeworth-multi", "several-maximizer expansions vs Monte Carlo");
  em->add_option("--config", config_path, "protocol configuration document")->required();
  em->add_option("--count", multi_count, "override the Monte Carlo sample count");
  em->add_option("--n-values", n_values, "override the lengths")->delimiter(',');
  add_common(em, true);
  add_format(em);

  // perturb
  std::string deltas_path, word_text, scaling = "normalize";
  std::optional<std::size_t> word_length;
  std::vector<double> eps_ladder{1e-1, 1e-1 * std::pow(10.0, -0.5), 1e-2, 1e-2 * std::pow(10.0, -0.5), 1e-3};
  std::optional<double> epsilon;
  auto* pt = app.add_subcommand("perturb", "second-order eigenvalue expansion of a perturbed word product");
  pt->add_option("FAMILY", family_path, "diagonal base family")->required();
  pt->add_option("DELTAS", deltas_path, "perturbation matrices document")->required();
  auto* word_opt = pt->add_option("--word", word_text, "comma-separated 1-based letters");
  auto* len_opt = pt->add_option("--word-length", word_length, "draw a random word of this length")
                      ->check(CLI::PositiveNumber);
  word_opt->excludes(len_opt);
  pt->add_option("--eps-ladder", eps_ladder, "epsilons for the residual fit")->delimiter(',');
  pt->add_option("--delta-scaling", scaling, "normalize (unit Frobenius norm) or as-given")
      ->check(CLI::IsMember({"normalize", "as-given"}));
  pt->add_option("--epsilon", epsilon, "also report first-order perturbed asymptotics at this epsilon");
  add_common(pt, true);

  // gamma-study
  std::vector<double> gammas{1e-3, 1e-2, 1e-1};
  std::vector<long long> n_pair{100, 400};
  std::size_t gamma_count = 10000;
  std::string base_path;
  std::vector<std::string> family_paths;
  auto* gs = app.add_subcommand("gamma-study", "general families vs the diagonal surrogate");
  gs->add_option("--gamma-list", gammas, "target commutator gaps for synthesized families")->delimiter(',');
  gs->add_option("--n-pair", n_pair, "two lengths")->delimiter(',')->expected(2);
  gs->add_option("--count", gamma_count, "samples per (family, n)")->check(CLI::PositiveNumber);
  gs->add_option("--base", base_path, "diagonal base family for synthesis");
  gs->add_option("--family", family_paths, "ingest these general families instead of synthesizing");
  add_common(gs, true);
  add_format(gs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    detail::error_record(err, "usage", "bad_arguments", e.what());
    return 2;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    const std::uint64_t seed = seed_opt ? *seed_opt : std::random_device{}() * 0x100000001ULL ^ std::random_device{}();
    workers = resolve_workers(workers);
    const detail::Sink sink{out_path, &out, &err};
    json record;
    record["tool_version"] = kToolVersion;
    record["argv"] = std::vector<std::string>(argv, argv + argc);
    auto finish = [&](const std::string& body) {
      record["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      sink.write(body, record);
    };

    if (*analyze) {
      const auto f = load_family(family_path);
      const auto cls = classify_structure(f);
      const auto prof = spectral_profile(f, cls);
      const auto summary = tie_tol >= 0.0 ? asymptotic_summary(prof, f.weights(), tie_tol)
                                          : asymptotic_summary(prof, f.weights());
      json j;
      j["tool_version"] = kToolVersion;
      j["seed"] = 0;  // analyze draws no random numbers
      j["family_hash"] = family_hash(f);
      j["label"] = f.label();
      j["dimension"] = f.dimension();
      j["size"] = f.size();
      j["structure"] = to_string(cls.tag);
      j["demoted_from"] = cls.demoted_from ? json(to_string(*cls.demoted_from)) : json(nullptr);
      j["commutator_gap"] = commutator_gap(f);
      j["profile_source"] = prof.source == ProfileSource::DiagonalEntries ? "diagonal_entries" : "eigen_solve";
      j["profile"] = detail::real_matrix(prof.moduli);
      j["summary"] = detail::summary_to_json(summary);
      if (analyze_n) {
        const auto dom = detail::aligned_dominant(prof);
        if (!cls.structured() || !dom) {
          fail(ErrorKind::Usage, "structure_mismatch", "exact moments need a structured family with aligned dominance");
        }
        std::vector<double> row(static_cast<std::size_t>(f.size()));
        for (int i = 0; i < f.size(); ++i) row[static_cast<std::size_t>(i)] = prof.moduli(*dom, i);
        const auto mom = exact_moments_aligned(row, f.weights(), *analyze_n);
        j["exact_moments"] = {{"n", *analyze_n}, {"mean", mom.mean}, {"variance", mom.variance}};
      }
      record["seed"] = 0;
      record["family_hash"] = j["family_hash"];
      finish(j.dump(2) + "\n");
      return 0;
    }

    record["seed"] = seed;

    if (*sample) {
      const auto f = load_family(family_path);
      const auto set = sample_rho_n(f, n, count, seed, workers);
      std::ostringstream os;
      if (sample_format == "csv") {
        write_samples_csv(os, set);
      } else {
        if (out_path.empty()) fail(ErrorKind::Usage, "precondition", "binary output needs --out");
        write_samples_binary(os, set);
      }
      record["family_hash"] = set.family_hash;
      record["n"] = n;
      record["count"] = count;
      record["zero_samples"] = set.zero_samples;
      finish(os.str());
      return 0;
    }

    if (*clt) {
      const auto f = load_family(family_path);
      json cfg = {{"family", family_to_json(f)}, {"n", n}, {"count", count}};
      const auto rep = run_experiment(Protocol::CltHistogram, cfg, seed, workers);
      if (!histogram_path.empty()) {
        const auto& h = rep.summary.at("histogram");
        Histogram hist;
        hist.edges = h.at("edges").get<std::vector<double>>();
        hist.counts = h.at("counts").get<std::vector<std::size_t>>();
        std::ostringstream hs;
        hs << "# protocol=clt,seed=" << seed << ",family_hash=" << family_hash(f) << ",tool_version=" << kToolVersion
           << "\n";
        write_histogram_csv(hs, hist);
        detail::Sink::write_file(histogram_path, hs.str());
      }
      record["family_hash"] = family_hash(f);
      finish(detail::report_body(rep, format));
      return 0;
    }

    if (*eu) {
      json model = {{"kind", model_kind}, {"mu", mu}, {"s", s_par}, {"tau", tau}};
      json cfg = {{"model", model}, {"n_ladder", ladder}};
      const auto rep = run_experiment(Protocol::EdgeworthUniv, cfg, seed, workers);
      finish(detail::report_body(rep, format));
      return 0;
    }

    if (*em) {
      json cfg = rsr::detail::parse_document(read_text_file(config_path));
      if (multi_count) cfg["count"] = *multi_count;
      if (!n_values.empty()) cfg["n_values"] = n_values;
      const auto rep = run_experiment(Protocol::EdgeworthMulti, cfg, seed, workers);
      finish(detail::report_body(rep, format));
      return 0;
    }

    if (*pt) {
      const auto base = load_family(family_path);
      auto deltas = parse_matrix_list(read_text_file(deltas_path));
      const auto pf = PerturbedFamily::create(base, std::move(deltas), epsilon.value_or(0.0),
                                              scaling == "normalize" ? DeltaScaling::Normalize : DeltaScaling::AsGiven);
      std::vector<int> word;
      if (!word_text.empty()) {
        word = detail::parse_word(word_text, base.size());
      } else if (word_length) {
        word = sample_word(base.size(), base.weights(), *word_length, seed, 0).indices;
      } else {
        fail(ErrorKind::Usage, "bad_arguments", "perturb needs --word or --word-length");
      }
      if (eps_ladder.size() < 2) fail(ErrorKind::Usage, "precondition", "eps ladder needs at least two values");

      json j;
      j["tool_version"] = kToolVersion;
      j["seed"] = seed;
      j["family_hash"] = family_hash(base);
      j["delta_scaling"] = scaling;
      j["word"] = detail::one_based(word);
      json coeffs = json::array();
      for (int i = 0; i < base.dimension(); ++i) {
        json c;
        c["index"] = i + 1;
        try {
          const auto e = eigenvalue_product_expansion(pf, word, i);
          c["lambda0"] = detail::complex_pair(e.lambda0);
          c["lambda1"] = detail::complex_pair(e.lambda1);
          c["lambda2"] = detail::complex_pair(e.lambda2);
          c["lambda2_rational"] = e.lambda2_rational ? json(*e.lambda2_rational) : json(nullptr);
          c["log_modulus1"] = e.log_modulus1;
          c["log_modulus2"] = e.log_modulus2;
          std::vector<double> resid;
          bool fit_ok = true;
          for (double eps : eps_ladder) {
            const double r = std::abs(exact_product_eigenvalue(pf, word, e, eps) - e.value(eps));
            resid.push_back(r);
            fit_ok = fit_ok && r > 0.0;
          }
          c["residuals"] = resid;
          c["residual_slope"] = fit_ok ? json(loglog_slope(eps_ladder, resid)) : json(nullptr);
        } catch (const Error& e) {
          if (e.code() != "degenerate_spectrum") throw;
          c["skipped"] = e.code();
        }
        coeffs.push_back(c);
      }
      j["eps_ladder"] = eps_ladder;
      j["coefficients"] = coeffs;
      if (epsilon) {
        const auto pa = perturbed_asymptotics(pf);
        j["asymptotics"] = {{"epsilon", pa.epsilon},
                            {"epsilon_max", pa.epsilon_max},
                            {"summary", detail::summary_to_json(pa.summary)}};
      }
      record["family_hash"] = j["family_hash"];
      finish(j.dump(2) + "\n");
      return 0;
    }

    if (*gs) {
      json cfg = {{"n_pair", n_pair}, {"count", gamma_count}};
      if (!family_paths.empty()) {
        json fams = json::array();
        for (const auto& p : family_paths) fams.push_back(family_to_json(load_family(p)));
        cfg["families"] = fams;
      } else {
        cfg["gammas"] = gammas;
        if (!base_path.empty()) cfg["base"] = family_to_json(load_family(base_path));
      }
      const auto rep = run_experiment(Protocol::GammaStudy, cfg, seed, workers);
      finish(detail::report_body(rep, format));
      return 0;
    }
  } catch (const Error& e) {
    detail::error_record(err, to_string(e.kind()), e.code(), e.what());
    return detail::exit_code(e.kind());
  } catch (const std::exception& e) {
    detail::error_record(err, "numerical", "internal", e.what());
    return 4;
  }
  return 2;
}

}  // namespace rsr::cli
