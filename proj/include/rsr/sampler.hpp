#pragma once

// Seeded word sampling and evaluation of rho_n along random products.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rsr/error.hpp"
#include "rsr/exactspec.hpp"
#include "rsr/family.hpp"
#include "rsr/parallel.hpp"
#include "rsr/rng.hpp"
#include "rsr/scaled_product.hpp"
#include "rsr/version.hpp"

namespace rsr {

/// Index sequence over {0..m-1}, reproducible from (seed, draw_index).
struct Word {
  std::vector<int> indices;
  std::uint64_t seed = 0;
  std::uint64_t draw_index = 0;

  std::size_t length() const { return indices.size(); }
};

/// Categorical sampler over a fixed weight vector. Draw k of sample i uses
/// position k of stream (seed, i), so a word depends on nothing else.
class WordSampler {
 public:
  explicit WordSampler(std::span<const double> weights) : cumulative_(weights.size()) {
    if (weights.empty()) fail(ErrorKind::Usage, "precondition", "need at least one weight");
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      cumulative_[i] = acc;
      if (weights[i] > 0.0) last_positive = i;
    }
    for (std::size_t i = last_positive; i < cumulative_.size(); ++i) cumulative_[i] = 1.0;
  }

  int draw(CounterRng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<int>(it - cumulative_.begin());
  }

  void fill(std::span<int> out, std::uint64_t seed, std::uint64_t draw_index) const {
    CounterRng rng(seed, draw_index);
    for (int& v : out) v = draw(rng);
  }

  Word sample(std::size_t n, std::uint64_t seed, std::uint64_t draw_index) const {
    Word w;
    w.indices.resize(n);
    w.seed = seed;
    w.draw_index = draw_index;
    fill(w.indices, seed, draw_index);
    return w;
  }

  int categories() const { return static_cast<int>(cumulative_.size()); }

 private:
  std::vector<double> cumulative_;
};

inline Word sample_word(int m, std::span<const double> weights, std::size_t n, std::uint64_t seed,
                        std::uint64_t draw_index) {
  if (n < 1) fail(ErrorKind::Usage, "precondition", "word length must be at least 1");
  if (static_cast<std::size_t>(m) != weights.size()) {
    fail(ErrorKind::Usage, "precondition", "m does not match the number of weights");
  }
  return WordSampler(weights).sample(n, seed, draw_index);
}

struct RhoEvaluation {
  double rho_n = 0.0;
  double log_rho = 0.0;  // log rho(Pi), not divided by n
  bool zero = false;     // rho(Pi) == 0; rho_n reported as 0
};

/// Evaluates rho_n for words over one family. Structured families take the
/// diagonal fast path (max_j sum_k log|lambda_j^(w_k)|, no matrix products);
/// general families accumulate a ScaledProduct and eigensolve the unit factor.
class ProductEvaluator {
 public:
  explicit ProductEvaluator(const MatrixFamily& f) : ProductEvaluator(f, classify_structure(f)) {}

  ProductEvaluator(const MatrixFamily& f, StructureClass cls) : family_(&f), cls_(cls) {
    if (cls_.structured()) {
      const auto profile = spectral_profile(f, cls_);
      if ((profile.moduli.array() <= 0.0).any()) {
        fail(ErrorKind::InvalidInput, "degenerate_spectrum", "structured family has a zero diagonal entry");
      }
      log_profile_ = profile.moduli.array().log().matrix();
    }
  }

  const StructureClass& structure() const { return cls_; }

  RhoEvaluation evaluate(std::span<const int> word) const {
    validate(word);
    if (cls_.structured()) return evaluate_fast(word);
    return evaluate_matrix(word);
  }

  RhoEvaluation evaluate_fast(std::span<const int> word) const {
    if (!cls_.structured()) fail(ErrorKind::Usage, "precondition", "fast path needs a structured family");
    RealVector acc = RealVector::Zero(log_profile_.rows());
    for (int idx : word) acc += log_profile_.col(idx);
    return finish(acc.maxCoeff(), word.size());
  }

  RhoEvaluation evaluate_matrix(std::span<const int> word) const {
    ScaledProduct prod(family_->dimension());
    for (int idx : word) prod.multiply(family_->matrix(idx));
    return finish(prod.log_spectral_radius(), word.size());
  }

 private:
  void validate(std::span<const int> word) const {
    if (word.empty()) fail(ErrorKind::Usage, "precondition", "word must be non-empty");
    for (int idx : word) {
      if (idx < 0 || idx >= family_->size()) fail(ErrorKind::Usage, "precondition", "word index out of range");
    }
  }

  static RhoEvaluation finish(double log_rho, std::size_t n) {
    RhoEvaluation out;
    out.log_rho = log_rho;
    if (!std::isfinite(log_rho)) {
      out.zero = true;
      out.rho_n = 0.0;
    } else {
      out.rho_n = std::exp(log_rho / static_cast<double>(n));
    }
    return out;
  }

  const MatrixFamily* family_;
  StructureClass cls_;
  RealMatrix log_profile_;
};

inline RhoEvaluation product_spectral_radius(const MatrixFamily& f, const Word& word) {
  return ProductEvaluator(f).evaluate(word.indices);
}

/// Seeded collection of rho_n realizations.
struct SampleSet {
  std::vector<double> values;
  std::vector<double> log_rho;  // log rho(Pi) per sample
  long long n = 0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string family_hash;
  std::size_t zero_samples = 0;  // products with rho(Pi) == 0
};

/// `count` independent rho_n draws. Sample i uses word stream (seed, i), so
/// the output is identical for any worker count.
inline SampleSet sample_rho_n(const MatrixFamily& f, long long n, std::size_t count, std::uint64_t seed,
                              unsigned workers = 0) {
  if (n < 1) fail(ErrorKind::Usage, "precondition", "n must be at least 1");
  if (count < 1) fail(ErrorKind::Usage, "precondition", "count must be at least 1");
  const ProductEvaluator eval(f);
  const WordSampler sampler(f.weights());

  SampleSet out;
  out.n = n;
  out.count = count;
  out.seed = seed;
  out.family_hash = family_hash(f);
  out.values.resize(count);
  out.log_rho.resize(count);
  std::vector<unsigned char> zero(count, 0);

  parallel_blocks(count, 1024, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<int> word(static_cast<std::size_t>(n));
    for (std::size_t i = begin; i < end; ++i) {
      sampler.fill(word, seed, i);
      const auto r = eval.evaluate(word);
      out.values[i] = r.rho_n;
      out.log_rho[i] = r.log_rho;
      zero[i] = r.zero ? 1 : 0;
    }
  });
  for (auto z : zero) out.zero_samples += z;
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// CSV: two metadata comment lines, a header, then one value per line.
inline void write_samples_csv(std::ostream& out, const SampleSet& s) {
  out << "# rsr sample set\n";
  out << "# n=" << s.n << ",seed=" << s.seed << ",count=" << s.count << ",family_hash=" << s.family_hash
      << ",zero_samples=" << s.zero_samples
      << ",tool_version=" << kToolVersion << "\n";
  out << "rho_n\n";
  for (double v : s.values) out << format_double(v) << "\n";
}

/// Compact binary column: count little-endian IEEE-754 doubles, no header.
inline void write_samples_binary(std::ostream& out, const SampleSet& s) {
  for (double v : s.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char bytes[8];
    for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(bits >> (8 * k));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

inline std::vector<double> read_samples_binary(std::istream& in) {
  std::vector<double> out;
  unsigned char bytes[8];
  while (in.read(reinterpret_cast<char*>(bytes), 8)) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    out.push_back(v);
  }
  return out;
}

}  // namespace rsr
