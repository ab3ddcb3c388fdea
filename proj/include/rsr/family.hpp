#pragma once

// Matrix families: parsing, validation, structure detection and the spectral
// profile |lambda_j^(i)| that drives every closed-form result.

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rsr/error.hpp"
#include "rsr/linalg.hpp"

namespace rsr {

using json = nlohmann::json;

/// A weighted finite set of complex d x d matrices. Immutable once built;
/// `create` enforces the invariants (common dimension, finite entries,
/// nonnegative weights summing to one).
class MatrixFamily {
 public:
  static MatrixFamily create(std::vector<ComplexMatrix> matrices, std::vector<double> weights,
                             std::string label = {}) {
    if (matrices.empty()) fail(ErrorKind::InvalidInput, "malformed", "family needs at least one matrix");
    if (weights.size() != matrices.size()) {
      fail(ErrorKind::InvalidInput, "malformed",
           "got " + std::to_string(weights.size()) + " weights for " + std::to_string(matrices.size()) +
               " matrices");
    }
    const Eigen::Index d = matrices.front().rows();
    if (d < 1) fail(ErrorKind::InvalidInput, "malformed", "matrix dimension must be at least 1");
    for (std::size_t i = 0; i < matrices.size(); ++i) {
      const auto& a = matrices[i];
      if (a.rows() != d || a.cols() != d) {
        fail(ErrorKind::InvalidInput, "dimension_mismatch",
             "matrix " + std::to_string(i + 1) + " is " + std::to_string(a.rows()) + "x" +
                 std::to_string(a.cols()) + ", expected " + std::to_string(d) + "x" + std::to_string(d));
      }
      for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < d; ++c) {
          if (!std::isfinite(a(r, c).real()) || !std::isfinite(a(r, c).imag())) {
            fail(ErrorKind::InvalidInput, "non_finite",
                 "matrix " + std::to_string(i + 1) + " has a non-finite entry");
          }
        }
      }
    }
    double sum = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0) {
        fail(ErrorKind::InvalidInput, "weight_sum", "weights must be finite and nonnegative");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      fail(ErrorKind::InvalidInput, "weight_sum", "weights sum to " + std::to_string(sum) + ", expected 1");
    }
    for (double& w : weights) w /= sum;

    MatrixFamily f;
    f.matrices_ = std::move(matrices);
    f.weights_ = std::move(weights);
    f.label_ = std::move(label);
    return f;
  }

  int size() const { return static_cast<int>(matrices_.size()); }
  int dimension() const { return static_cast<int>(matrices_.front().rows()); }
  const std::vector<ComplexMatrix>& matrices() const { return matrices_; }
  const ComplexMatrix& matrix(int i) const { return matrices_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& weights() const { return weights_; }
  const std::string& label() const { return label_; }

 private:
  MatrixFamily() = default;
  std::vector<ComplexMatrix> matrices_;
  std::vector<double> weights_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// Family-description documents
// ---------------------------------------------------------------------------

namespace detail {

inline Complex parse_entry(const json& e) {
  if (e.is_number()) return {e.get<double>(), 0.0};
  if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
    return {e[0].get<double>(), e[1].get<double>()};
  }
  fail(ErrorKind::InvalidInput, "malformed", "matrix entries must be [re, im] pairs");
}

inline ComplexMatrix parse_matrix(const json& rows, int d, std::size_t index) {
  if (!rows.is_array() || rows.size() != static_cast<std::size_t>(d)) {
    fail(ErrorKind::InvalidInput, "dimension_mismatch",
         "matrix " + std::to_string(index + 1) + " does not have " + std::to_string(d) + " rows");
  }
  ComplexMatrix a(d, d);
  for (int r = 0; r < d; ++r) {
    const json& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || row.size() != static_cast<std::size_t>(d)) {
      fail(ErrorKind::InvalidInput, "dimension_mismatch",
           "matrix " + std::to_string(index + 1) + " row " + std::to_string(r + 1) + " does not have " +
               std::to_string(d) + " entries");
    }
    for (int c = 0; c < d; ++c) a(r, c) = parse_entry(row[static_cast<std::size_t>(c)]);
  }
  return a;
}

inline json parse_document(std::string_view text) {
  json doc = json::parse(text.begin(), text.end(), nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) {
    fail(ErrorKind::InvalidInput, "malformed", "family document is not a JSON object");
  }
  return doc;
}

inline std::vector<ComplexMatrix> parse_matrices(const json& doc) {
  if (!doc.contains("dimension") || !doc["dimension"].is_number_integer()) {
    fail(ErrorKind::InvalidInput, "malformed", "missing integer field 'dimension'");
  }
  const int d = doc["dimension"].get<int>();
  if (d < 1) fail(ErrorKind::InvalidInput, "malformed", "'dimension' must be at least 1");
  if (!doc.contains("matrices") || !doc["matrices"].is_array() || doc["matrices"].empty()) {
    fail(ErrorKind::InvalidInput, "malformed", "missing non-empty array 'matrices'");
  }
  std::vector<ComplexMatrix> out;
  for (std::size_t i = 0; i < doc["matrices"].size(); ++i) out.push_back(parse_matrix(doc["matrices"][i], d, i));
  return out;
}

inline json matrix_to_json(const ComplexMatrix& a) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(json::array({a(r, c).real(), a(r, c).imag()}));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::Numerical, "hash", "SHA-256 digest failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace detail

/// Parses a family-description document:
///   {"dimension": d, "label": "...", "matrices": [[[[re,im],...],...],...],
///    "weights": [p_1, ..., p_m]}
/// Weights within 1e-9 of summing to one are renormalized; anything further
/// off is rejected. A bare number is accepted for a purely real entry.
inline MatrixFamily parse_family(std::string_view text) {
  const json doc = detail::parse_document(text);
  auto matrices = detail::parse_matrices(doc);
  if (!doc.contains("weights") || !doc["weights"].is_array()) {
    fail(ErrorKind::InvalidInput, "malformed", "missing array 'weights'");
  }
  std::vector<double> weights;
  for (const auto& w : doc["weights"]) {
    if (!w.is_number()) fail(ErrorKind::InvalidInput, "malformed", "weights must be numbers");
    weights.push_back(w.get<double>());
  }
  std::string label;
  if (doc.contains("label")) {
    if (!doc["label"].is_string()) fail(ErrorKind::InvalidInput, "malformed", "'label' must be a string");
    label = doc["label"].get<std::string>();
  }
  return MatrixFamily::create(std::move(matrices), std::move(weights), std::move(label));
}

/// Matrix list without weights (used for perturbation directions). Same
/// schema as a family document; `weights` and `label` are ignored.
inline std::vector<ComplexMatrix> parse_matrix_list(std::string_view text) {
  return detail::parse_matrices(detail::parse_document(text));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidInput, "io", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline MatrixFamily load_family(const std::string& path) { return parse_family(read_text_file(path)); }

/// Canonical document: keys in lexicographic order, shortest round-trip
/// doubles, every entry written as an [re, im] pair.
inline json family_to_json(const MatrixFamily& f) {
  json doc;
  doc["dimension"] = f.dimension();
  doc["label"] = f.label();
  json mats = json::array();
  for (const auto& a : f.matrices()) mats.push_back(detail::matrix_to_json(a));
  doc["matrices"] = std::move(mats);
  doc["weights"] = f.weights();
  return doc;
}

inline std::string canonical_family_text(const MatrixFamily& f) { return family_to_json(f).dump(); }

/// SHA-256 (hex) of the canonical document.
inline std::string family_hash(const MatrixFamily& f) { return detail::sha256_hex(canonical_family_text(f)); }

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

enum class StructureTag { Diagonal, UpperTriangular, LowerTriangular, General };

inline const char* to_string(StructureTag t) {
  switch (t) {
    case StructureTag::Diagonal: return "diagonal";
    case StructureTag::UpperTriangular: return "upper_triangular";
    case StructureTag::LowerTriangular: return "lower_triangular";
    case StructureTag::General: return "general";
  }
  return "unknown";
}

struct StructureClass {
  StructureTag tag = StructureTag::General;
  double zero_tolerance = 1e-14;
  /// Set when the zero pattern was triangular/diagonal but some diagonal
  /// entry vanished; the family is then reported as General.
  std::optional<StructureTag> demoted_from;

  bool structured() const { return tag != StructureTag::General; }
};

/// What to do when a structured zero pattern has a zero diagonal entry.
enum class DegenerateSpectrum { Demote, Throw };

/// Classifies by zero pattern: entry a counts as zero iff
/// |a| <= tol * ||A||_F. Diagonal beats triangular beats general; a family
/// mixing upper and lower members is general.
inline StructureClass classify_structure(const MatrixFamily& f, double tol = 1e-14,
                                         DegenerateSpectrum policy = DegenerateSpectrum::Demote) {
  bool all_upper = true, all_lower = true;
  bool zero_diagonal = false;
  for (const auto& a : f.matrices()) {
    const double cutoff = tol * a.norm();
    const auto d = a.rows();
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) {
        if (r == c) {
          if (std::abs(a(r, c)) <= cutoff) zero_diagonal = true;
        } else if (std::abs(a(r, c)) > cutoff) {
          if (r > c) all_upper = false;
          else all_lower = false;
        }
      }
    }
  }
  StructureClass cls;
  cls.zero_tolerance = tol;
  if (all_upper && all_lower) cls.tag = StructureTag::Diagonal;
  else if (all_upper) cls.tag = StructureTag::UpperTriangular;
  else if (all_lower) cls.tag = StructureTag::LowerTriangular;
  else cls.tag = StructureTag::General;

  if (cls.structured() && zero_diagonal) {
    if (policy == DegenerateSpectrum::Throw) {
      fail(ErrorKind::InvalidInput, "degenerate_spectrum",
           std::string(to_string(cls.tag)) + " family has a zero diagonal entry");
    }
    cls.demoted_from = cls.tag;
    cls.tag = StructureTag::General;
  }
  return cls;
}

/// Average commutator norm (2 / (m(m-1))) sum_{i<j} ||[A_i, A_j]||_F; zero
/// for a single matrix.
inline double commutator_gap(const MatrixFamily& f) {
  const int m = f.size();
  if (m < 2) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) sum += commutator(f.matrix(i), f.matrix(j)).norm();
  return 2.0 * sum / (static_cast<double>(m) * (m - 1));
}

// ---------------------------------------------------------------------------
// Spectral profile
// ---------------------------------------------------------------------------

enum class ProfileSource { DiagonalEntries, EigenSolve };

/// How eigenvalues of a general matrix are assigned to coordinates.
enum class ProfilePairing {
  /// Eigenvalue k goes to the coordinate its eigenvector is most aligned
  /// with (maximum-product assignment). Reduces to the diagonal order for
  /// (near-)diagonal matrices.
  EigenvectorAlignment,
  /// Moduli sorted in decreasing order per matrix.
  SortedDescending
};

/// d x m table: entry (j, i) = |lambda_j^(i)|.
struct SpectralProfile {
  RealMatrix moduli;
  ProfileSource source = ProfileSource::DiagonalEntries;

  int dimension() const { return static_cast<int>(moduli.rows()); }
  int size() const { return static_cast<int>(moduli.cols()); }
};

namespace detail {

inline std::vector<int> best_alignment(const ComplexMatrix& vectors) {
  const int d = static_cast<int>(vectors.rows());
  RealMatrix score(d, d);  // score(coord, k)
  for (int k = 0; k < d; ++k) {
    const double nrm = vectors.col(k).norm();
    for (int j = 0; j < d; ++j) score(j, k) = std::log(std::max(std::abs(vectors(j, k)) / nrm, 1e-300));
  }
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  if (d > 8) {
    // Greedy for large d: strongest remaining entry first.
    std::vector<int> assign(static_cast<std::size_t>(d), -1);
    std::vector<bool> used(static_cast<std::size_t>(d), false);
    for (int step = 0; step < d; ++step) {
      double best = -1e308;
      int bj = -1, bk = -1;
      for (int k = 0; k < d; ++k) {
        if (assign[static_cast<std::size_t>(k)] >= 0) continue;
        for (int j = 0; j < d; ++j)
          if (!used[static_cast<std::size_t>(j)] && score(j, k) > best) best = score(j, k), bj = j, bk = k;
      }
      assign[static_cast<std::size_t>(bk)] = bj;
      used[static_cast<std::size_t>(bj)] = true;
    }
    return assign;
  }
  std::vector<int> best_perm = perm;
  double best = -1e308;
  do {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += score(perm[static_cast<std::size_t>(k)], k);
    if (s > best) best = s, best_perm = perm;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best_perm;  // eigenvalue k -> coordinate best_perm[k]
}

}  // namespace detail

inline SpectralProfile spectral_profile(const MatrixFamily& f, const StructureClass& cls,
                                        ProfilePairing pairing = ProfilePairing::EigenvectorAlignment) {
  const int d = f.dimension();
  const int m = f.size();
  SpectralProfile p;
  p.moduli.resize(d, m);
  if (cls.structured()) {
    p.source = ProfileSource::DiagonalEntries;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) p.moduli(j, i) = std::abs(f.matrix(i)(j, j));
    return p;
  }
  p.source = ProfileSource::EigenSolve;
  for (int i = 0; i < m; ++i) {
    if (pairing == ProfilePairing::SortedDescending || d == 1) {
      RealVector mod = eigenvalues(f.matrix(i)).cwiseAbs();
      std::sort(mod.begin(), mod.end(), std::greater<>());
      p.moduli.col(i) = mod;
      continue;
    }
    Eigen::ComplexEigenSolver<ComplexMatrix> solver(f.matrix(i), true);
    if (solver.info() != Eigen::Success) {
      fail(ErrorKind::Numerical, "eigensolver", "eigenvalue iteration did not converge");
    }
    const auto assign = detail::best_alignment(solver.eigenvectors());
    for (int k = 0; k < d; ++k) p.moduli(assign[static_cast<std::size_t>(k)], i) = std::abs(solver.eigenvalues()[k]);
  }
  return p;
}

inline SpectralProfile spectral_profile(const MatrixFamily& f) { return spectral_profile(f, classify_structure(f)); }

}  // namespace rsr
