#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rsr/error.hpp"
#include "rsr/family.hpp"
#include "rsr/rng.hpp"

namespace rsr::test {

inline ComplexMatrix diag(std::initializer_list<double> v) {
  ComplexMatrix a = ComplexMatrix::Zero(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) a(k, k) = x, ++k;
  return a;
}

inline ComplexMatrix real_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const auto d = static_cast<Eigen::Index>(rows.size());
  ComplexMatrix a(d, d);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double x : row) a(r, c++) = x;
    ++r;
  }
  return a;
}

inline MatrixFamily worked_example() {
  return MatrixFamily::create({diag({1, 2}), diag({3, 5})}, {0.5, 0.5}, "worked example");
}

inline std::string data_path(const std::string& name) { return std::string(RSR_DATA_DIR) + "/" + name; }

/// Random diagonal family with positive entries in [lo, hi].
inline MatrixFamily random_diagonal(int d, int m, std::uint64_t seed, double lo = 0.3, double hi = 3.0) {
  CounterRng rng(seed, 0, 0x7465);
  std::vector<ComplexMatrix> mats;
  for (int i = 0; i < m; ++i) {
    ComplexMatrix a = ComplexMatrix::Zero(d, d);
    for (int j = 0; j < d; ++j) a(j, j) = lo + (hi - lo) * rng.uniform();
    mats.push_back(a);
  }
  std::vector<double> w(static_cast<std::size_t>(m));
  double sum = 0.0;
  for (auto& x : w) sum += (x = 0.2 + rng.uniform());
  for (auto& x : w) x /= sum;
  return MatrixFamily::create(std::move(mats), std::move(w));
}

/// Random dense real family with Gaussian entries.
inline MatrixFamily random_general(int d, int m, std::uint64_t seed) {
  CounterRng rng(seed, 1, 0x7465);
  std::normal_distribution<double> normal;
  std::vector<ComplexMatrix> mats;
  for (int i = 0; i < m; ++i) {
    ComplexMatrix a(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) a(r, c) = normal(rng);
    mats.push_back(a);
  }
  return MatrixFamily::create(std::move(mats), std::vector<double>(static_cast<std::size_t>(m), 1.0 / m));
}

/// Code of the rsr::Error thrown by f, or "" when nothing is thrown.
template <class F>
std::string error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace rsr::test
