#pragma once

// Dense complex linear algebra shared by all modules.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "rsr/error.hpp"

namespace rsr {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

/// Eigenvalues of a dense complex matrix (Hessenberg reduction followed by
/// shifted QR on the complex Schur form).
inline ComplexVector eigenvalues(const ComplexMatrix& a) {
  if (a.rows() == 1) return a.diagonal();
  Eigen::ComplexEigenSolver<ComplexMatrix> solver(a, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    fail(ErrorKind::Numerical, "eigensolver", "eigenvalue iteration did not converge");
  }
  return solver.eigenvalues();
}

inline double spectral_radius(const ComplexMatrix& a) {
  return eigenvalues(a).cwiseAbs().maxCoeff();
}

/// Right eigenvectors (columns of `right`) and the matching left eigenvectors
/// (rows of `left`, i.e. left = right^{-1}), normalized so left.row(k) *
/// right.col(k) = 1. This is the transpose-based pairing u_k^T v_k = 1.
struct EigenDecomposition {
  ComplexVector values;
  ComplexMatrix right;
  ComplexMatrix left;
};

inline EigenDecomposition eigen_decompose(const ComplexMatrix& a) {
  Eigen::ComplexEigenSolver<ComplexMatrix> solver(a, /*computeEigenvectors=*/true);
  if (solver.info() != Eigen::Success) {
    fail(ErrorKind::Numerical, "eigensolver", "eigenvector iteration did not converge");
  }
  EigenDecomposition out;
  out.values = solver.eigenvalues();
  out.right = solver.eigenvectors();
  Eigen::PartialPivLU<ComplexMatrix> lu(out.right);
  out.left = lu.inverse();
  const double residual = (out.left * out.right - ComplexMatrix::Identity(a.rows(), a.cols())).norm();
  if (!std::isfinite(residual) || residual > 1e-8) {
    fail(ErrorKind::Numerical, "eigenvectors",
         "eigenvector matrix is numerically singular (defective or near-defective matrix)");
  }
  return out;
}

inline ComplexMatrix commutator(const ComplexMatrix& a, const ComplexMatrix& b) {
  return a * b - b * a;
}

/// Relative gap test for a simple spectrum: true when every pair of
/// eigenvalues differs by more than rel_tol * max|lambda|.
inline bool spectrum_is_simple(const ComplexVector& values, double rel_tol) {
  const double scale = values.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    for (Eigen::Index j = i + 1; j < values.size(); ++j) {
      if (std::abs(values[i] - values[j]) <= rel_tol * scale) return false;
    }
  }
  return true;
}

}  // namespace rsr
