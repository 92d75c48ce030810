#pragma once

#include <Eigen/Dense>

namespace mgse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Tolerance used for covariance symmetry and positive-semidefiniteness checks.
inline constexpr double kCovarianceTolerance = 1e-10;

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Largest absolute entry of m - m^T.
double asymmetry(const Matrix& m);

/// Smallest eigenvalue of the symmetric part of m.
double min_eigenvalue(const Matrix& m);

/// True when m is square, symmetric within `tol` and has no eigenvalue below -tol.
bool is_symmetric_psd(const Matrix& m, double tol = kCovarianceTolerance);

/// 1-norm condition number estimate from a full-pivot LU. Infinity for singular input.
double condition_number(const Matrix& m);

}  // namespace mgse
