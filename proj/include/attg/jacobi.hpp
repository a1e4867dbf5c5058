#pragma once

#include <Eigen/Core>

namespace attg {

struct SymmetricEigen {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // column i pairs with values(i)
  int sweeps = 0;
};

struct JacobiOptions {
  // Convergence when the off-diagonal Frobenius norm drops below
  // tolerance × max(1, ‖A‖_F).
  double tolerance = 1e-10;
  int max_sweeps = 100;
};

// Cyclic Jacobi rotations on a dense symmetric matrix. Eigenvectors are
// sign-normalized so their largest-magnitude entry (lowest index on ties) is
// positive, which makes results reproducible. Throws NumericalError when the
// sweep limit is hit.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& a, const JacobiOptions& options = {});

}  // namespace attg
