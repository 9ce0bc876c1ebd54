#pragma once

#include <Eigen/Dense>

namespace klc::num {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// (1; u) ⊗ z, laid out as [z; u_1 z; ...; u_m z].
VectorXd kron_feature(const VectorXd& u, const VectorXd& z);

struct LeastSquaresResult {
  MatrixXd X;             // minimizer of ||X A - B||_F
  bool used_pinv = false; // normal equations were too ill-conditioned
  double cond = 0.0;      // condition estimate of A A^T
};

// Solves min_X ||X A - B||_F. Normal-equations path X = B A^T (A A^T)^{-1}
// when A A^T is well-conditioned; otherwise minimum-norm solution through a
// rank-revealing SVD with relative singular-value tolerance `rank_tol`.
LeastSquaresResult solve_least_squares(const MatrixXd& A, const MatrixXd& B,
                                       double cond_limit = 1e12,
                                       double rank_tol = 1e-10);

}  // namespace klc::num
