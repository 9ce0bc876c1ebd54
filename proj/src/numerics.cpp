#include "klc/numerics.hpp"

#include <stdexcept>

#include <Eigen/SVD>

namespace klc::num {

VectorXd kron_feature(const VectorXd& u, const VectorXd& z) {
  const auto m = u.size();
  const auto N = z.size();
  VectorXd out((m + 1) * N);
  out.head(N) = z;
  for (Eigen::Index i = 0; i < m; ++i) out.segment((i + 1) * N, N) = u[i] * z;
  return out;
}

LeastSquaresResult solve_least_squares(const MatrixXd& A, const MatrixXd& B,
                                       double cond_limit, double rank_tol) {
  if (A.cols() != B.cols()) {
    throw std::invalid_argument("solve_least_squares: column counts differ");
  }
  LeastSquaresResult res;

  MatrixXd G = A * A.transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(G);
  const double emax = eig.eigenvalues().maxCoeff();
  const double emin = eig.eigenvalues().minCoeff();
  res.cond = (emin > 0.0) ? emax / emin : std::numeric_limits<double>::infinity();

  if (emin > 0.0 && res.cond < cond_limit) {
    res.X = G.ldlt().solve(A * B.transpose()).transpose();
    return res;
  }

  // Minimum-norm fallback: X = B * pinv(A).
  res.used_pinv = true;
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double thresh = rank_tol * (s.size() > 0 ? s[0] : 0.0);
  VectorXd sinv = VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > thresh) sinv[i] = 1.0 / s[i];
  }
  MatrixXd pinv = svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
  res.X = B * pinv;
  return res;
}

}  // namespace klc::num
