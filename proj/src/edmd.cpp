#include "klc/edmd.hpp"

#include <stdexcept>

#include <Eigen/SVD>

namespace klc::edmd {

namespace {

void gather_pairs(const sim::Dataset& ds, const Lift& lift, int N,
                  std::vector<VectorXd>& z0, std::vector<VectorXd>& u,
                  std::vector<VectorXd>& z1) {
  std::vector<VectorXd> lifted(ds.states.size());
  for (std::size_t k = 0; k < ds.states.size(); ++k) {
    lifted[k] = lift(ds.states[k]);
    if (lifted[k].size() != N) throw std::invalid_argument("lift dimension mismatch");
  }
  for (std::size_t k = 0; k + 1 < ds.states.size(); ++k) {
    if (!ds.has_pair(k)) continue;
    z0.push_back(lifted[k]);
    u.push_back(ds.inputs[k]);
    z1.push_back(lifted[k + 1]);
  }
}

}  // namespace

BilinearModel fit_bilinear_lifted(const std::vector<VectorXd>& z0,
                                  const std::vector<VectorXd>& u,
                                  const std::vector<VectorXd>& z1, double T) {
  if (z0.empty() || z0.size() != u.size() || z0.size() != z1.size()) {
    throw std::invalid_argument("fit_bilinear: empty or mismatched snapshot pairs");
  }
  const int N = static_cast<int>(z0[0].size());
  const int m = static_cast<int>(u[0].size());
  const auto cols = static_cast<Eigen::Index>(z0.size());

  MatrixXd Psi((m + 1) * N, cols), beta(N, cols);
  for (Eigen::Index k = 0; k < cols; ++k) {
    Psi.col(k) = num::kron_feature(u[k], z0[k]);
    beta.col(k) = z1[k];
  }
  auto ls = num::solve_least_squares(Psi, beta);

  BilinearModel model;
  model.N = N;
  model.T = T;
  model.pinv_fallback = ls.used_pinv;
  model.K_d = ls.X.leftCols(N);
  model.B.reserve(m);
  for (int i = 0; i < m; ++i) model.B.push_back(ls.X.middleCols((i + 1) * N, N));
  return model;
}

BilinearModel fit_bilinear(const sim::Dataset& ds, const Lift& lift, int N) {
  std::vector<VectorXd> z0, u, z1;
  gather_pairs(ds, lift, N, z0, u, z1);
  return fit_bilinear_lifted(z0, u, z1, ds.T);
}

LinearModel fit_linear_lifted(const std::vector<VectorXd>& z0,
                              const std::vector<VectorXd>& u,
                              const std::vector<VectorXd>& z1, double T) {
  if (z0.empty() || z0.size() != u.size() || z0.size() != z1.size()) {
    throw std::invalid_argument("fit_linear: empty or mismatched snapshot pairs");
  }
  const int N = static_cast<int>(z0[0].size());
  const int m = static_cast<int>(u[0].size());
  const auto cols = static_cast<Eigen::Index>(z0.size());

  MatrixXd F(N + m, cols), beta(N, cols);
  for (Eigen::Index k = 0; k < cols; ++k) {
    F.col(k).head(N) = z0[k];
    F.col(k).tail(m) = u[k];
    beta.col(k) = z1[k];
  }
  auto ls = num::solve_least_squares(F, beta);

  LinearModel model;
  model.N = N;
  model.T = T;
  model.pinv_fallback = ls.used_pinv;
  model.A_d = ls.X.leftCols(N);
  model.B_d = ls.X.rightCols(m);
  return model;
}

LinearModel fit_linear(const sim::Dataset& ds, const Lift& lift, int N) {
  std::vector<VectorXd> z0, u, z1;
  gather_pairs(ds, lift, N, z0, u, z1);
  return fit_linear_lifted(z0, u, z1, ds.T);
}

VectorXd predict(const BilinearModel& model, const VectorXd& z, const VectorXd& u) {
  VectorXd out = model.K_d * z;
  for (int i = 0; i < model.m(); ++i) out += u[i] * (model.B[i] * z);
  return out;
}

double truncation_bound(const BilinearModel& model, double z_sup, const VectorXd& u,
                        TruncationNorm norm) {
  MatrixXd A;
  if (norm == TruncationNorm::ContinuousGenerator) {
    A = model.K();
    for (int i = 0; i < model.m(); ++i) A += u[i] * model.Q(i);
  } else {
    A = model.K_d;
    for (int i = 0; i < model.m(); ++i) A += u[i] * model.B[i];
  }
  const double L = A.jacobiSvd().singularValues()[0];
  const double p = L * z_sup;
  return p * L * model.T * model.T;
}

}  // namespace klc::edmd
