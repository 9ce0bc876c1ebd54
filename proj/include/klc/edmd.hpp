#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "klc/numerics.hpp"
#include "klc/sim.hpp"

namespace klc::edmd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Lifted bilinear one-step model z' = K_d z + sum_i B_i z u_i.
struct BilinearModel {
  int N = 0;
  double T = 0.0;
  MatrixXd K_d;
  std::vector<MatrixXd> B;
  bool pinv_fallback = false;

  int m() const { return static_cast<int>(B.size()); }
  // Continuous-time recovery.
  MatrixXd K() const { return (K_d - MatrixXd::Identity(N, N)) / T; }
  MatrixXd Q(int i) const { return B[i] / T; }
};

struct LinearModel {
  int N = 0;
  double T = 0.0;
  MatrixXd A_d;  // N x N
  MatrixXd B_d;  // N x m
  bool pinv_fallback = false;
};

using Lift = std::function<VectorXd(const VectorXd&)>;

// EDMD update: [K_d B_1 ... B_m] = beta Psi^T (Psi Psi^T)^{-1} with
// column k of Psi equal to (1; u_k) (x) z_k and column k of beta z_{k+1}.
BilinearModel fit_bilinear(const sim::Dataset& ds, const Lift& lift, int N);
BilinearModel fit_bilinear_lifted(const std::vector<VectorXd>& z0,
                                  const std::vector<VectorXd>& u,
                                  const std::vector<VectorXd>& z1, double T);

LinearModel fit_linear(const sim::Dataset& ds, const Lift& lift, int N);
LinearModel fit_linear_lifted(const std::vector<VectorXd>& z0,
                              const std::vector<VectorXd>& u,
                              const std::vector<VectorXd>& z1, double T);

VectorXd predict(const BilinearModel& model, const VectorXd& z, const VectorXd& u);

enum class TruncationNorm {
  ContinuousGenerator,  // L = ||K + sum_i Q_i u_i||_2 (default; see README)
  DiscretePrinted,      // L = ||K_d + sum_i B_i u_i||_2
};

// Local Euler truncation bound p*L*T^2 with p = L * sup_t ||z(t)||.
double truncation_bound(const BilinearModel& model, double z_sup, const VectorXd& u,
                        TruncationNorm norm = TruncationNorm::ContinuousGenerator);

}  // namespace klc::edmd
