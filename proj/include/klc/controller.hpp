#pragma once

#include <string>
#include <vector>

#include "klc/clf_expr.hpp"
#include "klc/edmd.hpp"
#include "klc/nets.hpp"
#include "klc/sim.hpp"

namespace klc::ctrl {

using Eigen::VectorXd;

struct SontagTerms {
  double a = 0.0;   // dV/dz . K z
  VectorXd c;       // c_i = dV/dz . Q_i z
  double sigma = 0.0;  // sum c_i^2
};

SontagTerms sontag_terms(const nets::ClfSpec& clf, std::span<const double> clf_params,
                         const edmd::BilinearModel& model, const VectorXd& z);

// u_i = -c_i (a + sqrt(a^2 + sigma^2)) / sigma when sigma exceeds tau_sigma,
// zero otherwise.
VectorXd sontag_control(const SontagTerms& t, double tau_sigma = 1e-9);

// Frozen encoder + CLF + model compiled once; evaluated per state along a
// rollout.
class ClosedLoopEvaluator {
 public:
  ClosedLoopEvaluator(const nets::NetworkBundle& bundle, const VectorXd& theta,
                      const edmd::BilinearModel& model);

  struct Eval {
    VectorXd z;
    double V = 0.0;
    double a = 0.0;
    VectorXd c;
    double sigma = 0.0;
  };
  Eval eval(const VectorXd& x);

 private:
  ad::Tape tape_;
  clf::ClfSample sample_;
  ad::NodeId eval_lo_ = 0;
};

struct StepResult {
  VectorXd u;
  VectorXd x_next;
  double V = 0.0, a = 0.0, sigma = 0.0;
  bool clipped = false;
  bool exited = false;
};

StepResult closed_loop_step(const sim::Plant& plant, ClosedLoopEvaluator& eval,
                            const VectorXd& x, double T, double tau_sigma = 1e-9);

struct Rollout {
  enum class Status { Converged, Horizon, Diverged, DomainExit };
  std::vector<double> t;
  std::vector<VectorXd> x;          // visited states (len L+1)
  std::vector<VectorXd> u;          // applied inputs (len L)
  std::vector<double> V, a, sigma;  // evaluated at each visited state
  Status status = Status::Horizon;

  double final_norm() const { return x.empty() ? 0.0 : x.back().norm(); }
};

const char* status_name(Rollout::Status s);

struct RolloutOpts {
  double T = 0.005;
  std::size_t horizon_steps = 2000;
  double stop_tol = 0.02;
  double tau_sigma = 1e-9;
  bool stop_on_exit = false;   // domain exits are recorded either way
  bool uncontrolled = false;   // open loop, u = 0
};

// evaluator may be null only when opts.uncontrolled is set.
Rollout rollout(const sim::Plant& plant, ClosedLoopEvaluator* eval,
                const VectorXd& x0, const RolloutOpts& opts);

void save_rollout_csv(const Rollout& r, const std::string& path);

}  // namespace klc::ctrl
