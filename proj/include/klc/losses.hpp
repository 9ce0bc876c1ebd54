#pragma once

#include <optional>
#include <vector>

#include "klc/clf_expr.hpp"
#include "klc/edmd.hpp"
#include "klc/nets.hpp"
#include "klc/sim.hpp"
#include "klc/tape.hpp"

namespace klc::losses {

using Eigen::VectorXd;

struct LossWeights {
  double alpha1 = 0.001;  // reconstruction
  double alpha2 = 2.0;    // bilinear dynamics
  double alpha3 = 0.001;  // physics-informed
  double alpha4 = 1.0;    // control Lyapunov risk
  double gamma4 = 1.0;    // ROA scale
  bool roa_hinged = true;
  clf::StabilityOpts stability;
};

struct LossReport {
  double recons = 0, dyn = 0, phy = 0, lyap = 0, roa = 0, total = 0;
  int worst_index = -1;     // lyap sample with the largest hinge value
  double worst_margin = 0;
};

double weighted_total(const LossReport& r, const LossWeights& w);
LossReport total_loss(double recons, double dyn, double phy, double lyap,
                      double roa, const LossWeights& w);

// Direct (tape-free) evaluators; means run over valid transition pairs.
double loss_recons(const sim::Dataset& ds, const nets::NetworkBundle& bundle,
                   const VectorXd& theta);
double loss_dyn(const sim::Dataset& ds, const nets::NetworkBundle& bundle,
                const VectorXd& theta, const edmd::BilinearModel& model);
double loss_phy(const sim::Dataset& ds, const nets::NetworkBundle& bundle,
                const VectorXd& theta, const sim::Plant& plant);

// dV/dz . (K_d - I) z / T + dV/dz . sum_i B_i z u_i / T.
double lie_derivative(const nets::ClfSpec& clf, std::span<const double> clf_params,
                      const edmd::BilinearModel& model, const VectorXd& z,
                      const VectorXd& u);

struct LyapOpts {
  clf::UMode u_mode = clf::UMode::Sontag;
  clf::ClauseTols tols;
  double margin = 0.0;
  bool mlp_positivity = false;
  Box U;  // required for DatasetU counterexample handling
};

// Mean hinge over lifted samples plus V(0)^2. `us` supplies per-sample
// inputs in DatasetU mode (null or empty entries fall back to u = 0).
double loss_lyap(const std::vector<VectorXd>& zs, const std::vector<VectorXd>* us,
                 const nets::ClfSpec& clf, std::span<const double> clf_params,
                 const edmd::BilinearModel& model, const LyapOpts& opts);

double loss_lyap_exponential(const std::vector<VectorXd>& zs,
                             const std::vector<VectorXd>* us,
                             const nets::ClfSpec& clf,
                             std::span<const double> clf_params,
                             const edmd::BilinearModel& model, const LyapOpts& opts,
                             double gamma1, double gamma2, double gamma3);

double loss_roa(const std::vector<VectorXd>& zs, const nets::ClfSpec& clf,
                std::span<const double> clf_params, double gamma4, bool hinged);

struct TrainingOptions {
  LossWeights weights;
  clf::UMode u_mode = clf::UMode::Sontag;
  clf::ClauseTols tols;
  double train_hinge_margin = 0.0;
  double blackbox_fd_step = 1e-6;
};

// Persistent per-sample graphs for one (dataset, counterexample set):
// poke inputs, interpret forward, accumulate one joint reverse sweep for
// the full weighted objective. Counterexample states join only the
// Lyapunov and ROA sample sets.
class TrainingGraphs {
 public:
  TrainingGraphs(const sim::Plant& plant, const nets::NetworkBundle& bundle,
                 const sim::Dataset& ds, const std::vector<VectorXd>& cex_states,
                 const TrainingOptions& opts);

  LossReport evaluate(const VectorXd& theta, const edmd::BilinearModel& model,
                      VectorXd* grad);

  std::size_t node_count() const { return tape_.size(); }

 private:
  struct Range {
    ad::NodeId lo = 0, hi = 0;
  };

  const sim::Plant* plant_;
  nets::NetworkBundle bundle_;
  const sim::Dataset* ds_;
  std::vector<VectorXd> cex_states_;
  TrainingOptions opts_;

  ad::Tape tape_;
  std::vector<ad::NodeId> theta_nodes_;
  clf::ModelNodes model_nodes_;
  Range prelude_;
  ad::NodeId v0sq_ = 0;  // V(0)^2 (zero node for quadratic CLFs)

  Range recons_range_;
  std::vector<ad::NodeId> recons_x_;
  ad::NodeId recons_out_ = 0;

  Range pair_range_;
  std::vector<ad::NodeId> pair_xk_, pair_uk_, pair_xk1_;
  ad::NodeId dyn_out_ = 0, phy_out_ = 0;

  Range lyap_range_;
  std::vector<ad::NodeId> lyap_x_, lyap_u_;
  ad::NodeId lyap_out_ = 0, roa_out_ = 0;

  Range cex_range_;  // separate robust-clause graph (DatasetU mode only)
  std::vector<ad::NodeId> cex_x_;
  ad::NodeId cex_lyap_out_ = 0, cex_roa_out_ = 0;

  ad::NodeId graphs_start_ = 0;

  void build();
};

}  // namespace klc::losses
