#pragma once

#include <string>
#include <vector>

#include "klc/box.hpp"
#include "klc/edmd.hpp"
#include "klc/nets.hpp"
#include "klc/tape.hpp"

namespace klc::clf {

// Input used when evaluating the Lie derivative during training and
// falsification: the current Sontag feedback, or the dataset inputs
// (falsified as "no admissible input works", i.e. min over U).
enum class UMode { Sontag, DatasetU };

struct StabilityOpts {
  bool exponential = false;
  double gamma1 = 0.1, gamma2 = 10.0, gamma3 = 0.5;
};

struct ClauseTols {
  double tau_sigma = 1e-6;  // sigma considered zero below this
  double tau_a = 1e-6;      // slack on the drift term sign
};

// Mutable-constant nodes for the fitted model, poked once per refresh.
// Carries both the discrete matrices (K_d, B_i) and the continuous
// recovery (K, Q_i) so dynamics and Lie-derivative subgraphs share them.
struct ModelNodes {
  int N = 0, m = 0;
  std::vector<ad::NodeId> K_d, K;               // row-major N x N
  std::vector<std::vector<ad::NodeId>> B, Q;    // per input, row-major N x N
  void poke(ad::Tape& tape, const edmd::BilinearModel& model) const;
};

ModelNodes make_model_nodes(ad::Tape& tape, int N, int m);

// Raw encoder output at the origin; z = Phi(x) - Phi(0) everywhere.
std::vector<ad::NodeId> build_encoder_prelude(ad::Tape& tape,
                                              const nets::NetworkBundle& bundle,
                                              std::span<const ad::NodeId> enc_params);

// Stability quantities for one state sample.
struct ClfSample {
  std::vector<ad::NodeId> x;     // leaves
  std::vector<ad::NodeId> z;     // shifted lift
  ad::NodeId z_sq = 0;           // sum z_i^2
  ad::NodeId V = 0;
  std::vector<ad::NodeId> dVdz;
  ad::NodeId a = 0;              // dV/dz . K z
  std::vector<ad::NodeId> c;     // dV/dz . Q_i z
  ad::NodeId sigma = 0;          // sum c_i^2
};

ClfSample build_clf_sample(ad::Tape& tape, const nets::NetworkBundle& bundle,
                           std::span<const ad::NodeId> enc_params,
                           std::span<const ad::NodeId> clf_params,
                           std::span<const ad::NodeId> phi0,
                           const ModelNodes& model);

// Same, but on an externally supplied lift (e.g. z = x for identity lifts).
ClfSample finish_clf_sample(ad::Tape& tape, const nets::ClfSpec& clf,
                            std::span<const ad::NodeId> clf_params,
                            std::vector<ad::NodeId> x, std::vector<ad::NodeId> z,
                            const ModelNodes& model);

// Lie derivative under the configured input choice. For Sontag feedback the
// closed-loop value is a when sigma <= tau_sigma (the u = 0 branch) and
// -sqrt(a^2 + sigma^2) otherwise.
ad::NodeId build_vdot_sontag(ad::Tape& tape, const ClfSample& s, const ClauseTols& tols);
ad::NodeId build_vdot_with_u(ad::Tape& tape, const ClfSample& s,
                             std::span<const ad::NodeId> u);
// min over u in U of the Lie derivative (linear in u).
ad::NodeId build_vdot_min_over_u(ad::Tape& tape, const ClfSample& s, const Box& U);

struct HingeOpts {
  UMode u_mode = UMode::Sontag;
  bool robust_u = false;  // counterexample samples in DatasetU mode
  ClauseTols tols;
  double margin = 0.0;    // extra slack trained into the hinge
  bool mlp_positivity = false;  // add max(0, -V) for MLP-parameterized CLFs
  StabilityOpts stability;
  Box U;                  // needed when robust_u
};

// Per-sample Lyapunov-risk contribution (the V(0)^2 term is global and is
// handled by the caller). `u` leaves are consumed only in DatasetU mode.
ad::NodeId build_lyap_term(ad::Tape& tape, const ClfSample& s,
                           std::span<const ad::NodeId> u, const HingeOpts& opts);

// ROA contribution: hinged max(0, ||z|| - gamma4 V) or the literal
// difference ||z|| - gamma4 V.
ad::NodeId build_roa_term(ad::Tape& tape, const ClfSample& s, double gamma4,
                          bool hinged);

// Falsifier clause expressions: a state violates the certificate iff
// z_sq >= epsilon and some expression is >= 0.
struct Clause {
  ad::NodeId expr = 0;
  std::string name;
};

std::vector<Clause> build_clauses(ad::Tape& tape, const ClfSample& s,
                                  const HingeOpts& opts);

}  // namespace klc::clf
