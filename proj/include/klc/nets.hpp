#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "klc/tape.hpp"

namespace klc::nets {

using Eigen::VectorXd;

// Fully connected tanh network. widths = {input, hidden..., output};
// every layer applies tanh unless `linear_output` exempts the last one.
struct MlpSpec {
  std::vector<int> widths;
  bool linear_output = false;

  int input() const { return widths.front(); }
  int output() const { return widths.back(); }
  std::size_t param_count() const;
};

// Weights then biases, layer by layer, in one flat vector.
VectorXd init_params(const MlpSpec& spec, std::uint64_t seed);

VectorXd forward(const MlpSpec& spec, std::span<const double> params,
                 const VectorXd& x);

// Tape builder mirroring forward() exactly (same accumulation order).
std::vector<ad::NodeId> build_mlp(ad::Tape& tape, const MlpSpec& spec,
                                  std::span<const ad::NodeId> params,
                                  std::span<const ad::NodeId> x);

// V(z) = z^T (gamma I + W(z)^T W(z)) z with W(z) an n_w x N network output.
// Positive definite by construction.
struct QuadraticClfSpec {
  double gamma = 0.1;
  int n_w = 0;
  MlpSpec w_net;  // N -> n_w*N entries, row-major
};

struct MlpClfSpec {
  MlpSpec net;  // N -> 1
};

using ClfSpec = std::variant<QuadraticClfSpec, MlpClfSpec>;

std::size_t clf_param_count(const ClfSpec& clf);
int clf_input_dim(const ClfSpec& clf);
VectorXd clf_init_params(const ClfSpec& clf, std::uint64_t seed);

double clf_eval(const ClfSpec& clf, std::span<const double> params,
                const VectorXd& z);

ad::NodeId build_clf(ad::Tape& tape, const ClfSpec& clf,
                     std::span<const ad::NodeId> params,
                     std::span<const ad::NodeId> z);

// dV/dx of a scalar-output network at x; grad_nodes-based, so the same
// construction stays differentiable with respect to parameters when
// embedded in a larger graph.
VectorXd input_gradient(const MlpSpec& spec, std::span<const double> params,
                        const VectorXd& x);
VectorXd clf_input_gradient(const ClfSpec& clf, std::span<const double> params,
                            const VectorXd& z);

// Gradient of a recorded scalar loss with respect to the given parameter
// nodes. Throws GradientOverflow on non-finite intermediates.
VectorXd param_gradient(ad::Tape& tape, ad::NodeId loss,
                        std::span<const ad::NodeId> params);

struct AdamState {
  VectorXd m, v;
  long t = 0;
};

void adam_step(AdamState& state, VectorXd& params, const VectorXd& grad,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Encoder / decoder / CLF with one flat parameter vector.
struct NetworkBundle {
  MlpSpec encoder;   // n -> N, tanh head
  MlpSpec decoder;   // N -> n, linear head by default
  ClfSpec clf;
  int n = 0, N = 0;

  std::size_t enc_offset() const { return 0; }
  std::size_t dec_offset() const { return encoder.param_count(); }
  std::size_t clf_offset() const {
    return encoder.param_count() + decoder.param_count();
  }
  std::size_t total_params() const {
    return clf_offset() + clf_param_count(clf);
  }

  std::span<const double> enc_params(const VectorXd& theta) const {
    return {theta.data() + enc_offset(), encoder.param_count()};
  }
  std::span<const double> dec_params(const VectorXd& theta) const {
    return {theta.data() + dec_offset(), decoder.param_count()};
  }
  std::span<const double> clf_params(const VectorXd& theta) const {
    return {theta.data() + clf_offset(), clf_param_count(clf)};
  }
};

VectorXd init_bundle_params(const NetworkBundle& bundle, std::uint64_t seed);

// Shifted lift z = Phi(x) - Phi(0): the lifted equilibrium is exactly 0.
VectorXd lift(const NetworkBundle& bundle, const VectorXd& theta,
              const VectorXd& x);

}  // namespace klc::nets
