#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace klc::ad {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  Const,
  Var,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Tanh,
  Sqrt,
  Square,
  Abs,
  Min,
  Max,
  Relu,    // max(0, x)
  IfLe,    // args (p, a, b): value of a if p <= threshold else b
  Dot,     // args (a0,b0,a1,b1,...): sum of val[a_i]*val[b_i]
  BlackStep,  // one output of an opaque vector map; reverse uses a cached
              // finite-difference Jacobian
};

const char* op_name(Op op);

struct Interval {
  double lo = 0.0, hi = 0.0;
};

struct GradientOverflow : std::runtime_error {
  NodeId node;
  GradientOverflow(NodeId id, const std::string& what)
      : std::runtime_error(what), node(id) {}
};

// Flat computation graph over scalars. The same node list is interpreted
// three ways: forward values, reverse adjoints (numeric), and natural
// interval extension. Gradients can also be *constructed as nodes*
// (grad_nodes), which is what makes expressions like the input gradient of
// a network differentiable in turn.
class Tape {
 public:
  using BlackFn =
      std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

  Tape();

  NodeId constant(double v);
  NodeId var(double v = 0.0);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId neg(NodeId a);
  NodeId tanh_(NodeId a);
  NodeId sqrt_(NodeId a);
  NodeId square(NodeId a);
  NodeId abs_(NodeId a);
  NodeId min_(NodeId a, NodeId b);
  NodeId max_(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  NodeId if_le(NodeId p, double threshold, NodeId a, NodeId b);
  NodeId dot(std::span<const NodeId> as, std::span<const NodeId> bs);
  // b + sum_i w[i]*x[i]
  NodeId affine(std::span<const NodeId> w, std::span<const NodeId> x, NodeId b);
  // n_out consecutive nodes for y = fn(x, extra); only x is differentiated,
  // via a central finite-difference Jacobian refreshed on every forward pass.
  std::vector<NodeId> black_step(BlackFn fn, std::span<const NodeId> x,
                                 std::span<const NodeId> extra, int n_out,
                                 double fd_step = 1e-6);

  NodeId zero() const { return zero_; }
  NodeId one() const { return one_; }
  std::size_t size() const { return op_.size(); }
  Op op(NodeId i) const { return op_[i]; }

  double val(NodeId i) const { return val_[i]; }
  void set_val(NodeId i, double v) { val_[i] = v; }
  double adj(NodeId i) const { return adj_[i]; }
  void add_adj(NodeId i, double v) { adj_[i] += v; }

  // Recompute values of nodes in [lo, hi); leaves keep their poked values.
  void forward(NodeId lo, NodeId hi);
  void forward_all() { forward(0, static_cast<NodeId>(size())); }

  // Propagate adjoints from hi-1 down to lo. Contributions written to args
  // below lo accumulate there and can be propagated by a later call.
  void reverse(NodeId lo, NodeId hi);
  void zero_adj(NodeId lo, NodeId hi);

  // Gradient of y with respect to `wrt`, built as new tape nodes. `wrt`
  // nodes act as independent leaves of this derivative (paths below them
  // are not traversed), so d y / d wrt is a partial derivative even when
  // wrt nodes are interior. Entries untouched by y map to the zero node.
  std::vector<NodeId> grad_nodes(NodeId y, std::span<const NodeId> wrt);

  // Interval interpretation over [lo, hi); leaf intervals must be poked
  // first (Const nodes default to their value).
  void forward_interval(NodeId lo, NodeId hi);
  Interval ival(NodeId i) const { return ival_[i]; }
  void set_ival(NodeId i, Interval v) { ival_[i] = v; }
  void reset_intervals();  // size ival_ storage, consts to point intervals
  bool interval_div_by_zero() const { return interval_div_zero_; }

  // First non-finite value in [lo, hi), if any.
  void check_finite(NodeId lo, NodeId hi) const;

 private:
  NodeId push(Op op, std::initializer_list<NodeId> args, double payload = 0.0);

  std::vector<Op> op_;
  std::vector<std::uint32_t> arg_off_;
  std::vector<std::uint32_t> arg_cnt_;
  std::vector<NodeId> args_;
  std::vector<double> payload_;
  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<Interval> ival_;

  struct BlackCtx {
    BlackFn fn;
    int n_in = 0, n_extra = 0, n_out = 0;
    NodeId first_out = 0;
    double fd_step = 1e-6;
    Eigen::VectorXd y;
    Eigen::MatrixXd jac;  // n_out x n_in
    std::uint64_t stamp = ~0ull;
  };
  std::vector<BlackCtx> black_;
  std::uint64_t pass_stamp_ = 0;
  bool interval_div_zero_ = false;

  NodeId zero_ = 0, one_ = 0;

  void eval_black(BlackCtx& ctx);
};

}  // namespace klc::ad
