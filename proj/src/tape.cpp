#include "klc/tape.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

namespace klc::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Var: return "var";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Tanh: return "tanh";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Abs: return "abs";
    case Op::Min: return "min";
    case Op::Max: return "max";
    case Op::Relu: return "relu";
    case Op::IfLe: return "if_le";
    case Op::Dot: return "dot";
    case Op::BlackStep: return "black_step";
  }
  return "?";
}

Tape::Tape() {
  zero_ = constant(0.0);
  one_ = constant(1.0);
}

NodeId Tape::push(Op op, std::initializer_list<NodeId> args, double payload) {
  NodeId id = static_cast<NodeId>(op_.size());
  op_.push_back(op);
  arg_off_.push_back(static_cast<std::uint32_t>(args_.size()));
  arg_cnt_.push_back(static_cast<std::uint32_t>(args.size()));
  for (NodeId a : args) args_.push_back(a);
  payload_.push_back(payload);
  val_.push_back(0.0);
  adj_.push_back(0.0);
  return id;
}

NodeId Tape::constant(double v) {
  NodeId id = push(Op::Const, {});
  val_[id] = v;
  return id;
}

NodeId Tape::var(double v) {
  NodeId id = push(Op::Var, {});
  val_[id] = v;
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) { return push(Op::Add, {a, b}); }
NodeId Tape::sub(NodeId a, NodeId b) { return push(Op::Sub, {a, b}); }
NodeId Tape::mul(NodeId a, NodeId b) { return push(Op::Mul, {a, b}); }
NodeId Tape::div(NodeId a, NodeId b) { return push(Op::Div, {a, b}); }
NodeId Tape::neg(NodeId a) { return push(Op::Neg, {a}); }
NodeId Tape::tanh_(NodeId a) { return push(Op::Tanh, {a}); }
NodeId Tape::sqrt_(NodeId a) { return push(Op::Sqrt, {a}); }
NodeId Tape::square(NodeId a) { return push(Op::Square, {a}); }
NodeId Tape::abs_(NodeId a) { return push(Op::Abs, {a}); }
NodeId Tape::min_(NodeId a, NodeId b) { return push(Op::Min, {a, b}); }
NodeId Tape::max_(NodeId a, NodeId b) { return push(Op::Max, {a, b}); }
NodeId Tape::relu(NodeId a) { return push(Op::Relu, {a}); }

NodeId Tape::if_le(NodeId p, double threshold, NodeId a, NodeId b) {
  return push(Op::IfLe, {p, a, b}, threshold);
}

NodeId Tape::dot(std::span<const NodeId> as, std::span<const NodeId> bs) {
  if (as.size() != bs.size() || as.empty()) {
    throw std::invalid_argument("Tape::dot: mismatched or empty spans");
  }
  NodeId id = static_cast<NodeId>(op_.size());
  op_.push_back(Op::Dot);
  arg_off_.push_back(static_cast<std::uint32_t>(args_.size()));
  arg_cnt_.push_back(static_cast<std::uint32_t>(2 * as.size()));
  for (std::size_t i = 0; i < as.size(); ++i) {
    args_.push_back(as[i]);
    args_.push_back(bs[i]);
  }
  payload_.push_back(0.0);
  val_.push_back(0.0);
  adj_.push_back(0.0);
  return id;
}

NodeId Tape::affine(std::span<const NodeId> w, std::span<const NodeId> x, NodeId b) {
  if (w.size() != x.size()) throw std::invalid_argument("Tape::affine: size mismatch");
  NodeId id = static_cast<NodeId>(op_.size());
  op_.push_back(Op::Dot);
  arg_off_.push_back(static_cast<std::uint32_t>(args_.size()));
  arg_cnt_.push_back(static_cast<std::uint32_t>(2 * (w.size() + 1)));
  for (std::size_t i = 0; i < w.size(); ++i) {
    args_.push_back(w[i]);
    args_.push_back(x[i]);
  }
  args_.push_back(b);
  args_.push_back(one_);
  payload_.push_back(0.0);
  val_.push_back(0.0);
  adj_.push_back(0.0);
  return id;
}

std::vector<NodeId> Tape::black_step(BlackFn fn, std::span<const NodeId> x,
                                     std::span<const NodeId> extra, int n_out,
                                     double fd_step) {
  BlackCtx ctx;
  ctx.fn = std::move(fn);
  ctx.n_in = static_cast<int>(x.size());
  ctx.n_extra = static_cast<int>(extra.size());
  ctx.n_out = n_out;
  ctx.fd_step = fd_step;
  ctx.first_out = static_cast<NodeId>(op_.size());
  const double ctx_idx = static_cast<double>(black_.size());

  std::vector<NodeId> outs;
  outs.reserve(n_out);
  for (int j = 0; j < n_out; ++j) {
    NodeId id = static_cast<NodeId>(op_.size());
    op_.push_back(Op::BlackStep);
    arg_off_.push_back(static_cast<std::uint32_t>(args_.size()));
    arg_cnt_.push_back(static_cast<std::uint32_t>(x.size() + extra.size()));
    for (NodeId a : x) args_.push_back(a);
    for (NodeId a : extra) args_.push_back(a);
    payload_.push_back(ctx_idx);
    val_.push_back(0.0);
    adj_.push_back(0.0);
    outs.push_back(id);
  }
  black_.push_back(std::move(ctx));
  return outs;
}

void Tape::eval_black(BlackCtx& ctx) {
  const std::uint32_t off = arg_off_[ctx.first_out];
  Eigen::VectorXd x(ctx.n_in), extra(ctx.n_extra);
  for (int i = 0; i < ctx.n_in; ++i) x[i] = val_[args_[off + i]];
  for (int i = 0; i < ctx.n_extra; ++i) extra[i] = val_[args_[off + ctx.n_in + i]];
  ctx.y = ctx.fn(x, extra);
  ctx.jac.resize(ctx.n_out, ctx.n_in);
  Eigen::VectorXd xp = x;
  for (int i = 0; i < ctx.n_in; ++i) {
    const double h = ctx.fd_step * (1.0 + std::abs(x[i]));
    xp[i] = x[i] + h;
    Eigen::VectorXd yp = ctx.fn(xp, extra);
    xp[i] = x[i] - h;
    Eigen::VectorXd ym = ctx.fn(xp, extra);
    xp[i] = x[i];
    ctx.jac.col(i) = (yp - ym) / (2.0 * h);
  }
  ctx.stamp = pass_stamp_;
}

void Tape::forward(NodeId lo, NodeId hi) {
  ++pass_stamp_;
  for (NodeId i = lo; i < hi; ++i) {
    const std::uint32_t off = arg_off_[i];
    const NodeId* a = args_.data() + off;
    switch (op_[i]) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add: val_[i] = val_[a[0]] + val_[a[1]]; break;
      case Op::Sub: val_[i] = val_[a[0]] - val_[a[1]]; break;
      case Op::Mul: val_[i] = val_[a[0]] * val_[a[1]]; break;
      case Op::Div: val_[i] = val_[a[0]] / val_[a[1]]; break;
      case Op::Neg: val_[i] = -val_[a[0]]; break;
      case Op::Tanh: val_[i] = std::tanh(val_[a[0]]); break;
      case Op::Sqrt: val_[i] = std::sqrt(std::max(0.0, val_[a[0]])); break;
      case Op::Square: {
        const double v = val_[a[0]];
        val_[i] = v * v;
        break;
      }
      case Op::Abs: val_[i] = std::abs(val_[a[0]]); break;
      case Op::Min: val_[i] = std::min(val_[a[0]], val_[a[1]]); break;
      case Op::Max: val_[i] = std::max(val_[a[0]], val_[a[1]]); break;
      case Op::Relu: val_[i] = std::max(0.0, val_[a[0]]); break;
      case Op::IfLe:
        val_[i] = (val_[a[0]] <= payload_[i]) ? val_[a[1]] : val_[a[2]];
        break;
      case Op::Dot: {
        double s = 0.0;
        const std::uint32_t cnt = arg_cnt_[i];
        for (std::uint32_t k = 0; k < cnt; k += 2) s += val_[a[k]] * val_[a[k + 1]];
        val_[i] = s;
        break;
      }
      case Op::BlackStep: {
        BlackCtx& ctx = black_[static_cast<std::size_t>(payload_[i])];
        if (ctx.stamp != pass_stamp_) eval_black(ctx);
        val_[i] = ctx.y[i - ctx.first_out];
        break;
      }
    }
  }
}

void Tape::reverse(NodeId lo, NodeId hi) {
  for (NodeId i = hi; i-- > lo;) {
    const double g = adj_[i];
    if (g == 0.0) continue;
    const std::uint32_t off = arg_off_[i];
    const NodeId* a = args_.data() + off;
    switch (op_[i]) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add:
        adj_[a[0]] += g;
        adj_[a[1]] += g;
        break;
      case Op::Sub:
        adj_[a[0]] += g;
        adj_[a[1]] -= g;
        break;
      case Op::Mul:
        adj_[a[0]] += g * val_[a[1]];
        adj_[a[1]] += g * val_[a[0]];
        break;
      case Op::Div: {
        const double bv = val_[a[1]];
        adj_[a[0]] += g / bv;
        adj_[a[1]] -= g * val_[i] / bv;
        break;
      }
      case Op::Neg: adj_[a[0]] -= g; break;
      case Op::Tanh: adj_[a[0]] += g * (1.0 - val_[i] * val_[i]); break;
      case Op::Sqrt:
        if (val_[i] > 0.0) adj_[a[0]] += g * 0.5 / val_[i];
        break;
      case Op::Square: adj_[a[0]] += g * 2.0 * val_[a[0]]; break;
      case Op::Abs:
        adj_[a[0]] += (val_[a[0]] <= 0.0) ? -g : g;
        break;
      case Op::Min:
        adj_[(val_[a[0]] <= val_[a[1]]) ? a[0] : a[1]] += g;
        break;
      case Op::Max:
        adj_[(val_[a[0]] >= val_[a[1]]) ? a[0] : a[1]] += g;
        break;
      case Op::Relu:
        if (val_[a[0]] > 0.0) adj_[a[0]] += g;
        break;
      case Op::IfLe:
        adj_[(val_[a[0]] <= payload_[i]) ? a[1] : a[2]] += g;
        break;
      case Op::Dot: {
        const std::uint32_t cnt = arg_cnt_[i];
        for (std::uint32_t k = 0; k < cnt; k += 2) {
          adj_[a[k]] += g * val_[a[k + 1]];
          adj_[a[k + 1]] += g * val_[a[k]];
        }
        break;
      }
      case Op::BlackStep: {
        const BlackCtx& ctx = black_[static_cast<std::size_t>(payload_[i])];
        const int row = static_cast<int>(i - ctx.first_out);
        for (int k = 0; k < ctx.n_in; ++k) adj_[a[k]] += g * ctx.jac(row, k);
        break;
      }
    }
  }
}

void Tape::zero_adj(NodeId lo, NodeId hi) {
  std::fill(adj_.begin() + lo, adj_.begin() + hi, 0.0);
}

void Tape::check_finite(NodeId lo, NodeId hi) const {
  for (NodeId i = lo; i < hi; ++i) {
    if (!std::isfinite(val_[i])) {
      throw GradientOverflow(i, std::string("non-finite value at node ") +
                                    std::to_string(i) + " (" + op_name(op_[i]) + ")");
    }
  }
}

std::vector<NodeId> Tape::grad_nodes(NodeId y, std::span<const NodeId> wrt) {
  const NodeId n = static_cast<NodeId>(y + 1);
  // dep[i]: i depends on some wrt node; anc[i]: y depends on i.
  std::vector<char> dep(n, 0), anc(n, 0);
  for (NodeId w : wrt) {
    if (w >= n) throw std::invalid_argument("grad_nodes: wrt above output");
    dep[w] = 1;
  }
  std::vector<char> is_wrt(n, 0);
  for (NodeId w : wrt) is_wrt[w] = 1;
  for (NodeId i = 0; i < n; ++i) {
    if (dep[i]) continue;
    const std::uint32_t off = arg_off_[i], cnt = arg_cnt_[i];
    for (std::uint32_t k = 0; k < cnt; ++k) {
      if (args_[off + k] < n && dep[args_[off + k]]) {
        dep[i] = 1;
        break;
      }
    }
  }
  anc[y] = 1;
  for (NodeId i = n; i-- > 0;) {
    if (!anc[i]) continue;
    const std::uint32_t off = arg_off_[i], cnt = arg_cnt_[i];
    for (std::uint32_t k = 0; k < cnt; ++k) {
      if (args_[off + k] < n) anc[args_[off + k]] = 1;
    }
  }

  constexpr NodeId kNone = ~NodeId(0);
  std::vector<NodeId> abar(n, kNone);
  abar[y] = one_;
  auto accum = [&](NodeId target, NodeId term) {
    if (!(dep[target] && anc[target])) return;
    abar[target] = (abar[target] == kNone) ? term : add(abar[target], term);
  };

  for (NodeId i = n; i-- > 0;) {
    if (abar[i] == kNone || is_wrt[i]) continue;
    const NodeId g = abar[i];
    const std::uint32_t off = arg_off_[i];
    const NodeId* a = args_.data() + off;
    switch (op_[i]) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add:
        accum(a[0], g);
        accum(a[1], g);
        break;
      case Op::Sub:
        accum(a[0], g);
        if (dep[a[1]] && anc[a[1]]) accum(a[1], neg(g));
        break;
      case Op::Mul:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], mul(g, a[1]));
        if (dep[a[1]] && anc[a[1]]) accum(a[1], mul(g, a[0]));
        break;
      case Op::Div:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], div(g, a[1]));
        if (dep[a[1]] && anc[a[1]]) accum(a[1], neg(div(mul(g, i), a[1])));
        break;
      case Op::Neg:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], neg(g));
        break;
      case Op::Tanh:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], mul(g, sub(one_, square(i))));
        break;
      case Op::Sqrt:
        if (dep[a[0]] && anc[a[0]]) {
          NodeId half = constant(0.5);
          accum(a[0], if_le(a[0], 0.0, zero_, div(mul(half, g), i)));
        }
        break;
      case Op::Square:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], mul(g, mul(constant(2.0), a[0])));
        break;
      case Op::Abs:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], if_le(a[0], 0.0, neg(g), g));
        break;
      case Op::Min: {
        NodeId d = sub(a[0], a[1]);
        if (dep[a[0]] && anc[a[0]]) accum(a[0], if_le(d, 0.0, g, zero_));
        if (dep[a[1]] && anc[a[1]]) accum(a[1], if_le(d, 0.0, zero_, g));
        break;
      }
      case Op::Max: {
        NodeId d = sub(a[1], a[0]);
        if (dep[a[0]] && anc[a[0]]) accum(a[0], if_le(d, 0.0, g, zero_));
        if (dep[a[1]] && anc[a[1]]) accum(a[1], if_le(d, 0.0, zero_, g));
        break;
      }
      case Op::Relu:
        if (dep[a[0]] && anc[a[0]]) accum(a[0], if_le(a[0], 0.0, zero_, g));
        break;
      case Op::IfLe:
        if (dep[a[1]] && anc[a[1]]) accum(a[1], if_le(a[0], payload_[i], g, zero_));
        if (dep[a[2]] && anc[a[2]]) accum(a[2], if_le(a[0], payload_[i], zero_, g));
        break;
      case Op::Dot: {
        const std::uint32_t cnt = arg_cnt_[i];
        for (std::uint32_t k = 0; k < cnt; k += 2) {
          NodeId x = a[k], w = a[k + 1];
          if (dep[x] && anc[x]) accum(x, mul(g, w));
          if (dep[w] && anc[w]) accum(w, mul(g, x));
        }
        break;
      }
      case Op::BlackStep:
        throw std::logic_error("grad_nodes through a black-box step is unsupported");
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) out.push_back(abar[w] == kNone ? zero_ : abar[w]);
  return out;
}

namespace {

inline Interval pad(double lo, double hi) {
  constexpr double rel = 4.0 * DBL_EPSILON;
  constexpr double abs_eps = 1e-308;
  return {lo - rel * std::abs(lo) - abs_eps, hi + rel * std::abs(hi) + abs_eps};
}

inline Interval ihull(Interval a, Interval b) {
  return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

inline Interval imul(Interval a, Interval b) {
  const double p1 = a.lo * b.lo, p2 = a.lo * b.hi, p3 = a.hi * b.lo, p4 = a.hi * b.hi;
  return pad(std::min(std::min(p1, p2), std::min(p3, p4)),
             std::max(std::max(p1, p2), std::max(p3, p4)));
}

}  // namespace

void Tape::reset_intervals() {
  ival_.assign(op_.size(), Interval{0.0, 0.0});
  for (std::size_t i = 0; i < op_.size(); ++i) {
    if (op_[i] == Op::Const || op_[i] == Op::Var) ival_[i] = {val_[i], val_[i]};
  }
}

void Tape::forward_interval(NodeId lo, NodeId hi) {
  if (ival_.size() != op_.size()) reset_intervals();
  interval_div_zero_ = false;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (NodeId i = lo; i < hi; ++i) {
    const std::uint32_t off = arg_off_[i];
    const NodeId* a = args_.data() + off;
    switch (op_[i]) {
      case Op::Const:
      case Op::Var:
        break;
      case Op::Add:
        ival_[i] = pad(ival_[a[0]].lo + ival_[a[1]].lo, ival_[a[0]].hi + ival_[a[1]].hi);
        break;
      case Op::Sub:
        ival_[i] = pad(ival_[a[0]].lo - ival_[a[1]].hi, ival_[a[0]].hi - ival_[a[1]].lo);
        break;
      case Op::Mul:
        ival_[i] = imul(ival_[a[0]], ival_[a[1]]);
        break;
      case Op::Div: {
        const Interval b = ival_[a[1]];
        if (b.lo <= 0.0 && b.hi >= 0.0) {
          interval_div_zero_ = true;
          ival_[i] = {-inf, inf};
        } else {
          ival_[i] = imul(ival_[a[0]], pad(1.0 / b.hi, 1.0 / b.lo));
        }
        break;
      }
      case Op::Neg:
        ival_[i] = {-ival_[a[0]].hi, -ival_[a[0]].lo};
        break;
      case Op::Tanh:
        ival_[i] = pad(std::tanh(ival_[a[0]].lo), std::tanh(ival_[a[0]].hi));
        break;
      case Op::Sqrt: {
        const Interval v = ival_[a[0]];
        ival_[i] = pad(std::sqrt(std::max(0.0, v.lo)), std::sqrt(std::max(0.0, v.hi)));
        ival_[i].lo = std::max(0.0, ival_[i].lo);
        break;
      }
      case Op::Square: {
        const Interval v = ival_[a[0]];
        if (v.lo >= 0.0) ival_[i] = pad(v.lo * v.lo, v.hi * v.hi);
        else if (v.hi <= 0.0) ival_[i] = pad(v.hi * v.hi, v.lo * v.lo);
        else ival_[i] = pad(0.0, std::max(v.lo * v.lo, v.hi * v.hi));
        ival_[i].lo = std::max(0.0, ival_[i].lo);
        break;
      }
      case Op::Abs: {
        const Interval v = ival_[a[0]];
        if (v.lo >= 0.0) ival_[i] = v;
        else if (v.hi <= 0.0) ival_[i] = {-v.hi, -v.lo};
        else ival_[i] = {0.0, std::max(-v.lo, v.hi)};
        break;
      }
      case Op::Min:
        ival_[i] = {std::min(ival_[a[0]].lo, ival_[a[1]].lo),
                    std::min(ival_[a[0]].hi, ival_[a[1]].hi)};
        break;
      case Op::Max:
        ival_[i] = {std::max(ival_[a[0]].lo, ival_[a[1]].lo),
                    std::max(ival_[a[0]].hi, ival_[a[1]].hi)};
        break;
      case Op::Relu:
        ival_[i] = {std::max(0.0, ival_[a[0]].lo), std::max(0.0, ival_[a[0]].hi)};
        break;
      case Op::IfLe: {
        const Interval p = ival_[a[0]];
        if (p.hi <= payload_[i]) ival_[i] = ival_[a[1]];
        else if (p.lo > payload_[i]) ival_[i] = ival_[a[2]];
        else ival_[i] = ihull(ival_[a[1]], ival_[a[2]]);
        break;
      }
      case Op::Dot: {
        Interval s{0.0, 0.0};
        const std::uint32_t cnt = arg_cnt_[i];
        for (std::uint32_t k = 0; k < cnt; k += 2) {
          const Interval p = imul(ival_[a[k]], ival_[a[k + 1]]);
          s = pad(s.lo + p.lo, s.hi + p.hi);
        }
        ival_[i] = s;
        break;
      }
      case Op::BlackStep:
        throw std::logic_error("interval evaluation through a black-box step");
    }
  }
}

}  // namespace klc::ad
