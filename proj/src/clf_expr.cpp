#include "klc/clf_expr.hpp"

namespace klc::clf {

using ad::NodeId;
using ad::Tape;

ModelNodes make_model_nodes(Tape& tape, int N, int m) {
  ModelNodes mn;
  mn.N = N;
  mn.m = m;
  auto block = [&] {
    std::vector<NodeId> ids(static_cast<std::size_t>(N) * N);
    for (auto& id : ids) id = tape.constant(0.0);
    return ids;
  };
  mn.K_d = block();
  mn.K = block();
  for (int i = 0; i < m; ++i) {
    mn.B.push_back(block());
    mn.Q.push_back(block());
  }
  return mn;
}

void ModelNodes::poke(Tape& tape, const edmd::BilinearModel& model) const {
  const Eigen::MatrixXd Kc = model.K();
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < N; ++c) {
      tape.set_val(K_d[static_cast<std::size_t>(r) * N + c], model.K_d(r, c));
      tape.set_val(K[static_cast<std::size_t>(r) * N + c], Kc(r, c));
    }
  }
  for (int i = 0; i < m; ++i) {
    const Eigen::MatrixXd Qi = model.Q(i);
    for (int r = 0; r < N; ++r) {
      for (int c = 0; c < N; ++c) {
        tape.set_val(B[i][static_cast<std::size_t>(r) * N + c], model.B[i](r, c));
        tape.set_val(Q[i][static_cast<std::size_t>(r) * N + c], Qi(r, c));
      }
    }
  }
}

std::vector<NodeId> build_encoder_prelude(Tape& tape, const nets::NetworkBundle& bundle,
                                          std::span<const NodeId> enc_params) {
  std::vector<NodeId> zero_in(bundle.n, tape.zero());
  return nets::build_mlp(tape, bundle.encoder, enc_params, zero_in);
}

namespace {

// y = M x with M given as row-major constant nodes.
std::vector<NodeId> matvec(Tape& tape, const std::vector<NodeId>& M, int N,
                           std::span<const NodeId> x) {
  std::vector<NodeId> y(N);
  for (int r = 0; r < N; ++r) {
    std::span<const NodeId> row{M.data() + static_cast<std::size_t>(r) * N,
                                static_cast<std::size_t>(N)};
    y[r] = tape.dot(row, x);
  }
  return y;
}

}  // namespace

ClfSample finish_clf_sample(Tape& tape, const nets::ClfSpec& clf,
                            std::span<const NodeId> clf_params,
                            std::vector<NodeId> x, std::vector<NodeId> z,
                            const ModelNodes& model) {
  ClfSample s;
  s.x = std::move(x);
  s.z = std::move(z);
  s.z_sq = tape.dot(s.z, s.z);

  s.V = nets::build_clf(tape, clf, clf_params, s.z);
  s.dVdz = tape.grad_nodes(s.V, s.z);

  auto Kz = matvec(tape, model.K, model.N, s.z);
  s.a = tape.dot(s.dVdz, Kz);
  s.c.resize(model.m);
  for (int i = 0; i < model.m; ++i) {
    auto Qz = matvec(tape, model.Q[i], model.N, s.z);
    s.c[i] = tape.dot(s.dVdz, Qz);
  }
  s.sigma = tape.dot(s.c, s.c);
  return s;
}

ClfSample build_clf_sample(Tape& tape, const nets::NetworkBundle& bundle,
                           std::span<const NodeId> enc_params,
                           std::span<const NodeId> clf_params,
                           std::span<const NodeId> phi0, const ModelNodes& model) {
  std::vector<NodeId> x(bundle.n);
  for (int i = 0; i < bundle.n; ++i) x[i] = tape.var();

  auto phi = nets::build_mlp(tape, bundle.encoder, enc_params, x);
  std::vector<NodeId> z(bundle.N);
  for (int i = 0; i < bundle.N; ++i) z[i] = tape.sub(phi[i], phi0[i]);
  return finish_clf_sample(tape, bundle.clf, clf_params, std::move(x), std::move(z),
                           model);
}

NodeId build_vdot_sontag(Tape& tape, const ClfSample& s, const ClauseTols& tols) {
  NodeId mag = tape.sqrt_(tape.add(tape.square(s.a), tape.square(s.sigma)));
  return tape.if_le(s.sigma, tols.tau_sigma, s.a, tape.neg(mag));
}

NodeId build_vdot_with_u(Tape& tape, const ClfSample& s, std::span<const NodeId> u) {
  if (u.size() != s.c.size()) throw std::invalid_argument("build_vdot_with_u: size");
  return tape.add(s.a, tape.dot(s.c, u));
}

NodeId build_vdot_min_over_u(Tape& tape, const ClfSample& s, const Box& U) {
  NodeId acc = s.a;
  for (std::size_t i = 0; i < s.c.size(); ++i) {
    NodeId lo = tape.mul(s.c[i], tape.constant(U.lo[static_cast<int>(i)]));
    NodeId hi = tape.mul(s.c[i], tape.constant(U.hi[static_cast<int>(i)]));
    acc = tape.add(acc, tape.min_(lo, hi));
  }
  return acc;
}

namespace {

NodeId vdot_for_training(Tape& tape, const ClfSample& s, std::span<const NodeId> u,
                         const HingeOpts& opts) {
  if (opts.robust_u) return build_vdot_min_over_u(tape, s, opts.U);
  if (opts.u_mode == UMode::DatasetU) return build_vdot_with_u(tape, s, u);
  return build_vdot_sontag(tape, s, opts.tols);
}

}  // namespace

NodeId build_lyap_term(Tape& tape, const ClfSample& s, std::span<const NodeId> u,
                       const HingeOpts& opts) {
  NodeId term = tape.zero();
  const NodeId margin =
      opts.margin != 0.0 ? tape.constant(opts.margin) : tape.zero();

  if (!opts.stability.exponential) {
    if (opts.u_mode == UMode::Sontag && !opts.robust_u) {
      // Under Sontag feedback the Lie derivative is -sqrt(a^2 + sigma^2) < 0
      // wherever sigma exceeds the zero threshold, so the hinge reduces to
      // the sigma ~ 0 branch where the input has no authority.
      NodeId hinge = tape.relu(tape.add(s.a, margin));
      term = tape.if_le(s.sigma, opts.tols.tau_sigma, hinge, tape.zero());
    } else {
      NodeId vdot = vdot_for_training(tape, s, u, opts);
      term = tape.relu(tape.add(vdot, margin));
    }
    if (opts.mlp_positivity) term = tape.add(term, tape.relu(tape.neg(s.V)));
    return term;
  }

  // Exponential variant: gamma1 ||z||^2 <= V <= gamma2 ||z||^2 and
  // vdot <= -gamma3 V.
  NodeId g1 = tape.constant(opts.stability.gamma1);
  NodeId g2 = tape.constant(opts.stability.gamma2);
  NodeId g3 = tape.constant(opts.stability.gamma3);
  term = tape.relu(tape.sub(tape.mul(g1, s.z_sq), s.V));
  term = tape.add(term, tape.relu(tape.sub(s.V, tape.mul(g2, s.z_sq))));
  NodeId vdot = vdot_for_training(tape, s, u, opts);
  NodeId decay = tape.add(vdot, tape.mul(g3, s.V));
  term = tape.add(term, tape.relu(tape.add(decay, margin)));
  return term;
}

NodeId build_roa_term(Tape& tape, const ClfSample& s, double gamma4, bool hinged) {
  NodeId znorm = tape.sqrt_(s.z_sq);
  NodeId diff = tape.sub(znorm, tape.mul(tape.constant(gamma4), s.V));
  return hinged ? tape.relu(diff) : diff;
}

std::vector<Clause> build_clauses(Tape& tape, const ClfSample& s,
                                  const HingeOpts& opts) {
  std::vector<Clause> clauses;
  if (!opts.stability.exponential) {
    if (opts.u_mode == UMode::Sontag) {
      // Violation of condition (C1): sigma <= tau_sigma and a >= -tau_a.
      NodeId e = tape.min_(
          tape.sub(tape.constant(opts.tols.tau_sigma), s.sigma),
          tape.add(s.a, tape.constant(opts.tols.tau_a)));
      clauses.push_back({e, "sontag_c1"});
    } else {
      // No admissible input achieves decrease: min over U of vdot >= -tau_a.
      NodeId e = tape.add(build_vdot_min_over_u(tape, s, opts.U),
                          tape.constant(opts.tols.tau_a));
      clauses.push_back({e, "vdot_min_u"});
    }
    if (opts.mlp_positivity) {
      clauses.push_back({tape.neg(s.V), "v_nonpos"});
    }
    return clauses;
  }

  NodeId g1 = tape.constant(opts.stability.gamma1);
  NodeId g2 = tape.constant(opts.stability.gamma2);
  NodeId g3 = tape.constant(opts.stability.gamma3);
  clauses.push_back({tape.sub(tape.mul(g1, s.z_sq), s.V), "exp_lower"});
  clauses.push_back({tape.sub(s.V, tape.mul(g2, s.z_sq)), "exp_upper"});
  NodeId vdot = (opts.u_mode == UMode::Sontag)
                    ? build_vdot_sontag(tape, s, opts.tols)
                    : build_vdot_min_over_u(tape, s, opts.U);
  clauses.push_back({tape.add(vdot, tape.mul(g3, s.V)), "exp_decay"});
  return clauses;
}

}  // namespace klc::clf
