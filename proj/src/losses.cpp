#include "klc/losses.hpp"

#include <array>
#include <cmath>

namespace klc::losses {

double weighted_total(const LossReport& r, const LossWeights& w) {
  return w.alpha1 * r.recons + w.alpha2 * r.dyn + w.alpha3 * r.phy +
         w.alpha4 * r.lyap + r.roa;
}

LossReport total_loss(double recons, double dyn, double phy, double lyap,
                      double roa, const LossWeights& w) {
  LossReport r;
  r.recons = recons;
  r.dyn = dyn;
  r.phy = phy;
  r.lyap = lyap;
  r.roa = roa;
  r.total = weighted_total(r, w);
  return r;
}

double loss_recons(const sim::Dataset& ds, const nets::NetworkBundle& bundle,
                   const VectorXd& theta) {
  const auto ep = bundle.enc_params(theta);
  const auto dp = bundle.dec_params(theta);
  const VectorXd phi0 = nets::forward(bundle.encoder, ep, VectorXd::Zero(bundle.n));
  double sum = 0.0;
  for (const auto& x : ds.states) {
    VectorXd z = nets::forward(bundle.encoder, ep, x) - phi0;
    VectorXd xr = nets::forward(bundle.decoder, dp, z);
    sum += (x - xr).squaredNorm();
  }
  return sum / static_cast<double>(ds.states.size());
}

double loss_dyn(const sim::Dataset& ds, const nets::NetworkBundle& bundle,
                const VectorXd& theta, const edmd::BilinearModel& model) {
  const auto ep = bundle.enc_params(theta);
  const VectorXd phi0 = nets::forward(bundle.encoder, ep, VectorXd::Zero(bundle.n));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t k = 0; k + 1 < ds.states.size(); ++k) {
    if (!ds.has_pair(k)) continue;
    VectorXd zk = nets::forward(bundle.encoder, ep, ds.states[k]) - phi0;
    VectorXd zk1 = nets::forward(bundle.encoder, ep, ds.states[k + 1]) - phi0;
    sum += (zk1 - edmd::predict(model, zk, ds.inputs[k])).squaredNorm();
    ++pairs;
  }
  return sum / static_cast<double>(pairs);
}

double loss_phy(const sim::Dataset& ds, const nets::NetworkBundle& bundle,
                const VectorXd& theta, const sim::Plant& plant) {
  const auto ep = bundle.enc_params(theta);
  const auto dp = bundle.dec_params(theta);
  const VectorXd phi0 = nets::forward(bundle.encoder, ep, VectorXd::Zero(bundle.n));
  auto autoenc = [&](const VectorXd& x) {
    return nets::forward(bundle.decoder, dp,
                         nets::forward(bundle.encoder, ep, x) - phi0);
  };
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t k = 0; k + 1 < ds.states.size(); ++k) {
    if (!ds.has_pair(k)) continue;
    VectorXd lhs = autoenc(ds.states[k + 1]);
    VectorXd rhs = sim::rk4_step(plant, autoenc(ds.states[k]), ds.inputs[k], ds.T);
    sum += (lhs - rhs).squaredNorm();
    ++pairs;
  }
  return sum / static_cast<double>(pairs);
}

double lie_derivative(const nets::ClfSpec& clf, std::span<const double> clf_params,
                      const edmd::BilinearModel& model, const VectorXd& z,
                      const VectorXd& u) {
  const VectorXd g = nets::clf_input_gradient(clf, clf_params, z);
  double v = g.dot(model.K() * z);
  for (int i = 0; i < model.m(); ++i) v += u[i] * g.dot(model.Q(i) * z);
  return v;
}

namespace {

struct LieTerms {
  double a = 0, sigma = 0;
  VectorXd c;
};

LieTerms lie_terms(const nets::ClfSpec& clf, std::span<const double> clf_params,
                   const edmd::BilinearModel& model, const VectorXd& z) {
  LieTerms t;
  const VectorXd g = nets::clf_input_gradient(clf, clf_params, z);
  t.a = g.dot(model.K() * z);
  t.c.resize(model.m());
  for (int i = 0; i < model.m(); ++i) t.c[i] = g.dot(model.Q(i) * z);
  t.sigma = t.c.squaredNorm();
  return t;
}

double min_vdot_over_u(const LieTerms& t, const Box& U) {
  double v = t.a;
  for (int i = 0; i < t.c.size(); ++i) {
    v += std::min(t.c[i] * U.lo[i], t.c[i] * U.hi[i]);
  }
  return v;
}

}  // namespace

double loss_lyap(const std::vector<VectorXd>& zs, const std::vector<VectorXd>* us,
                 const nets::ClfSpec& clf, std::span<const double> clf_params,
                 const edmd::BilinearModel& model, const LyapOpts& opts) {
  double sum = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const LieTerms t = lie_terms(clf, clf_params, model, zs[i]);
    double term = 0.0;
    if (opts.u_mode == clf::UMode::Sontag) {
      if (t.sigma <= opts.tols.tau_sigma) term = std::max(0.0, t.a + opts.margin);
    } else {
      double vdot;
      if (us && i < us->size() && (*us)[i].size() > 0) {
        vdot = t.a + t.c.dot((*us)[i]);
      } else {
        vdot = t.a;  // no recorded input: u = 0
      }
      term = std::max(0.0, vdot + opts.margin);
    }
    if (opts.mlp_positivity) {
      term += std::max(0.0, -nets::clf_eval(clf, clf_params, zs[i]));
    }
    sum += term;
  }
  const double v0 = nets::clf_eval(clf, clf_params, VectorXd::Zero(clf_input_dim(clf)));
  return sum / static_cast<double>(zs.size()) + v0 * v0;
}

double loss_lyap_exponential(const std::vector<VectorXd>& zs,
                             const std::vector<VectorXd>* us,
                             const nets::ClfSpec& clf,
                             std::span<const double> clf_params,
                             const edmd::BilinearModel& model, const LyapOpts& opts,
                             double gamma1, double gamma2, double gamma3) {
  double sum = 0.0;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const VectorXd& z = zs[i];
    const double v = nets::clf_eval(clf, clf_params, z);
    const double zsq = z.squaredNorm();
    const LieTerms t = lie_terms(clf, clf_params, model, z);
    double vdot;
    if (opts.u_mode == clf::UMode::Sontag) {
      vdot = (t.sigma <= opts.tols.tau_sigma)
                 ? t.a
                 : -std::sqrt(t.a * t.a + t.sigma * t.sigma);
    } else if (us && i < us->size() && (*us)[i].size() > 0) {
      vdot = t.a + t.c.dot((*us)[i]);
    } else {
      vdot = t.a;
    }
    sum += std::max(0.0, gamma1 * zsq - v);
    sum += std::max(0.0, v - gamma2 * zsq);
    sum += std::max(0.0, vdot + gamma3 * v + opts.margin);
  }
  const double v0 = nets::clf_eval(clf, clf_params, VectorXd::Zero(clf_input_dim(clf)));
  return sum / static_cast<double>(zs.size()) + v0 * v0;
}

double loss_roa(const std::vector<VectorXd>& zs, const nets::ClfSpec& clf,
                std::span<const double> clf_params, double gamma4, bool hinged) {
  double sum = 0.0;
  for (const auto& z : zs) {
    const double d = z.norm() - gamma4 * nets::clf_eval(clf, clf_params, z);
    sum += hinged ? std::max(0.0, d) : d;
  }
  return sum / static_cast<double>(zs.size());
}

TrainingGraphs::TrainingGraphs(const sim::Plant& plant,
                               const nets::NetworkBundle& bundle,
                               const sim::Dataset& ds,
                               const std::vector<VectorXd>& cex_states,
                               const TrainingOptions& opts)
    : plant_(&plant), bundle_(bundle), ds_(&ds), cex_states_(cex_states), opts_(opts) {
  build();
}

void TrainingGraphs::build() {
  const int n = bundle_.n, N = bundle_.N, m = plant_->m;
  const bool mlp_clf = std::holds_alternative<nets::MlpClfSpec>(bundle_.clf);

  theta_nodes_.resize(bundle_.total_params());
  for (auto& id : theta_nodes_) id = tape_.var();
  const std::span<const ad::NodeId> enc_p{theta_nodes_.data() + bundle_.enc_offset(),
                                          bundle_.encoder.param_count()};
  const std::span<const ad::NodeId> dec_p{theta_nodes_.data() + bundle_.dec_offset(),
                                          bundle_.decoder.param_count()};
  const std::span<const ad::NodeId> clf_p{theta_nodes_.data() + bundle_.clf_offset(),
                                          nets::clf_param_count(bundle_.clf)};

  model_nodes_ = clf::make_model_nodes(tape_, N, m);

  prelude_.lo = static_cast<ad::NodeId>(tape_.size());
  auto phi0 = clf::build_encoder_prelude(tape_, bundle_, enc_p);
  if (mlp_clf) {
    std::vector<ad::NodeId> z0(N, tape_.zero());
    v0sq_ = tape_.square(nets::build_clf(tape_, bundle_.clf, clf_p, z0));
  } else {
    v0sq_ = tape_.zero();
  }
  prelude_.hi = static_cast<ad::NodeId>(tape_.size());
  graphs_start_ = prelude_.hi;

  clf::HingeOpts hinge;
  hinge.u_mode = opts_.u_mode;
  hinge.tols = opts_.tols;
  hinge.margin = opts_.train_hinge_margin;
  hinge.mlp_positivity = mlp_clf;
  hinge.stability = opts_.weights.stability;
  hinge.U = plant_->U;

  // Reconstruction sample graph.
  recons_range_.lo = static_cast<ad::NodeId>(tape_.size());
  recons_x_.resize(n);
  for (int i = 0; i < n; ++i) recons_x_[i] = tape_.var();
  {
    auto phi = nets::build_mlp(tape_, bundle_.encoder, enc_p, recons_x_);
    std::vector<ad::NodeId> z(N);
    for (int i = 0; i < N; ++i) z[i] = tape_.sub(phi[i], phi0[i]);
    auto xr = nets::build_mlp(tape_, bundle_.decoder, dec_p, z);
    std::vector<ad::NodeId> r(n);
    for (int i = 0; i < n; ++i) r[i] = tape_.sub(recons_x_[i], xr[i]);
    recons_out_ = tape_.dot(r, r);
  }
  recons_range_.hi = static_cast<ad::NodeId>(tape_.size());

  // Transition-pair graph: bilinear dynamics + physics-informed terms.
  pair_range_.lo = static_cast<ad::NodeId>(tape_.size());
  pair_xk_.resize(n);
  pair_uk_.resize(m);
  pair_xk1_.resize(n);
  for (int i = 0; i < n; ++i) pair_xk_[i] = tape_.var();
  for (int i = 0; i < m; ++i) pair_uk_[i] = tape_.var();
  for (int i = 0; i < n; ++i) pair_xk1_[i] = tape_.var();
  {
    auto phik = nets::build_mlp(tape_, bundle_.encoder, enc_p, pair_xk_);
    auto phik1 = nets::build_mlp(tape_, bundle_.encoder, enc_p, pair_xk1_);
    std::vector<ad::NodeId> zk(N), zk1(N);
    for (int i = 0; i < N; ++i) {
      zk[i] = tape_.sub(phik[i], phi0[i]);
      zk1[i] = tape_.sub(phik1[i], phi0[i]);
    }
    std::vector<ad::NodeId> pred(N);
    for (int r = 0; r < N; ++r) {
      std::span<const ad::NodeId> kd_row{
          model_nodes_.K_d.data() + static_cast<std::size_t>(r) * N,
          static_cast<std::size_t>(N)};
      pred[r] = tape_.dot(kd_row, zk);
    }
    for (int j = 0; j < m; ++j) {
      for (int r = 0; r < N; ++r) {
        std::span<const ad::NodeId> b_row{
            model_nodes_.B[j].data() + static_cast<std::size_t>(r) * N,
            static_cast<std::size_t>(N)};
        pred[r] = tape_.add(pred[r], tape_.mul(pair_uk_[j], tape_.dot(b_row, zk)));
      }
    }
    std::vector<ad::NodeId> rd(N);
    for (int i = 0; i < N; ++i) rd[i] = tape_.sub(zk1[i], pred[i]);
    dyn_out_ = tape_.dot(rd, rd);

    auto xhk = nets::build_mlp(tape_, bundle_.decoder, dec_p, zk);
    auto xhk1 = nets::build_mlp(tape_, bundle_.decoder, dec_p, zk1);
    const sim::Plant plant = *plant_;
    const double T = ds_->T;
    auto step = [plant, T](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
      return sim::rk4_step(plant, x, u, T);
    };
    auto h = tape_.black_step(step, xhk, pair_uk_, n, opts_.blackbox_fd_step);
    std::vector<ad::NodeId> rp(n);
    for (int i = 0; i < n; ++i) rp[i] = tape_.sub(xhk1[i], h[i]);
    phy_out_ = tape_.dot(rp, rp);
  }
  pair_range_.hi = static_cast<ad::NodeId>(tape_.size());

  // Lyapunov/ROA sample graph.
  lyap_range_.lo = static_cast<ad::NodeId>(tape_.size());
  {
    auto s = clf::build_clf_sample(tape_, bundle_, enc_p, clf_p, phi0, model_nodes_);
    lyap_x_ = s.x;
    lyap_u_.resize(m);
    if (opts_.u_mode == clf::UMode::DatasetU) {
      for (int i = 0; i < m; ++i) lyap_u_[i] = tape_.var();
    }
    lyap_out_ = clf::build_lyap_term(tape_, s, lyap_u_, hinge);
    roa_out_ = clf::build_roa_term(tape_, s, opts_.weights.gamma4,
                                   opts_.weights.roa_hinged);
  }
  lyap_range_.hi = static_cast<ad::NodeId>(tape_.size());

  // Counterexamples carry no recorded input; in DatasetU mode their hinge
  // uses the robust min-over-U Lie derivative instead.
  if (opts_.u_mode == clf::UMode::DatasetU && !cex_states_.empty()) {
    cex_range_.lo = static_cast<ad::NodeId>(tape_.size());
    auto s = clf::build_clf_sample(tape_, bundle_, enc_p, clf_p, phi0, model_nodes_);
    cex_x_ = s.x;
    clf::HingeOpts robust = hinge;
    robust.robust_u = true;
    cex_lyap_out_ = clf::build_lyap_term(tape_, s, {}, robust);
    cex_roa_out_ = clf::build_roa_term(tape_, s, opts_.weights.gamma4,
                                       opts_.weights.roa_hinged);
    cex_range_.hi = static_cast<ad::NodeId>(tape_.size());
  }
}

LossReport TrainingGraphs::evaluate(const VectorXd& theta,
                                    const edmd::BilinearModel& model,
                                    VectorXd* grad) {
  for (std::size_t i = 0; i < theta_nodes_.size(); ++i) {
    tape_.set_val(theta_nodes_[i], theta[i]);
  }
  model_nodes_.poke(tape_, model);
  tape_.forward(prelude_.lo, prelude_.hi);

  const auto n_states = ds_->states.size();
  const auto n_pairs = ds_->pair_count();
  const auto n_lyap = n_states + cex_states_.size();
  const LossWeights& w = opts_.weights;

  if (grad) tape_.zero_adj(0, graphs_start_);

  auto run_sample = [&](Range range, std::span<const ad::NodeId> outs,
                        std::span<const double> seeds) {
    tape_.forward(range.lo, range.hi);
    if (grad) {
      tape_.zero_adj(range.lo, range.hi);
      for (std::size_t i = 0; i < outs.size(); ++i) tape_.add_adj(outs[i], seeds[i]);
      tape_.reverse(range.lo, range.hi);
    }
  };

  LossReport rep;
  double recons_sum = 0, dyn_sum = 0, phy_sum = 0, lyap_sum = 0, roa_sum = 0;

  {
    const std::array<ad::NodeId, 1> outs{recons_out_};
    const std::array<double, 1> seeds{w.alpha1 / static_cast<double>(n_states)};
    for (const auto& x : ds_->states) {
      for (int i = 0; i < bundle_.n; ++i) tape_.set_val(recons_x_[i], x[i]);
      run_sample(recons_range_, outs, seeds);
      recons_sum += tape_.val(recons_out_);
    }
  }
  {
    const double sd = w.alpha2 / static_cast<double>(n_pairs);
    const double sp = w.alpha3 / static_cast<double>(n_pairs);
    const std::array<ad::NodeId, 2> outs{dyn_out_, phy_out_};
    const std::array<double, 2> seeds{sd, sp};
    for (std::size_t k = 0; k + 1 < ds_->states.size(); ++k) {
      if (!ds_->has_pair(k)) continue;
      for (int i = 0; i < bundle_.n; ++i) {
        tape_.set_val(pair_xk_[i], ds_->states[k][i]);
        tape_.set_val(pair_xk1_[i], ds_->states[k + 1][i]);
      }
      for (int i = 0; i < plant_->m; ++i) tape_.set_val(pair_uk_[i], ds_->inputs[k][i]);
      run_sample(pair_range_, outs, seeds);
      dyn_sum += tape_.val(dyn_out_);
      phy_sum += tape_.val(phy_out_);
    }
  }
  {
    const double sl = w.alpha4 / static_cast<double>(n_lyap);
    const double sr = 1.0 / static_cast<double>(n_lyap);
    const std::array<ad::NodeId, 2> outs{lyap_out_, roa_out_};
    const std::array<double, 2> seeds{sl, sr};
    const bool dataset_u = opts_.u_mode == clf::UMode::DatasetU;
    for (std::size_t k = 0; k < n_states; ++k) {
      for (int i = 0; i < bundle_.n; ++i) tape_.set_val(lyap_x_[i], ds_->states[k][i]);
      if (dataset_u) {
        const bool has_u = k + 1 < ds_->states.size() && ds_->inputs[k].size() > 0;
        for (int i = 0; i < plant_->m; ++i) {
          tape_.set_val(lyap_u_[i], has_u ? ds_->inputs[k][i] : 0.0);
        }
      }
      run_sample(lyap_range_, outs, seeds);
      const double term = tape_.val(lyap_out_);
      lyap_sum += term;
      roa_sum += tape_.val(roa_out_);
      if (term > rep.worst_margin) {
        rep.worst_margin = term;
        rep.worst_index = static_cast<int>(k);
      }
    }
    const bool robust_graph = cex_range_.hi > cex_range_.lo;
    const Range crange = robust_graph ? cex_range_ : lyap_range_;
    const auto& cx = robust_graph ? cex_x_ : lyap_x_;
    const std::array<ad::NodeId, 2> couts =
        robust_graph ? std::array<ad::NodeId, 2>{cex_lyap_out_, cex_roa_out_} : outs;
    for (std::size_t k = 0; k < cex_states_.size(); ++k) {
      for (int i = 0; i < bundle_.n; ++i) tape_.set_val(cx[i], cex_states_[k][i]);
      if (!robust_graph && dataset_u) {
        for (int i = 0; i < plant_->m; ++i) tape_.set_val(lyap_u_[i], 0.0);
      }
      run_sample(crange, couts, seeds);
      const double term = tape_.val(couts[0]);
      lyap_sum += term;
      roa_sum += tape_.val(couts[1]);
      if (term > rep.worst_margin) {
        rep.worst_margin = term;
        rep.worst_index = static_cast<int>(n_states + k);
      }
    }
  }

  if (grad) {
    tape_.add_adj(v0sq_, w.alpha4);
    tape_.reverse(prelude_.lo, prelude_.hi);
  }

  rep.recons = recons_sum / static_cast<double>(n_states);
  rep.dyn = dyn_sum / static_cast<double>(n_pairs);
  rep.phy = phy_sum / static_cast<double>(n_pairs);
  rep.lyap = lyap_sum / static_cast<double>(n_lyap) + tape_.val(v0sq_);
  rep.roa = roa_sum / static_cast<double>(n_lyap);
  rep.total = weighted_total(rep, w);

  if (!std::isfinite(rep.total)) {
    tape_.check_finite(0, static_cast<ad::NodeId>(tape_.size()));
    throw ad::GradientOverflow(0, "non-finite total loss");
  }
  if (grad) {
    grad->resize(static_cast<Eigen::Index>(theta_nodes_.size()));
    for (std::size_t i = 0; i < theta_nodes_.size(); ++i) {
      (*grad)[i] = tape_.adj(theta_nodes_[i]);
      if (!std::isfinite((*grad)[i])) {
        throw ad::GradientOverflow(theta_nodes_[i], "non-finite parameter gradient");
      }
    }
  }
  return rep;
}

}  // namespace klc::losses
