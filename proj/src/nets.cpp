#include "klc/nets.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "klc/sim.hpp"  // uniform01

namespace klc::nets {

std::size_t MlpSpec::param_count() const {
  std::size_t c = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    c += static_cast<std::size_t>(widths[l + 1]) * widths[l] + widths[l + 1];
  }
  return c;
}

VectorXd init_params(const MlpSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  VectorXd p(spec.param_count());
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.widths[l]));
    const std::size_t cnt =
        static_cast<std::size_t>(spec.widths[l + 1]) * spec.widths[l] + spec.widths[l + 1];
    for (std::size_t i = 0; i < cnt; ++i) {
      p[k++] = sim::uniform(rng, -bound, bound);
    }
  }
  return p;
}

VectorXd forward(const MlpSpec& spec, std::span<const double> params,
                 const VectorXd& x) {
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("forward: parameter count mismatch");
  }
  VectorXd y = x;
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    VectorXd next(out);
    const double* W = params.data() + k;
    const double* b = params.data() + k + static_cast<std::size_t>(out) * in;
    for (int o = 0; o < out; ++o) {
      double acc = 0.0;
      for (int j = 0; j < in; ++j) acc += W[static_cast<std::size_t>(o) * in + j] * y[j];
      acc += b[o];
      next[o] = acc;
    }
    const bool last = (l + 2 == spec.widths.size());
    if (!(last && spec.linear_output)) {
      for (int o = 0; o < out; ++o) next[o] = std::tanh(next[o]);
    }
    y = std::move(next);
    k += static_cast<std::size_t>(out) * in + out;
  }
  return y;
}

std::vector<ad::NodeId> build_mlp(ad::Tape& tape, const MlpSpec& spec,
                                  std::span<const ad::NodeId> params,
                                  std::span<const ad::NodeId> x) {
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("build_mlp: parameter count mismatch");
  }
  std::vector<ad::NodeId> y(x.begin(), x.end());
  std::size_t k = 0;
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    const int in = spec.widths[l], out = spec.widths[l + 1];
    std::vector<ad::NodeId> next(out);
    const bool last = (l + 2 == spec.widths.size());
    for (int o = 0; o < out; ++o) {
      std::span<const ad::NodeId> w{params.data() + k + static_cast<std::size_t>(o) * in,
                                    static_cast<std::size_t>(in)};
      ad::NodeId b = params[k + static_cast<std::size_t>(out) * in + o];
      ad::NodeId pre = tape.affine(w, y, b);
      next[o] = (last && spec.linear_output) ? pre : tape.tanh_(pre);
    }
    y = std::move(next);
    k += static_cast<std::size_t>(out) * in + out;
  }
  return y;
}

std::size_t clf_param_count(const ClfSpec& clf) {
  if (const auto* q = std::get_if<QuadraticClfSpec>(&clf)) {
    return q->w_net.param_count();
  }
  return std::get<MlpClfSpec>(clf).net.param_count();
}

int clf_input_dim(const ClfSpec& clf) {
  if (const auto* q = std::get_if<QuadraticClfSpec>(&clf)) return q->w_net.input();
  return std::get<MlpClfSpec>(clf).net.input();
}

VectorXd clf_init_params(const ClfSpec& clf, std::uint64_t seed) {
  if (const auto* q = std::get_if<QuadraticClfSpec>(&clf)) {
    return init_params(q->w_net, seed);
  }
  return init_params(std::get<MlpClfSpec>(clf).net, seed);
}

double clf_eval(const ClfSpec& clf, std::span<const double> params,
                const VectorXd& z) {
  if (const auto* q = std::get_if<QuadraticClfSpec>(&clf)) {
    const int N = q->w_net.input();
    VectorXd w = forward(q->w_net, params, z);  // n_w*N entries, row-major
    double v = 0.0;
    for (int i = 0; i < N; ++i) v += z[i] * z[i];
    v *= q->gamma;
    for (int r = 0; r < q->n_w; ++r) {
      double row = 0.0;
      for (int i = 0; i < N; ++i) row += w[static_cast<std::size_t>(r) * N + i] * z[i];
      v += row * row;
    }
    return v;
  }
  const auto& spec = std::get<MlpClfSpec>(clf).net;
  return forward(spec, params, z)[0];
}

ad::NodeId build_clf(ad::Tape& tape, const ClfSpec& clf,
                     std::span<const ad::NodeId> params,
                     std::span<const ad::NodeId> z) {
  if (const auto* q = std::get_if<QuadraticClfSpec>(&clf)) {
    const int N = q->w_net.input();
    auto w = build_mlp(tape, q->w_net, params, z);
    ad::NodeId zsq = tape.dot(z, z);
    ad::NodeId v = tape.mul(tape.constant(q->gamma), zsq);
    for (int r = 0; r < q->n_w; ++r) {
      std::span<const ad::NodeId> row{w.data() + static_cast<std::size_t>(r) * N,
                                      static_cast<std::size_t>(N)};
      ad::NodeId rz = tape.dot(row, z);
      v = tape.add(v, tape.square(rz));
    }
    return v;
  }
  const auto& spec = std::get<MlpClfSpec>(clf).net;
  return build_mlp(tape, spec, params, z)[0];
}

namespace {

VectorXd input_gradient_impl(
    const std::function<ad::NodeId(ad::Tape&, std::span<const ad::NodeId>)>& build,
    const VectorXd& x) {
  ad::Tape tape;
  std::vector<ad::NodeId> xs(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) xs[i] = tape.var(x[i]);
  ad::NodeId y = build(tape, xs);
  auto grads = tape.grad_nodes(y, xs);
  tape.forward_all();
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) g[i] = tape.val(grads[i]);
  return g;
}

}  // namespace

VectorXd input_gradient(const MlpSpec& spec, std::span<const double> params,
                        const VectorXd& x) {
  return input_gradient_impl(
      [&](ad::Tape& tape, std::span<const ad::NodeId> xs) {
        std::vector<ad::NodeId> ps(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) ps[i] = tape.constant(params[i]);
        return build_mlp(tape, spec, ps, xs)[0];
      },
      x);
}

VectorXd clf_input_gradient(const ClfSpec& clf, std::span<const double> params,
                            const VectorXd& z) {
  return input_gradient_impl(
      [&](ad::Tape& tape, std::span<const ad::NodeId> zs) {
        std::vector<ad::NodeId> ps(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) ps[i] = tape.constant(params[i]);
        return build_clf(tape, clf, ps, zs);
      },
      z);
}

VectorXd param_gradient(ad::Tape& tape, ad::NodeId loss,
                        std::span<const ad::NodeId> params) {
  tape.check_finite(0, static_cast<ad::NodeId>(tape.size()));
  tape.zero_adj(0, static_cast<ad::NodeId>(tape.size()));
  tape.add_adj(loss, 1.0);
  tape.reverse(0, loss + 1);
  VectorXd g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    g[i] = tape.adj(params[i]);
    if (!std::isfinite(g[i])) {
      throw ad::GradientOverflow(params[i], "non-finite gradient at parameter node " +
                                                std::to_string(params[i]));
    }
  }
  return g;
}

void adam_step(AdamState& state, VectorXd& params, const VectorXd& grad,
               double lr, double beta1, double beta2, double eps) {
  if (state.m.size() != params.size()) {
    state.m = VectorXd::Zero(params.size());
    state.v = VectorXd::Zero(params.size());
    state.t = 0;
  }
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

VectorXd init_bundle_params(const NetworkBundle& bundle, std::uint64_t seed) {
  VectorXd theta(bundle.total_params());
  theta.segment(bundle.enc_offset(), bundle.encoder.param_count()) =
      init_params(bundle.encoder, seed * 3 + 1);
  theta.segment(bundle.dec_offset(), bundle.decoder.param_count()) =
      init_params(bundle.decoder, seed * 3 + 2);
  theta.segment(bundle.clf_offset(), clf_param_count(bundle.clf)) =
      clf_init_params(bundle.clf, seed * 3 + 3);
  return theta;
}

VectorXd lift(const NetworkBundle& bundle, const VectorXd& theta, const VectorXd& x) {
  auto ep = bundle.enc_params(theta);
  VectorXd phi = forward(bundle.encoder, ep, x);
  VectorXd phi0 = forward(bundle.encoder, ep, VectorXd::Zero(bundle.n));
  return phi - phi0;
}

}  // namespace klc::nets
