#include "klc/falsifier.hpp"

#include <fstream>
#include <queue>
#include <sstream>

namespace klc::fals {

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Unsat: return "UNSAT";
    case Outcome::Sat: return "SAT";
    case Outcome::Budget: return "BUDGET";
  }
  return "?";
}

ClauseSystem::ClauseSystem(const nets::NetworkBundle& bundle, const VectorXd& theta,
                           const edmd::BilinearModel& model,
                           const clf::HingeOpts& opts) {
  std::vector<ad::NodeId> theta_nodes(bundle.total_params());
  for (std::size_t i = 0; i < theta_nodes.size(); ++i) {
    theta_nodes[i] = tape_.constant(theta[static_cast<Eigen::Index>(i)]);
  }
  std::span<const ad::NodeId> enc_p{theta_nodes.data() + bundle.enc_offset(),
                                    bundle.encoder.param_count()};
  std::span<const ad::NodeId> clf_p{theta_nodes.data() + bundle.clf_offset(),
                                    nets::clf_param_count(bundle.clf)};
  auto model_nodes = clf::make_model_nodes(tape_, bundle.N, model.m());
  auto phi0 = clf::build_encoder_prelude(tape_, bundle, enc_p);
  eval_lo_ = static_cast<ad::NodeId>(tape_.size());
  auto sample = clf::build_clf_sample(tape_, bundle, enc_p, clf_p, phi0, model_nodes);
  model_nodes.poke(tape_, model);
  finish(std::move(sample), opts);
}

ClauseSystem::ClauseSystem(const nets::ClfSpec& clf, const VectorXd& clf_params,
                           int N, const edmd::BilinearModel& model,
                           const clf::HingeOpts& opts) {
  std::vector<ad::NodeId> clf_nodes(nets::clf_param_count(clf));
  for (std::size_t i = 0; i < clf_nodes.size(); ++i) {
    clf_nodes[i] = tape_.constant(clf_params[static_cast<Eigen::Index>(i)]);
  }
  auto model_nodes = clf::make_model_nodes(tape_, N, model.m());
  eval_lo_ = static_cast<ad::NodeId>(tape_.size());
  std::vector<ad::NodeId> x(N);
  for (int i = 0; i < N; ++i) x[i] = tape_.var();
  std::vector<ad::NodeId> z = x;
  auto sample =
      clf::finish_clf_sample(tape_, clf, clf_nodes, std::move(x), std::move(z),
                             model_nodes);
  model_nodes.poke(tape_, model);
  finish(std::move(sample), opts);
}

void ClauseSystem::finish(clf::ClfSample sample, const clf::HingeOpts& opts) {
  x_ = sample.x;
  z_ = sample.z;
  z_sq_ = sample.z_sq;
  clauses_ = clf::build_clauses(tape_, sample, opts);
  tape_.forward_all();
  tape_.reset_intervals();
  tape_.forward_interval(0, static_cast<ad::NodeId>(tape_.size()));
}

ClauseSystem::PointEval ClauseSystem::eval(const VectorXd& x) {
  for (std::size_t i = 0; i < x_.size(); ++i) tape_.set_val(x_[i], x[i]);
  tape_.forward(eval_lo_, static_cast<ad::NodeId>(tape_.size()));
  PointEval pe;
  pe.z.resize(static_cast<Eigen::Index>(z_.size()));
  for (std::size_t i = 0; i < z_.size(); ++i) pe.z[i] = tape_.val(z_[i]);
  pe.z_sq = tape_.val(z_sq_);
  pe.clause_vals.reserve(clauses_.size());
  for (const auto& cl : clauses_) pe.clause_vals.push_back(tape_.val(cl.expr));
  return pe;
}

ClauseSystem::BoxEval ClauseSystem::eval_box(const Box& box) {
  for (std::size_t i = 0; i < x_.size(); ++i) {
    tape_.set_ival(x_[i], {box.lo[static_cast<Eigen::Index>(i)],
                           box.hi[static_cast<Eigen::Index>(i)]});
  }
  tape_.forward_interval(eval_lo_, static_cast<ad::NodeId>(tape_.size()));
  BoxEval be;
  be.z_sq = tape_.ival(z_sq_);
  be.clause_vals.reserve(clauses_.size());
  for (const auto& cl : clauses_) be.clause_vals.push_back(tape_.ival(cl.expr));
  return be;
}

namespace {

struct QBox {
  Box box;
  double score = 0.0;  // largest clause upper bound: how suspicious
  std::uint64_t id = 0;
};

struct QBoxLess {
  bool operator()(const QBox& a, const QBox& b) const {
    if (a.score != b.score) return a.score < b.score;  // worst first
    return a.id > b.id;
  }
};

}  // namespace

Certificate falsify(ClauseSystem& system, const FalsifierQuery& query) {
  Certificate cert;
  cert.epsilon = query.epsilon;
  cert.delta = query.delta > 0.0 ? query.delta : 1e-3 * query.domain.max_width();

  std::priority_queue<QBox, std::vector<QBox>, QBoxLess> queue;
  std::uint64_t next_id = 0;

  auto consider = [&](Box box) {
    auto be = system.eval_box(box);
    if (be.z_sq.hi < query.epsilon) return;  // entirely inside the exclusion ball
    double score = -std::numeric_limits<double>::infinity();
    for (const auto& cv : be.clause_vals) score = std::max(score, cv.hi);
    if (score < 0.0) return;  // no clause can be violated here
    queue.push(QBox{std::move(box), score, next_id++});
  };

  consider(query.domain);

  while (!queue.empty()) {
    QBox top = queue.top();
    queue.pop();
    ++cert.boxes_processed;

    // Try to certify a concrete counterexample at the box center.
    VectorXd center = top.box.center();
    auto pe = system.eval(center);
    if (pe.z_sq >= query.epsilon) {
      int best = -1;
      double best_val = 0.0;
      for (std::size_t i = 0; i < pe.clause_vals.size(); ++i) {
        if (pe.clause_vals[i] > best_val) {
          best_val = pe.clause_vals[i];
          best = static_cast<int>(i);
        }
      }
      if (best >= 0) {
        Counterexample cex;
        cex.x = center;
        cex.z = pe.z;
        cex.clause = system.clause_name(best);
        cex.margin = best_val;
        cert.outcome = Outcome::Sat;
        cert.cex = std::move(cex);
        return cert;
      }
    }

    if (top.box.max_width() < cert.delta) continue;  // below resolution

    if (cert.splits >= query.max_splits) {
      cert.outcome = Outcome::Budget;
      cert.suspicious_x = center;
      return cert;
    }
    ++cert.splits;

    const int axis = top.box.widest_axis();
    const double mid = 0.5 * (top.box.lo[axis] + top.box.hi[axis]);
    Box left = top.box, right = top.box;
    left.hi[axis] = mid;
    right.lo[axis] = mid;
    consider(std::move(left));
    consider(std::move(right));
  }

  cert.outcome = Outcome::Unsat;
  return cert;
}

double check_counterexample(ClauseSystem& system, const Counterexample& cex,
                            double epsilon) {
  auto pe = system.eval(cex.x);
  if (pe.z_sq < epsilon) {
    throw SoundnessError("counterexample lies inside the epsilon exclusion ball");
  }
  double margin = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < system.clause_count(); ++i) {
    if (system.clause_name(i) == cex.clause) margin = pe.clause_vals[i];
  }
  if (!(margin > 0.0)) {
    throw SoundnessError("counterexample fails plain-arithmetic re-evaluation (margin " +
                         std::to_string(margin) + ")");
  }
  return margin;
}

double choose_epsilon(double xz_extent, double min_x_sq, double min_z_sq,
                      double factor) {
  const double eps =
      factor * std::min({1.0, xz_extent, std::min(min_x_sq, min_z_sq)});
  return eps > 0.0 ? eps : 1e-8;
}

namespace {

void write_vector(std::ostream& os, const char* key, const VectorXd& v) {
  os << key << "=";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << " ";
    char buf[32];
    snprintf(buf, sizeof(buf), "%.17g", v[i]);
    os << buf;
  }
  os << "\n";
}

VectorXd parse_vector(const std::string& s) {
  std::stringstream ss(s);
  std::vector<double> vals;
  double v;
  while (ss >> v) vals.push_back(v);
  return Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

void save_certificate(const Certificate& cert, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "outcome=" << outcome_name(cert.outcome) << "\n";
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", cert.epsilon);
  os << "epsilon=" << buf << "\n";
  snprintf(buf, sizeof(buf), "%.17g", cert.delta);
  os << "delta=" << buf << "\n";
  os << "boxes=" << cert.boxes_processed << "\n";
  os << "splits=" << cert.splits << "\n";
  if (cert.cex) {
    write_vector(os, "cex_x", cert.cex->x);
    write_vector(os, "cex_z", cert.cex->z);
    os << "cex_clause=" << cert.cex->clause << "\n";
    snprintf(buf, sizeof(buf), "%.17g", cert.cex->margin);
    os << "cex_margin=" << buf << "\n";
  }
  if (cert.suspicious_x) write_vector(os, "suspicious_x", *cert.suspicious_x);
}

Certificate load_certificate(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  Certificate cert;
  Counterexample cex;
  bool has_cex = false;
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "outcome") {
      if (val == "UNSAT") cert.outcome = Outcome::Unsat;
      else if (val == "SAT") cert.outcome = Outcome::Sat;
      else cert.outcome = Outcome::Budget;
    } else if (key == "epsilon") cert.epsilon = std::stod(val);
    else if (key == "delta") cert.delta = std::stod(val);
    else if (key == "boxes") cert.boxes_processed = std::stoull(val);
    else if (key == "splits") cert.splits = std::stoull(val);
    else if (key == "cex_x") { cex.x = parse_vector(val); has_cex = true; }
    else if (key == "cex_z") cex.z = parse_vector(val);
    else if (key == "cex_clause") cex.clause = val;
    else if (key == "cex_margin") cex.margin = std::stod(val);
    else if (key == "suspicious_x") cert.suspicious_x = parse_vector(val);
  }
  if (has_cex) cert.cex = cex;
  return cert;
}

}  // namespace klc::fals
