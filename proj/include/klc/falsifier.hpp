#pragma once

#include <optional>
#include <string>

#include "klc/box.hpp"
#include "klc/clf_expr.hpp"
#include "klc/edmd.hpp"
#include "klc/nets.hpp"
#include "klc/tape.hpp"

namespace klc::fals {

using Eigen::VectorXd;

struct FalsifierQuery {
  Box domain;                        // x-space search region
  double epsilon = 1e-3;             // exclusion: only ||z||^2 >= epsilon counts
  double delta = 0.0;                // minimum box width; 0 -> 1e-3 * max width
  std::uint64_t max_splits = 1'000'000;
};

enum class Outcome { Unsat, Sat, Budget };
const char* outcome_name(Outcome o);

struct Counterexample {
  VectorXd x;
  VectorXd z;
  std::string clause;
  double margin = 0.0;
};

struct Certificate {
  Outcome outcome = Outcome::Budget;
  double epsilon = 0.0, delta = 0.0;
  std::uint64_t boxes_processed = 0;
  std::uint64_t splits = 0;
  std::optional<Counterexample> cex;
  std::optional<VectorXd> suspicious_x;  // budget exhaustion: center of the
                                         // most suspicious open box
};

struct SoundnessError : std::logic_error {
  using std::logic_error::logic_error;
};

// Frozen networks + model compiled to one expression graph, interpreted
// with plain arithmetic for point checks and with intervals for box pruning.
class ClauseSystem {
 public:
  // Lift through the bundle's encoder (z = Phi(x) - Phi(0)).
  ClauseSystem(const nets::NetworkBundle& bundle, const VectorXd& theta,
               const edmd::BilinearModel& model, const clf::HingeOpts& opts);
  // Identity lift (z = x); for synthetic instances and already-lifted tests.
  ClauseSystem(const nets::ClfSpec& clf, const VectorXd& clf_params, int N,
               const edmd::BilinearModel& model, const clf::HingeOpts& opts);

  int n() const { return static_cast<int>(x_.size()); }
  int clause_count() const { return static_cast<int>(clauses_.size()); }
  const std::string& clause_name(int i) const { return clauses_[i].name; }

  struct PointEval {
    VectorXd z;
    double z_sq = 0.0;
    std::vector<double> clause_vals;
  };
  PointEval eval(const VectorXd& x);

  struct BoxEval {
    ad::Interval z_sq;
    std::vector<ad::Interval> clause_vals;
  };
  BoxEval eval_box(const Box& box);

 private:
  void finish(clf::ClfSample sample, const clf::HingeOpts& opts);

  ad::Tape tape_;
  std::vector<ad::NodeId> x_;
  std::vector<ad::NodeId> z_;
  ad::NodeId z_sq_ = 0;
  std::vector<clf::Clause> clauses_;
  ad::NodeId eval_lo_ = 0;  // x leaves onward get re-interpreted per query
};

Certificate falsify(ClauseSystem& system, const FalsifierQuery& query);

// Plain-arithmetic soundness gate: returns the re-evaluated margin, throws
// SoundnessError unless margin > 0 and ||z||^2 >= epsilon.
double check_counterexample(ClauseSystem& system, const Counterexample& cex,
                            double epsilon);

// epsilon = factor * min{1, lifted-domain extent, min(sum x^2, sum z^2)},
// floored at 1e-8.
double choose_epsilon(double xz_extent, double min_x_sq, double min_z_sq,
                      double factor = 1e-3);

void save_certificate(const Certificate& cert, const std::string& path);
Certificate load_certificate(const std::string& path);

}  // namespace klc::fals
