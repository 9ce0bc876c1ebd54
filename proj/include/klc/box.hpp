#pragma once

#include <Eigen/Dense>

namespace klc {

// Axis-aligned compact domain, lower/upper bound per coordinate.
struct Box {
  Eigen::VectorXd lo, hi;

  Box() = default;
  Box(Eigen::VectorXd l, Eigen::VectorXd h) : lo(std::move(l)), hi(std::move(h)) {}

  static Box symmetric(int n, double half_width) {
    return Box(Eigen::VectorXd::Constant(n, -half_width),
               Eigen::VectorXd::Constant(n, half_width));
  }

  int dim() const { return static_cast<int>(lo.size()); }

  bool contains(const Eigen::VectorXd& x, double slack = 0.0) const {
    for (int i = 0; i < dim(); ++i) {
      if (x[i] < lo[i] - slack || x[i] > hi[i] + slack) return false;
    }
    return true;
  }

  double width(int i) const { return hi[i] - lo[i]; }

  double max_width() const {
    double w = 0.0;
    for (int i = 0; i < dim(); ++i) w = std::max(w, width(i));
    return w;
  }

  int widest_axis() const {
    int k = 0;
    for (int i = 1; i < dim(); ++i) {
      if (width(i) > width(k)) k = i;
    }
    return k;
  }

  Eigen::VectorXd center() const { return 0.5 * (lo + hi); }

  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const {
    return x.cwiseMax(lo).cwiseMin(hi);
  }
};

}  // namespace klc
