#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "klc/box.hpp"

namespace klc::sim {

using Eigen::VectorXd;

// Continuous-time control-affine plant xdot = f(x) + g(x) u. Only the
// combined vector field is exposed; learners treat it as a black box.
struct Plant {
  std::string name;
  int n = 0;  // state dimension
  int m = 0;  // input dimension
  std::function<VectorXd(const VectorXd&, const VectorXd&)> deriv;
  Box X;
  Box U;
  double default_T = 0.005;
};

struct IntegrationDiverged : std::runtime_error {
  VectorXd state;
  explicit IntegrationDiverged(VectorXd x)
      : std::runtime_error("rk4_step produced a non-finite state"), state(std::move(x)) {}
};

struct InsufficientData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Classical 4-stage Runge-Kutta advance with zero-order-hold input.
VectorXd rk4_step(const Plant& plant, const VectorXd& x, const VectorXd& u, double T);

struct PendulumParams {
  double mass = 1.0, length = 1.0, gravity = 9.81;
  double u_max = 20.0;
};

Plant make_pendulum(const PendulumParams& p = {});
Plant make_vanderpol(double u_max = 20.0);
Plant make_cartpole(double u_max = 30.0);
Plant make_hcw(double u_max = 30.0);

// Factory by name: pendulum | vanderpol | cartpole | hcw.
Plant make_plant(const std::string& name);
std::vector<std::string> plant_names();

// Ordered snapshots with the inputs that connect them. `inputs[k]` drives
// states[k] to states[k+1]; a size-0 entry marks a trajectory boundary
// (no transition recorded across it).
struct Dataset {
  std::vector<VectorXd> states;
  std::vector<VectorXd> inputs;  // states.size() - 1 entries
  double T = 0.0;
  std::string plant_name;
  std::uint64_t seed = 0;
  std::size_t traj_len = 0;

  std::size_t size() const { return states.size(); }
  bool has_pair(std::size_t k) const {
    return k + 1 < states.size() && inputs[k].size() > 0;
  }
  std::size_t pair_count() const;
};

// Open-loop data generation: initial states uniform in X, inputs uniform
// in U per step, trajectories truncated when the state would exit X.
// Deterministic for a fixed seed (per-trajectory random streams).
Dataset generate_dataset(const Plant& plant, std::size_t N_d, double T,
                         std::uint64_t seed, std::size_t traj_len = 50);

void save_dataset_csv(const Dataset& ds, const std::string& path);
Dataset load_dataset_csv(const std::string& path);

// Portable uniform doubles from a 64-bit stream.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

}  // namespace klc::sim
