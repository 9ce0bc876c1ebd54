#include "klc/sim.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace klc::sim {

VectorXd rk4_step(const Plant& plant, const VectorXd& x, const VectorXd& u, double T) {
  const auto& f = plant.deriv;
  VectorXd k1 = f(x, u);
  VectorXd k2 = f(x + 0.5 * T * k1, u);
  VectorXd k3 = f(x + 0.5 * T * k2, u);
  VectorXd k4 = f(x + T * k3, u);
  VectorXd out = x + (T / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) throw IntegrationDiverged(out);
  return out;
}

Plant make_pendulum(const PendulumParams& p) {
  Plant plant;
  plant.name = "pendulum";
  plant.n = 2;
  plant.m = 1;
  const double coeff = p.mass * p.gravity / p.length;
  plant.deriv = [coeff](const VectorXd& x, const VectorXd& u) {
    VectorXd d(2);
    d[0] = x[1];
    d[1] = -coeff * std::sin(x[0]) + u[0];
    return d;
  };
  plant.X = Box::symmetric(2, 1.0);
  plant.U = Box::symmetric(1, p.u_max);
  plant.default_T = 0.005;
  return plant;
}

Plant make_vanderpol(double u_max) {
  Plant plant;
  plant.name = "vanderpol";
  plant.n = 2;
  plant.m = 1;
  plant.deriv = [](const VectorXd& x, const VectorXd& u) {
    VectorXd d(2);
    d[0] = x[1];
    d[1] = (1.0 - x[0] * x[0]) * x[1] + x[0] + u[0];
    return d;
  };
  plant.X = Box::symmetric(2, 10.0);
  plant.U = Box::symmetric(1, u_max);
  plant.default_T = 0.01;
  return plant;
}

Plant make_cartpole(double u_max) {
  Plant plant;
  plant.name = "cartpole";
  plant.n = 4;
  plant.m = 1;
  const double mc = 4.0, mp = 1.0, l = 1.0, g = 9.81;
  // State [cart position, pole angle, cart velocity, pole rate].
  plant.deriv = [=](const VectorXd& x, const VectorXd& u) {
    const double th = x[1], v = x[2], w = x[3];
    const double s = std::sin(th), c = std::cos(th);
    const double den = mc + mp * s * s;
    VectorXd d(4);
    d[0] = v;
    d[1] = w;
    d[2] = (u[0] + mp * s * (l * w * w - g * c)) / den;
    d[3] = (u[0] * c + mp * l * w * w * c * s - (mc + mp) * g * s) / (l * den);
    return d;
  };
  Eigen::VectorXd lo(4), hi(4);
  lo << -2.0, -0.8, -2.0, -2.0;
  hi << 2.0, 0.8, 2.0, 2.0;
  plant.X = Box(lo, hi);
  plant.U = Box::symmetric(1, u_max);
  plant.default_T = 0.005;
  return plant;
}

Plant make_hcw(double u_max) {
  Plant plant;
  plant.name = "hcw";
  plant.n = 4;
  plant.m = 2;
  const double mu = 3.986e14, a = 6793137.0;
  const double n = std::sqrt(mu / (a * a * a));
  plant.deriv = [n](const VectorXd& x, const VectorXd& u) {
    VectorXd d(4);
    d[0] = x[2];
    d[1] = x[3];
    d[2] = 3.0 * n * n * x[0] + 2.0 * n * x[3] + u[0];
    d[3] = -2.0 * n * x[2] + u[1];
    return d;
  };
  plant.X = Box::symmetric(4, 10.0);
  plant.U = Box::symmetric(2, u_max);
  plant.default_T = 0.005;
  return plant;
}

Plant make_plant(const std::string& name) {
  if (name == "pendulum") return make_pendulum();
  if (name == "vanderpol") return make_vanderpol();
  if (name == "cartpole") return make_cartpole();
  if (name == "hcw") return make_hcw();
  throw std::invalid_argument("unknown plant '" + name +
                              "'; valid: pendulum vanderpol cartpole hcw");
}

std::vector<std::string> plant_names() {
  return {"pendulum", "vanderpol", "cartpole", "hcw"};
}

std::size_t Dataset::pair_count() const {
  std::size_t c = 0;
  for (std::size_t k = 0; k + 1 < states.size(); ++k) {
    if (inputs[k].size() > 0) ++c;
  }
  return c;
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::mt19937_64 trajectory_stream(std::uint64_t seed, std::uint64_t traj_index) {
  return std::mt19937_64(mix64(seed ^ mix64(traj_index)));
}

VectorXd sample_box(std::mt19937_64& rng, const Box& b) {
  VectorXd x(b.dim());
  for (int i = 0; i < b.dim(); ++i) x[i] = uniform(rng, b.lo[i], b.hi[i]);
  return x;
}

}  // namespace

Dataset generate_dataset(const Plant& plant, std::size_t N_d, double T,
                         std::uint64_t seed, std::size_t traj_len) {
  if (N_d < 2) throw std::invalid_argument("generate_dataset: N_d must be >= 2");
  if (T <= 0) throw std::invalid_argument("generate_dataset: T must be > 0");
  if (traj_len < 2) traj_len = 2;

  Dataset ds;
  ds.T = T;
  ds.plant_name = plant.name;
  ds.seed = seed;
  ds.traj_len = traj_len;
  ds.states.reserve(N_d);
  ds.inputs.reserve(N_d - 1);

  std::uint64_t traj_index = 0;
  const std::uint64_t max_draws = 1000 + 100 * static_cast<std::uint64_t>(N_d);

  while (ds.states.size() < N_d) {
    if (traj_index >= max_draws) {
      throw InsufficientData("generate_dataset: could not collect " +
                             std::to_string(N_d) + " in-domain snapshots");
    }
    auto rng = trajectory_stream(seed, traj_index++);
    VectorXd x = sample_box(rng, plant.X);

    std::size_t remaining = N_d - ds.states.size();
    std::vector<VectorXd> traj_states{x};
    std::vector<VectorXd> traj_inputs;
    while (traj_states.size() < std::min(traj_len, remaining)) {
      VectorXd u = sample_box(rng, plant.U);
      VectorXd next = rk4_step(plant, traj_states.back(), u, T);
      if (!plant.X.contains(next)) break;
      traj_inputs.push_back(u);
      traj_states.push_back(next);
    }
    // A trajectory must carry at least one transition unless it is the
    // final single-snapshot filler.
    if (traj_states.size() < 2 && remaining >= 2) continue;

    if (!ds.states.empty()) ds.inputs.emplace_back();  // boundary marker
    for (std::size_t i = 0; i < traj_states.size(); ++i) {
      ds.states.push_back(traj_states[i]);
      if (i < traj_inputs.size()) ds.inputs.push_back(traj_inputs[i]);
    }
  }
  return ds;
}

namespace {

void write_double(std::ostream& os, double v) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const int n = ds.states.empty() ? 0 : static_cast<int>(ds.states[0].size());
  int m = 0;
  for (const auto& u : ds.inputs) {
    if (u.size() > 0) {
      m = static_cast<int>(u.size());
      break;
    }
  }
  os << "k";
  for (int i = 1; i <= n; ++i) os << ",x_" << i;
  for (int i = 1; i <= m; ++i) os << ",u_" << i;
  os << "\n";
  for (std::size_t k = 0; k < ds.states.size(); ++k) {
    os << k;
    for (int i = 0; i < n; ++i) {
      os << ",";
      write_double(os, ds.states[k][i]);
    }
    const bool has_u = k + 1 < ds.states.size() && ds.inputs[k].size() > 0;
    for (int i = 0; i < m; ++i) {
      os << ",";
      if (has_u) write_double(os, ds.inputs[k][i]);
    }
    os << "\n";
  }
  std::ofstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("cannot write " + path + ".meta");
  meta << "plant=" << ds.plant_name << "\n";
  meta << "T=";
  write_double(meta, ds.T);
  meta << "\nseed=" << ds.seed << "\n";
  meta << "N_d=" << ds.states.size() << "\n";
  meta << "traj_len=" << ds.traj_len << "\n";
  meta << "n=" << n << "\nm=" << m << "\n";
}

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("cannot read " + path + ".meta");
  Dataset ds;
  int n = 0, m = 0;
  std::size_t n_d = 0;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "plant") ds.plant_name = val;
    else if (key == "T") ds.T = std::stod(val);
    else if (key == "seed") ds.seed = std::stoull(val);
    else if (key == "N_d") n_d = std::stoull(val);
    else if (key == "traj_len") ds.traj_len = std::stoull(val);
    else if (key == "n") n = std::stoi(val);
    else if (key == "m") m = std::stoi(val);
  }

  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::getline(is, line);  // header
  std::vector<VectorXd> row_inputs;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // k
    VectorXd x(n);
    for (int i = 0; i < n; ++i) {
      std::getline(ss, cell, ',');
      x[i] = std::stod(cell);
    }
    VectorXd u(m);
    bool has_u = m > 0;
    for (int i = 0; i < m; ++i) {
      if (!std::getline(ss, cell, ',')) cell.clear();
      if (cell.empty()) {
        has_u = false;
      } else {
        u[i] = std::stod(cell);
      }
    }
    ds.states.push_back(x);
    row_inputs.push_back(has_u ? u : VectorXd());
  }
  for (std::size_t k = 0; k + 1 < ds.states.size(); ++k) {
    ds.inputs.push_back(row_inputs[k]);
  }
  if (n_d != 0 && ds.states.size() != n_d) {
    throw std::runtime_error("dataset row count disagrees with metadata");
  }
  return ds;
}

}  // namespace klc::sim
