#pragma once

// Balanced radial feeder: backward/forward sweep power flow, the generator
// P-Q mesh search with its loss-optimal frontier, two-bus equivalent fitting
// and frontier-based energy valuation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "lossval/error.hpp"
#include "lossval/profiles.hpp"
#include "lossval/twobus.hpp"
#include "lossval/util.hpp"
#include "lossval/valuation.hpp"

namespace lossval {

enum class LoadModel { constant_power, constant_impedance };

struct FeederLine {
  std::size_t from = 0;
  std::size_t to = 0;
  double r = 0.0;
  double x = 0.0;
};

struct FeederLoad {
  std::size_t bus = 0;
  double p = 0.0;
  double q = 0.0;
  LoadModel model = LoadModel::constant_power;
};

// Reactive injection at 1 pu voltage; scales with |V|^2.
struct ShuntCap {
  std::size_t bus = 0;
  double q = 0.0;
};

struct FeederModel {
  std::vector<std::string> bus_names;
  std::size_t slack = 0;
  double v_t = 1.0;
  std::size_t gen_bus = 0;
  double v_plus = 1.06;
  std::vector<FeederLine> lines;
  std::vector<FeederLoad> loads;
  std::vector<ShuntCap> caps;

  std::size_t n_buses() const { return bus_names.size(); }
};

/// Model with every load switched to one voltage dependence.
inline FeederModel with_load_model(FeederModel model, LoadModel kind) {
  for (auto& l : model.loads) l.model = kind;
  return model;
}

/// Model with every load's power factor replaced, keeping |S|.
inline FeederModel with_load_power_factor(FeederModel model, double power_factor,
                                          bool lagging = true) {
  const double sin_phi = std::sqrt(std::max(0.0, 1.0 - power_factor * power_factor));
  for (auto& l : model.loads) {
    const double s = std::hypot(l.p, l.q);
    l.p = s * power_factor;
    l.q = (lagging ? 1.0 : -1.0) * s * sin_phi;
  }
  return model;
}

struct FeederSolution {
  std::vector<std::complex<double>> voltage;
  double total_loss = 0.0;
  double p_t = 0.0;
  double v_max = 0.0;
  double mismatch = 0.0;
  int iterations = 0;
};

struct SweepOptions {
  int max_sweeps = 200;
  double tolerance = 1e-12;  // per-bus complex power mismatch, pu
};

/// Validated radial topology with per-bus aggregated injections. Cheap to
/// copy; solving does not mutate it.
class RadialFeeder {
 public:
  explicit RadialFeeder(FeederModel model) : model_(std::move(model)) { prepare(); }

  const FeederModel& model() const { return model_; }
  std::size_t size() const { return model_.n_buses(); }
  std::size_t parent(std::size_t bus) const { return parent_[bus]; }
  const std::vector<std::size_t>& order() const { return order_; }

  /// Complex power injected at `bus` for voltage `v`, generator excluded.
  std::complex<double> injection(std::size_t bus, std::complex<double> v) const {
    return -s_const_[bus] + y_shunt_[bus] * std::norm(v);
  }

  /// Backward/forward sweep with the generator injecting `s_gen`.
  FeederSolution solve(std::complex<double> s_gen, const SweepOptions& opts = {}) const {
    const std::size_t n = size();
    const std::complex<double> v0(model_.v_t, 0.0);
    std::vector<std::complex<double>> v(n, v0);
    std::vector<std::complex<double>> branch(n, 0.0);

    FeederSolution sol;
    for (int it = 1; it <= opts.max_sweeps; ++it) {
      // Backward: branch current from each bus toward its parent.
      for (auto i = order_.rbegin(); i != order_.rend(); ++i) {
        const std::size_t b = *i;
        if (b == model_.slack) continue;
        std::complex<double> s = injection(b, v[b]);
        if (b == model_.gen_bus) s += s_gen;
        branch[b] += std::conj(s / v[b]);
        branch[parent_[b]] += branch[b];
      }
      // Forward: propagate voltages from the slack.
      for (std::size_t b : order_) {
        if (b == model_.slack) continue;
        v[b] = v[parent_[b]] + z_up_[b] * branch[b];
        if (!std::isfinite(v[b].real()) || !std::isfinite(v[b].imag()) || std::abs(v[b]) < 0.05 ||
            std::abs(v[b]) > 5.0)
          throw error(errc::no_convergence, "sweep diverged (beyond feeder loadability)");
      }
      std::fill(branch.begin(), branch.end(), std::complex<double>(0.0, 0.0));
      sol.mismatch = mismatch(v, s_gen);
      sol.iterations = it;
      if (sol.mismatch < opts.tolerance) {
        finish(v, sol);
        return sol;
      }
    }
    throw error(errc::no_convergence, "sweep did not converge (beyond feeder loadability)");
  }

 private:
  // Nodal power mismatch from the branch currents implied by the voltages.
  double mismatch(const std::vector<std::complex<double>>& v, std::complex<double> s_gen) const {
    const std::size_t n = size();
    std::vector<std::complex<double>> children(n, 0.0);
    std::vector<std::complex<double>> up(n, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      if (b == model_.slack) continue;
      up[b] = (v[b] - v[parent_[b]]) / z_up_[b];
      children[parent_[b]] += up[b];
    }
    double worst = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == model_.slack) continue;
      std::complex<double> s = injection(b, v[b]);
      if (b == model_.gen_bus) s += s_gen;
      const std::complex<double> calc = v[b] * std::conj(up[b] - children[b]);
      worst = std::max(worst, std::abs(calc - s));
    }
    return worst;
  }

  void finish(const std::vector<std::complex<double>>& v, FeederSolution& sol) const {
    sol.voltage = v;
    sol.total_loss = 0.0;
    std::complex<double> into_slack(0.0, 0.0);
    sol.v_max = 0.0;
    for (std::size_t b = 0; b < size(); ++b) {
      sol.v_max = std::max(sol.v_max, std::abs(v[b]));
      if (b == model_.slack) continue;
      const std::complex<double> j = (v[b] - v[parent_[b]]) / z_up_[b];
      sol.total_loss += std::norm(j) * z_up_[b].real();
      if (parent_[b] == model_.slack) into_slack += j;
    }
    sol.p_t = (v[model_.slack] * std::conj(into_slack)).real();
  }

  void prepare() {
    const std::size_t n = model_.n_buses();
    if (n < 2) throw error(errc::invalid_network, "feeder needs at least two buses");
    if (model_.slack >= n || model_.gen_bus >= n)
      throw error(errc::invalid_network, "slack or generator bus out of range");
    if (model_.gen_bus == model_.slack)
      throw error(errc::invalid_network, "generator cannot sit on the slack bus");
    if (!(model_.v_t > 0.0) || !(model_.v_plus >= model_.v_t))
      throw error(errc::invalid_network, "need 0 < v_t <= v_plus");
    if (model_.lines.size() != n - 1)
      throw error(errc::invalid_network, "a radial feeder on n buses has n - 1 lines");

    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);
    for (std::size_t k = 0; k < model_.lines.size(); ++k) {
      const auto& l = model_.lines[k];
      if (l.from >= n || l.to >= n || l.from == l.to)
        throw error(errc::invalid_network, "line endpoint out of range");
      if (!(l.r >= 0.0) || !(l.x >= 0.0) || !(l.r * l.r + l.x * l.x > 0.0))
        throw error(errc::invalid_network, "line impedance must be non-negative and non-zero");
      adj[l.from].push_back({l.to, k});
      adj[l.to].push_back({l.from, k});
    }

    parent_.assign(n, n);
    z_up_.assign(n, 0.0);
    order_.clear();
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> frontier;
    frontier.push(model_.slack);
    seen[model_.slack] = true;
    while (!frontier.empty()) {
      const std::size_t b = frontier.front();
      frontier.pop();
      order_.push_back(b);
      for (auto [nb, k] : adj[b]) {
        if (seen[nb]) continue;
        seen[nb] = true;
        parent_[nb] = b;
        z_up_[nb] = {model_.lines[k].r, model_.lines[k].x};
        frontier.push(nb);
      }
    }
    if (order_.size() != n) throw error(errc::invalid_network, "line graph is not connected");

    s_const_.assign(n, 0.0);
    y_shunt_.assign(n, 0.0);
    for (const auto& l : model_.loads) {
      if (l.bus >= n) throw error(errc::invalid_network, "load bus out of range");
      if (l.model == LoadModel::constant_power)
        s_const_[l.bus] += std::complex<double>(l.p, l.q);
      else
        y_shunt_[l.bus] -= std::complex<double>(l.p, l.q);
    }
    for (const auto& c : model_.caps) {
      if (c.bus >= n) throw error(errc::invalid_network, "capacitor bus out of range");
      y_shunt_[c.bus] += std::complex<double>(0.0, c.q);
    }
  }

  FeederModel model_;
  std::vector<std::size_t> parent_;
  std::vector<std::complex<double>> z_up_;
  std::vector<std::size_t> order_;
  std::vector<std::complex<double>> s_const_;
  std::vector<std::complex<double>> y_shunt_;  // |V|^2-scaled injection
};

inline FeederSolution solve_feeder(const FeederModel& model, std::complex<double> s_gen) {
  return RadialFeeder(model).solve(s_gen);
}

// ---------------------------------------------------------------------------
// Mesh search

struct MeshSpec {
  double p_lo = 0.0;
  double p_hi = 1.0;
  double q_lo = -1.0;
  double q_hi = 0.0;
  std::size_t n_p = 200;
  std::size_t n_q = 240;
};

struct MeshPoint {
  double p_g = 0.0;
  double q_g = 0.0;
  bool converged = false;
  double p_t = std::numeric_limits<double>::quiet_NaN();
  double v_max = std::numeric_limits<double>::quiet_NaN();
};

/// Solved mesh, p-major: point (i, j) sits at index i * n_q + j.
struct MeshGrid {
  MeshSpec spec;
  std::vector<double> p_values;
  std::vector<double> q_values;
  std::vector<MeshPoint> points;

  const MeshPoint& at(std::size_t i, std::size_t j) const { return points[i * q_values.size() + j]; }
};

struct FrontierRow {
  double p_g = 0.0;
  std::optional<double> q_g_star;
  double p_t_star = std::numeric_limits<double>::quiet_NaN();

  bool feasible() const { return q_g_star.has_value(); }
};

struct MeshResult {
  MeshGrid grid;
  double q_tilde_g = 0.0;
  std::vector<bool> feasible;  // parallel to grid.points
  std::vector<FrontierRow> frontier;

  std::size_t empty_rows() const {
    return static_cast<std::size_t>(std::count_if(frontier.begin(), frontier.end(),
                                                  [](const auto& r) { return !r.feasible(); }));
  }
};

inline MeshGrid solve_mesh(const RadialFeeder& feeder, const MeshSpec& spec, unsigned threads = 1) {
  if (spec.n_p < 2 || spec.n_q < 2) throw error(errc::invalid_argument, "mesh needs n_p, n_q >= 2");
  if (!(spec.p_hi >= spec.p_lo) || !(spec.q_hi >= spec.q_lo))
    throw error(errc::invalid_argument, "empty mesh range");
  MeshGrid grid;
  grid.spec = spec;
  grid.p_values = linspace(spec.p_lo, spec.p_hi, spec.n_p);
  grid.q_values = linspace(spec.q_lo, spec.q_hi, spec.n_q);
  grid.points.resize(spec.n_p * spec.n_q);
  parallel_for(grid.points.size(), threads, [&](std::size_t k) {
    MeshPoint pt;
    pt.p_g = grid.p_values[k / spec.n_q];
    pt.q_g = grid.q_values[k % spec.n_q];
    try {
      const auto sol = feeder.solve({pt.p_g, pt.q_g});
      pt.converged = true;
      pt.p_t = sol.p_t;
      pt.v_max = sol.v_max;
    } catch (const error&) {
      pt.converged = false;
    }
    grid.points[k] = pt;
  });
  return grid;
}

/// Removes overvoltage points and points using more reactive power than
/// q_tilde_g, then keeps the transfer-maximising q for every p row.
inline MeshResult reduce_frontier(const MeshGrid& grid, double v_plus, double q_tilde_g) {
  MeshResult res;
  res.grid = grid;
  res.q_tilde_g = q_tilde_g;
  res.feasible.resize(grid.points.size());
  const double q_slack = 1e-12 * (1.0 + q_tilde_g);
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    const auto& pt = grid.points[k];
    res.feasible[k] = pt.converged && pt.v_max <= v_plus && std::abs(pt.q_g) <= q_tilde_g + q_slack;
  }
  const std::size_t n_q = grid.q_values.size();
  res.frontier.resize(grid.p_values.size());
  for (std::size_t i = 0; i < grid.p_values.size(); ++i) {
    FrontierRow row;
    row.p_g = grid.p_values[i];
    for (std::size_t j = 0; j < n_q; ++j) {
      const std::size_t k = i * n_q + j;
      if (!res.feasible[k]) continue;
      if (!row.q_g_star || grid.points[k].p_t > row.p_t_star) {
        row.q_g_star = grid.points[k].q_g;
        row.p_t_star = grid.points[k].p_t;
      }
    }
    res.frontier[i] = row;
  }
  return res;
}

inline MeshResult mesh_search(const FeederModel& model, const MeshSpec& spec, double q_tilde_g,
                              unsigned threads = 1) {
  const RadialFeeder feeder(model);
  return reduce_frontier(solve_mesh(feeder, spec, threads), model.v_plus, q_tilde_g);
}

// ---------------------------------------------------------------------------
// Continuous operating characteristic on the feeder

// Deepest absorption considered when tracing the limit curve.
inline constexpr double limit_q_floor = -5.0;

struct FeederPoint {
  double p_g = 0.0;
  double q_g = 0.0;
  double p_t = 0.0;
  double v_max = 0.0;
};

namespace detail {

inline std::optional<FeederSolution> try_solve(const RadialFeeder& f, double p, double q) {
  try {
    return f.solve({p, q});
  } catch (const error&) {
    return std::nullopt;
  }
}

inline bool within_limit(const RadialFeeder& f, double p, double q) {
  const auto sol = try_solve(f, p, q);
  return sol && sol->v_max <= f.model().v_plus;
}

}  // namespace detail

/// Largest unity-power-factor generation that keeps every bus at or below
/// the limit.
inline FeederPoint feeder_nominal_crossing(const RadialFeeder& feeder) {
  if (!detail::within_limit(feeder, 0.0, 0.0))
    throw error(errc::undefined, "feeder already violates the limit without generation");
  double lo = 0.0;
  double hi = 0.25;
  int guard = 0;
  while (detail::within_limit(feeder, hi, 0.0)) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 40) throw error(errc::undefined, "voltage limit never binds");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::within_limit(feeder, mid, 0.0) ? lo : hi) = mid;
  }
  const auto sol = feeder.solve({lo, 0.0});
  return {lo, 0.0, sol.p_t, sol.v_max};
}

/// Least reactive absorption (q_g in [q_min, 0]) that holds the limit at p_g.
inline FeederPoint feeder_limit_point(const RadialFeeder& feeder, double p_g, double q_min) {
  if (detail::within_limit(feeder, p_g, 0.0)) {
    const auto sol = feeder.solve({p_g, 0.0});
    return {p_g, 0.0, sol.p_t, sol.v_max};
  }
  // Step down from zero: deep absorption can stall the sweep before q_min.
  const double step = std::min(0.02, -q_min);
  double hi = 0.0;  // infeasible
  double lo = hi;
  for (;;) {
    lo = std::max(hi - step, q_min);
    const auto sol = detail::try_solve(feeder, p_g, lo);
    if (!sol || lo >= hi)
      throw error(errc::empty_frontier, "no reactive power within the limit holds the voltage");
    if (sol->v_max <= feeder.model().v_plus) break;
    if (lo <= q_min)
      throw error(errc::empty_frontier, "no reactive power within the limit holds the voltage");
    hi = lo;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::within_limit(feeder, p_g, mid) ? lo : hi) = mid;
  }
  const auto sol = feeder.solve({p_g, lo});
  return {p_g, lo, sol.p_t, sol.v_max};
}

struct FeederPowerError {
  double delta_p_g = 0.0;
  double delta_p_t = 0.0;
  double q_g = 0.0;
  double eps_p = 0.0;
};

/// Measured power error at generation p_g along the limit curve.
inline FeederPowerError feeder_power_error(const RadialFeeder& feeder, const FeederPoint& reference,
                                           double p_g, double q_min) {
  const auto pt = feeder_limit_point(feeder, p_g, q_min);
  FeederPowerError out;
  out.q_g = pt.q_g;
  out.delta_p_g = p_g - reference.p_g;
  out.delta_p_t = pt.p_t - reference.p_t;
  if (std::abs(out.delta_p_t) < degenerate_threshold)
    throw error(errc::degenerate_denominator, "transferred power increase vanishes");
  out.eps_p = (out.delta_p_g - out.delta_p_t) / out.delta_p_t;
  return out;
}

/// Maximum of transferred power along the limit curve (golden-section search).
inline FeederPoint feeder_mlimpt(const RadialFeeder& feeder, const FeederPoint& reference,
                                 double q_min) {
  // Bracket the end of the reachable curve.
  double lo = reference.p_g;
  double hi = reference.p_g + 0.25;
  auto reachable = [&](double p) {
    try {
      feeder_limit_point(feeder, p, q_min);
      return true;
    } catch (const error&) {
      return false;
    }
  };
  int guard = 0;
  while (reachable(hi)) {
    lo = hi;
    hi = reference.p_g + 2.0 * (hi - reference.p_g);
    if (++guard > 30) break;
  }
  if (!reachable(hi)) {
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (reachable(mid) ? lo : hi) = mid;
    }
  }
  double a = reference.p_g;
  double b = lo;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  auto pt_at = [&](double p) { return feeder_limit_point(feeder, p, q_min).p_t; };
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = pt_at(c);
  double fd = pt_at(d);
  for (int it = 0; it < 200 && b - a > 1e-10; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = pt_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = pt_at(d);
    }
  }
  return feeder_limit_point(feeder, 0.5 * (a + b), q_min);
}

// ---------------------------------------------------------------------------
// Two-bus equivalent fitting

struct FitOptions {
  std::size_t n_p = 6;
  std::size_t n_q = 5;
  std::optional<double> p_max;  // default: feeder maximum power transfer point
  std::optional<double> q_min;  // default: reactive power at that point
  std::optional<TwoBusNetwork> initial;
  int max_iterations = 200;
};

struct FitResult {
  TwoBusNetwork network;
  double rms = 0.0;  // pu voltage
  std::size_t probes = 0;
  int iterations = 0;
};

/// Series impedance of the slack-to-generator path and total load, as a
/// starting equivalent.
inline TwoBusNetwork path_equivalent(const RadialFeeder& feeder) {
  const auto& m = feeder.model();
  TwoBusNetwork net;
  net.v_t = m.v_t;
  net.v_plus = m.v_plus;
  for (std::size_t b = m.gen_bus; b != m.slack; b = feeder.parent(b)) {
    for (const auto& l : m.lines) {
      if ((l.from == b && l.to == feeder.parent(b)) || (l.to == b && l.from == feeder.parent(b))) {
        net.z.r += l.r;
        net.z.x += l.x;
        break;
      }
    }
  }
  for (const auto& l : m.loads) {
    net.s0_p += l.p;
    net.s0_q += l.q;
  }
  for (const auto& c : m.caps) net.s0_q -= c.q;
  return net;
}

/// Least-squares fit of (R, X, V_t, P_0, Q_0) so that the two-bus generator
/// voltage magnitude matches the feeder's over a grid of probe injections.
inline FitResult fit_twobus(const FeederModel& model, const FitOptions& opts = {}) {
  const RadialFeeder feeder(model);
  TwoBusNetwork start = opts.initial.value_or(path_equivalent(feeder));
  start.v_plus = model.v_plus;

  double p_max = 0.0;
  double q_min = 0.0;
  if (opts.p_max && opts.q_min) {
    p_max = *opts.p_max;
    q_min = *opts.q_min;
  } else {
    const auto ref = feeder_nominal_crossing(feeder);
    const auto m = feeder_mlimpt(feeder, ref, limit_q_floor);
    p_max = opts.p_max.value_or(m.p_g);
    q_min = opts.q_min.value_or(std::min(m.q_g, -0.05));
  }

  struct Probe {
    double p, q, v;
  };
  std::vector<Probe> probes;
  for (double p : linspace(0.0, p_max, opts.n_p)) {
    for (double q : linspace(q_min, 0.0, opts.n_q)) {
      if (auto sol = detail::try_solve(feeder, p, q))
        probes.push_back({p, q, std::abs(sol->voltage[model.gen_bus])});
    }
  }
  if (probes.size() < 20) throw error(errc::ill_conditioned, "fewer than 20 solvable probes");

  using Vec = Eigen::VectorXd;
  constexpr int n_par = 5;
  auto unpack = [&](const Vec& th) {
    TwoBusNetwork net = start;
    net.z = {th[0], th[1]};
    net.v_t = th[2];
    net.s0_p = th[3];
    net.s0_q = th[4];
    return net;
  };
  auto residuals = [&](const Vec& th, Vec& out) {
    out.resize(static_cast<Eigen::Index>(probes.size()));
    if (th[0] < 0.0 || th[1] < 0.0 || th[2] <= 0.0 || th[0] * th[0] + th[1] * th[1] <= 0.0)
      return false;
    const auto net = unpack(th);
    for (std::size_t i = 0; i < probes.size(); ++i) {
      try {
        const auto op = solve_power_flow(net, probes[i].p - net.s0_p, probes[i].q - net.s0_q);
        out[static_cast<Eigen::Index>(i)] = op.v_g - probes[i].v;
      } catch (const error&) {
        return false;
      }
    }
    return true;
  };

  Vec theta(n_par);
  theta << start.z.r, start.z.x, start.v_t, start.s0_p, start.s0_q;
  Vec res;
  // A path-sum start can sit beyond its own transfer limit at the outer
  // probes; shrink it until every probe solves.
  int shrink = 0;
  while (!residuals(theta, res)) {
    if (++shrink > 40) throw error(errc::ill_conditioned, "initial equivalent is unsolvable");
    theta[0] *= 0.85;
    theta[1] *= 0.85;
  }
  double cost = res.squaredNorm();
  double lambda = 1e-3;
  FitResult fit;
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(probes.size()), n_par);

  for (int it = 0; it < opts.max_iterations; ++it) {
    fit.iterations = it;
    for (int k = 0; k < n_par; ++k) {
      const double h = 1e-7 * std::max(1.0, std::abs(theta[k]));
      Vec tp = theta;
      Vec tm = theta;
      tp[k] += h;
      tm[k] -= h;
      Vec rp;
      Vec rm;
      const bool okp = residuals(tp, rp);
      const bool okm = residuals(tm, rm);
      if (okp && okm)
        jac.col(k) = (rp - rm) / (2.0 * h);
      else if (okp)
        jac.col(k) = (rp - res) / h;
      else if (okm)
        jac.col(k) = (res - rm) / h;
      else
        throw error(errc::ill_conditioned, "cannot differentiate the probe residuals");
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
    qr.setThreshold(1e-10);
    if (qr.rank() < n_par) throw error(errc::ill_conditioned, "probe matrix is rank-deficient");

    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Vec grad = jac.transpose() * res;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-15) break;
    bool improved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal();
      const Vec step = a.ldlt().solve(-grad);
      Vec trial = theta + step;
      Vec trial_res;
      if (residuals(trial, trial_res) && trial_res.squaredNorm() < cost) {
        const double gain = cost - trial_res.squaredNorm();
        theta = trial;
        res = trial_res;
        cost = res.squaredNorm();
        lambda = std::max(lambda * 0.3, 1e-12);
        improved = true;
        if (step.lpNorm<Eigen::Infinity>() < 1e-14 || gain < 1e-30) it = opts.max_iterations;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }

  fit.network = unpack(theta);
  fit.probes = probes.size();
  fit.rms = std::sqrt(cost / static_cast<double>(probes.size()));
  return fit;
}

// ---------------------------------------------------------------------------
// Frontier-based energy valuation

namespace detail {

// Highest p row reachable from the bottom of the frontier without a gap; the
// generator is curtailed to this value.
inline std::size_t last_contiguous_row(const std::vector<FrontierRow>& rows) {
  if (rows.empty() || !rows.front().feasible())
    throw error(errc::empty_frontier, "first frontier row is infeasible");
  std::size_t k = 0;
  while (k + 1 < rows.size() && rows[k + 1].feasible()) ++k;
  return k;
}

inline double interpolate_pt(const std::vector<FrontierRow>& rows, std::size_t last, double p) {
  if (p <= rows.front().p_g) return rows.front().p_t_star;
  if (p >= rows[last].p_g) return rows[last].p_t_star;
  auto it = std::upper_bound(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(last) + 1, p,
                             [](double v, const FrontierRow& r) { return v < r.p_g; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double s = (p - a.p_g) / (b.p_g - a.p_g);
  return a.p_t_star + s * (b.p_t_star - a.p_t_star);
}

}  // namespace detail

/// Energy valuation on the feeder: for every sample the generator takes the
/// available power up to the last feasible frontier row, and the frontier's
/// transferred power is interpolated linearly in p_g.
inline ValuationResult feeder_energy_valuation(const MeshGrid& grid, double v_plus,
                                               const GenerationProfile& profile, double q_tilde_g) {
  profile.validate();
  const auto with = reduce_frontier(grid, v_plus, q_tilde_g);
  const auto without = reduce_frontier(grid, v_plus, 0.0);
  const std::size_t last_w = detail::last_contiguous_row(with.frontier);
  const std::size_t last_o = detail::last_contiguous_row(without.frontier);
  const double cap_w = with.frontier[last_w].p_g;
  const double cap_o = without.frontier[last_o].p_g;
  const double p_floor = grid.p_values.front();

  ValuationResult result;
  for (std::size_t i = 0; i < profile.size(); ++i)
    if (profile.p_s[i] < p_floor) ++result.clamped_samples;

  detail::integrate_profile(
      profile, {cap_w, cap_o},
      [&](double p_s, double& pg_w, double& pt_w, double& pg_o, double& pt_o) {
        const double p = std::max(p_s, p_floor);
        pg_w = std::min(p, cap_w);
        pt_w = detail::interpolate_pt(with.frontier, last_w, pg_w);
        pg_o = std::min(p, cap_o);
        pt_o = detail::interpolate_pt(without.frontier, last_o, pg_o);
      },
      result);
  result.finalize();
  return result;
}

inline ValuationResult feeder_energy_valuation(const FeederModel& model, const MeshSpec& spec,
                                               const GenerationProfile& profile, double q_tilde_g,
                                               unsigned threads = 1) {
  const RadialFeeder feeder(model);
  return feeder_energy_valuation(solve_mesh(feeder, spec, threads), model.v_plus, profile,
                                 q_tilde_g);
}

}  // namespace lossval
