#pragma once

// Two-bus constant-voltage load flow.
//
// A generator bus (voltage V_g) feeds a reference bus (voltage V_t, angle 0)
// through a series impedance Z = R + jX. All quantities are per unit. The net
// power S_n = S_g - S_0 flows from the generator bus into the line; the
// transferred power S_t = S_n - S_l arrives at the reference bus.
//
// For fixed |V_g| the reachable (P_n, Q_n) lie on a circle with centre
// |V_g|^2 (R, X) / |Z|^2 and radius V_t |V_g| / |Z|.

#include <cmath>
#include <complex>

#include "lossval/error.hpp"

namespace lossval {

struct LineImpedance {
  double r = 0.0;
  double x = 0.0;

  double magnitude_sq() const { return r * r + x * x; }
  double magnitude() const { return std::sqrt(magnitude_sq()); }
  std::complex<double> complex() const { return {r, x}; }

  /// Builds an impedance from |Z| and the R/X ratio.
  static LineImpedance from_polar(double z_mag, double r_over_x) {
    const double x = z_mag / std::sqrt(1.0 + r_over_x * r_over_x);
    return {r_over_x * x, x};
  }
};

struct TwoBusNetwork {
  LineImpedance z;
  double v_t = 1.0;
  double v_plus = 1.06;
  // Lumped load, positive values consume.
  double s0_p = 0.0;
  double s0_q = 0.0;

  void validate() const {
    if (!(z.r >= 0.0) || !(z.x >= 0.0))
      throw error(errc::invalid_network, "line resistance and reactance must be non-negative");
    if (!(z.magnitude_sq() > 0.0)) throw error(errc::invalid_network, "|Z| must be positive");
    if (!(v_t > 0.0)) throw error(errc::invalid_network, "reference voltage must be positive");
    if (!(v_plus >= v_t)) throw error(errc::invalid_network, "voltage limit below reference voltage");
  }

  bool has_load() const { return s0_p != 0.0 || s0_q != 0.0; }
};

/// Load given as |S_0| and power factor; lagging loads consume reactive power.
inline TwoBusNetwork with_load(TwoBusNetwork net, double s0_mag, double power_factor,
                               bool lagging = true) {
  const double sin_phi = std::sqrt(std::max(0.0, 1.0 - power_factor * power_factor));
  net.s0_p = s0_mag * power_factor;
  net.s0_q = (lagging ? 1.0 : -1.0) * s0_mag * sin_phi;
  return net;
}

/// Default equivalent network: |Z| = 0.203,
/// R/X = 1.85, V_+ = 1.06, |S_0| = 0.72 at 0.987 lagging.
inline TwoBusNetwork example_network(double v_t = 1.0, bool include_load = true) {
  TwoBusNetwork net;
  net.z = LineImpedance::from_polar(0.203, 1.85);
  net.v_t = v_t;
  net.v_plus = 1.06;
  return include_load ? with_load(net, 0.72, 0.987) : net;
}

struct OperatingPoint {
  double p_n = 0.0;
  double q_n = 0.0;
  double v_g = 0.0;
  double p_l = 0.0;
  double p_t = 0.0;
  std::complex<double> voltage{0.0, 0.0};
};

/// Which root of the circle equation to take. `low` is the minus sign: the
/// intersection nearer the origin.
enum class Branch { low, high };

struct VoltageCircle {
  double p_center = 0.0;
  double q_center = 0.0;
  double radius = 0.0;
};

inline VoltageCircle voltage_circle(const TwoBusNetwork& net, double v_g) {
  const double z2 = net.z.magnitude_sq();
  const double v2 = v_g * v_g;
  return {net.z.r * v2 / z2, net.z.x * v2 / z2, net.v_t * v_g / std::sqrt(z2)};
}

inline double k_zv(const TwoBusNetwork& net, double v_g) {
  const double z2 = net.z.magnitude_sq();
  const double v2 = v_g * v_g;
  return z2 * z2 * v2 * v2;
}

inline double w_p(const TwoBusNetwork& net, double q_n, double v_g) {
  const double z2 = net.z.magnitude_sq();
  const double v2 = v_g * v_g;
  return net.z.r * net.z.r / (z2 * z2) - q_n * q_n / (v2 * v2) -
         (v2 - net.v_t * net.v_t - 2.0 * q_n * net.z.x) / (z2 * v2);
}

inline double w_q(const TwoBusNetwork& net, double p_n, double v_g) {
  const double z2 = net.z.magnitude_sq();
  const double v2 = v_g * v_g;
  return net.z.x * net.z.x / (z2 * z2) - p_n * p_n / (v2 * v2) -
         (v2 - net.v_t * net.v_t - 2.0 * p_n * net.z.r) / (z2 * v2);
}

namespace detail {

// radius^2 - offset^2, with a relative tolerance at tangency. This equals
// k_ZV * W / |Z|^4 for either coordinate.
inline double circle_discriminant(const VoltageCircle& c, double offset, const char* what) {
  const double disc = c.radius * c.radius - offset * offset;
  if (disc >= 0.0) return disc;
  if (disc > -1e-12 * c.radius * c.radius) return 0.0;
  throw error(errc::off_circle, what);
}

}  // namespace detail

/// Real net power on the voltage circle for a given reactive net power.
inline double circle_p_of_q(const TwoBusNetwork& net, double q_n, double v_g,
                            Branch branch = Branch::low) {
  const auto c = voltage_circle(net, v_g);
  const double disc =
      detail::circle_discriminant(c, q_n - c.q_center, "reactive flow outside the circle Q-extent");
  const double root = std::sqrt(disc);
  return branch == Branch::low ? c.p_center - root : c.p_center + root;
}

/// Reactive net power on the voltage circle for a given real net power. The
/// low branch is the voltage-rise-mitigation arc where reactive power is
/// absorbed.
inline double circle_q_of_p(const TwoBusNetwork& net, double p_n, double v_g,
                            Branch branch = Branch::low) {
  const auto c = voltage_circle(net, v_g);
  const double disc =
      detail::circle_discriminant(c, p_n - c.p_center, "real flow outside the circle P-extent");
  const double root = std::sqrt(disc);
  return branch == Branch::low ? c.q_center - root : c.q_center + root;
}

/// Real line losses from the flows and generator voltage magnitude. Holds for
/// any consistent (p_n, q_n, v_g), on or off the voltage limit.
inline double line_losses(const TwoBusNetwork& net, double p_n, double q_n, double v_g) {
  const double z2 = net.z.magnitude_sq();
  return net.z.r / z2 *
         (net.v_t * net.v_t + 2.0 * (p_n * net.z.r + q_n * net.z.x) - v_g * v_g);
}

struct NewtonOptions {
  int max_iterations = 100;
  double tolerance = 1e-12;
  int max_halvings = 40;
};

/// Solves V_g (V_g* - V_t) / Z* = S_n for the generator voltage by damped
/// Newton iteration from the flat start V_g = V_t. The flat start lands on the
/// high-voltage solution.
inline OperatingPoint solve_power_flow(const TwoBusNetwork& net, double p_n, double q_n,
                                       const NewtonOptions& opts = {}) {
  if (!(net.z.magnitude_sq() > 0.0)) throw error(errc::invalid_network, "|Z| must be positive");

  const std::complex<double> y = 1.0 / net.z.complex();
  const double g = y.real();
  const double b = y.imag();
  const double vt = net.v_t;

  auto mismatch = [&](double e, double f, double& dp, double& dq) {
    const double m2 = e * e + f * f;
    dp = g * m2 - vt * (e * g + f * b) - p_n;
    dq = -b * m2 - vt * (f * g - e * b) - q_n;
    return std::max(std::abs(dp), std::abs(dq));
  };

  double e = vt;
  double f = 0.0;
  double dp = 0.0;
  double dq = 0.0;
  double residual = mismatch(e, f, dp, dq);

  for (int it = 0; it < opts.max_iterations && residual >= opts.tolerance; ++it) {
    const double j11 = 2.0 * g * e - vt * g;
    const double j12 = 2.0 * g * f - vt * b;
    const double j21 = -2.0 * b * e + vt * b;
    const double j22 = -2.0 * b * f - vt * g;
    const double det = j11 * j22 - j12 * j21;
    if (!std::isfinite(det) || det == 0.0)
      throw error(errc::no_solution, "singular Jacobian (beyond maximum power transfer)");

    const double step_e = -(j22 * dp - j12 * dq) / det;
    const double step_f = -(-j21 * dp + j11 * dq) / det;

    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, scale *= 0.5) {
      double tdp = 0.0;
      double tdq = 0.0;
      const double trial = mismatch(e + scale * step_e, f + scale * step_f, tdp, tdq);
      if (trial < residual) {
        e += scale * step_e;
        f += scale * step_f;
        dp = tdp;
        dq = tdq;
        residual = trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  if (!(residual < opts.tolerance))
    throw error(errc::no_solution, "Newton iteration did not converge (beyond maximum power transfer)");

  OperatingPoint op;
  op.voltage = {e, f};
  op.p_n = p_n;
  op.q_n = q_n;
  op.v_g = std::abs(op.voltage);
  const std::complex<double> current = (op.voltage - vt) * y;
  op.p_l = std::norm(current) * net.z.r;
  op.p_t = p_n - op.p_l;
  return op;
}

struct CirclePoint {
  double p_n = 0.0;
  double q_n = 0.0;
};

/// Marginal loss-induced maximum power transfer point: where dP_t/dP_n = 0
/// along the V_+ circle. P_t is linear in (P_n, Q_n) with a unit-norm gradient,
/// so the maximiser sits at centre + radius * gradient.
inline CirclePoint mlimpt(const TwoBusNetwork& net) {
  net.validate();
  const double z2 = net.z.magnitude_sq();
  const double z = std::sqrt(z2);
  const double r = net.z.r;
  const double x = net.z.x;
  const double vp = net.v_plus;
  const auto c = voltage_circle(net, vp);
  CirclePoint pt;
  pt.q_n = vp * vp * x / z2 * (1.0 - 2.0 * net.v_t * r / (vp * z));
  pt.p_n = c.p_center + c.radius * (x * x - r * r) / z2;
  return pt;
}

/// Branch of circle_p_of_q on which the maximum power transfer point lies.
inline Branch mlimpt_branch(const TwoBusNetwork& net) {
  return net.z.r >= net.z.x ? Branch::low : Branch::high;
}

struct NominalCrossing {
  double p_g = 0.0;
  double p_n = 0.0;
  double q_n = 0.0;
  bool binding = true;
};

/// Generation at which unity-power-factor output first reaches V_+. When the
/// ray Q_n = -Q_0 misses the limit circle the limit never binds and the
/// circle's P-extent is returned with binding = false.
inline NominalCrossing nominal_crossing(const TwoBusNetwork& net) {
  net.validate();
  NominalCrossing nc;
  nc.q_n = -net.s0_q;
  const auto c = voltage_circle(net, net.v_plus);
  const double offset = nc.q_n - c.q_center;
  const double disc = c.radius * c.radius - offset * offset;
  if (disc > 0.0) {
    nc.p_n = c.p_center - std::sqrt(disc);
    nc.binding = true;
  } else {
    nc.p_n = c.p_center + c.radius;
    nc.binding = false;
  }
  nc.p_g = nc.p_n + net.s0_p;
  return nc;
}

}  // namespace lossval
