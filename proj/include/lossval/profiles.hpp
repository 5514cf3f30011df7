#pragma once

// Generation profiles, the three-stage voltage control characteristic and
// time-domain energy valuation for the two-bus network.

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lossval/error.hpp"
#include "lossval/twobus.hpp"
#include "lossval/valuation.hpp"

namespace lossval {

struct GenerationProfile {
  std::vector<double> tau;  // hours
  std::vector<double> p_s;  // pu

  double horizon() const { return tau.empty() ? 0.0 : tau.back(); }
  std::size_t size() const { return tau.size(); }

  void validate() const {
    if (tau.size() != p_s.size()) throw error(errc::invalid_argument, "profile column lengths differ");
    if (tau.size() < 2) throw error(errc::invalid_argument, "profile needs at least two samples");
    if (tau.front() != 0.0) throw error(errc::invalid_argument, "profile must start at tau = 0");
    for (std::size_t i = 0; i < tau.size(); ++i) {
      if (i > 0 && !(tau[i] > tau[i - 1]))
        throw error(errc::invalid_argument, "profile tau must be strictly increasing");
      if (!(p_s[i] >= 0.0)) throw error(errc::invalid_argument, "profile power must be non-negative");
    }
  }
};

/// Clear-sky day: P_S = max{(P_hat/3)(1 + 2 cos(pi tau / 12)), 0} over 24 h.
inline GenerationProfile solar_profile(double p_hat_g, double step_hours) {
  if (!(p_hat_g >= 0.0)) throw error(errc::invalid_argument, "peak power must be non-negative");
  if (!(step_hours > 0.0)) throw error(errc::invalid_argument, "step must be positive");
  const double intervals = 24.0 / step_hours;
  const auto n = static_cast<std::size_t>(std::llround(intervals));
  if (n == 0 || std::abs(intervals - static_cast<double>(n)) > 1e-9)
    throw error(errc::invalid_argument, "step must divide 24 hours evenly");

  GenerationProfile prof;
  prof.tau.resize(n + 1);
  prof.p_s.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double tau = 24.0 * static_cast<double>(i) / static_cast<double>(n);
    prof.tau[i] = tau;
    prof.p_s[i] =
        std::max(p_hat_g / 3.0 * (1.0 + 2.0 * std::cos(std::numbers::pi * tau / 12.0)), 0.0);
  }
  return prof;
}

/// Reads a `tau_hours,p_s_pu` CSV (header required).
inline GenerationProfile read_profile_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw error(errc::parse_error, "empty profile file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "tau_hours,p_s_pu") throw error(errc::parse_error, "expected header tau_hours,p_s_pu");

  GenerationProfile prof;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    double tau = 0.0;
    double p = 0.0;
    char comma = 0;
    if (!(row >> tau >> comma >> p) || comma != ',')
      throw error(errc::parse_error, "bad profile row at line " + std::to_string(lineno));
    prof.tau.push_back(tau);
    prof.p_s.push_back(p);
  }
  prof.validate();
  return prof;
}

inline GenerationProfile read_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::parse_error, "cannot open profile " + path);
  return read_profile_csv(in);
}

/// P_hat = P_nom + c (P' - P_nom), both in generator coordinates.
inline double peak_power(const TwoBusNetwork& net, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw error(errc::invalid_argument, "c must lie in (0, 1]");
  const auto nc = nominal_crossing(net);
  if (!nc.binding) throw error(errc::undefined, "voltage limit never binds");
  const double p_prime_g = mlimpt(net).p_n + net.s0_p;
  return nc.p_g + c * (p_prime_g - nc.p_g);
}

struct ControlSetpoints {
  double p_g_nom = 0.0;
  double q_tilde_g = 0.0;
  double p_tilde_g = 0.0;
  double q_at_tilde_g = 0.0;  // generator reactive power at p_tilde_g
  bool binding = true;
};

inline ControlSetpoints control_setpoints(const TwoBusNetwork& net, double q_tilde_g) {
  if (!(q_tilde_g >= 0.0)) throw error(errc::invalid_argument, "reactive limit is a magnitude");
  ControlSetpoints sp;
  sp.q_tilde_g = q_tilde_g;
  const auto nc = nominal_crossing(net);
  if (!nc.binding) {
    sp.binding = false;
    sp.p_g_nom = sp.p_tilde_g = std::numeric_limits<double>::infinity();
    return sp;
  }
  sp.p_g_nom = nc.p_g;

  const auto c = voltage_circle(net, net.v_plus);
  const double q_target = -q_tilde_g - net.s0_q;
  double p_tilde_n = 0.0;
  double q_tilde_n = 0.0;
  if (q_target >= c.q_center - c.radius) {
    p_tilde_n = circle_p_of_q(net, q_target, net.v_plus, Branch::low);
    q_tilde_n = q_target;
  } else {
    // Absorption limit never reached on the lower arc; continue past the
    // bottom until injection would exceed the limit or the arc ends.
    const double q_inject = q_tilde_g - net.s0_q;
    if (q_inject < c.q_center) {
      p_tilde_n = circle_p_of_q(net, q_inject, net.v_plus, Branch::high);
      q_tilde_n = q_inject;
    } else {
      p_tilde_n = c.p_center + c.radius;
      q_tilde_n = c.q_center;
    }
  }
  sp.p_tilde_g = std::max(p_tilde_n + net.s0_p, sp.p_g_nom);
  sp.q_at_tilde_g = q_tilde_g == 0.0 ? 0.0 : q_tilde_n + net.s0_q;
  return sp;
}

struct ControlOutput {
  int stage = 1;
  std::complex<double> s_g{0.0, 0.0};
  OperatingPoint operating;
};

namespace detail {

inline OperatingPoint on_circle_point(const TwoBusNetwork& net, double p_n, double q_n) {
  OperatingPoint op;
  op.p_n = p_n;
  op.q_n = q_n;
  op.v_g = net.v_plus;
  op.p_l = line_losses(net, p_n, q_n, net.v_plus);
  op.p_t = p_n - op.p_l;
  const std::complex<double> s_n(p_n, q_n);
  op.voltage = (net.v_plus * net.v_plus - s_n * std::conj(net.z.complex())) / net.v_t;
  return op;
}

}  // namespace detail

/// Three-stage characteristic: unity power factor, then along the V_+ circle
/// until the reactive limit, then curtailment. Setpoints are computed once.
class ControlCharacteristic {
 public:
  ControlCharacteristic(const TwoBusNetwork& net, double q_tilde_g)
      : net_(net), sp_(control_setpoints(net, q_tilde_g)) {}

  const ControlSetpoints& setpoints() const { return sp_; }
  const TwoBusNetwork& network() const { return net_; }

  ControlOutput operator()(double p_s) const {
    if (!(p_s >= 0.0)) throw error(errc::invalid_argument, "available power must be non-negative");
    ControlOutput out;
    if (p_s <= sp_.p_g_nom) {
      out.stage = 1;
      out.s_g = {p_s, 0.0};
      out.operating = solve_power_flow(net_, p_s - net_.s0_p, -net_.s0_q);
      return out;
    }
    try {
      if (p_s <= sp_.p_tilde_g) {
        out.stage = 2;
        const double p_n = p_s - net_.s0_p;
        const double q_n = circle_q_of_p(net_, p_n, net_.v_plus, Branch::low);
        out.s_g = {p_s, q_n + net_.s0_q};
        out.operating = detail::on_circle_point(net_, p_n, q_n);
        return out;
      }
      out.stage = 3;
      const double p_n = sp_.p_tilde_g - net_.s0_p;
      const double q_n = sp_.q_at_tilde_g - net_.s0_q;
      out.s_g = {sp_.p_tilde_g, sp_.q_at_tilde_g};
      out.operating = detail::on_circle_point(net_, p_n, q_n);
      return out;
    } catch (const error& e) {
      throw error(errc::infeasible_setpoint, e.what());
    }
  }

 private:
  TwoBusNetwork net_;
  ControlSetpoints sp_;
};

inline ControlOutput apply_control(const TwoBusNetwork& net, double p_s, double q_tilde_g) {
  return ControlCharacteristic(net, q_tilde_g)(p_s);
}

struct ValuationResult {
  double e_g_with = 0.0;
  double e_g_without = 0.0;
  double e_t_with = 0.0;
  double e_t_without = 0.0;
  double delta_e_g = 0.0;
  double delta_e_t = 0.0;
  std::optional<double> eps_e;  // empty when delta_e_t is degenerate
  std::size_t clamped_samples = 0;

  void finalize() {
    delta_e_g = e_g_with - e_g_without;
    delta_e_t = e_t_with - e_t_without;
    if (std::abs(delta_e_t) >= degenerate_threshold)
      eps_e = (delta_e_g - delta_e_t) / delta_e_t;
    else
      eps_e.reset();
  }
};

namespace detail {

// Integrates eval(P_S(tau)) over the profile. eval writes P_g and P_t for the
// "with" and "without" cases; its kinks sit at the breakpoints.
template <class Eval>
void integrate_profile(const GenerationProfile& profile, const std::vector<double>& breakpoints,
                       Eval&& eval, ValuationResult& acc) {
  // 3-point Gauss-Legendre on [0, 1].
  constexpr double gx[3] = {0.1127016653792583, 0.5, 0.8872983346207417};
  constexpr double gw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

  // Integrates over [ta, tb] with P_S(tau) = a s^2 + b s + c, s = tau - t_mid,
  // split where P_S crosses a breakpoint.
  auto piece = [&](double ta, double tb, double t_mid, double a, double b, double c) {
    auto poly = [&](double t) {
      const double u = t - t_mid;
      return std::max((a * u + b) * u + c, 0.0);
    };
    std::vector<double> cuts{ta, tb};
    for (double bp : breakpoints) {
      if (!std::isfinite(bp)) continue;
      const double cc = c - bp;
      double roots[2];
      int n = 0;
      if (a == 0.0) {
        if (b != 0.0) roots[n++] = -cc / b;
      } else {
        const double disc = b * b - 4.0 * a * cc;
        if (disc > 0.0) {
          const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
          roots[n++] = q / a;
          if (q != 0.0) roots[n++] = cc / q;
        }
      }
      for (int k = 0; k < n; ++k) {
        const double t = t_mid + roots[k];
        if (t > ta && t < tb) cuts.push_back(t);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double h = cuts[k + 1] - cuts[k];
      if (!(h > 0.0)) continue;
      for (int g = 0; g < 3; ++g) {
        double pg_w = 0.0, pt_w = 0.0, pg_o = 0.0, pt_o = 0.0;
        eval(poly(cuts[k] + gx[g] * h), pg_w, pt_w, pg_o, pt_o);
        const double w = gw[g] * h;
        acc.e_g_with += w * pg_w;
        acc.e_t_with += w * pt_w;
        acc.e_g_without += w * pg_o;
        acc.e_t_without += w * pt_o;
      }
    }
  };
  auto linear = [&](std::size_t i) {
    const double ta = profile.tau[i];
    const double tb = profile.tau[i + 1];
    const double pa = profile.p_s[i];
    const double pb = profile.p_s[i + 1];
    piece(ta, tb, ta, 0.0, (pb - pa) / (tb - ta), pa);
  };

  // Pairs of intervals are read as a quadratic; pairs touching the zero clamp
  // are read as two straight segments.
  std::size_t i = 0;
  for (; i + 2 < profile.size(); i += 2) {
    const double p0 = profile.p_s[i];
    const double p1 = profile.p_s[i + 1];
    const double p2 = profile.p_s[i + 2];
    if ((p0 == 0.0 || p1 == 0.0 || p2 == 0.0) && (p0 > 0.0 || p1 > 0.0 || p2 > 0.0)) {
      linear(i);
      linear(i + 1);
      continue;
    }
    const double t1 = profile.tau[i + 1];
    const double h0 = profile.tau[i] - t1;
    const double h2 = profile.tau[i + 2] - t1;
    const double d0 = (p0 - p1) / h0;
    const double d2 = (p2 - p1) / h2;
    const double a = (d2 - d0) / (h2 - h0);
    const double b = d0 - a * h0;
    piece(profile.tau[i], profile.tau[i + 2], t1, a, b, p1);
  }
  if (i + 1 < profile.size()) linear(i);
}

}  // namespace detail

/// Energy generated and transferred over a profile with reactive limit q_tilde_g
/// and without reactive power, and the resulting energy error.
inline ValuationResult energy_valuation(const TwoBusNetwork& net, const GenerationProfile& profile,
                                        double q_tilde_g) {
  profile.validate();
  const ControlCharacteristic with(net, q_tilde_g);
  const ControlCharacteristic without(net, 0.0);
  const std::vector<double> breakpoints{with.setpoints().p_g_nom, with.setpoints().p_tilde_g};

  ValuationResult result;
  detail::integrate_profile(
      profile, breakpoints,
      [&](double p_s, double& pg_w, double& pt_w, double& pg_o, double& pt_o) {
        const auto a = with(p_s);
        pg_w = a.s_g.real();
        pt_w = a.operating.p_t;
        if (p_s <= without.setpoints().p_g_nom) {
          pg_o = pg_w;
          pt_o = pt_w;
          return;
        }
        const auto b = without(p_s);
        pg_o = b.s_g.real();
        pt_o = b.operating.p_t;
      },
      result);
  result.finalize();
  return result;
}

}  // namespace lossval
