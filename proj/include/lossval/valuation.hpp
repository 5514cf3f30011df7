#pragma once

// Valuation power error and its bounds.
//
// The power error compares the increase in generated power with the increase
// in transferred power when moving along the V_+ circle away from the nominal
// (unity power factor) crossing:
//
//   eps_P = (dP_g - dP_t) / dP_t = dP_l / dP_t
//
// With a lumped load the reference is the loaded nominal crossing
// Q_n = -Q_0; without a load this is the Q_n = 0 intersection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "lossval/error.hpp"
#include "lossval/twobus.hpp"
#include "lossval/util.hpp"

namespace lossval {

struct PowerErrorPoint {
  double p_n = 0.0;
  double q_n = 0.0;
  double delta_p_g = 0.0;
  double delta_p_t = 0.0;
  double eps_p = 0.0;
};

inline constexpr double degenerate_threshold = 1e-14;

/// Nominal crossing as a point on the V_+ circle; throws undefined when the
/// circle misses the unity-power-factor line.
inline CirclePoint reference_point(const TwoBusNetwork& net) {
  const auto nc = nominal_crossing(net);
  if (!nc.binding)
    throw error(errc::undefined, "voltage circle does not intersect the unity-power-factor line");
  return {nc.p_n, nc.q_n};
}

namespace detail {

// Evaluates eps_P from increments relative to the reference. Losses on a
// fixed-|V_g| circle are linear in (P_n, Q_n), so dP_l is exact.
inline PowerErrorPoint power_error_from_deltas(const TwoBusNetwork& net, double p_n, double q_n,
                                               double dp, double dq) {
  const double z2 = net.z.magnitude_sq();
  const double dp_l = 2.0 * net.z.r * (net.z.r * dp + net.z.x * dq) / z2;
  PowerErrorPoint pt;
  pt.p_n = p_n;
  pt.q_n = q_n;
  pt.delta_p_g = dp;
  pt.delta_p_t = dp - dp_l;
  if (std::abs(pt.delta_p_t) < degenerate_threshold)
    throw error(errc::degenerate_denominator, "transferred power increase vanishes");
  pt.eps_p = net.z.r == 0.0 ? 0.0 : dp_l / pt.delta_p_t;
  return pt;
}

// Without resistance nothing is lost and the error vanishes identically, even
// where the reference crossing does not exist. Increments are left at zero.
inline PowerErrorPoint lossless_point(const TwoBusNetwork&, double p_n, double q_n) {
  PowerErrorPoint pt;
  pt.p_n = p_n;
  pt.q_n = q_n;
  return pt;
}

}  // namespace detail

/// Power error at net reactive flow q_n on the low branch of the V_+ circle.
inline PowerErrorPoint power_error(const TwoBusNetwork& net, double q_n) {
  if (net.z.r == 0.0) return detail::lossless_point(net, circle_p_of_q(net, q_n, net.v_plus), q_n);
  const auto ref = reference_point(net);
  const auto c = voltage_circle(net, net.v_plus);
  const double d_q = detail::circle_discriminant(c, q_n - c.q_center,
                                                 "reactive flow outside the circle Q-extent");
  const double d_ref = c.radius * c.radius - (ref.q_n - c.q_center) * (ref.q_n - c.q_center);
  // Difference of low-branch roots in a cancellation-free form.
  const double denom = std::sqrt(d_q) + std::sqrt(std::max(d_ref, 0.0));
  const double d_diff = (ref.q_n - q_n) * (ref.q_n + q_n - 2.0 * c.q_center);
  const double dp = denom > 0.0 ? -d_diff / denom : 0.0;
  return detail::power_error_from_deltas(net, c.p_center - std::sqrt(d_q), q_n, dp,
                                         q_n - ref.q_n);
}

/// Power error at net real flow p_n on the low (absorbing) arc. Unlike
/// power_error(q_n) this reaches past the bottom of the circle.
inline PowerErrorPoint power_error_at_p(const TwoBusNetwork& net, double p_n) {
  if (net.z.r == 0.0) return detail::lossless_point(net, p_n, circle_q_of_p(net, p_n, net.v_plus));
  const auto ref = reference_point(net);
  const auto c = voltage_circle(net, net.v_plus);
  const double e_p = detail::circle_discriminant(c, p_n - c.p_center,
                                                 "real flow outside the circle P-extent");
  const double root_ref = c.q_center - ref.q_n;
  const double denom = std::sqrt(e_p) + root_ref;
  const double e_diff = (ref.p_n - p_n) * (ref.p_n + p_n - 2.0 * c.p_center);
  const double dq = denom > 0.0 ? -e_diff / denom : 0.0;
  return detail::power_error_from_deltas(net, p_n, c.q_center - std::sqrt(e_p), p_n - ref.p_n,
                                         dq);
}

/// Upper bound: the power error at the maximum power transfer point.
inline double k_prime(const TwoBusNetwork& net) {
  if (net.z.r == 0.0) return 0.0;
  const auto ref = reference_point(net);
  const auto m = mlimpt(net);
  return detail::power_error_from_deltas(net, m.p_n, m.q_n, m.p_n - ref.p_n, m.q_n - ref.q_n)
      .eps_p;
}

/// Slope dP_n/dQ_n of the V_+ circle at the reference point.
inline double k_pq(const TwoBusNetwork& net) {
  const auto ref = reference_point(net);
  const auto c = voltage_circle(net, net.v_plus);
  const double offset = ref.q_n - c.q_center;
  const double disc = c.radius * c.radius - offset * offset;
  if (!(disc > 0.0)) throw error(errc::undefined, "tangent reference point");
  // -X|V_g|^2 / sqrt(k_ZV W_P) in the no-load case.
  return offset / std::sqrt(disc);
}

/// Lower bound: the limit of the power error as the reactive power used
/// tends to zero.
inline double k_nom(const TwoBusNetwork& net) {
  const double r = net.z.r;
  if (r == 0.0) return 0.0;
  const double k = k_pq(net);
  const double z2 = net.z.magnitude_sq();
  // dP_l/dQ_n at the reference, from the loss identity.
  const double dloss = 2.0 * r * (r * k + net.z.x) / z2;
  const double denom = k - dloss;
  if (std::abs(denom) < degenerate_threshold)
    throw error(errc::degenerate_denominator, "transferred power is stationary at the crossing");
  return dloss / denom;
}

/// Alternative upper bound at a known maximum net real power.
inline double k_hat(const TwoBusNetwork& net, double p_hat_n) {
  return power_error_at_p(net, p_hat_n).eps_p;
}

struct BoundsResult {
  std::optional<double> k_prime;
  std::optional<double> k_nom;
  std::optional<double> k_pq;

  bool defined() const { return k_prime.has_value() && k_nom.has_value(); }
};

inline BoundsResult bounds(const TwoBusNetwork& net) {
  BoundsResult out;
  try {
    out.k_pq = k_pq(net);
  } catch (const error&) {
  }
  try {
    out.k_prime = k_prime(net);
  } catch (const error&) {
  }
  try {
    out.k_nom = k_nom(net);
  } catch (const error&) {
  }
  return out;
}

struct BoundsGrid {
  std::vector<double> z_mag;
  std::vector<double> r_over_x;
  double v_t = 1.0;
  double v_plus = 1.06;

  /// |Z| in [0.01, 0.5] (linear), R/X in [0.1, 10] (logarithmic).
  static BoundsGrid standard(std::size_t n_z = 50, std::size_t n_rx = 50, double v_t = 1.0,
                             double v_plus = 1.06) {
    return {linspace(0.01, 0.5, n_z), logspace(0.1, 10.0, n_rx), v_t, v_plus};
  }
};

struct BoundsRow {
  double z_mag = 0.0;
  double r_over_x = 0.0;
  double v_t = 0.0;
  double v_plus = 0.0;
  double k_prime = std::numeric_limits<double>::quiet_NaN();
  double k_nom = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
};

/// One row per (|Z|, R/X) cell of a no-load network, sorted by (|Z|, R/X).
inline std::vector<BoundsRow> bounds_sweep(const BoundsGrid& grid, unsigned threads = 1) {
  auto z_sorted = grid.z_mag;
  auto rx_sorted = grid.r_over_x;
  std::sort(z_sorted.begin(), z_sorted.end());
  std::sort(rx_sorted.begin(), rx_sorted.end());

  std::vector<BoundsRow> rows(z_sorted.size() * rx_sorted.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    BoundsRow row;
    row.z_mag = z_sorted[i / rx_sorted.size()];
    row.r_over_x = rx_sorted[i % rx_sorted.size()];
    row.v_t = grid.v_t;
    row.v_plus = grid.v_plus;
    TwoBusNetwork net;
    net.z = LineImpedance::from_polar(row.z_mag, row.r_over_x);
    net.v_t = grid.v_t;
    net.v_plus = grid.v_plus;
    const auto b = bounds(net);
    if (b.k_prime) row.k_prime = *b.k_prime;
    if (b.k_nom) row.k_nom = *b.k_nom;
    row.defined = b.defined();
    rows[i] = row;
  });
  return rows;
}

}  // namespace lossval
