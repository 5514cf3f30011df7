#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lossval/twobus.hpp"
#include "oracles.hpp"

using namespace lossval;

namespace {

TwoBusNetwork example_no_load() { return example_network(1.0, false); }

}  // namespace

TEST(LineImpedance, FromPolar) {
  const auto z = LineImpedance::from_polar(0.203, 1.85);
  EXPECT_NEAR(z.magnitude(), 0.203, 1e-15);
  EXPECT_NEAR(z.r / z.x, 1.85, 1e-14);
  EXPECT_NEAR(z.r, 0.1785804, 1e-6);
  EXPECT_NEAR(z.x, 0.0965300, 1e-6);
}

TEST(TwoBusNetwork, Validation) {
  TwoBusNetwork net;
  EXPECT_THROW(net.validate(), error);  // |Z| = 0
  net.z = {0.1, 0.1};
  EXPECT_NO_THROW(net.validate());
  net.z = {-0.1, 0.1};
  EXPECT_THROW(net.validate(), error);
  net.z = {0.1, 0.1};
  net.v_plus = 0.99;
  try {
    net.validate();
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::invalid_network);
  }
}

TEST(SolvePowerFlow, ZeroFlow) {
  const auto net = example_no_load();
  const auto op = solve_power_flow(net, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(op.v_g, net.v_t);
  EXPECT_DOUBLE_EQ(op.p_l, 0.0);
  EXPECT_DOUBLE_EQ(op.p_t, 0.0);
}

TEST(SolvePowerFlow, MatchesFixedPointIteration) {
  const auto net = example_no_load();
  const auto op = solve_power_flow(net, 0.3, 0.0);
  const auto fp = oracle::fixed_point(net, 0.3, 0.0);
  EXPECT_NEAR(op.voltage.real(), fp.v_g.real(), 1e-12);
  EXPECT_NEAR(op.voltage.imag(), fp.v_g.imag(), 1e-12);
  EXPECT_NEAR(op.p_l, fp.p_l, 1e-13);
  EXPECT_DOUBLE_EQ(op.p_t, op.p_n - op.p_l);
}

TEST(SolvePowerFlow, NodalResidualAndLossIdentity) {
  const auto net = example_no_load();
  for (double p : {-0.4, 0.0, 0.3, 0.8}) {
    for (double q : {-0.5, -0.1, 0.0, 0.2}) {
      const auto op = solve_power_flow(net, p, q);
      const std::complex<double> s =
          op.voltage * std::conj((op.voltage - net.v_t) / net.z.complex());
      EXPECT_LT(std::abs(s - std::complex<double>(p, q)), 1e-12);
      EXPECT_NEAR(line_losses(net, p, q, op.v_g), op.p_l, 1e-10);
      EXPECT_GE(op.p_l, -1e-12);
    }
  }
}

TEST(SolvePowerFlow, ThrowsBeyondTransferLimit) {
  const auto net = example_no_load();
  try {
    solve_power_flow(net, 50.0, 0.0);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::no_solution);
  }
  TwoBusNetwork bad;
  EXPECT_THROW(solve_power_flow(bad, 0.1, 0.0), error);
}

TEST(Circle, NominalCrossingMatchesBisection) {
  const auto net = example_no_load();
  const double p = circle_p_of_q(net, 0.0, net.v_plus);
  const double ref = oracle::bisect([&](double x) { return oracle::v_of(net, x, 0.0) - net.v_plus; },
                                    0.0, 1.5);
  EXPECT_NEAR(p, ref, 1e-9);
}

TEST(Circle, TangencyGivesCentre) {
  const auto net = example_no_load();
  const auto c = voltage_circle(net, net.v_plus);
  EXPECT_NEAR(circle_p_of_q(net, c.q_center - c.radius, net.v_plus), c.p_center, 1e-12);
  EXPECT_NEAR(circle_q_of_p(net, c.p_center - c.radius, net.v_plus), c.q_center, 1e-12);
  EXPECT_NEAR(c.p_center, net.z.r * 1.06 * 1.06 / net.z.magnitude_sq(), 1e-14);
}

TEST(Circle, OffCircle) {
  const auto net = example_no_load();
  const auto c = voltage_circle(net, net.v_plus);
  try {
    circle_p_of_q(net, c.q_center + 1.01 * c.radius, net.v_plus);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::off_circle);
  }
  EXPECT_THROW(circle_q_of_p(net, c.p_center + 1.01 * c.radius, net.v_plus), error);
}

TEST(Circle, MidwayPointAbsorbsAndMatchesOracle) {
  const auto net = example_no_load();
  const double p_nom = circle_p_of_q(net, 0.0, net.v_plus);
  const double p_mid = 0.5 * (p_nom + mlimpt(net).p_n);
  const double q = circle_q_of_p(net, p_mid, net.v_plus);
  EXPECT_LT(q, 0.0);
  const double q_ref = oracle::bisect(
      [&](double y) { return oracle::v_of(net, p_mid, y) - net.v_plus; }, -1.5, 0.0);
  EXPECT_NEAR(q, q_ref, 1e-9);
  const auto fp = oracle::fixed_point(net, p_mid, q);
  EXPECT_NEAR(line_losses(net, p_mid, q, net.v_plus), fp.p_l, 1e-10);
}

TEST(Circle, NominalCrossingGivesZeroQ) {
  const auto net = example_no_load();
  const double p = circle_p_of_q(net, 0.0, net.v_plus);
  EXPECT_NEAR(circle_q_of_p(net, p, net.v_plus), 0.0, 1e-10);
}

TEST(Circle, RoundTripAndBranch) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto net = oracle::random_network(rng);
    const auto c = voltage_circle(net, net.v_plus);
    std::uniform_real_distribution<double> u(-1.0, 0.0);
    const double q = c.q_center + u(rng) * c.radius;
    const double p = circle_p_of_q(net, q, net.v_plus);
    EXPECT_LE(p, c.p_center + 1e-12);
    EXPECT_LE(q, c.q_center);
    EXPECT_NEAR(circle_q_of_p(net, p, net.v_plus), q, 1e-10 * std::max(1.0, c.radius));
  }
}

TEST(Circle, WFunctionsMatchDiscriminant) {
  const auto net = example_no_load();
  const auto c = voltage_circle(net, net.v_plus);
  const double z4 = net.z.magnitude_sq() * net.z.magnitude_sq();
  for (double q : {-1.0, -0.3, 0.0, 0.4}) {
    const double disc = c.radius * c.radius - (q - c.q_center) * (q - c.q_center);
    EXPECT_NEAR(k_zv(net, net.v_plus) * w_p(net, q, net.v_plus) / z4, disc, 1e-9 * c.radius * c.radius);
  }
  for (double p : {-0.5, 0.0, 0.7, 1.5}) {
    const double disc = c.radius * c.radius - (p - c.p_center) * (p - c.p_center);
    EXPECT_NEAR(k_zv(net, net.v_plus) * w_q(net, p, net.v_plus) / z4, disc, 1e-9 * c.radius * c.radius);
  }
}

TEST(LineLosses, Lossless) {
  TwoBusNetwork net;
  net.z = {0.0, 0.2};
  EXPECT_DOUBLE_EQ(line_losses(net, 0.7, -0.3, 1.05), 0.0);
  EXPECT_DOUBLE_EQ(line_losses(example_no_load(), 0.0, 0.0, 1.0), 0.0);
}

TEST(Mlimpt, ExampleSignAndStationarity) {
  const auto net = example_no_load();
  const auto m = mlimpt(net);
  EXPECT_GT(2.0 * net.v_t * net.z.r / (net.v_plus * net.z.magnitude()), 1.0);
  EXPECT_LT(m.q_n, 0.0);
  EXPECT_NEAR(circle_p_of_q(net, m.q_n, net.v_plus, mlimpt_branch(net)), m.p_n, 1e-10);
  auto pt = [&](double p) {
    const double q = circle_q_of_p(net, p, net.v_plus);
    return p - line_losses(net, p, q, net.v_plus);
  };
  const double h = 1e-6;
  EXPECT_LT(std::abs((pt(m.p_n + h) - pt(m.p_n - h)) / (2 * h)), 1e-6);
}

TEST(Mlimpt, LosslessIsTopTangency) {
  TwoBusNetwork net;
  net.z = {0.0, 0.2};
  const auto m = mlimpt(net);
  EXPECT_NEAR(m.q_n, net.v_plus * net.v_plus / 0.2, 1e-12);
}

TEST(Mlimpt, DenseGridArgmax) {
  const auto net = example_no_load();
  const auto m = mlimpt(net);
  const auto best = oracle::dense_argmax(net, 200000);
  EXPECT_NEAR(best.p_n, m.p_n, 2.0 * best.step);
  EXPECT_NEAR(best.q_n, m.q_n, 2.0 * best.step);
}

TEST(Mlimpt, HighBranchWhenReactanceDominates) {
  TwoBusNetwork net;
  net.z = LineImpedance::from_polar(0.1, 0.5);
  const auto m = mlimpt(net);
  EXPECT_EQ(mlimpt_branch(net), Branch::high);
  EXPECT_NEAR(circle_p_of_q(net, m.q_n, net.v_plus, Branch::high), m.p_n, 1e-10);
  const auto best = oracle::dense_argmax(net, 200000);
  EXPECT_NEAR(best.p_n, m.p_n, 2.0 * best.step);
}

TEST(NominalCrossing, NoLoadEqualsCircle) {
  const auto net = example_no_load();
  const auto nc = nominal_crossing(net);
  EXPECT_TRUE(nc.binding);
  EXPECT_NEAR(nc.p_g, circle_p_of_q(net, 0.0, net.v_plus), 1e-14);
}

TEST(NominalCrossing, LoadedMatchesBisection) {
  const auto net = example_network();
  const auto nc = nominal_crossing(net);
  const double ref = oracle::bisect(
      [&](double ps) { return oracle::v_of(net, ps - net.s0_p, -net.s0_q) - net.v_plus; }, 0.0, 2.0);
  EXPECT_NEAR(nc.p_g, ref, 1e-9);
  EXPECT_NEAR(solve_power_flow(net, nc.p_n, nc.q_n).v_g, net.v_plus, 1e-10);
}

TEST(NominalCrossing, NeverBindingFlag) {
  auto net = example_no_load();
  net.v_plus = 50.0;
  net.s0_q = -400.0;  // ray far above the circle
  const auto nc = nominal_crossing(net);
  EXPECT_FALSE(nc.binding);
  const auto c = voltage_circle(net, net.v_plus);
  EXPECT_NEAR(nc.p_n, c.p_center + c.radius, 1e-9);
}

TEST(Twobus, OracleEquivalenceRandom) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  while (checked < 1000) {
    const auto net = oracle::random_network(rng);
    const auto c = voltage_circle(net, net.v_plus);
    std::uniform_real_distribution<double> u(-1.0, 0.0);
    const double q = c.q_center + u(rng) * c.radius;
    const double p = circle_p_of_q(net, q, net.v_plus);
    if (!oracle::high_voltage_root(net, p, q, net.v_plus)) continue;
    const auto op = solve_power_flow(net, p, q);
    ASSERT_NEAR(op.v_g, net.v_plus, 1e-9);
    ASSERT_NEAR(line_losses(net, p, q, op.v_g), op.p_l, 1e-10);
    ASSERT_GE(op.p_l, -1e-12);
    ++checked;
  }
}

TEST(Twobus, TransferMonotoneAroundMlimpt) {
  const auto net = example_no_load();
  const auto m = mlimpt(net);
  const auto c = voltage_circle(net, net.v_plus);
  // p_t along the lower arc as a function of p_n, from the left tangency to
  // the right tangency.
  const int n = 10000;
  double prev = -INFINITY;
  bool passed = false;
  for (int i = 1; i < n; ++i) {
    const double p = c.p_center - c.radius + 2.0 * c.radius * i / n;
    const double q = circle_q_of_p(net, p, net.v_plus);
    const double pt = p - line_losses(net, p, q, net.v_plus);
    if (p < m.p_n) {
      EXPECT_GT(pt, prev) << "at p_n=" << p;
    } else if (passed) {
      EXPECT_LT(pt, prev) << "at p_n=" << p;
    }
    passed = p >= m.p_n;
    prev = pt;
  }
}
