// Acceptance checks: one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "commands.hpp"
#include "lossval/feeder_io.hpp"
#include "oracles.hpp"

using namespace lossval;
namespace fs = std::filesystem;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) detail = what;
    ok = ok && cond;
  }
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string data(const char* name) { return std::string(LOSSVAL_DATA_DIR) + "/" + name; }

int failures = 0;

void run(int id, const char* name, const std::function<Check()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  try {
    c = body();
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!c.ok) ++failures;
  std::printf("%s [%d] %s (%.2f s)%s%s\n", c.ok ? "PASS" : "FAIL", id, name, secs,
              c.detail.empty() ? "" : ": ", c.detail.c_str());
  std::fflush(stdout);
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FeederModel two_bus_model(const TwoBusNetwork& net) {
  FeederModel m;
  m.bus_names = {"grid", "dg"};
  m.slack = 0;
  m.gen_bus = 1;
  m.v_t = net.v_t;
  m.v_plus = net.v_plus;
  m.lines = {{0, 1, net.z.r, net.z.x}};
  if (net.has_load()) m.loads = {{1, net.s0_p, net.s0_q, LoadModel::constant_power}};
  return m;
}

struct Sample {
  TwoBusNetwork net;
  double p_n, q_n;
};

// 1000 random networks, each with one circle point that is the high-voltage
// root (the solution branch a flat-start solver reaches).
std::vector<Sample> random_sample() {
  std::mt19937_64 rng(20240501);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Sample> out;
  while (out.size() < 1000) {
    const auto net = oracle::random_network(rng);
    const auto c = voltage_circle(net, net.v_plus);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double q = c.q_center + u(rng) * c.radius;
      const auto branch = u(rng) < 0.0 ? Branch::low : Branch::high;
      const double p = circle_p_of_q(net, q, net.v_plus, branch);
      if (!oracle::high_voltage_root(net, p, q, net.v_plus)) continue;
      out.push_back({net, p, q});
      break;
    }
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main() {
  const auto sample = random_sample();

  run(1, "closed-form voltage circle and losses vs Newton oracle", [&] {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    double worst_v = 0.0;
    double worst_l = 0.0;
    for (const auto& s : sample) {
      const auto ref = oracle::nodal_newton(two_bus_model(s.net), {s.p_n, s.q_n});
      worst_v = std::max(worst_v, std::abs(std::abs(ref.v[1]) - s.net.v_plus));
      worst_l = std::max(worst_l, std::abs(line_losses(s.net, s.p_n, s.q_n, s.net.v_plus) - ref.loss));
    }
    const double t = elapsed(t0);
    c.detail = fmt("max |dV| %.3g, max |dP_l| %.3g", worst_v, worst_l);
    c.require(worst_v < 1e-9 && worst_l < 1e-10, c.detail);
    c.require(t < 10.0, fmt("runtime %.2f s", t));
    return c;
  });

  run(2, "maximum power transfer point stationarity and dense argmax", [&] {
    Check c;
    double worst_d = 0.0;
    double worst_grid = 0.0;
    int defined = 0;
    for (const auto& s : sample) {
      const auto& net = s.net;
      if (!bounds(net).defined()) continue;
      ++defined;
      const auto m = mlimpt(net);
      auto pt = [&](double p) {
        const double q = circle_q_of_p(net, p, net.v_plus);
        return p - line_losses(net, p, q, net.v_plus);
      };
      const double h = 1e-6;
      worst_d = std::max(worst_d, std::abs((pt(m.p_n + h) - pt(m.p_n - h)) / (2.0 * h)));
      const auto best = oracle::dense_argmax(net, 100000);
      worst_grid = std::max(worst_grid, std::abs(best.q_n - m.q_n) / best.step);
    }
    c.detail = fmt("%g defined, max |dP_t/dP_n| %.3g", defined, worst_d) +
               fmt(", argmax offset %.3g grid steps", worst_grid);
    c.require(defined > 0 && worst_d < 1e-6 && worst_grid <= 1.0, c.detail);
    return c;
  });

  run(3, "small-reactive-power limit bound", [&] {
    Check c;
    std::mt19937_64 rng(31337);
    int n = 0;
    double worst = 0.0;
    bool nonzero = true;
    while (n < 100) {
      const auto net = oracle::random_network(rng);
      const auto b = bounds(net);
      if (!b.k_nom) continue;
      const double lim = power_error(net, -1e-6).eps_p;
      worst = std::max(worst, std::abs(lim - *b.k_nom) / std::abs(*b.k_nom));
      nonzero = nonzero && *b.k_nom != 0.0;
      ++n;
    }
    bool zero_when_lossless = true;
    for (double x : {0.02, 0.1, 0.3, 0.5}) {
      for (double vt : {0.94, 1.0, 1.06}) {
        TwoBusNetwork net;
        net.z = {0.0, x};
        net.v_t = vt;
        net.v_plus = 1.1;
        zero_when_lossless = zero_when_lossless && k_nom(net) == 0.0;
      }
    }
    c.detail = fmt("max relative error %.3g", worst);
    c.require(worst < 1e-3, c.detail);
    c.require(nonzero, "k_nom = 0 on a network with R > 0");
    c.require(zero_when_lossless, "k_nom != 0 with R = 0");
    return c;
  });

  run(4, "bound sign structure over the default sweep", [&] {
    Check c;
    const auto rows = bounds_sweep(BoundsGrid::standard(), 4);
    int pos = 0;
    int neg = 0;
    int defined = 0;
    bool kp_positive = true;
    double kn_min = INFINITY;
    for (const auto& r : rows) {
      if (!r.defined) continue;
      ++defined;
      pos += r.k_nom > 1e-9;
      neg += r.k_nom < -1e-9;
      kn_min = std::min(kn_min, r.k_nom);
      kp_positive = kp_positive && r.k_prime > 0.0;
    }
    c.detail = fmt("%g defined cells, %g with k_nom > 0", defined, pos) +
               fmt(", %g with k_nom < 0, min k_nom %.3g", neg, kn_min);
    c.require(pos > 0 && neg > 0, c.detail);
    c.require(kp_positive, "k' <= 0 on a defined cell");
    return c;
  });

  run(5, "energy error equals power error for a constant profile", [&] {
    Check c;
    const auto net = example_network();
    double worst = 0.0;
    for (double q_tilde : {0.1, 0.5, 2.0}) {
      const auto sp = control_setpoints(net, q_tilde);
      for (double f : {0.1, 0.5, 0.9}) {
        const double p_s = sp.p_g_nom + f * (sp.p_tilde_g - sp.p_g_nom);
        GenerationProfile prof;
        for (int i = 0; i <= 48; ++i) {
          prof.tau.push_back(0.5 * i);
          prof.p_s.push_back(p_s);
        }
        const auto r = energy_valuation(net, prof, q_tilde);
        const auto pe = power_error_at_p(net, p_s - net.s0_p);
        c.require(r.eps_e.has_value(), "eps_e undefined");
        if (r.eps_e) worst = std::max(worst, std::abs(*r.eps_e - pe.eps_p));
      }
    }
    c.detail = fmt("max |eps_e - eps_p| %.3g", worst);
    c.require(worst < 1e-9, c.detail);
    return c;
  });

  run(6, "energy error against the bounds for the daily profile", [&] {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto net = example_network();
    const double kn = k_nom(net);
    const double kp = k_prime(net);
    double worst_rel = 0.0;
    double max_excess = -INFINITY;
    for (double cc : {1.0 / 3.0, 2.0 / 3.0, 1.0}) {
      const auto prof = solar_profile(peak_power(net, cc), 1.0 / 60.0);
      const auto small = energy_valuation(net, prof, 1e-4);
      c.require(small.eps_e.has_value(), "eps_e undefined at small limit");
      if (small.eps_e) worst_rel = std::max(worst_rel, std::abs(*small.eps_e - kn) / std::abs(kn));
      for (double q : cli::default_energy_qlim()) {
        const auto r = energy_valuation(net, prof, q);
        if (r.eps_e) max_excess = std::max(max_excess, *r.eps_e - kp);
      }
    }
    const double t = elapsed(t0);
    c.detail = fmt("small-limit relative gap %.3g, max eps_e - k' %.3g", worst_rel, max_excess);
    c.require(worst_rel < 0.1 && max_excess <= 1e-9, c.detail);
    c.require(t < 30.0, fmt("runtime %.2f s", t));
    return c;
  });

  run(7, "feeder solver reduces to the two-bus model", [&] {
    Check c;
    double worst = 0.0;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < 200; ++i) {
      auto net = with_load(sample[i].net, 0.3 * u(rng), 0.9 + 0.1 * u(rng));
      const auto nc = nominal_crossing(net);
      if (!nc.binding) continue;
      const RadialFeeder f(two_bus_model(net));
      const double p_g = u(rng) * nc.p_g;
      const double q_g = -0.2 * u(rng);
      const auto sol = f.solve({p_g, q_g});
      const auto op = solve_power_flow(net, p_g - net.s0_p, q_g - net.s0_q);
      worst = std::max({worst, std::abs(sol.voltage[1] - op.voltage), std::abs(sol.total_loss - op.p_l),
                        std::abs(sol.p_t - op.p_t)});
    }
    c.require(worst < 1e-9, fmt("2-bus max deviation %.3g", worst));

    const auto model = read_feeder(data("twobus_reducible.txt"));
    TwoBusNetwork net;
    net.z = {model.lines[0].r, model.lines[0].x};
    net.v_t = model.v_t;
    net.v_plus = model.v_plus;
    net.s0_p = model.loads[0].p;
    net.s0_q = model.loads[0].q;
    const double q_tilde = 0.8;
    const ControlCharacteristic ch(net, q_tilde);
    const auto res = mesh_search(model, {0.0, 3.0, -q_tilde, 0.0, 200, 240}, q_tilde, 4);
    const double dq = q_tilde / 239.0;
    double worst_q = 0.0;
    double worst_pt = 0.0;
    for (const auto& row : res.frontier) {
      const bool inside = row.p_g <= ch.setpoints().p_tilde_g;
      if (inside != row.feasible()) {
        c.require(false, fmt("frontier feasibility differs at p_g %.6g", row.p_g));
        continue;
      }
      if (!inside) continue;
      const auto o = ch(row.p_g);
      const double q_char = o.s_g.imag();
      // one grid step of absorption below the characteristic
      const double q_step = std::max(q_char - dq, -q_tilde);
      const double pt_step = solve_power_flow(net, row.p_g - net.s0_p, q_step - net.s0_q).p_t;
      const double tol_pt = std::abs(o.operating.p_t - pt_step) + 1e-9;
      worst_q = std::max(worst_q, (q_char - *row.q_g_star) / dq);
      if (*row.q_g_star > q_char + 1e-9) worst_q = INFINITY;
      worst_pt = std::max(worst_pt, std::abs(row.p_t_star - o.operating.p_t) / tol_pt);
    }
    c.detail = fmt("2-bus max deviation %.3g, frontier q offset %.3g steps", worst, worst_q) +
               fmt(", p_t offset %.3g of one step", worst_pt);
    c.require(worst_q <= 1.0 + 1e-9 && worst_pt <= 1.0, c.detail);
    return c;
  });

  run(8, "measured feeder power error properties", [&] {
    Check c;
    const auto fracs = logspace(1e-4, 1.0, 60);
    double small_limit = 0.0;
    double min_caps = INFINITY;
    double worst_ratio = -INFINITY;
    for (const char* file : {"feeder8.txt", "feeder8_caps.txt"}) {
      const auto model = read_feeder(data(file));
      const RadialFeeder f(model);
      const auto ref = feeder_nominal_crossing(f);
      const auto top = feeder_mlimpt(f, ref, limit_q_floor);
      const double kp = k_prime(fit_twobus(model).network);
      for (double frac : fracs) {
        const auto e = feeder_power_error(f, ref, ref.p_g + frac * (top.p_g - ref.p_g), limit_q_floor);
        worst_ratio = std::max(worst_ratio, e.eps_p / kp);
        if (model.caps.empty() && frac == fracs.front()) small_limit = e.eps_p;
        if (!model.caps.empty()) min_caps = std::min(min_caps, e.eps_p);
      }
    }
    const auto model = read_feeder(data("feeder8.txt"));
    const RadialFeeder f(model);
    const auto ref = feeder_nominal_crossing(f);
    const auto top = feeder_mlimpt(f, ref, limit_q_floor);
    const auto t0 = std::chrono::steady_clock::now();
    const double q_tilde = 1.1 * std::abs(top.q_g);
    const auto res = mesh_search(model, {0.0, 1.1 * top.p_g, -q_tilde, 0.0, 200, 240}, q_tilde, 1);
    const double t = elapsed(t0);
    c.detail = fmt("small-Q limit %.4g, caps minimum %.4g", small_limit, min_caps) +
               fmt(", max eps_p / k' %.3g, mesh %.2f s", worst_ratio, t);
    c.require(std::abs(small_limit) > 1e-3, c.detail);
    c.require(min_caps < 0.0, c.detail);
    c.require(worst_ratio <= 1.2, c.detail);
    c.require(res.grid.points.size() == 48000 && t < 60.0, c.detail);
    return c;
  });

  run(9, "CLI output is reproducible across runs and thread counts", [&] {
    Check c;
    const auto root = fs::temp_directory_path() / "lossval_acceptance";
    fs::remove_all(root);
    const std::string feeder = data("feeder8.txt");
    const std::vector<std::string> commands = {
        "bounds",
        "curve",
        "energy",
        "energy --feeder " + feeder,
        "feeder-mesh --feeder " + feeder,
        "fit --feeder " + feeder,
    };
    int files = 0;
    for (std::size_t k = 0; k < commands.size(); ++k) {
      std::vector<fs::path> dirs;
      for (const char* variant : {"a", "b", "c"}) {
        const auto dir = root / (std::to_string(k) + variant);
        fs::create_directories(dir);
        const std::string threads = std::string(variant) == "c" ? "4" : "1";
        const std::string cmd = std::string(LOSSVAL_CLI) + " " + commands[k] + " --threads " + threads +
                                " --out " + dir.string() + " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        c.require(status == 0, "command failed: " + commands[k]);
        dirs.push_back(dir);
      }
      for (const auto& entry : fs::directory_iterator(dirs[0])) {
        const auto name = entry.path().filename();
        const auto ref = slurp(entry.path());
        c.require(!ref.empty(), "empty output " + name.string());
        for (std::size_t j = 1; j < dirs.size(); ++j)
          c.require(slurp(dirs[j] / name) == ref, "bytes differ: " + commands[k] + " " + name.string());
        ++files;
      }
    }
    if (c.ok) c.detail = fmt("%g CSV files identical across 3 runs each", files);
    fs::remove_all(root);
    return c;
  });

  return failures == 0 ? 0 : 1;
}
