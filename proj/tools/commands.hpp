#pragma once

// Subcommand implementations for the lossval executable. Every command reads
// a RunConfig and writes CSV files into cfg.out.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lossval/error.hpp"
#include "lossval/feeder.hpp"
#include "lossval/feeder_io.hpp"
#include "lossval/profiles.hpp"
#include "lossval/twobus.hpp"
#include "lossval/util.hpp"
#include "lossval/valuation.hpp"

namespace lossval::cli {

enum exit_code : int { ok = 0, config_error = 2, empty_result = 3, numerical_failure = 4 };

struct RunConfig {
  std::string out = ".";
  unsigned threads = 1;

  // two-bus network
  double z_mag = 0.203;
  double r_over_x = 1.85;
  double v_t = 1.0;
  double v_plus = 1.06;
  double s0_mag = 0.72;
  double pf = 0.987;
  bool leading = false;

  std::string feeder;
  bool no_fit = false;
  std::string profile;

  // bounds grid
  double z_min = 0.01;
  double z_max = 0.5;
  std::size_t n_z = 50;
  double rx_min = 0.1;
  double rx_max = 10.0;
  std::size_t n_rx = 50;

  // curve
  std::size_t points = 400;
  std::optional<double> p_max;

  // energy
  std::vector<double> c{1.0 / 3.0, 2.0 / 3.0, 1.0};
  std::vector<double> qlim;  // empty: per-command default
  int step_min = 1;

  // feeder mesh
  std::string mesh = "200x240";

  TwoBusNetwork network() const {
    TwoBusNetwork net;
    net.z = LineImpedance::from_polar(z_mag, r_over_x);
    net.v_t = v_t;
    net.v_plus = v_plus;
    net = with_load(net, s0_mag, pf, !leading);
    net.validate();
    return net;
  }
};

inline std::vector<double> default_energy_qlim() {
  return {0.0, 1e-4, 1e-3, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3,
          0.4, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
}

inline exit_code exit_for(errc code) {
  switch (code) {
    case errc::invalid_network:
    case errc::invalid_argument:
    case errc::parse_error:
      return config_error;
    case errc::undefined:
    case errc::degenerate_denominator:
    case errc::empty_frontier:
      return empty_result;
    default:
      return numerical_failure;
  }
}

// Minimal CSV sink: header, 12 significant digits, LF endings.
class CsvWriter {
 public:
  CsvWriter(const std::string& dir, const std::string& name, const std::vector<std::string>& header)
      : path_((std::filesystem::path(dir) / name).string()) {
    std::filesystem::create_directories(dir);
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw error(errc::invalid_argument, "cannot write " + path_);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_g12(values[i]);
    out_ << '\n';
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

inline constexpr double nan = std::numeric_limits<double>::quiet_NaN();

inline double value_or_nan(const std::optional<double>& v) { return v ? *v : nan; }

inline std::pair<std::size_t, std::size_t> parse_mesh(const std::string& text) {
  const auto pos = text.find_first_of("xX");
  std::size_t n_p = 0;
  std::size_t n_q = 0;
  try {
    if (pos == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    n_p = std::stoul(text.substr(0, pos), &used);
    if (used != pos) throw std::invalid_argument(text);
    const std::string rest = text.substr(pos + 1);
    n_q = std::stoul(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw error(errc::parse_error, "--mesh expects NPxNQ, got '" + text + "'");
  }
  if (n_p < 2 || n_q < 2) throw error(errc::invalid_argument, "--mesh needs at least 2x2");
  return {n_p, n_q};
}

inline double step_hours(const RunConfig& cfg) {
  if (cfg.step_min <= 0) throw error(errc::invalid_argument, "--step-min must be positive");
  return cfg.step_min / 60.0;
}

// ---------------------------------------------------------------------------

inline int cmd_bounds(const RunConfig& cfg) {
  if (cfg.n_z == 0 || cfg.n_rx == 0) {
    std::cerr << "bounds: empty grid\n";
    return empty_result;
  }
  if (!(cfg.z_min > 0.0) || !(cfg.z_max >= cfg.z_min) || !(cfg.rx_min > 0.0) ||
      !(cfg.rx_max >= cfg.rx_min))
    throw error(errc::invalid_argument, "bounds grid ranges must be positive and ordered");
  if (!(cfg.v_t > 0.0) || !(cfg.v_plus >= cfg.v_t))
    throw error(errc::invalid_network, "need 0 < v_t <= v_plus");
  BoundsGrid grid{linspace(cfg.z_min, cfg.z_max, cfg.n_z),
                  logspace(cfg.rx_min, cfg.rx_max, cfg.n_rx), cfg.v_t, cfg.v_plus};
  const auto rows = bounds_sweep(grid, cfg.threads);
  CsvWriter csv(cfg.out, "bounds.csv",
                {"z_mag", "r_over_x", "v_t", "v_plus", "k_prime", "k_nom", "defined"});
  for (const auto& r : rows)
    csv.row({r.z_mag, r.r_over_x, r.v_t, r.v_plus, r.k_prime, r.k_nom, r.defined ? 1.0 : 0.0});
  return ok;
}

inline int cmd_curve(const RunConfig& cfg) {
  const auto net = cfg.network();
  const auto qlim = cfg.qlim.empty() ? std::vector<double>{0.0, 0.05, 0.15, 0.3} : cfg.qlim;
  if (cfg.points < 2) throw error(errc::invalid_argument, "--points must be at least 2");
  const auto nc = nominal_crossing(net);
  if (!nc.binding) throw error(errc::undefined, "voltage limit never binds on this network");

  std::vector<ControlCharacteristic> curves;
  double p_top = mlimpt(net).p_n + net.s0_p;
  for (double q : qlim) {
    curves.emplace_back(net, q);
    p_top = std::max(p_top, curves.back().setpoints().p_tilde_g);
  }
  const double p_hi = cfg.p_max.value_or(1.1 * p_top);

  CsvWriter csv(cfg.out, "curve.csv",
                {"q_tilde_g", "stage", "p_s", "p_g", "q_g", "p_n", "q_n", "p_t", "v_g"});
  for (const auto& ch : curves) {
    auto p_s = linspace(0.0, p_hi, cfg.points);
    for (double bp : {ch.setpoints().p_g_nom, ch.setpoints().p_tilde_g})
      if (bp > 0.0 && bp < p_hi) p_s.push_back(bp);
    std::sort(p_s.begin(), p_s.end());
    p_s.erase(std::unique(p_s.begin(), p_s.end()), p_s.end());
    for (double p : p_s) {
      const auto o = ch(p);
      csv.row({ch.setpoints().q_tilde_g, static_cast<double>(o.stage), p, o.s_g.real(),
               o.s_g.imag(), o.operating.p_n, o.operating.q_n, o.operating.p_t, o.operating.v_g});
    }
  }
  return ok;
}

struct EnergyCell {
  double c = nan;
  double q = 0.0;
  ValuationResult twobus;
  std::optional<ValuationResult> feeder;
};

inline void write_energy(const RunConfig& cfg, const std::vector<EnergyCell>& cells, bool with_feeder) {
  std::vector<std::string> header{"c", "q_tilde_g", "delta_e_g", "delta_e_t", "eps_e", "defined"};
  if (with_feeder)
    for (const char* h : {"feeder_delta_e_g", "feeder_delta_e_t", "feeder_eps_e", "feeder_defined",
                          "clamped_samples"})
      header.emplace_back(h);
  CsvWriter csv(cfg.out, "energy.csv", header);
  for (const auto& cell : cells) {
    std::vector<double> row{cell.c,
                            cell.q,
                            cell.twobus.delta_e_g,
                            cell.twobus.delta_e_t,
                            value_or_nan(cell.twobus.eps_e),
                            cell.twobus.eps_e ? 1.0 : 0.0};
    if (with_feeder) {
      const auto& f = *cell.feeder;
      row.insert(row.end(), {f.delta_e_g, f.delta_e_t, value_or_nan(f.eps_e), f.eps_e ? 1.0 : 0.0,
                             static_cast<double>(f.clamped_samples)});
    }
    csv.row(row);
  }
}

inline TwoBusNetwork equivalent_for(const RunConfig& cfg, const FeederModel& model) {
  if (cfg.no_fit) {
    auto net = cfg.network();
    net.v_plus = model.v_plus;
    return net;
  }
  return fit_twobus(model).network;
}

inline int cmd_energy(const RunConfig& cfg) {
  const auto qlim = cfg.qlim.empty() ? default_energy_qlim() : cfg.qlim;
  for (double q : qlim)
    if (!(q >= 0.0)) throw error(errc::invalid_argument, "--qlim values are magnitudes (>= 0)");
  const double step = step_hours(cfg);

  std::optional<GenerationProfile> user_profile;
  if (!cfg.profile.empty()) user_profile = read_profile_csv(cfg.profile);
  const std::vector<double> cs = user_profile ? std::vector<double>{nan} : cfg.c;
  if (cs.empty()) throw error(errc::invalid_argument, "--c list is empty");

  std::vector<EnergyCell> cells;
  for (double c : cs)
    for (double q : qlim) cells.push_back({c, q, {}, std::nullopt});

  if (cfg.feeder.empty()) {
    const auto net = cfg.network();
    std::vector<GenerationProfile> profiles;
    for (double c : cs) profiles.push_back(user_profile ? *user_profile
                                                        : solar_profile(peak_power(net, c), step));
    parallel_for(cells.size(), cfg.threads, [&](std::size_t k) {
      cells[k].twobus = energy_valuation(net, profiles[k / qlim.size()], cells[k].q);
    });
    write_energy(cfg, cells, false);
    return ok;
  }

  const auto model = read_feeder(cfg.feeder);
  const RadialFeeder feeder(model);
  const auto eq = equivalent_for(cfg, model);
  const auto ref = feeder_nominal_crossing(feeder);
  const auto top = feeder_mlimpt(feeder, ref, limit_q_floor);

  std::vector<GenerationProfile> profiles;
  double peak = 0.0;
  for (double c : cs) {
    if (user_profile) {
      profiles.push_back(*user_profile);
    } else {
      if (!(c > 0.0 && c <= 1.0)) throw error(errc::invalid_argument, "c must lie in (0, 1]");
      profiles.push_back(solar_profile(ref.p_g + c * (top.p_g - ref.p_g), step));
    }
    peak = std::max(peak, *std::max_element(profiles.back().p_s.begin(), profiles.back().p_s.end()));
  }

  const auto [n_p, n_q] = parse_mesh(cfg.mesh);
  MeshSpec spec;
  spec.p_lo = 0.0;
  spec.p_hi = 1.05 * std::max(peak, top.p_g);
  spec.q_lo = -*std::max_element(qlim.begin(), qlim.end());
  spec.q_hi = 0.0;
  spec.n_p = n_p;
  spec.n_q = n_q;
  const auto grid = solve_mesh(feeder, spec, cfg.threads);

  parallel_for(cells.size(), cfg.threads, [&](std::size_t k) {
    const auto& prof = profiles[k / qlim.size()];
    cells[k].twobus = energy_valuation(eq, prof, cells[k].q);
    cells[k].feeder = feeder_energy_valuation(grid, model.v_plus, prof, cells[k].q);
  });
  write_energy(cfg, cells, true);
  return ok;
}

inline int cmd_feeder_mesh(const RunConfig& cfg) {
  if (cfg.feeder.empty()) throw error(errc::invalid_argument, "feeder-mesh needs --feeder");
  const auto model = read_feeder(cfg.feeder);
  const RadialFeeder feeder(model);
  const auto eq = equivalent_for(cfg, model);
  const auto ref = feeder_nominal_crossing(feeder);
  const auto top = feeder_mlimpt(feeder, ref, limit_q_floor);

  const double q_tilde = cfg.qlim.empty()
                             ? 1.1 * std::abs(top.q_g)
                             : *std::max_element(cfg.qlim.begin(), cfg.qlim.end());
  if (!(q_tilde >= 0.0)) throw error(errc::invalid_argument, "--qlim values are magnitudes (>= 0)");
  const auto [n_p, n_q] = parse_mesh(cfg.mesh);
  MeshSpec spec;
  spec.p_lo = 0.0;
  spec.p_hi = cfg.p_max.value_or(1.1 * top.p_g);
  spec.q_lo = -q_tilde;
  spec.q_hi = 0.0;
  spec.n_p = n_p;
  spec.n_q = n_q;
  const auto res = reduce_frontier(solve_mesh(feeder, spec, cfg.threads), model.v_plus, q_tilde);

  {
    CsvWriter csv(cfg.out, "mesh.csv", {"p_g", "q_g", "feasible", "p_t", "v_max"});
    for (std::size_t k = 0; k < res.grid.points.size(); ++k) {
      const auto& pt = res.grid.points[k];
      csv.row({pt.p_g, pt.q_g, res.feasible[k] ? 1.0 : 0.0, pt.p_t, pt.v_max});
    }
  }
  {
    CsvWriter csv(cfg.out, "frontier.csv", {"p_g", "q_g_star", "p_t_star"});
    for (const auto& row : res.frontier) csv.row({row.p_g, value_or_nan(row.q_g_star), row.p_t_star});
  }
  {
    // Measured power error along the continuous limit curve next to the
    // equivalent's prediction at the same fraction of the way to its MLIMPT.
    CsvWriter csv(cfg.out, "eps_p.csv",
                  {"frac", "p_g", "q_g", "delta_p_g", "delta_p_t", "eps_p", "twobus_eps_p"});
    std::optional<CirclePoint> eq_ref;
    std::optional<CirclePoint> eq_top;
    try {
      eq_ref = reference_point(eq);
      eq_top = mlimpt(eq);
    } catch (const error&) {
    }
    for (double frac : logspace(1e-4, 1.0, 60)) {
      const double p = ref.p_g + frac * (top.p_g - ref.p_g);
      double eps_tb = nan;
      if (eq_ref) {
        try {
          eps_tb = power_error_at_p(eq, eq_ref->p_n + frac * (eq_top->p_n - eq_ref->p_n)).eps_p;
        } catch (const error&) {
        }
      }
      try {
        const auto m = feeder_power_error(feeder, ref, p, limit_q_floor);
        csv.row({frac, p, m.q_g, m.delta_p_g, m.delta_p_t, m.eps_p, eps_tb});
      } catch (const error&) {
        csv.row({frac, p, nan, nan, nan, nan, eps_tb});
      }
    }
  }
  return res.empty_rows() == res.frontier.size() ? empty_result : ok;
}

inline int cmd_fit(const RunConfig& cfg) {
  if (cfg.feeder.empty()) throw error(errc::invalid_argument, "fit needs --feeder");
  const auto model = read_feeder(cfg.feeder);
  const auto fit = fit_twobus(model);
  const auto& n = fit.network;
  const auto b = bounds(n);
  CsvWriter csv(cfg.out, "fit.csv",
                {"r", "x", "z_mag", "r_over_x", "v_t", "v_plus", "s0_p", "s0_q", "rms", "probes",
                 "k_prime", "k_nom"});
  csv.row({n.z.r, n.z.x, n.z.magnitude(), n.z.x > 0.0 ? n.z.r / n.z.x : nan, n.v_t, n.v_plus,
           n.s0_p, n.s0_q, fit.rms, static_cast<double>(fit.probes), value_or_nan(b.k_prime),
           value_or_nan(b.k_nom)});
  return ok;
}

}  // namespace lossval::cli
