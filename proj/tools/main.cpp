#include <exception>
#include <functional>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "commands.hpp"

using namespace lossval;

int main(int argc, char** argv) {
  cli::RunConfig cfg;
  CLI::App app{"Loss-aware valuation of reactive power voltage control"};
  app.set_config("--config", "", "key = value file; command-line flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--out", cfg.out, "output directory")->capture_default_str();
  app.add_option("--threads", cfg.threads, "worker threads")->capture_default_str();

  auto* net = "Two-bus network";
  app.add_option("--z-mag", cfg.z_mag, "|Z| (pu)")->group(net)->capture_default_str();
  app.add_option("--r-over-x", cfg.r_over_x, "R/X ratio")->group(net)->capture_default_str();
  app.add_option("--v-t", cfg.v_t, "reference voltage (pu)")->group(net)->capture_default_str();
  app.add_option("--v-plus", cfg.v_plus, "voltage limit (pu)")->group(net)->capture_default_str();
  app.add_option("--s0-mag", cfg.s0_mag, "load |S_0| (pu)")->group(net)->capture_default_str();
  app.add_option("--pf", cfg.pf, "load power factor")->group(net)->capture_default_str();
  app.add_flag("--leading", cfg.leading, "load power factor is leading")->group(net);

  auto* fd = "Feeder";
  app.add_option("--feeder", cfg.feeder, "feeder model file")->group(fd);
  app.add_flag("--no-fit", cfg.no_fit, "use the two-bus flags as the feeder equivalent")->group(fd);
  app.add_option("--mesh", cfg.mesh, "mesh size NPxNQ")->group(fd)->capture_default_str();

  auto* sw = "Sweeps";
  app.add_option("--z-min", cfg.z_min)->group(sw)->capture_default_str();
  app.add_option("--z-max", cfg.z_max)->group(sw)->capture_default_str();
  app.add_option("--nz", cfg.n_z)->group(sw)->capture_default_str();
  app.add_option("--rx-min", cfg.rx_min)->group(sw)->capture_default_str();
  app.add_option("--rx-max", cfg.rx_max)->group(sw)->capture_default_str();
  app.add_option("--nrx", cfg.n_rx)->group(sw)->capture_default_str();
  app.add_option("--points", cfg.points, "curve samples")->group(sw)->capture_default_str();
  app.add_option("--p-max", cfg.p_max, "upper generation of curve or mesh (pu)")->group(sw);
  app.add_option("--qlim", cfg.qlim, "reactive limits q~_g (pu)")->group(sw)->delimiter(',');
  app.add_option("--c", cfg.c, "peak-power fractions")->group(sw)->delimiter(',');
  app.add_option("--step-min", cfg.step_min, "profile step (minutes)")->group(sw)->capture_default_str();
  app.add_option("--profile", cfg.profile, "tau_hours,p_s_pu CSV instead of the solar day")->group(sw);

  const std::map<std::string, std::function<int(const cli::RunConfig&)>> commands{
      {"bounds", cli::cmd_bounds},
      {"curve", cli::cmd_curve},
      {"energy", cli::cmd_energy},
      {"feeder-mesh", cli::cmd_feeder_mesh},
      {"fit", cli::cmd_fit},
  };
  const std::map<std::string, std::string> help{
      {"bounds", "k' and k_nom over a (|Z|, R/X) grid"},
      {"curve", "three-stage operating characteristic"},
      {"energy", "energy valuation error over c and q~_g"},
      {"feeder-mesh", "feeder mesh, frontier and measured power error"},
      {"fit", "two-bus equivalent of a feeder"},
  };
  for (const auto& [name, text] : help) app.add_subcommand(name, text);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::config_error;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return commands.at(name)(cfg);
  } catch (const error& e) {
    std::cerr << name << ": " << e.what() << '\n';
    return cli::exit_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << name << ": " << e.what() << '\n';
    return cli::numerical_failure;
  }
}
