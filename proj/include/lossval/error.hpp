#pragma once

#include <stdexcept>
#include <string>

namespace lossval {

enum class errc {
  invalid_network,
  invalid_argument,
  no_solution,
  off_circle,
  undefined,
  degenerate_denominator,
  infeasible_setpoint,
  no_convergence,
  empty_frontier,
  ill_conditioned,
  parse_error,
};

inline const char* to_string(errc code) {
  switch (code) {
    case errc::invalid_network: return "invalid network";
    case errc::invalid_argument: return "invalid argument";
    case errc::no_solution: return "no power-flow solution";
    case errc::off_circle: return "point off the voltage circle";
    case errc::undefined: return "undefined";
    case errc::degenerate_denominator: return "degenerate denominator";
    case errc::infeasible_setpoint: return "infeasible setpoint";
    case errc::no_convergence: return "no convergence";
    case errc::empty_frontier: return "empty frontier";
    case errc::ill_conditioned: return "ill-conditioned";
    case errc::parse_error: return "parse error";
  }
  return "unknown";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

}  // namespace lossval
