#pragma once

// Feeder model text format. Sections in any order, '#' starts a comment,
// all values per unit:
//
//   [buses]   name kind [value]    kind: slack (value = V_t), gen (value = V_+), load
//   [lines]   from to r x
//   [loads]   bus p q model        model: P (constant power) | Z (constant impedance)
//   [caps]    bus q                reactive injection at 1 pu
//
// Exactly one slack and one gen bus are required.

#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "lossval/error.hpp"
#include "lossval/feeder.hpp"

namespace lossval {

namespace detail {

inline std::string strip_comment(std::string line) {
  if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
  const auto first = line.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = line.find_last_not_of(" \t\r");
  return line.substr(first, last - first + 1);
}

}  // namespace detail

inline FeederModel read_feeder(std::istream& in) {
  FeederModel model;
  std::map<std::string, std::size_t> index;
  bool have_slack = false;
  bool have_gen = false;
  std::string section;
  std::string raw;
  std::size_t lineno = 0;

  auto fail = [&](const std::string& msg) -> error {
    return error(errc::parse_error, "line " + std::to_string(lineno) + ": " + msg);
  };
  auto bus_of = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw fail("unknown bus '" + name + "'");
    return it->second;
  };

  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::strip_comment(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("malformed section header");
      section = line.substr(1, line.size() - 2);
      if (section != "buses" && section != "lines" && section != "loads" && section != "caps")
        throw fail("unknown section [" + section + "]");
      continue;
    }
    std::istringstream row(line);
    if (section == "buses") {
      std::string name;
      std::string kind;
      if (!(row >> name >> kind)) throw fail("expected: name kind [value]");
      if (index.count(name)) throw fail("duplicate bus '" + name + "'");
      const std::size_t id = model.bus_names.size();
      index[name] = id;
      model.bus_names.push_back(name);
      if (kind == "slack" || kind == "gen") {
        double value = 0.0;
        if (!(row >> value)) throw fail(kind + " bus needs a voltage value");
        if (kind == "slack") {
          if (have_slack) throw fail("second slack bus");
          have_slack = true;
          model.slack = id;
          model.v_t = value;
        } else {
          if (have_gen) throw fail("second gen bus");
          have_gen = true;
          model.gen_bus = id;
          model.v_plus = value;
        }
      } else if (kind != "load") {
        throw fail("bus kind must be slack, gen or load");
      }
    } else if (section == "lines") {
      std::string a;
      std::string b;
      FeederLine l;
      if (!(row >> a >> b >> l.r >> l.x)) throw fail("expected: from to r x");
      l.from = bus_of(a);
      l.to = bus_of(b);
      model.lines.push_back(l);
    } else if (section == "loads") {
      std::string bus;
      std::string kind;
      FeederLoad l;
      if (!(row >> bus >> l.p >> l.q >> kind)) throw fail("expected: bus p q model");
      l.bus = bus_of(bus);
      if (kind == "P")
        l.model = LoadModel::constant_power;
      else if (kind == "Z")
        l.model = LoadModel::constant_impedance;
      else
        throw fail("load model must be P or Z");
      model.loads.push_back(l);
    } else if (section == "caps") {
      std::string bus;
      ShuntCap c;
      if (!(row >> bus >> c.q)) throw fail("expected: bus q");
      c.bus = bus_of(bus);
      model.caps.push_back(c);
    } else {
      throw fail("data outside a section");
    }
    std::string extra;
    if (row >> extra) throw fail("trailing field '" + extra + "'");
  }
  if (!have_slack || !have_gen) throw error(errc::parse_error, "need one slack and one gen bus");
  RadialFeeder check(model);  // topology validation
  return model;
}

inline FeederModel read_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::parse_error, "cannot open feeder model " + path);
  return read_feeder(in);
}

}  // namespace lossval
