// Small hand-built networks and case-file loading shared by the test suite.
#pragma once

#include <string>

#include "fpopf/caseio.hpp"
#include "fpopf/network.hpp"

namespace fpopf_test {

inline fpopf::Network two_bus(double p_d = 0.0, double q_d = 0.0, double x = 0.1,
                              double i_lim = 1.0, double i_trip = 1.1) {
  fpopf::Network net;
  net.base_mva = 100.0;
  fpopf::Bus b1;
  b1.id = 1;
  b1.is_slack = true;
  fpopf::Bus b2;
  b2.id = 2;
  b2.p_d = p_d;
  b2.q_d = q_d;
  net.buses = {b1, b2};
  fpopf::Line l;
  l.id = 1;
  l.from_bus = 1;
  l.to_bus = 2;
  l.susceptance_mag = 1.0 / x;
  l.i_lim = i_lim;
  l.i_trip = i_trip;
  net.lines = {l};
  fpopf::Generator g;
  g.id = 1;
  g.bus = 1;
  g.p_min = 0.0;
  g.p_max = 5.0;
  g.q_min = -5.0;
  g.q_max = 5.0;
  g.cost_c2 = 0.1;
  g.cost_c1 = 1.0;
  net.generators = {g};
  net.finalize();
  return net;
}

// Triangle: slack generator at bus 1, generator at bus 2, load at bus 3.
inline fpopf::Network three_bus(double load_p = 1.2, double load_q = 0.3) {
  fpopf::Network net;
  net.base_mva = 100.0;
  fpopf::Bus b1;
  b1.id = 1;
  b1.is_slack = true;
  fpopf::Bus b2;
  b2.id = 2;
  fpopf::Bus b3;
  b3.id = 3;
  b3.p_d = load_p;
  b3.q_d = load_q;
  net.buses = {b1, b2, b3};
  const auto mk_line = [](int id, int f, int t, double x) {
    fpopf::Line l;
    l.id = id;
    l.from_bus = f;
    l.to_bus = t;
    l.susceptance_mag = 1.0 / x;
    l.i_lim = 3.0;
    l.i_trip = 3.3;
    return l;
  };
  net.lines = {mk_line(1, 1, 2, 0.2), mk_line(2, 1, 3, 0.1), mk_line(3, 2, 3, 0.125)};
  const auto mk_gen = [](int id, int bus) {
    fpopf::Generator g;
    g.id = id;
    g.bus = bus;
    g.p_min = 0.0;
    g.p_max = 5.0;
    g.q_min = -5.0;
    g.q_max = 5.0;
    g.cost_c2 = 0.1;
    g.cost_c1 = 1.0;
    return g;
  };
  net.generators = {mk_gen(1, 1), mk_gen(2, 2)};
  net.finalize();
  return net;
}

inline void set_line_limits(fpopf::Network& net, int line_id, double i_lim, double i_trip) {
  for (fpopf::Line& l : net.lines) {
    if (l.id == line_id) {
      l.i_lim = i_lim;
      l.i_trip = i_trip;
      net.finalize();
      return;
    }
  }
  throw fpopf::ValidationError("no such line id");
}

inline fpopf::Network load_case(const std::string& filename,
                                fpopf::ParseOptions opt = {}) {
  return fpopf::parse_case_file(std::string(FPOPF_DATA_DIR) + "/" + filename, opt);
}

}  // namespace fpopf_test
