#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fpopf/caseio.hpp"
#include "fpopf/network.hpp"
#include "support/toy_networks.hpp"

using fpopf::Network;
using fpopf::ParseOptions;
using fpopf_test::load_case;

TEST_CASE("9-bus case parses with the expected structure") {
  const Network net = load_case("case9.m");
  REQUIRE(net.n_bus() == 9);
  REQUIRE(net.n_line() == 9);
  REQUIRE(net.n_gen() == 3);
  REQUIRE(net.base_mva == 100.0);
  REQUIRE(net.buses[static_cast<std::size_t>(net.slack_index())].id == 1);

  // generator buses 1..3, loads on 5, 7, 9
  REQUIRE(net.is_gen_bus(net.bus_index(1)));
  REQUIRE(net.is_gen_bus(net.bus_index(2)));
  REQUIRE(net.is_gen_bus(net.bus_index(3)));
  REQUIRE(!net.is_gen_bus(net.bus_index(4)));
  REQUIRE(net.buses[static_cast<std::size_t>(net.bus_index(5))].p_d == Catch::Approx(0.9));
  REQUIRE(net.buses[static_cast<std::size_t>(net.bus_index(9))].q_d == Catch::Approx(0.5));

  const auto& map = net.index_map();
  REQUIRE(map.n_v == 6);
  REQUIRE(map.n_th == 8);
  REQUIRE(map.n_om == 2);
  REQUIRE(map.d_static == 14);
  REQUIRE(map.d == 16);

  // default relay margin: trip at 1.1x the operating limit
  const fpopf::Line& l14 = net.lines[0];
  REQUIRE(l14.i_lim == Catch::Approx(2.5));
  REQUIRE(l14.i_trip == Catch::Approx(2.75));
  REQUIRE(l14.susceptance_mag == Catch::Approx(1.0 / 0.0576));

  // embedded operating point
  REQUIRE(net.embedded_dispatch.present);
  REQUIRE(net.embedded_dispatch.gen_p[1] == Catch::Approx(1.63));
  REQUIRE(net.embedded_dispatch.gen_v[0] == Catch::Approx(1.0));

  // every line touches a non-generator bus here
  for (const fpopf::Line& l : net.lines) REQUIRE(l.in_failure_set);
}

TEST_CASE("susceptance rows sum to the bus shunt") {
  const Network net = load_case("case9.m");
  const Eigen::MatrixXd& b = net.susceptance();
  for (int i = 0; i < net.n_bus(); ++i) {
    REQUIRE(b.row(i).sum() ==
            Catch::Approx(net.buses[static_cast<std::size_t>(i)].b_shunt).margin(1e-12));
    for (int j = 0; j < net.n_bus(); ++j) REQUIRE(b(i, j) == b(j, i));
  }
  // bus 4 collects half the charging of its two ends: 0.158/2 + 0.176/2
  REQUIRE(net.buses[static_cast<std::size_t>(net.bus_index(4))].b_shunt ==
          Catch::Approx(0.5 * 0.158 + 0.5 * 0.176).margin(1e-12));
}

TEST_CASE("load scaling and relay-margin options are applied") {
  ParseOptions opt;
  opt.load_scale = 1.2;
  opt.itrip_factor = 1.25;
  const Network net = load_case("case9.m", opt);
  REQUIRE(net.buses[static_cast<std::size_t>(net.bus_index(5))].p_d ==
          Catch::Approx(1.08));
  REQUIRE(net.lines[0].i_trip == Catch::Approx(2.5 * 1.25));
}

TEST_CASE("native serialization round-trips every field") {
  const Network net = load_case("case9.m");
  const std::string text = fpopf::serialize_native(net);
  const Network back = fpopf::parse_case_text(text);
  REQUIRE(back.n_bus() == net.n_bus());
  REQUIRE(back.n_line() == net.n_line());
  REQUIRE(back.n_gen() == net.n_gen());
  REQUIRE(back.base_mva == net.base_mva);
  for (int i = 0; i < net.n_bus(); ++i) {
    const fpopf::Bus& a = net.buses[static_cast<std::size_t>(i)];
    const fpopf::Bus& b = back.buses[static_cast<std::size_t>(i)];
    REQUIRE(a.id == b.id);
    REQUIRE(a.p_d == b.p_d);
    REQUIRE(a.q_d == b.q_d);
    REQUIRE(a.b_shunt == b.b_shunt);
    REQUIRE(a.is_slack == b.is_slack);
  }
  for (int i = 0; i < net.n_line(); ++i) {
    const fpopf::Line& a = net.lines[static_cast<std::size_t>(i)];
    const fpopf::Line& b = back.lines[static_cast<std::size_t>(i)];
    REQUIRE(a.susceptance_mag == b.susceptance_mag);
    REQUIRE(a.i_lim == b.i_lim);
    REQUIRE(a.i_trip == b.i_trip);
  }
  for (int i = 0; i < net.n_gen(); ++i) {
    const fpopf::Generator& a = net.generators[static_cast<std::size_t>(i)];
    const fpopf::Generator& b = back.generators[static_cast<std::size_t>(i)];
    REQUIRE(a.cost_c2 == b.cost_c2);
    REQUIRE(a.p_max == b.p_max);
    REQUIRE(a.mass == b.mass);
  }
  REQUIRE(back.embedded_dispatch.present == net.embedded_dispatch.present);
  // serialization is canonical: a second round trip is byte-identical
  REQUIRE(fpopf::serialize_native(back) == text);
}

TEST_CASE("reduction drops lines, buses, and their generators") {
  const Network net = load_case("case9.m");
  const Network cut = net.reduced({2}, {});  // line 4-5
  REQUIRE(cut.n_line() == 8);
  REQUIRE(cut.n_bus() == 9);

  const Network nogen = net.reduced({}, {3});
  REQUIRE(nogen.n_bus() == 8);
  REQUIRE(nogen.n_gen() == 2);
  // removing bus 3 also removes line 3-6
  REQUIRE(nogen.n_line() == 8);
}

TEST_CASE("disconnection from the slack is detected") {
  const Network net = load_case("case9.m");
  // line id 7 is 8-2, the only line at bus 2
  const Network cut = net.reduced({7}, {});
  const auto missing = cut.unreachable_from_slack();  // reported as bus ids
  REQUIRE(missing.size() == 1);
  REQUIRE(missing[0] == 2);

  // cutting 7-8 and 8-2 strands {2, 8}... unless 8-9 still ties bus 8 in
  const Network cut2 = net.reduced({6, 7, 8}, {});
  const auto missing2 = cut2.unreachable_from_slack();
  REQUIRE(missing2.size() == 2);
}

TEST_CASE("validation rejects malformed networks") {
  using fpopf::ValidationError;
  fpopf::Network net = fpopf_test::two_bus();

  fpopf::Network dup = net;
  dup.buses.push_back(dup.buses[0]);
  REQUIRE_THROWS_AS(dup.finalize(), ValidationError);

  fpopf::Network noslack = net;
  noslack.buses[0].is_slack = false;
  REQUIRE_THROWS_AS(noslack.finalize(), ValidationError);

  fpopf::Network badline = net;
  badline.lines[0].to_bus = 77;
  REQUIRE_THROWS_AS(badline.finalize(), ValidationError);

  fpopf::Network badtrip = net;
  badtrip.lines[0].i_trip = 0.5 * badtrip.lines[0].i_lim;
  REQUIRE_THROWS_AS(badtrip.finalize(), ValidationError);
}

TEST_CASE("neighbor and line lookups are consistent") {
  const Network net = load_case("case9.m");
  const int b4 = net.bus_index(4);
  const auto& nb = net.neighbors(b4);
  REQUIRE(nb.size() == 3);  // buses 1, 5, 9
  REQUIRE(net.lines_at_bus(b4).size() == 3);
  for (int line_idx : net.lines_at_bus(b4)) {
    const fpopf::Line& l = net.lines[static_cast<std::size_t>(line_idx)];
    REQUIRE((net.bus_index(l.from_bus) == b4 || net.bus_index(l.to_bus) == b4));
  }
}
