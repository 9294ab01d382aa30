#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "fpopf/energy.hpp"
#include "fpopf/rng.hpp"
#include "fpopf/theta.hpp"
#include "support/finite_diff.hpp"
#include "support/toy_networks.hpp"

using fpopf::DispatchPoint;
using fpopf::EnergyModel;
using fpopf::FlowCoord;
using fpopf::LineFlow;
using fpopf::LineState;
using fpopf::Network;
using fpopf::Rng;
using fpopf_test::load_case;

namespace {

int line_index_by_ends(const Network& net, int a, int b) {
  for (int i = 0; i < net.n_line(); ++i) {
    const fpopf::Line& l = net.lines[static_cast<std::size_t>(i)];
    if ((l.from_bus == a && l.to_bus == b) || (l.from_bus == b && l.to_bus == a))
      return i;
  }
  throw std::runtime_error("no such line");
}

LineState random_line_state(Rng& rng) {
  LineState s;
  s.vi = 0.95 + 0.1 * rng.u01();
  s.vj = 0.95 + 0.1 * rng.u01();
  s.ti = 0.4 * (rng.u01() - 0.5);
  s.tj = 0.4 * (rng.u01() - 0.5);
  return s;
}

}  // namespace

TEST_CASE("squared current has the textbook value") {
  const Network net = fpopf_test::two_bus();  // x = 0.1, so |Y| = 10
  const LineFlow flow(net, 0);
  LineState s;
  s.vi = 1.0;
  s.vj = 1.0;
  s.ti = 0.1;
  s.tj = 0.0;
  // 10^2 * (1 + 1 - 2 cos 0.1)
  REQUIRE(flow.value(s) == Catch::Approx(0.999167).margin(5e-7));
  REQUIRE(flow.value(s) ==
          Catch::Approx(200.0 * (1.0 - std::cos(0.1))).epsilon(1e-15));
}

TEST_CASE("role ordering puts the load endpoint first") {
  const Network net = load_case("case9.m");
  // 8-2: bus 8 is a load, bus 2 carries a generator
  const LineFlow f82(net, line_index_by_ends(net, 8, 2));
  REQUIRE(f82.rank() == 2);
  REQUIRE(net.buses[static_cast<std::size_t>(f82.bus_i())].id == 8);
  REQUIRE(net.buses[static_cast<std::size_t>(f82.bus_j())].id == 2);
  REQUIRE(f82.p() == 3);

  // 1-4: bus 1 is the slack, so its angle coordinate is dropped
  const LineFlow f14(net, line_index_by_ends(net, 1, 4));
  REQUIRE(f14.rank() == 2);
  REQUIRE(net.buses[static_cast<std::size_t>(f14.bus_i())].id == 4);
  REQUIRE(f14.p() == 2);
  REQUIRE(f14.local_kinds()[0] == FlowCoord::Vi);
  REQUIRE(f14.local_kinds()[1] == FlowCoord::ThI);

  // 4-5: both endpoints are loads
  const LineFlow f45(net, line_index_by_ends(net, 4, 5));
  REQUIRE(f45.rank() == 3);
  REQUIRE(f45.p() == 4);
}

TEST_CASE("gradient and hessian match finite differences") {
  const Network net = fpopf_test::two_bus();
  const LineFlow flow(net, 0);
  Rng rng(31);
  const auto f = [&](const Eigen::VectorXd& v) {
    LineState s{v(0), v(1), v(2), v(3)};
    return flow.value(s);
  };
  for (int trial = 0; trial < 10; ++trial) {
    const LineState s = random_line_state(rng);
    Eigen::VectorXd v(4);
    v << s.vi, s.vj, s.ti, s.tj;
    const Eigen::Vector4d g = flow.grad4(s);
    const Eigen::VectorXd g_fd = fpopf_test::fd_gradient(f, v);
    REQUIRE((g - g_fd).lpNorm<Eigen::Infinity>() < 1e-5);
    const Eigen::Matrix4d h = flow.hess4(s);
    const Eigen::MatrixXd h_fd = fpopf_test::fd_hessian(f, v);
    REQUIRE((h - h_fd).lpNorm<Eigen::Infinity>() < 1e-4 * std::max(1.0, h.norm()));
  }
}

TEST_CASE("factored hessian reproduces the local hessian exactly") {
  const Network net = load_case("case9.m");
  Rng rng(77);
  for (const auto& ends : {std::pair{4, 5}, {8, 2}, {1, 4}, {5, 6}, {9, 4}}) {
    const LineFlow flow(net, line_index_by_ends(net, ends.first, ends.second));
    for (int trial = 0; trial < 8; ++trial) {
      const LineState s = random_line_state(rng);
      const Eigen::MatrixXd h = flow.hess_local(s);
      const auto fac = flow.factor(s);
      REQUIRE(fac.Q.rows() == flow.p());
      REQUIRE(fac.Q.cols() == flow.rank());
      const Eigen::MatrixXd rebuilt = fac.Q * fac.K.asDiagonal() * fac.Q.transpose();
      REQUIRE((rebuilt - h).lpNorm<Eigen::Infinity>() <
              1e-12 * std::max(1.0, h.lpNorm<Eigen::Infinity>()));
    }
  }
}

TEST_CASE("three-coordinate factor keeps the fixed signature") {
  const Network net = load_case("case9.m");
  const LineFlow flow(net, line_index_by_ends(net, 4, 5));
  Rng rng(5);
  const LineState s = random_line_state(rng);
  const auto fac = flow.factor(s);
  REQUIRE(fac.K.size() == 3);
  REQUIRE(fac.K(0) == 1.0);
  REQUIRE(fac.K(1) == 1.0);
  REQUIRE(fac.K(2) == -1.0);
}

TEST_CASE("local evaluation agrees with bus-level extraction") {
  const Network net = load_case("case9.m");
  const EnergyModel model(net);
  const DispatchPoint y = fpopf::dispatch_from_embedded(net);
  const Eigen::VectorXd x = model.find_equilibrium(y);
  const auto st = model.assemble(x, y);
  for (int li = 0; li < net.n_line(); ++li) {
    const LineFlow flow(net, li);
    const double from_bus_state = flow.value(flow.extract(st));
    const double from_local = flow.value(flow.from_local(flow.local_from_static(x), y));
    REQUIRE(from_bus_state == Catch::Approx(from_local).epsilon(1e-14));
  }
}

TEST_CASE("finite-difference check through the local coordinate map") {
  const Network net = load_case("case9.m");
  const EnergyModel model(net);
  const DispatchPoint y = fpopf::dispatch_from_embedded(net);
  const Eigen::VectorXd x0 = model.find_equilibrium(y);
  for (const auto& ends : {std::pair{8, 2}, {1, 4}, {6, 7}}) {
    const LineFlow flow(net, line_index_by_ends(net, ends.first, ends.second));
    const Eigen::VectorXd xl = flow.local_from_static(x0);
    const auto f = [&](const Eigen::VectorXd& v) {
      return flow.value(flow.from_local(v, y));
    };
    const LineState s = flow.from_local(xl, y);
    const Eigen::VectorXd g_fd = fpopf_test::fd_gradient(f, xl);
    REQUIRE((flow.grad_local(s) - g_fd).lpNorm<Eigen::Infinity>() < 1e-6);
    const Eigen::MatrixXd h_fd = fpopf_test::fd_hessian(f, xl);
    REQUIRE((flow.hess_local(s) - h_fd).lpNorm<Eigen::Infinity>() < 1e-3);
  }
}

TEST_CASE("factorization is refused between two generator buses") {
  // in the 3-bus triangle the 1-2 line joins the two generator buses
  const fpopf::Network net = fpopf_test::three_bus();
  const int li = line_index_by_ends(net, 1, 2);
  const LineFlow flow(net, li);
  REQUIRE(flow.rank() == 1);
  REQUIRE(!flow.in_failure_set());
  Rng rng(1);
  const LineState s = random_line_state(rng);
  REQUIRE_THROWS_AS(flow.factor(s), fpopf::ValidationError);
}
