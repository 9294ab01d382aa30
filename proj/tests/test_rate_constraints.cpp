#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "fpopf/acopf.hpp"
#include "fpopf/energy.hpp"
#include "fpopf/failure_rate.hpp"
#include "fpopf/ipm.hpp"
#include "fpopf/nlp.hpp"
#include "fpopf/rate_constraints.hpp"
#include "fpopf/theta.hpp"
#include "support/toy_networks.hpp"

using namespace fpopf;
using fpopf_test::load_case;

namespace {

// N-0 dispatch of the nine-bus case, shared by the tests below.
struct Baseline {
  Network net;
  NlpPoint point;
  Eigen::VectorXd xb;
  DispatchPoint y;
  double cost = 0.0;
};

Baseline nine_bus_baseline() {
  Baseline b;
  b.net = load_case("case9.m");
  AcopfProblem prob(b.net);
  InteriorPoint ipm(prob, {});
  const IpmResult res = ipm.solve();
  REQUIRE(res.ok);
  b.point = res.point;
  b.xb = prob.static_state(res.point);
  b.y = prob.dispatch(res.point);
  b.cost = res.objective;
  return b;
}

// Move a line's trip threshold a small margin above its dispatch-point
// current so the barrier is low enough for a nonzero failure rate.
void place_trip(Network& net, const Eigen::VectorXd& xb, const DispatchPoint& y,
                int line_idx, double margin) {
  EnergyModel em(net);
  const LineFlow flow(net, line_idx);
  const double f0 = flow.value(flow.extract(em.assemble(xb, y)));
  net.lines[static_cast<std::size_t>(line_idx)].i_trip = std::sqrt(f0 * (1.0 + margin));
}

struct Seed {
  Eigen::VectorXd xstar;
  double mu = 0.0;
  Eigen::MatrixXd z;
  LineRate rate;
};

// Failure-point warm block for one line: the analytical rate evaluation
// plus two linear solves against the energy Hessian at the base point.
// With mu_moderate > 0 the barrier weight is rescaled to that fraction of
// the spectral radius of A, which keeps the displacement well off the base
// point; finite-difference curvature checks need that, because at a true
// seed the log-rate curvature grows like 1/(mu*alpha)^2.
Seed seed_block(const Network& net, const EnergyModel& em, const Eigen::VectorXd& xb,
                const DispatchPoint& y, int line_idx, double mu_moderate = -1.0) {
  const FailureRateAnalyzer fra(em, y, xb);
  Seed sd;
  sd.rate = fra.line_rate(line_idx);
  REQUIRE(sd.rate.ok);
  REQUIRE(sd.rate.lambda > 0.0);
  const LineFlow flow(net, line_idx);
  const LineState s = flow.from_local(sd.rate.x_local, y);
  const FlowFactor f = flow.factor(s);
  sd.mu = sd.rate.mu;
  if (mu_moderate > 0.0) {
    const Eigen::MatrixXd ghat = fra.local_inverse_block(flow);
    const Eigen::MatrixXd a = f.K.asDiagonal() * (f.Q.transpose() * ghat * f.Q);
    const Eigen::EigenSolver<Eigen::MatrixXd> es(a);
    sd.mu = mu_moderate / es.eigenvalues().array().abs().maxCoeff();
  }
  const int d = net.index_map().d_static;
  const Eigen::LLT<Eigen::MatrixXd> llt(em.hess_static(xb, y));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  const Eigen::VectorXd g = flow.grad_local(s);
  const auto& xc = flow.local_indices();
  for (int k = 0; k < flow.p(); ++k) rhs(xc[static_cast<std::size_t>(k)]) = g(k);
  sd.xstar = xb + sd.mu * llt.solve(rhs);
  Eigen::MatrixXd qf = Eigen::MatrixXd::Zero(d, flow.rank());
  for (int k = 0; k < flow.p(); ++k) qf.row(xc[static_cast<std::size_t>(k)]) = f.Q.row(k);
  sd.z = llt.solve(qf);
  return sd;
}

// One line of each factor rank with a load-bus coordinate.
std::pair<int, int> pick_lines(const Network& net) {
  int l3 = -1, l2 = -1;
  for (int l = 0; l < net.n_line(); ++l) {
    const LineFlow flow(net, l);
    if (flow.rank() == 3 && l3 < 0) l3 = l;
    if (flow.rank() == 2 && l2 < 0) l2 = l;
  }
  REQUIRE(l3 >= 0);
  REQUIRE(l2 >= 0);
  return {l3, l2};
}

}  // namespace

TEST_CASE("rate blocks reproduce the analytical rate at a seeded point") {
  Baseline b = nine_bus_baseline();
  const auto [l3, l2] = pick_lines(b.net);
  place_trip(b.net, b.xb, b.y, l3, 0.06);
  place_trip(b.net, b.xb, b.y, l2, 0.05);
  const EnergyModel em(b.net);

  const double lim = 1e-6;
  RateConstrainedOpf prob(b.net, lim);
  std::vector<Seed> seeds;
  for (int l : {l3, l2}) {
    seeds.push_back(seed_block(b.net, em, b.xb, b.y, l));
    prob.add_line(l, seeds.back().xstar, seeds.back().mu, seeds.back().z);
  }
  NlpPoint p = prob.initial_point();
  p.base = b.point.base;

  for (int l = 0; l < prob.n_lines(); ++l) {
    // the seed satisfies the failure-point equalities and the Z identity
    REQUIRE(prob.eq_line(p, l).lpNorm<Eigen::Infinity>() < 1e-6);
    REQUIRE(prob.zeq_line(p, l).lpNorm<Eigen::Infinity>() < 1e-9);
    const Eigen::VectorXd c = prob.ineq_line(p, l);
    REQUIRE(c(0) < 0.0);  // the spectral condition holds strictly
    // the log-rate row evaluates to exactly the analytical rate
    const double expect = std::log(seeds[static_cast<std::size_t>(l)].rate.lambda) -
                          std::log(lim);
    REQUIRE(std::abs(c(1) - expect) < 1e-8 * std::max(1.0, std::abs(expect)));
    const double modeled = prob.modeled_rate(p, l);
    REQUIRE(modeled ==
            Catch::Approx(seeds[static_cast<std::size_t>(l)].rate.lambda).epsilon(1e-8));
  }
}

TEST_CASE("rate block derivatives match finite differences") {
  Baseline b = nine_bus_baseline();
  const auto [l3, l2] = pick_lines(b.net);
  place_trip(b.net, b.xb, b.y, l3, 0.06);
  place_trip(b.net, b.xb, b.y, l2, 0.05);
  const EnergyModel em(b.net);

  RateConstrainedOpf prob(b.net, 1e-6);
  for (int l : {l3, l2}) {
    const Seed sd = seed_block(b.net, em, b.xb, b.y, l, 0.3);
    prob.add_line(l, sd.xstar, sd.mu, sd.z);
  }
  NlpPoint p = prob.initial_point();
  p.base = b.point.base;
  // small pushes off the seeded point keep every log argument positive
  // while breaking any accidental symmetry
  for (int k = 0; k < prob.n_base(); ++k) p.base(k) += 3e-4 * std::sin(1.3 * (k + 1));
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (long k = 0; k + 1 < p.w[l].size(); ++k)
      p.w[l](k) += 2e-4 * std::cos(0.7 * static_cast<double>(k) + static_cast<double>(l));
    p.w[l](p.w[l].size() - 1) *= 1.05;
    p.z[l].array() += 1e-3;
  }
  const DerivativeCheck chk = check_derivatives(prob, p);
  INFO(chk.where);
  // curvature entries reach 1/mu^2, so central differences at h = 1e-6
  // carry a truncation floor around 1e-4 even for an exact Hessian
  REQUIRE(chk.worst < 1e-3);
}

TEST_CASE("load shedding variant of the rate blocks differentiates exactly") {
  Baseline b = nine_bus_baseline();
  const auto [l3, l2] = pick_lines(b.net);
  place_trip(b.net, b.xb, b.y, l3, 0.06);

  AcopfOptions aopt;
  aopt.load_shedding = true;
  RateConstrainedOpf prob(b.net, 1e-6, aopt);
  NlpPoint p = prob.initial_point();
  // embed the solved dispatch into the wider shedding layout
  AcopfProblem plain(b.net);
  for (int bus = 0; bus < b.net.n_bus(); ++bus) {
    p.base(prob.v_var(bus)) = b.point.base(plain.v_var(bus));
    if (prob.th_var(bus) >= 0) p.base(prob.th_var(bus)) = b.point.base(plain.th_var(bus));
  }
  for (int g = 0; g < b.net.n_gen(); ++g) {
    p.base(prob.pg_var(g)) = b.point.base(plain.pg_var(g));
    p.base(prob.qg_var(g)) = b.point.base(plain.qg_var(g));
  }
  for (int bus = 0; bus < b.net.n_bus(); ++bus) {
    if (prob.ps_var(bus) >= 0) p.base(prob.ps_var(bus)) = 0.012;
    if (prob.qs_var(bus) >= 0) p.base(prob.qs_var(bus)) = 0.008;
  }
  // seed against the effective (shed-reduced) demands
  EnergyModel em(b.net);
  const int nb = b.net.n_bus();
  Eigen::VectorXd pd(nb), qd(nb);
  for (int bus = 0; bus < nb; ++bus) {
    pd(bus) = prob.p_eff(p, bus);
    qd(bus) = prob.q_eff(p, bus);
  }
  em.set_demands(pd, qd);
  const Seed sd = seed_block(b.net, em, b.xb, b.y, l3, 0.3);
  prob.add_line(l3, sd.xstar, sd.mu, sd.z);
  Eigen::VectorXd w0(sd.xstar.size() + 1);
  w0 << sd.xstar, sd.mu;
  p.w.push_back(w0);
  p.z.push_back(sd.z);

  for (int k = 0; k < prob.n_base(); ++k) p.base(k) += 2e-4 * std::sin(0.9 * (k + 1));
  p.w[0].head(sd.xstar.size()).array() += 1e-4;
  p.z[0].array() += 1e-3;
  const DerivativeCheck chk = check_derivatives(prob, p);
  INFO(chk.where);
  REQUIRE(chk.worst < 1e-3);
}

TEST_CASE("slack rate bound keeps the nine-bus dispatch at its unconstrained cost") {
  Baseline b = nine_bus_baseline();
  const auto [l3, l2] = pick_lines(b.net);
  place_trip(b.net, b.xb, b.y, l3, 0.06);
  place_trip(b.net, b.xb, b.y, l2, 0.05);
  const EnergyModel em(b.net);

  // a bound an order of magnitude above both current rates cannot bind
  double top = 0.0;
  std::vector<Seed> seeds;
  for (int l : {l3, l2}) {
    seeds.push_back(seed_block(b.net, em, b.xb, b.y, l));
    top = std::max(top, seeds.back().rate.lambda);
  }
  RateConstrainedOpf prob(b.net, 10.0 * top);
  int idx = 0;
  for (int l : {l3, l2}) {
    prob.add_line(l, seeds[static_cast<std::size_t>(idx)].xstar,
                  seeds[static_cast<std::size_t>(idx)].mu,
                  seeds[static_cast<std::size_t>(idx)].z);
    ++idx;
  }
  NlpPoint start = prob.initial_point();
  start.base = b.point.base;
  InteriorPoint ipm(prob, {});
  const IpmResult res = ipm.solve(start, nullptr);
  REQUIRE(res.ok);
  REQUIRE(res.kkt.overall() < 1e-6);
  REQUIRE(res.objective == Catch::Approx(b.cost).epsilon(1e-6));
  for (int l = 0; l < prob.n_lines(); ++l)
    REQUIRE(prob.ineq_line(res.point, l).maxCoeff() < 1e-8);
}

TEST_CASE("binding rate bound lowers the line failure rate to the limit") {
  Baseline b = nine_bus_baseline();
  const auto [l3, l2] = pick_lines(b.net);
  place_trip(b.net, b.xb, b.y, l3, 0.05);
  const EnergyModel em(b.net);

  const Seed sd = seed_block(b.net, em, b.xb, b.y, l3);
  const double lim = sd.rate.lambda / 10.0;
  RateConstrainedOpf prob(b.net, lim);
  prob.add_line(l3, sd.xstar, sd.mu, sd.z);
  NlpPoint start = prob.initial_point();
  start.base = b.point.base;
  InteriorPoint ipm(prob, {});
  const IpmResult res = ipm.solve(start, nullptr);
  REQUIRE(res.ok);
  REQUIRE(res.kkt.overall() < 1e-6);

  // the independent analytical evaluation at the new dispatch obeys the cap
  const Eigen::VectorXd xb2 = prob.static_state(res.point);
  const DispatchPoint y2 = prob.dispatch(res.point);
  const FailureRateAnalyzer fra(em, y2, xb2);
  const LineRate after = fra.line_rate(l3);
  REQUIRE(after.ok);
  REQUIRE(after.lambda <= lim * 1.0001);
  REQUIRE(after.lambda >= lim * 0.5);  // the cheapest dispatch sits at the bound
  REQUIRE(res.objective >= b.cost - 1e-8);
  REQUIRE(prob.modeled_rate(res.point, 0) ==
          Catch::Approx(after.lambda).epsilon(1e-6));
}

TEST_CASE("a collapsed displacement is rejected as out of domain") {
  Baseline b = nine_bus_baseline();
  const auto [l3, l2] = pick_lines(b.net);
  place_trip(b.net, b.xb, b.y, l3, 0.06);
  const EnergyModel em(b.net);

  RateConstrainedOpf prob(b.net, 1e-6);
  const Seed sd = seed_block(b.net, em, b.xb, b.y, l3);
  prob.add_line(l3, sd.xstar, sd.mu, sd.z);
  NlpPoint p = prob.initial_point();
  p.base = b.point.base;
  p.w[0].head(sd.xstar.size()) = b.xb;  // failure point on top of the base point
  REQUIRE_THROWS_AS(prob.ineq_line(p, 0), NumericError);
}
