#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "fpopf/energy.hpp"
#include "fpopf/failure_rate.hpp"
#include "fpopf/fpacopf.hpp"
#include "support/toy_networks.hpp"

using namespace fpopf;
using fpopf_test::load_case;

namespace {

// Nine-bus case with line limits tightened around the unconstrained optimum.
// The headroom leaves room to redispatch (utilizations near 0.83), while the
// trip factor keeps relay thresholds close enough that the analytical rates
// land in a numerically comfortable range.  Built once and copied per test.
Network tight_case9() {
  static Network cached;
  static bool built = false;
  if (built) return cached;
  Network net = load_case("case9.m");
  const DispatchSolution loose = solve_acopf(net);
  REQUIRE(loose.ok);
  for (const LineRateEntry& e : loose.line_rates) {
    Line& ln = net.lines[static_cast<std::size_t>(e.line)];
    ln.i_lim = std::sqrt(std::max(e.flow, 1e-6)) * 1.20;
    ln.i_trip = 1.05 * ln.i_lim;
  }
  net.finalize();
  cached = net;
  built = true;
  return net;
}

// Recomputes the worst in-set rate at the returned dispatch with a fresh
// analyzer, independent of anything the driver stored on the solution.
double recomputed_max_rate(const Network& net, const DispatchSolution& sol) {
  EnergyModel em(net, ModelParams{});
  if (sol.p_shed.size() == net.n_bus()) {
    Eigen::VectorXd pd(net.n_bus()), qd(net.n_bus());
    for (int b = 0; b < net.n_bus(); ++b) {
      pd(b) = net.buses[static_cast<std::size_t>(b)].p_d - sol.p_shed(b);
      qd(b) = net.buses[static_cast<std::size_t>(b)].q_d - sol.q_shed(b);
    }
    em.set_demands(pd, qd);
  }
  const FailureRateAnalyzer fra(em, sol.y, sol.x_static);
  double worst = 0.0;
  for (const LineRate& r : fra.all_rates()) {
    if (!r.in_set) continue;
    REQUIRE(r.ok);
    worst = std::max(worst, r.lambda);
  }
  return worst;
}

std::vector<int> unconstrained_candidates(const Network& net,
                                          const DispatchSolution& sol) {
  std::vector<int> out;
  for (int l = 0; l < net.n_line(); ++l) {
    if (!net.lines[static_cast<std::size_t>(l)].in_failure_set) continue;
    bool active = false;
    for (int a : sol.active_lines) active = active || (a == l);
    if (!active) out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_CASE("rate limit from outage probability and horizon", "[fpacopf]") {
  // P(outage within t) <= eps for an exponential clock means
  // lambda <= -log(1 - eps) / t.
  CHECK(rate_limit(0.01, 3600.0) == Catch::Approx(2.7917599593e-6).epsilon(1e-9));
  CHECK(rate_limit(0.5, 1.0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  // Small eps behaves like eps / t.
  CHECK(rate_limit(1e-9, 10.0) == Catch::Approx(1e-10).epsilon(1e-6));
}

TEST_CASE("slack cap reduces to the unconstrained dispatch", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);
  REQUIRE(n0.max_rate > 0.0);

  const DispatchSolution sol = solve_fpacopf(net, 10.0 * n0.max_rate);
  REQUIRE(sol.ok);
  CHECK(sol.active_lines.empty());
  CHECK(sol.cost == Catch::Approx(n0.cost).epsilon(1e-9));
  CHECK(sol.cost == Catch::Approx(sol.cost_n0).epsilon(1e-12));
  // One screening round that adds nothing.
  REQUIRE(sol.trace.size() == 2);
  CHECK(sol.trace.back().added == 0);
}

TEST_CASE("binding cap converges to a rate-feasible optimum", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);
  const double lim = n0.max_rate / 100.0;

  const DispatchSolution sol = solve_fpacopf(net, lim);
  REQUIRE(sol.ok);
  CHECK(sol.lambda_lim == lim);
  CHECK_FALSE(sol.active_lines.empty());

  // Tightening a binding cap costs money but not much of it here.
  CHECK(sol.cost > sol.cost_n0);
  CHECK(sol.cost < sol.cost_n0 * 1.01);

  // The achieved worst rate respects the cap, recomputed from scratch.
  const double worst = recomputed_max_rate(net, sol);
  CHECK(worst <= lim * (1.0 + 1e-4));
  CHECK(sol.max_rate == Catch::Approx(worst).epsilon(1e-9));
  // The cap is active, not slack by orders of magnitude.
  CHECK(worst > 0.5 * lim);

  // Fixed point: screening the remaining lines finds no violation.
  FpacopfOptions opt;
  const auto blocks =
      screen_violations(net, sol, unconstrained_candidates(net, sol), opt);
  for (const WarmBlock& wb : blocks) {
    CHECK(wb.ok);
    CHECK_FALSE(wb.violating);
  }

  // The trace ends on a round that added nothing.
  REQUIRE(sol.trace.size() >= 2);
  CHECK(sol.trace.back().added == 0);
  CHECK(sol.nlp_seconds > 0.0);
  CHECK(sol.eval_seconds > 0.0);
}

TEST_CASE("cost is monotone as the cap tightens", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);

  double prev_cost = n0.cost;
  for (double factor : {10.0, 100.0, 1000.0}) {
    const double lim = n0.max_rate / factor;
    const DispatchSolution sol = solve_fpacopf(net, lim);
    REQUIRE(sol.ok);
    CHECK(recomputed_max_rate(net, sol) <= lim * (1.0 + 1e-4));
    CHECK(sol.cost >= prev_cost * (1.0 - 1e-8));
    prev_cost = sol.cost;
  }
}

TEST_CASE("per-line cap overrides the global one", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);

  // Worst line at the unconstrained optimum.
  int worst_line = -1;
  double worst_rate = 0.0;
  for (const LineRateEntry& e : n0.line_rates) {
    if (e.in_set && e.lambda > worst_rate) {
      worst_rate = e.lambda;
      worst_line = e.line;
    }
  }
  REQUIRE(worst_line >= 0);

  FpacopfOptions opt;
  opt.lambda_lim_per_line[worst_line] = worst_rate / 10.0;
  const DispatchSolution sol = solve_fpacopf(net, 10.0 * worst_rate, opt);
  REQUIRE(sol.ok);

  // Only the overridden line needed a constraint block.
  REQUIRE(sol.active_lines.size() == 1);
  CHECK(sol.active_lines[0] == worst_line);
  for (const LineRateEntry& e : sol.line_rates) {
    if (e.line == worst_line)
      CHECK(e.lambda <= worst_rate / 10.0 * (1.0 + 1e-4));
  }
  CHECK(sol.cost >= sol.cost_n0);
}

TEST_CASE("shedding variant keeps the cap and obeys the penalty", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);
  const double lim = n0.max_rate / 100.0;

  // A quadratic penalty has zero marginal cost at zero shed, so the optimum
  // always trades a whisker of load (about the marginal price over 2 phi)
  // against generation cost.  It must stay a whisker, and the cap must hold
  // with the shed demands in force.
  const DispatchSolution shed = solve_fpacopf_with_shedding(net, lim);
  REQUIRE(shed.ok);
  CHECK(shed.shed_fraction > 0.0);
  CHECK(shed.shed_fraction < 0.01);
  CHECK(recomputed_max_rate(net, shed) <= lim * (1.0 + 1e-4));

  // Stiffer penalties shed less.
  const double tau = ModelParams().tau;
  double prev = -1.0;
  for (double phi : {1e5, 1e6, 1e7}) {
    const DispatchSolution sol = solve_fpacopf_with_shedding(net, lim, tau, phi);
    REQUIRE(sol.ok);
    if (prev >= 0.0) CHECK(sol.shed_fraction <= prev * (1.0 + 1e-6));
    prev = sol.shed_fraction;
  }
}

TEST_CASE("shedding rescues a cap infeasible by redispatch", "[fpacopf]") {
  // With every line capped five percent above its unconstrained flow, moving
  // current off one line overloads another: deep rate caps become jointly
  // infeasible with the flow limits unless load comes off.
  Network net = load_case("case9.m");
  const DispatchSolution loose = solve_acopf(net);
  REQUIRE(loose.ok);
  for (const LineRateEntry& e : loose.line_rates) {
    Line& ln = net.lines[static_cast<std::size_t>(e.line)];
    ln.i_lim = std::sqrt(std::max(e.flow, 1e-6)) * 1.05;
    ln.i_trip = 1.10 * ln.i_lim;
  }
  net.finalize();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);
  const double lim = n0.max_rate / 300.0;

  const DispatchSolution plain = solve_fpacopf(net, lim);
  CHECK_FALSE(plain.ok);
  CHECK(plain.message.find("round") != std::string::npos);

  const DispatchSolution shed = solve_fpacopf_with_shedding(net, lim);
  REQUIRE(shed.ok);
  CHECK(shed.shed_fraction > 1e-4);
  CHECK(shed.shed_fraction < 0.02);
  CHECK(shed.cost > n0.cost);
  CHECK(recomputed_max_rate(net, shed) <= lim * (1.0 + 1e-4));
}

TEST_CASE("failure reports name the round that died", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);

  // A starved iteration budget cannot finish the constrained re-solve.
  FpacopfOptions opt;
  opt.round_iter_cap = 2;
  const DispatchSolution sol = solve_fpacopf(net, n0.max_rate / 100.0, opt);
  CHECK_FALSE(sol.ok);
  CHECK(sol.message.find("round") != std::string::npos);

  // A zero round budget cannot certify a fixed point.
  FpacopfOptions none;
  none.max_rounds = 0;
  const DispatchSolution stuck = solve_fpacopf(net, n0.max_rate / 100.0, none);
  CHECK_FALSE(stuck.ok);
  CHECK(stuck.message.find("no fixed point") != std::string::npos);
}

TEST_CASE("solution report carries every section", "[fpacopf]") {
  const Network net = tight_case9();
  const DispatchSolution n0 = solve_acopf(net);
  REQUIRE(n0.ok);
  const DispatchSolution sol = solve_fpacopf(net, n0.max_rate / 100.0);
  REQUIRE(sol.ok);

  std::ostringstream os;
  write_solution_csv(sol, net, os);
  const std::string text = os.str();

  for (const char* needle :
       {"# bus", "# generator", "# line", "# summary", "status,converged",
        "cost,", "cost_diff_pct,", "max_rate,", "lambda_lim,", "shed_pct,0"}) {
    INFO(needle);
    CHECK(text.find(needle) != std::string::npos);
  }

  // One row per bus, generator, and line.
  const auto count_rows = [&text](const std::string& from, const std::string& to) {
    const std::size_t a = text.find(from);
    const std::size_t b = text.find(to);
    REQUIRE(a != std::string::npos);
    REQUIRE(b != std::string::npos);
    int rows = -2;  // skip the section marker and the header
    for (std::size_t i = a; i < b; ++i) rows += text[i] == '\n' ? 1 : 0;
    return rows;
  };
  CHECK(count_rows("# bus", "# generator") == net.n_bus());
  CHECK(count_rows("# generator", "# line") == net.n_gen());
  CHECK(count_rows("# line", "# summary") == net.n_line());
}
