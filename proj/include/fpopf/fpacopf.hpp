// Failure-probability constrained optimal power flow by constraint generation.
//
// The full problem bounds the analytical failure rate of every line, but at
// an optimum only a handful of bounds bind.  The driver therefore grows an
// active set: solve the dispatch problem with rate blocks for the lines
// collected so far, evaluate the analytical rate of every other line at the
// incumbent (embarrassingly parallel), and add the violators together with
// their failure-point blocks as warm starts.  The loop ends at a fixed
// point: a dispatch whose re-screening finds no new violations.
//
//   round 0   plain dispatch problem, empty active set
//   screen    per-line rate evaluation at the incumbent; violators collected
//   grow      violators enter the active set, seeded from the screening
//   re-solve  warm-started interior-point solve of the enlarged problem
//
// Screening failures (a line whose failure-point iteration does not
// converge) are reported as warnings and treated as non-violating; they are
// never silently dropped.  The final solution always carries achieved rates
// recomputed by the analytical module, independent of the optimizer's
// internal constraint values.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fpopf/acopf.hpp"
#include "fpopf/common.hpp"
#include "fpopf/energy.hpp"
#include "fpopf/failure_rate.hpp"
#include "fpopf/ipm.hpp"
#include "fpopf/network.hpp"
#include "fpopf/rate_constraints.hpp"
#include "fpopf/theta.hpp"

namespace fpopf {

struct FpacopfOptions {
  ModelParams params{};      // noise and damping parameters, including tau
  AcopfOptions acopf{};      // load shedding switch and its penalty
  IpmOptions ipm{};          // inner solver controls
  int max_rounds = 20;       // constraint-generation round cap
  int round_iter_cap = 500;  // interior-point iteration cap per round
  int screen_threads = 0;    // 0 = hardware concurrency
  std::map<int, double> lambda_lim_per_line;  // overrides of the global cap
};

// Per-line row of the solution report.  The rate is the analytical value at
// the final dispatch; rate_ok is false when the failure-point iteration did
// not produce one (the flow column is always present).
struct LineRateEntry {
  int line = -1;
  double flow = 0.0;         // Theta_l, the squared-current surrogate
  double utilization = 0.0;  // sqrt(Theta_l) / I_lim
  double lambda = 0.0;
  bool in_set = true;
  bool active = false;  // carries a rate block in the final problem
  bool rate_ok = true;
};

struct RoundTrace {
  int round = 0;
  int active_before = 0;
  int added = 0;
  int nlp_iterations = 0;
  double nlp_seconds = 0.0;
  double eval_seconds = 0.0;
  double objective = 0.0;
  std::vector<int> new_lines;
};

struct DispatchSolution {
  bool ok = false;
  std::string message;

  DispatchPoint y;
  Eigen::VectorXd x_static;
  double cost = 0.0;
  double cost_n0 = 0.0;  // round-0 objective, the cost reference
  double max_rate = 0.0;
  double lambda_lim = 0.0;
  double tau = 0.0;

  Eigen::VectorXd p_shed, q_shed;  // per bus; zero outside shed mode
  double shed_fraction = 0.0;      // sum |p_s| / sum p_d

  std::vector<LineRateEntry> line_rates;
  std::vector<int> active_lines;
  std::vector<RoundTrace> trace;
  std::vector<std::string> warnings;
  double nlp_seconds = 0.0;
  double eval_seconds = 0.0;

  // final iterate and multipliers, for external optimality checks
  NlpPoint point;
  NlpMultipliers mult;
};

// Screening result for one candidate line: the analytical rate at the
// incumbent plus the warm-start block that seeds its constraint rows.
struct WarmBlock {
  int line = -1;
  bool ok = false;         // the failure-point evaluation converged
  bool violating = false;  // rate above the line's cap
  std::string message;
  LineRate rate;
  Eigen::VectorXd xstar;
  double mu = 0.0;
  Eigen::MatrixXd z;
};

// Evaluates candidate lines at a dispatch and returns their rates and
// warm-start blocks.  Pure per line over read-only inputs, so the result is
// identical for any thread count.
inline std::vector<WarmBlock> screen_violations(const Network& net, const EnergyModel& em,
                                                const Eigen::VectorXd& x_static,
                                                const DispatchPoint& y,
                                                const std::vector<int>& candidates,
                                                const std::vector<double>& lims,
                                                int threads = 0) {
  if (candidates.size() != lims.size())
    throw ValidationError("screen_violations: one cap per candidate line");
  std::vector<WarmBlock> out(candidates.size());
  if (candidates.empty()) return out;

  const FailureRateAnalyzer fra(em, y, x_static);
  const Eigen::LLT<Eigen::MatrixXd> llt(em.hess_static(x_static, y));
  const int d = net.index_map().d_static;

  const auto work = [&](std::size_t i) {
    WarmBlock& wb = out[i];
    wb.line = candidates[i];
    const Line& ln = net.lines[static_cast<std::size_t>(wb.line)];
    if (!ln.in_failure_set) {
      wb.message = "line " + std::to_string(ln.id) + " joins two generator buses";
      return;
    }
    wb.rate = fra.line_rate(wb.line);
    if (!wb.rate.ok) {
      wb.message = "line " + std::to_string(ln.id) +
                   " screening failed, kept unconstrained: " + wb.rate.message;
      return;
    }
    wb.ok = true;
    if (!(wb.rate.lambda > lims[i])) return;
    wb.violating = true;
    const LineFlow flow(net, wb.line);
    const LineState s = flow.from_local(wb.rate.x_local, y);
    const Eigen::VectorXd g = flow.grad_local(s);
    const auto& xc = flow.local_indices();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    for (int k = 0; k < flow.p(); ++k) rhs(xc[static_cast<std::size_t>(k)]) = g(k);
    wb.mu = wb.rate.mu;
    wb.xstar = x_static + wb.mu * llt.solve(rhs);
    const FlowFactor f = flow.factor(s);
    Eigen::MatrixXd qf = Eigen::MatrixXd::Zero(d, f.Q.cols());
    for (int k = 0; k < flow.p(); ++k) qf.row(xc[static_cast<std::size_t>(k)]) = f.Q.row(k);
    wb.z = llt.solve(qf);
  };

  int nt = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  nt = std::max(1, std::min<int>(nt, static_cast<int>(candidates.size())));
  if (nt == 1) {
    for (std::size_t i = 0; i < candidates.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&, t]() {
        for (std::size_t i = static_cast<std::size_t>(t); i < candidates.size();
             i += static_cast<std::size_t>(nt))
          work(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

namespace detail {

inline double wall_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Energy model whose demands match what the dispatch problem enforces:
// nominal demand minus any shed amounts at the given point.
inline EnergyModel screening_model(const Network& net, const ModelParams& prm,
                                   const AcopfProblem& prob, const NlpPoint& p) {
  EnergyModel em(net, prm);
  const int nb = net.n_bus();
  Eigen::VectorXd pd(nb), qd(nb);
  for (int bus = 0; bus < nb; ++bus) {
    pd(bus) = prob.p_eff(p, bus);
    qd(bus) = prob.q_eff(p, bus);
  }
  em.set_demands(pd, qd);
  return em;
}

// Shared tail of every solve: dispatch, shed amounts, achieved rates.
inline void finish_solution(DispatchSolution& sol, const Network& net,
                            const AcopfProblem& prob, const FpacopfOptions& opt,
                            const std::vector<int>& active) {
  sol.x_static = prob.static_state(sol.point);
  sol.y = prob.dispatch(sol.point);
  sol.cost = prob.objective(sol.point);
  sol.active_lines = active;

  const int nb = net.n_bus();
  sol.p_shed = Eigen::VectorXd::Zero(nb);
  sol.q_shed = Eigen::VectorXd::Zero(nb);
  double total_demand = 0.0, total_shed = 0.0;
  for (int bus = 0; bus < nb; ++bus) {
    total_demand += net.buses[static_cast<std::size_t>(bus)].p_d;
    sol.p_shed(bus) = net.buses[static_cast<std::size_t>(bus)].p_d - prob.p_eff(sol.point, bus);
    sol.q_shed(bus) = net.buses[static_cast<std::size_t>(bus)].q_d - prob.q_eff(sol.point, bus);
    total_shed += std::abs(sol.p_shed(bus));
  }
  sol.shed_fraction = total_demand > 0.0 ? total_shed / total_demand : 0.0;

  const EnergyModel em = screening_model(net, opt.params, prob, sol.point);
  const EnergyModel::BusState full = em.assemble(sol.x_static, sol.y);
  // a failed solve can leave a point whose energy Hessian is not positive
  // definite; the flow report still stands, the rates become warnings
  std::vector<LineRate> rates;
  bool have_rates = false;
  try {
    const FailureRateAnalyzer fra(em, sol.y, sol.x_static);
    for (int l = 0; l < net.n_line(); ++l)
      rates.push_back(net.lines[static_cast<std::size_t>(l)].in_failure_set
                          ? fra.line_rate(l)
                          : LineRate{});
    have_rates = true;
  } catch (const std::exception& ex) {
    sol.warnings.push_back(std::string("rate evaluation skipped at the final point: ") +
                           ex.what());
  }
  sol.max_rate = 0.0;
  sol.line_rates.clear();
  for (int l = 0; l < net.n_line(); ++l) {
    LineRateEntry e;
    e.line = l;
    const Line& ln = net.lines[static_cast<std::size_t>(l)];
    const LineFlow flow(net, l);
    e.flow = flow.value(flow.extract(full));
    e.utilization = ln.i_lim > 0.0 ? std::sqrt(std::max(0.0, e.flow)) / ln.i_lim : 0.0;
    e.in_set = ln.in_failure_set;
    e.active = std::find(active.begin(), active.end(), l) != active.end();
    e.rate_ok = false;
    e.lambda = 0.0;
    if (ln.in_failure_set && have_rates) {
      const LineRate& r = rates[static_cast<std::size_t>(l)];
      e.rate_ok = r.ok;
      e.lambda = r.ok ? r.lambda : 0.0;
      if (!r.ok)
        sol.warnings.push_back("line " + std::to_string(ln.id) +
                               " rate evaluation failed at the final point: " + r.message);
      sol.max_rate = std::max(sol.max_rate, e.lambda);
    }
    sol.line_rates.push_back(e);
  }
}

}  // namespace detail

// Cost-minimal dispatch under power flow, generation and voltage bounds and
// line flow limits; no failure-rate constraints.  The reported line rates
// are informational, evaluated analytically at the solution.
inline DispatchSolution solve_acopf(const Network& net, FpacopfOptions opt = {}) {
  DispatchSolution sol;
  sol.tau = opt.params.tau;
  AcopfProblem prob(net, opt.acopf);
  IpmOptions iopt = opt.ipm;
  iopt.max_iter = std::min(iopt.max_iter, opt.round_iter_cap);
  InteriorPoint ipm(prob, iopt);
  const auto t0 = std::chrono::steady_clock::now();
  IpmResult res;
  try {
    res = ipm.solve();
  } catch (const std::exception& e) {
    // hard solver failures (line search, inertia correction) fail the round
    res.ok = false;
    res.message = e.what();
    res.point = prob.initial_point();
    res.objective = prob.objective(res.point);
  }
  sol.nlp_seconds = detail::wall_seconds(t0);
  sol.ok = res.ok;
  sol.message = res.ok ? "converged" : "round 0: " + res.message;
  sol.point = res.point;
  sol.mult = res.mult;
  sol.cost_n0 = res.objective;
  RoundTrace rt;
  rt.round = 0;
  rt.nlp_iterations = res.iterations;
  rt.nlp_seconds = sol.nlp_seconds;
  rt.objective = res.objective;
  sol.trace.push_back(rt);
  detail::finish_solution(sol, net, prob, opt, {});
  return sol;
}

// Constraint-generation solve of the rate-bounded dispatch problem.
inline DispatchSolution solve_fpacopf(const Network& net, double lambda_lim,
                                      FpacopfOptions opt = {}) {
  if (!(lambda_lim > 0.0)) throw ValidationError("lambda_lim must be positive");
  DispatchSolution sol;
  sol.lambda_lim = lambda_lim;
  sol.tau = opt.params.tau;

  const auto lim_of = [&](int l) {
    const auto it = opt.lambda_lim_per_line.find(l);
    return it != opt.lambda_lim_per_line.end() ? it->second : lambda_lim;
  };

  RateConstrainedOpf prob(net, lambda_lim, opt.acopf, opt.params);
  IpmOptions iopt = opt.ipm;
  iopt.max_iter = std::min(iopt.max_iter, opt.round_iter_cap);

  std::vector<int> active;
  const auto solve_round = [&](int round, const NlpPoint* start,
                               const NlpMultipliers* warm) {
    InteriorPoint ipm(prob, iopt);
    const auto t0 = std::chrono::steady_clock::now();
    IpmResult res;
    try {
      res = start ? ipm.solve(*start, warm) : ipm.solve();
    } catch (const std::exception& e) {
      // hard solver failures (line search, inertia correction) fail the round
      res.ok = false;
      res.message = e.what();
      res.point = start ? *start : prob.initial_point();
      res.objective = prob.objective(res.point);
    }
    const double secs = detail::wall_seconds(t0);
    sol.nlp_seconds += secs;
    RoundTrace& rt = sol.trace.back();
    rt.nlp_iterations = res.iterations;
    rt.nlp_seconds = secs;
    rt.objective = res.objective;
    if (!res.ok) {
      sol.ok = false;
      sol.message = "round " + std::to_string(round) + ": " + res.message;
    }
    return res;
  };

  sol.trace.emplace_back();
  sol.trace.back().round = 0;
  IpmResult res = solve_round(0, nullptr, nullptr);
  sol.point = res.point;
  sol.mult = res.mult;
  sol.cost_n0 = res.objective;
  if (!res.ok) {
    detail::finish_solution(sol, net, prob, opt, active);
    return sol;
  }

  bool fixed_point = false;
  for (int round = 1; round <= opt.max_rounds; ++round) {
    // screen every unconstrained line of the failure set at the incumbent
    std::vector<int> candidates;
    std::vector<double> lims;
    for (int l = 0; l < net.n_line(); ++l) {
      if (!net.lines[static_cast<std::size_t>(l)].in_failure_set) continue;
      if (std::find(active.begin(), active.end(), l) != active.end()) continue;
      candidates.push_back(l);
      lims.push_back(lim_of(l));
    }
    sol.trace.emplace_back();
    RoundTrace& rt = sol.trace.back();
    rt.round = round;
    rt.active_before = static_cast<int>(active.size());
    rt.objective = res.objective;

    const EnergyModel em = detail::screening_model(net, opt.params, prob, res.point);
    const Eigen::VectorXd xb = prob.static_state(res.point);
    const DispatchPoint y = prob.dispatch(res.point);
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<WarmBlock> blocks =
        screen_violations(net, em, xb, y, candidates, lims, opt.screen_threads);
    rt.eval_seconds = detail::wall_seconds(t0);
    sol.eval_seconds += rt.eval_seconds;

    NlpPoint start = res.point;
    NlpMultipliers warm = res.mult;
    for (const WarmBlock& wb : blocks) {
      if (!wb.ok && !wb.message.empty()) sol.warnings.push_back(wb.message);
      if (!wb.violating) continue;
      prob.add_line(wb.line, wb.xstar, wb.mu, wb.z, lim_of(wb.line));
      active.push_back(wb.line);
      rt.new_lines.push_back(wb.line);
      Eigen::VectorXd w0(wb.xstar.size() + 1);
      w0 << wb.xstar, wb.mu;
      start.w.push_back(w0);
      start.z.push_back(wb.z);
    }
    rt.added = static_cast<int>(rt.new_lines.size());
    if (rt.added == 0) {
      fixed_point = true;
      break;
    }
    res = solve_round(round, &start, &warm);
    sol.point = res.point;
    sol.mult = res.mult;
    if (!res.ok) {
      detail::finish_solution(sol, net, prob, opt, active);
      return sol;
    }
  }

  if (!fixed_point) {
    sol.ok = false;
    std::string lines;
    for (int l : active) lines += (lines.empty() ? "" : " ") + std::to_string(l);
    sol.message = "no fixed point within " + std::to_string(opt.max_rounds) +
                  " rounds; active lines: [" + lines + "]";
    detail::finish_solution(sol, net, prob, opt, active);
    return sol;
  }

  sol.ok = true;
  sol.message = "converged";
  detail::finish_solution(sol, net, prob, opt, active);

  // the caps must hold for the independently recomputed rates
  for (const LineRateEntry& e : sol.line_rates) {
    if (!e.in_set || !e.rate_ok) continue;
    if (e.lambda > lim_of(e.line) * (1.0 + 1e-4)) {
      sol.ok = false;
      sol.message = "achieved rate of line " + std::to_string(e.line) +
                    " exceeds its cap after convergence";
    }
  }
  return sol;
}

// Rate-bounded dispatch with load shedding: the power-flow equalities gain
// per-bus slack injections, penalized quadratically in the objective, so a
// cap that no plain dispatch can meet trades load for feasibility.
inline DispatchSolution solve_fpacopf_with_shedding(const Network& net, double lambda_lim,
                                                    double tau = ModelParams().tau,
                                                    double phi = 1e6,
                                                    FpacopfOptions opt = {}) {
  opt.params.tau = tau;
  opt.acopf.load_shedding = true;
  opt.acopf.shed_penalty = phi;
  return solve_fpacopf(net, lambda_lim, opt);
}

// Screening against a finished solution, shed-aware; the spec-level entry
// point for fixed-point checks.
inline std::vector<WarmBlock> screen_violations(const Network& net,
                                                const DispatchSolution& sol,
                                                const std::vector<int>& candidates,
                                                FpacopfOptions opt = {}) {
  EnergyModel em(net, opt.params);
  const int nb = net.n_bus();
  Eigen::VectorXd pd(nb), qd(nb);
  for (int bus = 0; bus < nb; ++bus) {
    pd(bus) = net.buses[static_cast<std::size_t>(bus)].p_d -
              (sol.p_shed.size() == nb ? sol.p_shed(bus) : 0.0);
    qd(bus) = net.buses[static_cast<std::size_t>(bus)].q_d -
              (sol.q_shed.size() == nb ? sol.q_shed(bus) : 0.0);
  }
  em.set_demands(pd, qd);
  std::vector<double> lims;
  for (int l : candidates) {
    const auto it = opt.lambda_lim_per_line.find(l);
    lims.push_back(it != opt.lambda_lim_per_line.end() ? it->second : sol.lambda_lim);
  }
  return screen_violations(net, em, sol.x_static, sol.y, candidates, lims,
                           opt.screen_threads);
}

// Writes the solution report: per-bus state, generator dispatch, line flows
// and rates, and a key/value summary block.
inline void write_solution_csv(const DispatchSolution& sol, const Network& net,
                               std::ostream& os) {
  const StateIndexMap& map = net.index_map();
  char buf[64];
  const auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  os << "# bus\nbus,v,theta\n";
  for (int b = 0; b < net.n_bus(); ++b) {
    const int vi = map.v_index(b);
    const double v = vi >= 0 ? sol.x_static(vi) : sol.y.v_gen_bus(b);
    const int ti = map.th_index(b);
    const double th = ti >= 0 ? sol.x_static(ti) : sol.y.theta_slack;
    os << net.buses[static_cast<std::size_t>(b)].id << ',' << num(v) << ',' << num(th)
       << '\n';
  }
  os << "# generator\ngen,bus,p_g,q_g\n";
  for (int g = 0; g < net.n_gen(); ++g) {
    const Generator& gen = net.generators[static_cast<std::size_t>(g)];
    os << gen.id << ',' << gen.bus << ',' << num(sol.y.p_g(g)) << ',' << num(sol.y.q_g(g))
       << '\n';
  }
  os << "# line\nline,from,to,flow,utilization,lambda,active\n";
  for (const LineRateEntry& e : sol.line_rates) {
    const Line& ln = net.lines[static_cast<std::size_t>(e.line)];
    os << ln.id << ',' << ln.from_bus << ',' << ln.to_bus << ',' << num(e.flow) << ','
       << num(e.utilization) << ',' << num(e.lambda) << ',' << (e.active ? 1 : 0) << '\n';
  }
  os << "# summary\nkey,value\n";
  os << "status," << (sol.ok ? "converged" : "failed") << '\n';
  os << "cost," << num(sol.cost) << '\n';
  os << "cost_n0," << num(sol.cost_n0) << '\n';
  os << "cost_diff_pct,"
     << num(sol.cost_n0 != 0.0 ? 100.0 * (sol.cost - sol.cost_n0) / sol.cost_n0 : 0.0)
     << '\n';
  os << "max_rate," << num(sol.max_rate) << '\n';
  os << "lambda_lim," << num(sol.lambda_lim) << '\n';
  os << "rounds," << (sol.trace.empty() ? 0 : sol.trace.back().round) << '\n';
  os << "active_lines," << sol.active_lines.size() << '\n';
  os << "nlp_seconds," << num(sol.nlp_seconds) << '\n';
  os << "eval_seconds," << num(sol.eval_seconds) << '\n';
  os << "shed_pct," << num(100.0 * sol.shed_fraction) << '\n';
}

inline void write_solution_csv(const DispatchSolution& sol, const Network& net,
                               const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open solution file: " + path);
  write_solution_csv(sol, net, os);
}

}  // namespace fpopf
