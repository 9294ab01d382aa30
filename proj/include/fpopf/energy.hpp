// Energy function of the stochastic structure-preserving model and the
// static solvers built on it.
//
//   H(x, y) = 1/2 w' M w  -  1/2 sum_ij B_ij V_i V_j cos(th_i - th_j)
//             + sum_i p_net_i th_i  +  sum_i q_net_i log V_i
//
// with p_net = p_d - sum(p_g at bus), q_net likewise.  Setting the gradient
// of H over the state partition x to zero reproduces the lossless power-flow
// balance: active balance at every non-slack bus, reactive balance at every
// non-generator bus.  The stable equilibrium is the power-flow solution at
// which the (V, theta)-block Hessian is positive definite.
//
// The omega block is carried in the index map for the dynamic simulator but
// is identically zero in every static computation, so the static API works
// on the leading d_static entries only.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/network.hpp"

namespace fpopf {

// Controllable side y of the state partition: generator-bus voltage
// setpoints (one per generator bus, in Network::gen_bus_list order),
// generator injections, and the slack references.
struct DispatchPoint {
  Eigen::VectorXd v_gen_bus;
  Eigen::VectorXd p_g;
  Eigen::VectorXd q_g;
  double theta_slack = 0.0;
  double omega_slack = 0.0;
};

// Builds a dispatch from the operating point embedded in a case file.
// Generator reactive output is left at zero; it is implied by the network
// state, which no static quantity in this project depends on.
inline DispatchPoint dispatch_from_embedded(const Network& net) {
  if (!net.embedded_dispatch.present)
    throw ValidationError("case file carries no embedded dispatch");
  DispatchPoint y;
  y.p_g = Eigen::Map<const Eigen::VectorXd>(net.embedded_dispatch.gen_p.data(),
                                            static_cast<long>(net.embedded_dispatch.gen_p.size()));
  y.q_g = Eigen::VectorXd::Zero(net.n_gen());
  y.v_gen_bus = Eigen::VectorXd::Ones(static_cast<long>(net.gen_bus_list().size()));
  for (std::size_t pos = 0; pos < net.gen_bus_list().size(); ++pos) {
    const int bus = net.gen_bus_list()[pos];
    const auto& gens = net.gens_at_bus(bus);
    y.v_gen_bus(static_cast<long>(pos)) =
        net.embedded_dispatch.gen_v[static_cast<std::size_t>(gens.front())];
  }
  return y;
}

struct ModelParams {
  double tau = 1e-4;     // noise temperature
  double d_load = 0.005; // frequency damping of loads (angle components)
  double d_volt = 0.01;  // voltage damping of loads
  double d_gen = 0.05;   // generator damping (omega components)
};

struct PowerFlowResult {
  Eigen::VectorXd x;   // static state (V loads | theta non-slack)
  bool converged = false;
  int iterations = 0;
  double mismatch = 0.0;  // max raw balance residual
};

class EnergyModel {
 public:
  explicit EnergyModel(const Network& net, ModelParams params = {})
      : net_(&net), prm_(params) {
    const auto nb = static_cast<std::size_t>(net.n_bus());
    p_d_.resize(nb);
    q_d_.resize(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      p_d_[i] = net.buses[i].p_d;
      q_d_[i] = net.buses[i].q_d;
    }
  }

  const Network& network() const { return *net_; }
  const ModelParams& params() const { return prm_; }
  double tau() const { return prm_.tau; }

  // Demand override used by load-shedding evaluations.
  void set_demands(const Eigen::VectorXd& p_d, const Eigen::VectorXd& q_d) {
    for (int i = 0; i < net_->n_bus(); ++i) {
      p_d_[static_cast<std::size_t>(i)] = p_d(i);
      q_d_[static_cast<std::size_t>(i)] = q_d(i);
    }
  }
  double p_demand(int bus_idx) const { return p_d_[static_cast<std::size_t>(bus_idx)]; }
  double q_demand(int bus_idx) const { return q_d_[static_cast<std::size_t>(bus_idx)]; }

  double p_net(int bus_idx, const DispatchPoint& y) const {
    double v = p_d_[static_cast<std::size_t>(bus_idx)];
    for (int g : net_->gens_at_bus(bus_idx)) v -= y.p_g(g);
    return v;
  }
  double q_net(int bus_idx, const DispatchPoint& y) const {
    double v = q_d_[static_cast<std::size_t>(bus_idx)];
    for (int g : net_->gens_at_bus(bus_idx)) v -= y.q_g(g);
    return v;
  }

  // ---- state assembly -----------------------------------------------------

  struct BusState {
    Eigen::VectorXd V;      // per bus
    Eigen::VectorXd theta;  // per bus
  };

  BusState assemble(const Eigen::VectorXd& x_static, const DispatchPoint& y) const {
    const auto& map = net_->index_map();
    BusState st;
    st.V.resize(net_->n_bus());
    st.theta.resize(net_->n_bus());
    for (int b = 0; b < net_->n_bus(); ++b) {
      const int vi = map.v_index(b);
      if (vi >= 0) {
        st.V(b) = x_static(vi);
      } else {
        st.V(b) = y.v_gen_bus(net_->gen_bus_position(b));
      }
      const int ti = map.th_index(b);
      st.theta(b) = ti >= 0 ? x_static(ti) : y.theta_slack;
    }
    return st;
  }

  Eigen::VectorXd pack_static(const BusState& st) const {
    const auto& map = net_->index_map();
    Eigen::VectorXd x(map.d_static);
    for (int k = 0; k < map.n_v; ++k) x(k) = st.V(map.v_bus[static_cast<std::size_t>(k)]);
    for (int k = 0; k < map.n_th; ++k)
      x(map.n_v + k) = st.theta(map.th_bus[static_cast<std::size_t>(k)]);
    return x;
  }

  Eigen::VectorXd flat_start(const DispatchPoint& y) const {
    BusState st;
    st.V = Eigen::VectorXd::Ones(net_->n_bus());
    st.theta = Eigen::VectorXd::Constant(net_->n_bus(), y.theta_slack);
    for (std::size_t pos = 0; pos < net_->gen_bus_list().size(); ++pos)
      st.V(net_->gen_bus_list()[pos]) = y.v_gen_bus(static_cast<long>(pos));
    return pack_static(st);
  }

  // ---- energy and derivatives ---------------------------------------------

  // Potential part evaluated at a full bus-level state.
  double energy_bus_state(const BusState& st, const DispatchPoint& y) const {
    const Eigen::MatrixXd& B = net_->susceptance();
    double u = 0.0;
    for (const Line& l : net_->lines) {
      const int i = net_->bus_index(l.from_bus);
      const int j = net_->bus_index(l.to_bus);
      u -= l.susceptance_mag * st.V(i) * st.V(j) * std::cos(st.theta(i) - st.theta(j));
    }
    for (int i = 0; i < net_->n_bus(); ++i) {
      u -= 0.5 * B(i, i) * st.V(i) * st.V(i);
      u += p_net(i, y) * st.theta(i);
      u += q_net(i, y) * std::log(st.V(i));
    }
    return u;
  }

  double energy(const Eigen::VectorXd& x_static, const DispatchPoint& y) const {
    return energy_bus_state(assemble(x_static, y), y);
  }

  // Kinetic part for a full state (omega tail of x_full).
  double kinetic(const Eigen::VectorXd& x_full) const {
    const auto& map = net_->index_map();
    double t = 0.0;
    for (int k = 0; k < map.n_om; ++k) {
      const double w = x_full(map.d_static + k);
      t += 0.5 * net_->generators[static_cast<std::size_t>(map.om_gen[static_cast<std::size_t>(k)])].mass * w * w;
    }
    return t;
  }

  double energy_full(const Eigen::VectorXd& x_full, const DispatchPoint& y) const {
    return energy(x_full.head(net_->index_map().d_static), y) + kinetic(x_full);
  }

  // Gradient over the static block.  Entries are exactly the power-balance
  // residuals: d/d theta_i = active balance at i, d/d V_i = (reactive
  // balance at i) / V_i.
  Eigen::VectorXd grad_static(const Eigen::VectorXd& x_static, const DispatchPoint& y) const {
    const auto& map = net_->index_map();
    const BusState st = assemble(x_static, y);
    const Eigen::MatrixXd& B = net_->susceptance();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(map.d_static);
    for (int k = 0; k < map.n_v; ++k) {
      const int i = map.v_bus[static_cast<std::size_t>(k)];
      double acc = -B(i, i) * st.V(i) + q_net(i, y) / st.V(i);
      for (int j : net_->neighbors(i))
        acc -= B(i, j) * st.V(j) * std::cos(st.theta(i) - st.theta(j));
      g(k) = acc;
    }
    for (int k = 0; k < map.n_th; ++k) {
      const int i = map.th_bus[static_cast<std::size_t>(k)];
      double acc = p_net(i, y);
      for (int j : net_->neighbors(i))
        acc += B(i, j) * st.V(i) * st.V(j) * std::sin(st.theta(i) - st.theta(j));
      g(map.n_v + k) = acc;
    }
    return g;
  }

  // Hessian over the static block, assembled line by line so that every
  // off-diagonal pair is written from one computed value and the result is
  // symmetric to the last bit.
  Eigen::MatrixXd hess_static(const Eigen::VectorXd& x_static, const DispatchPoint& y) const {
    const auto& map = net_->index_map();
    const BusState st = assemble(x_static, y);
    const Eigen::MatrixXd& B = net_->susceptance();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(map.d_static, map.d_static);
    const auto add_sym = [&h](int a, int b, double v) {
      h(a, b) += v;
      if (a != b) h(b, a) += v;
    };
    for (int k = 0; k < map.n_v; ++k) {
      const int i = map.v_bus[static_cast<std::size_t>(k)];
      h(k, k) = -B(i, i) - q_net(i, y) / (st.V(i) * st.V(i));
    }
    for (const Line& l : net_->lines) {
      const int i = net_->bus_index(l.from_bus);
      const int j = net_->bus_index(l.to_bus);
      const double b = l.susceptance_mag;
      const double c = std::cos(st.theta(i) - st.theta(j));
      const double s = std::sin(st.theta(i) - st.theta(j));
      const int vi = map.v_index(i), vj = map.v_index(j);
      const int ti = map.th_index(i), tj = map.th_index(j);
      if (vi >= 0 && vj >= 0) add_sym(vi, vj, -b * c);
      if (vi >= 0 && ti >= 0) add_sym(vi, ti, b * st.V(j) * s);
      if (vi >= 0 && tj >= 0) add_sym(vi, tj, -b * st.V(j) * s);
      if (vj >= 0 && tj >= 0) add_sym(vj, tj, -b * st.V(i) * s);
      if (vj >= 0 && ti >= 0) add_sym(vj, ti, b * st.V(i) * s);
      const double cc = b * st.V(i) * st.V(j) * c;
      if (ti >= 0) h(ti, ti) += cc;
      if (tj >= 0) h(tj, tj) += cc;
      if (ti >= 0 && tj >= 0) add_sym(ti, tj, -cc);
    }
    return h;
  }

  // Diagonal of the noise-shaping matrix S over the static block (angles
  // damped by the load frequency coefficient, load voltages by the voltage
  // coefficient) and over the full state (omega entries D_g / M^2).
  Eigen::VectorXd s_diag_static() const {
    const auto& map = net_->index_map();
    Eigen::VectorXd s(map.d_static);
    s.head(map.n_v).setConstant(1.0 / prm_.d_volt);
    s.tail(map.n_th).setConstant(1.0 / prm_.d_load);
    return s;
  }

  Eigen::VectorXd s_diag_full() const {
    const auto& map = net_->index_map();
    Eigen::VectorXd s(map.d);
    s.head(map.d_static) = s_diag_static();
    for (int k = 0; k < map.n_om; ++k) {
      const double m =
          net_->generators[static_cast<std::size_t>(map.om_gen[static_cast<std::size_t>(k)])].mass;
      s(map.d_static + k) = prm_.d_gen / (m * m);
    }
    return s;
  }

  // Antisymmetric coupling of the full-state drift (J - S) grad H: each
  // non-slack generator's angle/omega pair couples through 1/M.  Only the
  // dynamic simulator uses this; it requires at most one generator per
  // non-slack bus so that the bus angle has a single rotor equation.
  Eigen::MatrixXd j_matrix_full() const {
    const auto& map = net_->index_map();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(map.d, map.d);
    std::vector<int> gens_seen(static_cast<std::size_t>(net_->n_bus()), 0);
    for (int k = 0; k < map.n_om; ++k) {
      const Generator& g =
          net_->generators[static_cast<std::size_t>(map.om_gen[static_cast<std::size_t>(k)])];
      const int bus = net_->bus_index(g.bus);
      if (++gens_seen[static_cast<std::size_t>(bus)] > 1)
        throw NumericError("dynamic model requires at most one generator per non-slack bus");
      const int ti = map.th_index(bus);
      const int oi = map.d_static + k;
      J(ti, oi) = 1.0 / g.mass;
      J(oi, ti) = -1.0 / g.mass;
    }
    return J;
  }

  // Raw power-balance mismatches (active at non-slack buses, reactive at
  // non-generator buses), the quantities driven below tolerance by the
  // power-flow solver; the slack generator absorbs the remaining residual.
  double max_mismatch(const Eigen::VectorXd& x_static, const DispatchPoint& y) const {
    const auto& map = net_->index_map();
    const Eigen::VectorXd g = grad_static(x_static, y);
    double worst = 0.0;
    for (int k = 0; k < map.n_v; ++k)
      worst = std::max(worst, std::abs(g(k) * x_static(k)));  // reactive residual
    for (int k = 0; k < map.n_th; ++k)
      worst = std::max(worst, std::abs(g(map.n_v + k)));  // active residual
    return worst;
  }

  // Newton power flow with a backtracking line search on the residual norm.
  PowerFlowResult solve_power_flow(const DispatchPoint& y,
                                   const Eigen::VectorXd* warm_start = nullptr,
                                   double tol = 1e-9, int max_iter = 50) const {
    const auto& map = net_->index_map();
    PowerFlowResult res;
    Eigen::VectorXd x = warm_start ? *warm_start : flat_start(y);
    for (int it = 0; it < max_iter; ++it) {
      res.iterations = it;
      const Eigen::VectorXd g = grad_static(x, y);
      res.mismatch = max_mismatch(x, y);
      if (res.mismatch < tol) {
        res.x = x;
        res.converged = true;
        return res;
      }
      const Eigen::MatrixXd h = hess_static(x, y);
      Eigen::VectorXd step = Eigen::PartialPivLU<Eigen::MatrixXd>(h).solve(-g);
      if (!step.allFinite()) {
        break;
      }
      // Keep load voltages safely positive.
      double alpha = 1.0;
      for (int k = 0; k < map.n_v; ++k) {
        if (step(k) < 0.0) {
          const double limit = -0.8 * x(k) / step(k);
          alpha = std::min(alpha, limit);
        }
      }
      const double g0 = g.squaredNorm();
      bool accepted = false;
      for (int ls = 0; ls < 24; ++ls) {
        const Eigen::VectorXd trial = x + alpha * step;
        const double g1 = grad_static(trial, y).squaredNorm();
        if (g1 <= (1.0 - 1e-4 * alpha) * g0) {
          x = trial;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;
    }
    res.x = x;
    res.mismatch = max_mismatch(x, y);
    res.converged = res.mismatch < tol;
    return res;
  }

  // Power flow plus the stability certificate: the static Hessian at the
  // solution must admit a Cholesky factorization.
  Eigen::VectorXd find_equilibrium(const DispatchPoint& y,
                                   const Eigen::VectorXd* warm_start = nullptr) const {
    const PowerFlowResult pf = solve_power_flow(y, warm_start);
    if (!pf.converged)
      throw ConvergenceError("power flow did not converge (mismatch " +
                             num_str(pf.mismatch) + " after " +
                             num_str(pf.iterations) + " iterations)");
    const Eigen::MatrixXd h = hess_static(pf.x, y);
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success)
      throw NumericError("unstable equilibrium: energy Hessian is not positive definite");
    return pf.x;
  }

  // Active/reactive output implied for the slack generator and the reactive
  // output implied at generator buses by a solved state (per-bus values).
  struct ImpliedGeneration {
    double slack_p = 0.0;
    Eigen::VectorXd q_at_gen_bus;  // per gen-bus position
  };

  ImpliedGeneration implied_generation(const Eigen::VectorXd& x_static,
                                       const DispatchPoint& y) const {
    const BusState st = assemble(x_static, y);
    const Eigen::MatrixXd& B = net_->susceptance();
    ImpliedGeneration out;
    out.q_at_gen_bus.resize(static_cast<long>(net_->gen_bus_list().size()));
    for (std::size_t pos = 0; pos < net_->gen_bus_list().size(); ++pos) {
      const int i = net_->gen_bus_list()[pos];
      double q_inj = -B(i, i) * st.V(i) * st.V(i);
      for (int j : net_->neighbors(i))
        q_inj -= B(i, j) * st.V(i) * st.V(j) * std::cos(st.theta(i) - st.theta(j));
      out.q_at_gen_bus(static_cast<long>(pos)) = q_inj + q_d_[static_cast<std::size_t>(i)];
    }
    const int s = net_->slack_index();
    double p_inj = 0.0;
    for (int j : net_->neighbors(s))
      p_inj += B(s, j) * st.V(s) * st.V(j) * std::sin(st.theta(s) - st.theta(j));
    out.slack_p = p_inj + p_d_[static_cast<std::size_t>(s)];
    return out;
  }

 private:
  const Network* net_;
  ModelParams prm_;
  std::vector<double> p_d_, q_d_;
};

}  // namespace fpopf
