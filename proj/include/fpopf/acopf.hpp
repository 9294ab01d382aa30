// Lossless AC optimal power flow over the block-NLP interface.
//
// Variables (base block):
//   [ x_static | V at generator buses | p_g | q_g | p_shed | q_shed ]
// where x_static = (V at load buses, theta at non-slack buses) in index-map
// order.  Equalities are the active and reactive power balances at every
// bus; inequalities are the squared-current line-flow limits.  The shed
// blocks exist only in load-shedding mode and enter the balances as
// demand reductions with a large quadratic penalty in the objective.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/dual.hpp"
#include "fpopf/energy.hpp"
#include "fpopf/network.hpp"
#include "fpopf/nlp.hpp"

namespace fpopf {

struct AcopfOptions {
  bool load_shedding = false;
  double shed_penalty = 1e6;  // quadratic weight on shed variables
};

class AcopfProblem : public BlockNlp {
 public:
  explicit AcopfProblem(const Network& net, AcopfOptions opt = {})
      : net_(&net), opt_(opt) {
    const StateIndexMap& map = net.index_map();
    ds_ = map.d_static;
    ngb_ = static_cast<int>(net.gen_bus_list().size());
    ng_ = net.n_gen();
    off_vgen_ = ds_;
    off_pg_ = off_vgen_ + ngb_;
    off_qg_ = off_pg_ + ng_;
    off_ps_ = off_qg_ + ng_;
    ps_pos_.assign(static_cast<std::size_t>(net.n_bus()), -1);
    qs_pos_.assign(static_cast<std::size_t>(net.n_bus()), -1);
    if (opt_.load_shedding) {
      for (int b = 0; b < net.n_bus(); ++b)
        if (net.buses[static_cast<std::size_t>(b)].p_d != 0.0) {
          ps_pos_[static_cast<std::size_t>(b)] = static_cast<int>(ps_bus_.size());
          ps_bus_.push_back(b);
        }
      for (int b = 0; b < net.n_bus(); ++b)
        if (net.buses[static_cast<std::size_t>(b)].q_d != 0.0) {
          qs_pos_[static_cast<std::size_t>(b)] = static_cast<int>(qs_bus_.size());
          qs_bus_.push_back(b);
        }
    }
    off_qs_ = off_ps_ + static_cast<int>(ps_bus_.size());
    n_total_ = off_qs_ + static_cast<int>(qs_bus_.size());
  }

  const Network& network() const { return *net_; }
  const AcopfOptions& options() const { return opt_; }

  // ---- variable layout ------------------------------------------------------
  int d_static() const { return ds_; }
  // V variable of any bus (load buses live in x_static, generator buses in
  // the setpoint block)
  int v_var(int bus_idx) const {
    const StateIndexMap& map = net_->index_map();
    const int k = map.v_index(bus_idx);
    if (k >= 0) return k;
    return off_vgen_ + net_->gen_bus_position(bus_idx);
  }
  // theta variable of a bus, -1 for the slack (fixed reference)
  int th_var(int bus_idx) const { return net_->index_map().th_index(bus_idx); }
  int pg_var(int g) const { return off_pg_ + g; }
  int qg_var(int g) const { return off_qg_ + g; }
  int ps_var(int bus_idx) const {
    const int k = ps_pos_[static_cast<std::size_t>(bus_idx)];
    return k < 0 ? -1 : off_ps_ + k;
  }
  int qs_var(int bus_idx) const {
    const int k = qs_pos_[static_cast<std::size_t>(bus_idx)];
    return k < 0 ? -1 : off_qs_ + k;
  }

  // ---- solution unpacking ---------------------------------------------------
  Eigen::VectorXd static_state(const NlpPoint& p) const { return p.base.head(ds_); }

  DispatchPoint dispatch(const NlpPoint& p) const {
    DispatchPoint y;
    y.v_gen_bus = p.base.segment(off_vgen_, ngb_);
    y.p_g = p.base.segment(off_pg_, ng_);
    y.q_g = p.base.segment(off_qg_, ng_);
    return y;
  }

  EnergyModel::BusState bus_state(const NlpPoint& p) const {
    EnergyModel::BusState st;
    const int nb = net_->n_bus();
    st.V.resize(nb);
    st.theta.resize(nb);
    for (int b = 0; b < nb; ++b) {
      st.V(b) = p.base(v_var(b));
      const int t = th_var(b);
      st.theta(b) = t < 0 ? 0.0 : p.base(t);
    }
    return st;
  }

  // demands net of shedding
  double p_eff(const NlpPoint& p, int bus_idx) const {
    double v = net_->buses[static_cast<std::size_t>(bus_idx)].p_d;
    const int k = ps_var(bus_idx);
    if (k >= 0) v -= p.base(k);
    return v;
  }
  double q_eff(const NlpPoint& p, int bus_idx) const {
    double v = net_->buses[static_cast<std::size_t>(bus_idx)].q_d;
    const int k = qs_var(bus_idx);
    if (k >= 0) v -= p.base(k);
    return v;
  }

  double generation_cost(const NlpPoint& p) const {
    double f = 0.0;
    for (int g = 0; g < ng_; ++g) {
      const Generator& gen = net_->generators[static_cast<std::size_t>(g)];
      const double pg = p.base(pg_var(g));
      f += gen.cost_c2 * pg * pg + gen.cost_c1 * pg + gen.cost_c0;
    }
    return f;
  }

  // shed active power as a fraction of total active demand
  double shed_fraction(const NlpPoint& p) const {
    double total = 0.0, shed = 0.0;
    for (const Bus& b : net_->buses) total += std::abs(b.p_d);
    for (std::size_t k = 0; k < ps_bus_.size(); ++k)
      shed += std::abs(p.base(off_ps_ + static_cast<long>(k)));
    return total > 0.0 ? shed / total : 0.0;
  }

  // ---- BlockNlp interface ---------------------------------------------------
  int n_base() const override { return n_total_; }
  int m_eq_base() const override { return 2 * net_->n_bus(); }
  int m_ineq_base() const override { return net_->n_line(); }

  Eigen::VectorXd base_lower() const override {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(n_total_, -kInf);
    for (int b = 0; b < net_->n_bus(); ++b)
      lo(v_var(b)) = net_->buses[static_cast<std::size_t>(b)].v_min;
    for (int g = 0; g < ng_; ++g) {
      lo(pg_var(g)) = net_->generators[static_cast<std::size_t>(g)].p_min;
      lo(qg_var(g)) = net_->generators[static_cast<std::size_t>(g)].q_min;
    }
    for (std::size_t k = 0; k < ps_bus_.size(); ++k) {
      const double pd = net_->buses[static_cast<std::size_t>(ps_bus_[k])].p_d;
      lo(off_ps_ + static_cast<long>(k)) = std::min(0.0, pd);
    }
    for (std::size_t k = 0; k < qs_bus_.size(); ++k) {
      const double qd = net_->buses[static_cast<std::size_t>(qs_bus_[k])].q_d;
      lo(off_qs_ + static_cast<long>(k)) = std::min(0.0, qd);
    }
    return lo;
  }

  Eigen::VectorXd base_upper() const override {
    Eigen::VectorXd up = Eigen::VectorXd::Constant(n_total_, kInf);
    for (int b = 0; b < net_->n_bus(); ++b)
      up(v_var(b)) = net_->buses[static_cast<std::size_t>(b)].v_max;
    for (int g = 0; g < ng_; ++g) {
      up(pg_var(g)) = net_->generators[static_cast<std::size_t>(g)].p_max;
      up(qg_var(g)) = net_->generators[static_cast<std::size_t>(g)].q_max;
    }
    for (std::size_t k = 0; k < ps_bus_.size(); ++k) {
      const double pd = net_->buses[static_cast<std::size_t>(ps_bus_[k])].p_d;
      up(off_ps_ + static_cast<long>(k)) = std::max(0.0, pd);
    }
    for (std::size_t k = 0; k < qs_bus_.size(); ++k) {
      const double qd = net_->buses[static_cast<std::size_t>(qs_bus_[k])].q_d;
      up(off_qs_ + static_cast<long>(k)) = std::max(0.0, qd);
    }
    return up;
  }

  NlpPoint initial_point() const override {
    NlpPoint p;
    p.base = Eigen::VectorXd::Zero(n_total_);
    const Eigen::VectorXd lo = base_lower(), up = base_upper();
    for (int b = 0; b < net_->n_bus(); ++b)
      p.base(v_var(b)) = std::clamp(1.0, lo(v_var(b)), up(v_var(b)));
    double total_pd = 0.0, total_pmax = 0.0;
    for (const Bus& b : net_->buses) total_pd += b.p_d;
    for (const Generator& g : net_->generators) total_pmax += g.p_max;
    const bool embedded = net_->embedded_dispatch.present;
    for (int g = 0; g < ng_; ++g) {
      const Generator& gen = net_->generators[static_cast<std::size_t>(g)];
      double pg = total_pmax > 0.0 ? total_pd * gen.p_max / total_pmax : 0.0;
      if (embedded) pg = net_->embedded_dispatch.gen_p[static_cast<std::size_t>(g)];
      p.base(pg_var(g)) = std::clamp(pg, gen.p_min, gen.p_max);
      p.base(qg_var(g)) = std::clamp(0.0, gen.q_min, gen.q_max);
      if (embedded) {
        const double vg = net_->embedded_dispatch.gen_v[static_cast<std::size_t>(g)];
        const int vv = v_var(net_->bus_index(gen.bus));
        p.base(vv) = std::clamp(vg, lo(vv), up(vv));
      }
    }
    return p;
  }

  double objective(const NlpPoint& p) const override {
    double f = generation_cost(p);
    for (std::size_t k = 0; k < ps_bus_.size(); ++k) {
      const double v = p.base(off_ps_ + static_cast<long>(k));
      f += opt_.shed_penalty * v * v;
    }
    for (std::size_t k = 0; k < qs_bus_.size(); ++k) {
      const double v = p.base(off_qs_ + static_cast<long>(k));
      f += opt_.shed_penalty * v * v;
    }
    return f;
  }

  Eigen::VectorXd objective_gradient(const NlpPoint& p) const override {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_total_);
    for (int k = 0; k < ng_; ++k) {
      const Generator& gen = net_->generators[static_cast<std::size_t>(k)];
      g(pg_var(k)) = 2.0 * gen.cost_c2 * p.base(pg_var(k)) + gen.cost_c1;
    }
    for (std::size_t k = 0; k < ps_bus_.size(); ++k)
      g(off_ps_ + static_cast<long>(k)) =
          2.0 * opt_.shed_penalty * p.base(off_ps_ + static_cast<long>(k));
    for (std::size_t k = 0; k < qs_bus_.size(); ++k)
      g(off_qs_ + static_cast<long>(k)) =
          2.0 * opt_.shed_penalty * p.base(off_qs_ + static_cast<long>(k));
    return g;
  }

  // rows 0..n_bus-1: active balance; rows n_bus..2n_bus-1: reactive balance
  Eigen::VectorXd eq_base(const NlpPoint& p) const override {
    const int nb = net_->n_bus();
    const EnergyModel::BusState st = bus_state(p);
    const Eigen::MatrixXd& B = net_->susceptance();
    Eigen::VectorXd r(2 * nb);
    for (int i = 0; i < nb; ++i) {
      double rp = p_eff(p, i);
      double rq = q_eff(p, i) - B(i, i) * st.V(i) * st.V(i);
      for (int g : net_->gens_at_bus(i)) {
        rp -= p.base(pg_var(g));
        rq -= p.base(qg_var(g));
      }
      r(i) = rp;
      r(nb + i) = rq;
    }
    for (const Line& l : net_->lines) {
      const int i = net_->bus_index(l.from_bus);
      const int j = net_->bus_index(l.to_bus);
      const double th = st.theta(i) - st.theta(j);
      const double ps = l.susceptance_mag * st.V(i) * st.V(j) * std::sin(th);
      const double qc = -l.susceptance_mag * st.V(i) * st.V(j) * std::cos(th);
      r(i) += ps;
      r(j) -= ps;
      r(nb + i) += qc;
      r(nb + j) += qc;
    }
    return r;
  }

  Eigen::VectorXd ineq_base(const NlpPoint& p) const override {
    const EnergyModel::BusState st = bus_state(p);
    Eigen::VectorXd c(net_->n_line());
    for (int l = 0; l < net_->n_line(); ++l) {
      const Line& ln = net_->lines[static_cast<std::size_t>(l)];
      const int i = net_->bus_index(ln.from_bus);
      const int j = net_->bus_index(ln.to_bus);
      const double g = ln.susceptance_mag * ln.susceptance_mag;
      c(l) = g * (st.V(i) * st.V(i) + st.V(j) * st.V(j) -
                  2.0 * st.V(i) * st.V(j) * std::cos(st.theta(i) - st.theta(j))) -
             ln.i_lim * ln.i_lim;
    }
    return c;
  }

  Eigen::MatrixXd jac_eq_base(const NlpPoint& p) const override {
    const int nb = net_->n_bus();
    const EnergyModel::BusState st = bus_state(p);
    const Eigen::MatrixXd& B = net_->susceptance();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * nb, n_total_);
    for (int i = 0; i < nb; ++i) {
      J(nb + i, v_var(i)) -= 2.0 * B(i, i) * st.V(i);
      for (int g : net_->gens_at_bus(i)) {
        J(i, pg_var(g)) = -1.0;
        J(nb + i, qg_var(g)) = -1.0;
      }
      if (ps_var(i) >= 0) J(i, ps_var(i)) = -1.0;
      if (qs_var(i) >= 0) J(nb + i, qs_var(i)) = -1.0;
    }
    for (const Line& l : net_->lines) {
      const int i = net_->bus_index(l.from_bus);
      const int j = net_->bus_index(l.to_bus);
      const auto [vals, cols] = line_locals(st, i, j);
      DualSpace<8> sp(4);
      std::array<Dual8, 4> u;
      for (int k = 0; k < 4; ++k)
        u[static_cast<std::size_t>(k)] =
            cols[static_cast<std::size_t>(k)] >= 0 ? sp.var(k, vals[static_cast<std::size_t>(k)])
                                                   : sp.c(vals[static_cast<std::size_t>(k)]);
      const Dual8 ps = l.susceptance_mag * u[0] * u[1] * sin(u[2] - u[3]);
      const Dual8 qc = -l.susceptance_mag * u[0] * u[1] * cos(u[2] - u[3]);
      for (int k = 0; k < 4; ++k) {
        const int col = cols[static_cast<std::size_t>(k)];
        if (col < 0) continue;
        J(i, col) += ps.grad()(k);
        J(j, col) -= ps.grad()(k);
        J(nb + i, col) += qc.grad()(k);
        J(nb + j, col) += qc.grad()(k);
      }
    }
    return J;
  }

  Eigen::MatrixXd jac_ineq_base(const NlpPoint& p) const override {
    const EnergyModel::BusState st = bus_state(p);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(net_->n_line(), n_total_);
    for (int l = 0; l < net_->n_line(); ++l) {
      const Line& ln = net_->lines[static_cast<std::size_t>(l)];
      const int i = net_->bus_index(ln.from_bus);
      const int j = net_->bus_index(ln.to_bus);
      const auto [vals, cols] = line_locals(st, i, j);
      DualSpace<8> sp(4);
      std::array<Dual8, 4> u;
      for (int k = 0; k < 4; ++k)
        u[static_cast<std::size_t>(k)] =
            cols[static_cast<std::size_t>(k)] >= 0 ? sp.var(k, vals[static_cast<std::size_t>(k)])
                                                   : sp.c(vals[static_cast<std::size_t>(k)]);
      const double g = ln.susceptance_mag * ln.susceptance_mag;
      const Dual8 flow =
          g * (square(u[0]) + square(u[1]) - 2.0 * u[0] * u[1] * cos(u[2] - u[3]));
      for (int k = 0; k < 4; ++k)
        if (cols[static_cast<std::size_t>(k)] >= 0)
          J(l, cols[static_cast<std::size_t>(k)]) = flow.grad()(k);
    }
    return J;
  }

  LagrangianHessian lagrangian_hessian(const NlpPoint& p, const NlpMultipliers& m,
                                       double sigma_f) const override {
    const int nb = net_->n_bus();
    const EnergyModel::BusState st = bus_state(p);
    const Eigen::MatrixXd& B = net_->susceptance();
    LagrangianHessian lh;
    lh.bb = Eigen::MatrixXd::Zero(n_total_, n_total_);
    for (int g = 0; g < ng_; ++g)
      lh.bb(pg_var(g), pg_var(g)) =
          sigma_f * 2.0 * net_->generators[static_cast<std::size_t>(g)].cost_c2;
    for (std::size_t k = 0; k < ps_bus_.size(); ++k) {
      const long v = off_ps_ + static_cast<long>(k);
      lh.bb(v, v) = sigma_f * 2.0 * opt_.shed_penalty;
    }
    for (std::size_t k = 0; k < qs_bus_.size(); ++k) {
      const long v = off_qs_ + static_cast<long>(k);
      lh.bb(v, v) = sigma_f * 2.0 * opt_.shed_penalty;
    }
    for (int i = 0; i < nb; ++i)
      lh.bb(v_var(i), v_var(i)) += m.eq_base(nb + i) * (-2.0 * B(i, i));
    for (int l = 0; l < net_->n_line(); ++l) {
      const Line& ln = net_->lines[static_cast<std::size_t>(l)];
      const int i = net_->bus_index(ln.from_bus);
      const int j = net_->bus_index(ln.to_bus);
      const auto [vals, cols] = line_locals(st, i, j);
      DualSpace<8> sp(4);
      std::array<Dual8, 4> u;
      for (int k = 0; k < 4; ++k)
        u[static_cast<std::size_t>(k)] =
            cols[static_cast<std::size_t>(k)] >= 0 ? sp.var(k, vals[static_cast<std::size_t>(k)])
                                                   : sp.c(vals[static_cast<std::size_t>(k)]);
      const double coef_p = m.eq_base(i) - m.eq_base(j);
      const double coef_q = m.eq_base(nb + i) + m.eq_base(nb + j);
      const double lam = m.ineq_base(l);
      const double g = ln.susceptance_mag * ln.susceptance_mag;
      const Dual8 expr = coef_p * (l_sin(u, ln)) + coef_q * (l_cos(u, ln)) +
                         lam * (g * (square(u[0]) + square(u[1]) -
                                     2.0 * u[0] * u[1] * cos(u[2] - u[3])));
      for (int a = 0; a < 4; ++a) {
        const int ca = cols[static_cast<std::size_t>(a)];
        if (ca < 0) continue;
        for (int b = 0; b < 4; ++b) {
          const int cb = cols[static_cast<std::size_t>(b)];
          if (cb < 0) continue;
          lh.bb(ca, cb) += expr.hess()(a, b);
        }
      }
    }
    return lh;
  }

 private:
  static Dual8 l_sin(const std::array<Dual8, 4>& u, const Line& ln) {
    return ln.susceptance_mag * u[0] * u[1] * sin(u[2] - u[3]);
  }
  static Dual8 l_cos(const std::array<Dual8, 4>& u, const Line& ln) {
    return -ln.susceptance_mag * u[0] * u[1] * cos(u[2] - u[3]);
  }

  // (V_i, V_j, th_i, th_j) values and their variable columns (-1 = fixed)
  std::pair<std::array<double, 4>, std::array<int, 4>> line_locals(
      const EnergyModel::BusState& st, int i, int j) const {
    std::array<double, 4> vals{st.V(i), st.V(j), st.theta(i), st.theta(j)};
    std::array<int, 4> cols{v_var(i), v_var(j), th_var(i), th_var(j)};
    return {vals, cols};
  }

  const Network* net_;
  AcopfOptions opt_;
  int ds_ = 0, ngb_ = 0, ng_ = 0;
  int off_vgen_ = 0, off_pg_ = 0, off_qg_ = 0, off_ps_ = 0, off_qs_ = 0;
  int n_total_ = 0;
  std::vector<int> ps_bus_, qs_bus_;
  std::vector<int> ps_pos_, qs_pos_;
};

}  // namespace fpopf
