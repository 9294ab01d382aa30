// Per-line failure-rate blocks appended to the AC optimal power flow.
//
// Each constrained line carries its own failure point and a low-rank
// imprint of the inverse energy Hessian, tied to the dispatch by smooth
// equality rows, so the bilevel rate bound becomes part of one standard
// NLP.  For an active line with p local coordinates and factor rank r:
//
//   w = (x*, mu)    failure point over the static coordinates and the
//                   multiplier of its first-order optimality system
//   Z  (d x r)      solution of  H(xbar) Z = Q(x*)
//
//   eq   (d+1):     H(xbar)(x* - xbar) - mu gradF(x*) = 0,  F(x*) = i_trip^2
//   zeq  (d*r):     H(xbar) Z - Q(x*) = 0      (column-major flattening)
//   ineq (2):       spectral stability of  A = K Q(x*)' Z_P   and the
//                   log-rate bound  log(lambda_l) - log(lambda_lim) <= 0
//
// Because Z solves the same linear system that defines the local inverse
// block G = E_P' H^{-1} E_P, the product Q' Z_P equals Q' G Q at any
// feasible point: the inequality rows evaluate to exactly the analytical
// rate formula without ever forming H^{-1} inside the optimizer.
//
// All derivatives are exact.  Rows decompose over network lines and buses
// into terms touching at most eight scalars, differentiated with the
// second-order forward-mode scalar; the two inequality rows touch at most
// 2p + 1 + 1 + p*r <= 21 variables and use the wider scalar.
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "fpopf/acopf.hpp"
#include "fpopf/common.hpp"
#include "fpopf/dual.hpp"
#include "fpopf/energy.hpp"
#include "fpopf/network.hpp"
#include "fpopf/nlp.hpp"
#include "fpopf/theta.hpp"

namespace fpopf {

class RateConstrainedOpf : public AcopfProblem {
 public:
  RateConstrainedOpf(const Network& net, double lambda_lim, AcopfOptions aopt = {},
                     ModelParams prm = {})
      : AcopfProblem(net, aopt), prm_(prm), lambda_lim_(lambda_lim) {
    sdiag_ = EnergyModel(net, prm).s_diag_static();
    const StateIndexMap& map = net.index_map();
    nl_.reserve(static_cast<std::size_t>(net.n_line()));
    for (const Line& ln : net.lines) {
      NetLine L;
      L.i = net.bus_index(ln.from_bus);
      L.j = net.bus_index(ln.to_bus);
      L.b = ln.susceptance_mag;
      L.bcol = {v_var(L.i), v_var(L.j), th_var(L.i), th_var(L.j)};
      L.sc = {map.v_index(L.i), map.v_index(L.j), map.th_index(L.i),
              map.th_index(L.j)};
      nl_.push_back(L);
    }
  }

  double lambda_lim() const { return lambda_lim_; }
  double tau() const { return prm_.tau; }
  const ModelParams& params() const { return prm_; }

  // Append a rate block for a network line.  The warm values seed
  // initial_point(); callers hand in the failure point over the static
  // coordinates, its multiplier, and Z solving H(xbar) Z = Q(x*).
  void add_line(int line_idx, const Eigen::VectorXd& xstar, double mu,
                const Eigen::MatrixXd& z, double lambda_lim_line = -1.0) {
    for (const Block& bl : blk_)
      if (bl.line == line_idx)
        throw ValidationError("line already carries a rate block");
    Block bl{line_idx, LineFlow(network(), line_idx)};
    if (bl.flow.rank() < 2)
      throw ValidationError("rate blocks need a line with load-bus coordinates");
    bl.p = bl.flow.p();
    bl.r = bl.flow.rank();
    bl.xc = bl.flow.local_indices();
    bl.role_local.fill(-1);
    for (int k = 0; k < bl.p; ++k)
      bl.role_local[static_cast<std::size_t>(
          slot(bl.flow.local_kinds()[static_cast<std::size_t>(k)]))] = k;
    // role i is always the load endpoint, so only V_j can be a setpoint
    if (bl.role_local[1] < 0) bl.vg_base = v_var(bl.flow.bus_j());
    bl.nvg = bl.vg_base >= 0 ? 1 : 0;
    if (xstar.size() != d_static() || z.rows() != d_static() || z.cols() != bl.r)
      throw ValidationError("rate-block warm start has the wrong shape");
    bl.w0.resize(d_static() + 1);
    bl.w0 << xstar, mu;
    bl.z0 = z;
    bl.lambda_lim = lambda_lim_line > 0.0 ? lambda_lim_line : lambda_lim_;
    blk_.push_back(std::move(bl));
  }

  int line_network_index(int l) const { return blk_[static_cast<std::size_t>(l)].line; }
  double line_lambda_lim(int l) const { return blk_[static_cast<std::size_t>(l)].lambda_lim; }
  std::vector<int> active_lines() const {
    std::vector<int> v;
    v.reserve(blk_.size());
    for (const Block& bl : blk_) v.push_back(bl.line);
    return v;
  }

  // The rate encoded by block l at this point (inverts the log-rate row).
  double modeled_rate(const NlpPoint& p, int l) const {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const auto pair = rate_pair<double>(bl, ValueCtx{this, &bl, &p, l});
    return std::exp(pair[1] + std::log(bl.lambda_lim));
  }

  // ---- BlockNlp interface ---------------------------------------------------
  int n_lines() const override { return static_cast<int>(blk_.size()); }
  int dim_coupling() const override { return d_static(); }
  int line_rank(int l) const override { return blk_[static_cast<std::size_t>(l)].r; }
  std::vector<int> z_local_rows(int l) const override {
    return blk_[static_cast<std::size_t>(l)].xc;
  }

  NlpPoint initial_point() const override {
    NlpPoint p = AcopfProblem::initial_point();
    for (const Block& bl : blk_) {
      p.w.push_back(bl.w0);
      p.z.push_back(bl.z0);
    }
    return p;
  }

  Eigen::MatrixXd coupling(const NlpPoint& p) const override {
    EnergyModel em(network(), prm_);
    if (options().load_shedding) {
      const int nb = network().n_bus();
      Eigen::VectorXd pd(nb), qd(nb);
      for (int b = 0; b < nb; ++b) {
        pd(b) = p_eff(p, b);
        qd(b) = q_eff(p, b);
      }
      em.set_demands(pd, qd);
    }
    return em.hess_static(static_state(p), dispatch(p));
  }

  Eigen::VectorXd eq_line(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    const Eigen::VectorXd& w = p.w[static_cast<std::size_t>(l)];
    Eigen::VectorXd r(d + 1);
    r.head(d).noalias() = coupling(p) * (w.head(d) - p.base.head(d));
    const LineState s = star_state(p, bl, l);
    const Eigen::VectorXd g = bl.flow.grad_local(s);
    const double mu = w(d);
    for (int k = 0; k < bl.p; ++k) r(bl.xc[static_cast<std::size_t>(k)]) -= mu * g(k);
    r(d) = bl.flow.value(s) - bl.flow.trip_limit_sq();
    return r;
  }

  Eigen::MatrixXd jac_eq_line_w(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    const double mu = p.w[static_cast<std::size_t>(l)](d);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d + 1, d + 1);
    J.topLeftCorner(d, d) = coupling(p);
    const LineState s = star_state(p, bl, l);
    const Eigen::MatrixXd hl = bl.flow.hess_local(s);
    const Eigen::VectorXd gl = bl.flow.grad_local(s);
    for (int k = 0; k < bl.p; ++k) {
      const int rk = bl.xc[static_cast<std::size_t>(k)];
      for (int m2 = 0; m2 < bl.p; ++m2)
        J(rk, bl.xc[static_cast<std::size_t>(m2)]) -= mu * hl(k, m2);
      J(rk, d) = -gl(k);
      J(d, rk) = gl(k);
    }
    return J;
  }

  Eigen::MatrixXd jac_eq_line_base(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    const Eigen::VectorXd& w = p.w[static_cast<std::size_t>(l)];
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d + 1, n_base());
    // sensitivity of H(xbar) delta to the base point, line terms
    for (const NetLine& L : nl_) {
      int qpos[4], spos[4], n = 0;
      for (int a = 0; a < 4; ++a) qpos[a] = L.bcol[a] >= 0 ? n++ : -1;
      for (int a = 0; a < 4; ++a) spos[a] = L.sc[a] >= 0 ? n++ : -1;
      const DualSpace<8> sp(n);
      const std::array<Dual8, 4> u = quad_vars(sp, p, L, qpos);
      const auto HB = line_hb(sp, u, L.b);
      std::array<Dual8, 4> delta;
      for (int a = 0; a < 4; ++a)
        if (L.sc[a] >= 0) delta[static_cast<std::size_t>(a)] = sp.var(spos[a], w(L.sc[a])) - u[static_cast<std::size_t>(a)];
      for (int a = 0; a < 4; ++a) {
        if (L.sc[a] < 0) continue;
        Dual8 e = sp.c(0.0);
        for (int b2 = 0; b2 < 4; ++b2)
          if (L.sc[b2] >= 0)
            e += HB[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] *
                 delta[static_cast<std::size_t>(b2)];
        const auto& g = e.grad();
        for (int c2 = 0; c2 < 4; ++c2)
          if (L.bcol[c2] >= 0) J(L.sc[a], L.bcol[c2]) += g(qpos[c2]);
      }
    }
    // sensitivity of the voltage diagonal of H(xbar)
    const StateIndexMap& map = network().index_map();
    const Eigen::MatrixXd& B = network().susceptance();
    for (int k = 0; k < map.n_v; ++k) {
      const int bus = map.v_bus[static_cast<std::size_t>(k)];
      const int qcol = qs_var(bus);
      const DualSpace<8> sp(qcol >= 0 ? 3 : 2);
      const Dual8 uv = sp.var(0, p.base(k));
      const Dual8 xsv = sp.var(1, w(k));
      const double qd = network().buses[static_cast<std::size_t>(bus)].q_d;
      const Dual8 qn = qcol >= 0 ? qd - sp.var(2, p.base(qcol)) : sp.c(qd);
      const Dual8 e = (-B(bus, bus) - qn / (uv * uv)) * (xsv - uv);
      J(k, k) += e.grad()(0);
      if (qcol >= 0) J(k, qcol) += e.grad()(2);
    }
    // the force rows depend on the base only through a generator voltage
    if (bl.nvg > 0) {
      const DualSpace<8> sp(bl.p + bl.nvg + 1);
      const auto u = star_vars(sp, p, bl, l);
      const auto g4 = grad4_ad<8>(bl, u);
      const double mu = w(d);
      for (int k = 0; k < bl.p; ++k) {
        const Dual8 e = -(sp.var(bl.p + bl.nvg, mu)) * g4[static_cast<std::size_t>(
            slot(bl.flow.local_kinds()[static_cast<std::size_t>(k)]))];
        J(bl.xc[static_cast<std::size_t>(k)], bl.vg_base) += e.grad()(bl.p);
      }
      const Dual8 f = flow_ad<8>(bl, u);
      J(d, bl.vg_base) += f.grad()(bl.p);
    }
    return J;
  }

  Eigen::VectorXd zeq_line(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    Eigen::MatrixXd R = coupling(p) * p.z[static_cast<std::size_t>(l)];
    const FlowFactor f = bl.flow.factor(star_state(p, bl, l));
    for (int k = 0; k < bl.p; ++k)
      for (int c = 0; c < bl.r; ++c) R(bl.xc[static_cast<std::size_t>(k)], c) -= f.Q(k, c);
    return Eigen::Map<const Eigen::VectorXd>(R.data(), d * bl.r);
  }

  Eigen::MatrixXd jac_zeq_base(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    const Eigen::MatrixXd& Z = p.z[static_cast<std::size_t>(l)];
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d * bl.r, n_base());
    for (const NetLine& L : nl_) {
      int qpos[4], n = 0;
      for (int a = 0; a < 4; ++a) qpos[a] = L.bcol[a] >= 0 ? n++ : -1;
      const DualSpace<8> sp(n);
      const std::array<Dual8, 4> u = quad_vars(sp, p, L, qpos);
      const auto HB = line_hb(sp, u, L.b);
      for (int a = 0; a < 4; ++a) {
        if (L.sc[a] < 0) continue;
        for (int b2 = 0; b2 < 4; ++b2) {
          if (L.sc[b2] < 0) continue;
          const auto& g = HB[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)].grad();
          for (int c2 = 0; c2 < 4; ++c2) {
            if (L.bcol[c2] < 0) continue;
            const double gg = g(qpos[c2]);
            if (gg == 0.0) continue;
            for (int cz = 0; cz < bl.r; ++cz)
              J(cz * d + L.sc[a], L.bcol[c2]) += gg * Z(L.sc[b2], cz);
          }
        }
      }
    }
    const StateIndexMap& map = network().index_map();
    const Eigen::MatrixXd& B = network().susceptance();
    for (int k = 0; k < map.n_v; ++k) {
      const int bus = map.v_bus[static_cast<std::size_t>(k)];
      const int qcol = qs_var(bus);
      const DualSpace<8> sp(qcol >= 0 ? 2 : 1);
      const Dual8 uv = sp.var(0, p.base(k));
      const double qd = network().buses[static_cast<std::size_t>(bus)].q_d;
      const Dual8 qn = qcol >= 0 ? qd - sp.var(1, p.base(qcol)) : sp.c(qd);
      const Dual8 h = -B(bus, bus) - qn / (uv * uv);
      for (int cz = 0; cz < bl.r; ++cz) {
        J(cz * d + k, k) += h.grad()(0) * Z(k, cz);
        if (qcol >= 0) J(cz * d + k, qcol) += h.grad()(1) * Z(k, cz);
      }
    }
    if (bl.nvg > 0) {
      const DualSpace<8> sp(bl.p + bl.nvg + 1);
      const auto u = star_vars(sp, p, bl, l);
      const auto F = factor_ad<8>(bl, u, sp);
      for (int k = 0; k < bl.p; ++k)
        for (int cz = 0; cz < bl.r; ++cz)
          J(cz * d + bl.xc[static_cast<std::size_t>(k)], bl.vg_base) -=
              F.Q[static_cast<std::size_t>(k)][static_cast<std::size_t>(cz)].grad()(bl.p);
    }
    return J;
  }

  Eigen::MatrixXd jac_zeq_w(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d * bl.r, d + 1);
    const DualSpace<8> sp(bl.p + bl.nvg + 1);
    const auto u = star_vars(sp, p, bl, l);
    const auto F = factor_ad<8>(bl, u, sp);
    for (int k = 0; k < bl.p; ++k)
      for (int cz = 0; cz < bl.r; ++cz) {
        const auto& g = F.Q[static_cast<std::size_t>(k)][static_cast<std::size_t>(cz)].grad();
        for (int m2 = 0; m2 < bl.p; ++m2)
          J(cz * d + bl.xc[static_cast<std::size_t>(k)], bl.xc[static_cast<std::size_t>(m2)]) -=
              g(m2);
      }
    return J;
  }

  Eigen::VectorXd ineq_line(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const auto pair = rate_pair<double>(bl, ValueCtx{this, &bl, &p, l});
    Eigen::VectorXd c(2);
    c << pair[0], pair[1];
    return c;
  }

  Eigen::MatrixXd jac_ineq_line_base(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const auto pair = dual_pair(bl, p, l);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, n_base());
    for (int row = 0; row < 2; ++row) {
      const auto& g = pair[static_cast<std::size_t>(row)].grad();
      for (int k = 0; k < bl.p; ++k) J(row, bl.xc[static_cast<std::size_t>(k)]) = g(k);
      if (bl.nvg > 0) J(row, bl.vg_base) = g(2 * bl.p);
    }
    return J;
  }

  Eigen::MatrixXd jac_ineq_line_w(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const int d = d_static();
    const auto pair = dual_pair(bl, p, l);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, d + 1);
    for (int row = 0; row < 2; ++row) {
      const auto& g = pair[static_cast<std::size_t>(row)].grad();
      for (int k = 0; k < bl.p; ++k)
        J(row, bl.xc[static_cast<std::size_t>(k)]) = g(bl.p + k);
      J(row, d) = g(2 * bl.p + bl.nvg);
    }
    return J;
  }

  Eigen::MatrixXd jac_ineq_line_z(const NlpPoint& p, int l) const override {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const auto pair = dual_pair(bl, p, l);
    const int zoff = 2 * bl.p + bl.nvg + 1;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, bl.p * bl.r);
    for (int row = 0; row < 2; ++row) {
      const auto& g = pair[static_cast<std::size_t>(row)].grad();
      for (int c = 0; c < bl.p * bl.r; ++c) J(row, c) = g(zoff + c);
    }
    return J;
  }

  LagrangianHessian lagrangian_hessian(const NlpPoint& p, const NlpMultipliers& m,
                                       double sigma_f) const override {
    LagrangianHessian lh = AcopfProblem::lagrangian_hessian(p, m, sigma_f);
    const int d = d_static(), nb = n_base(), L = n_lines();
    lh.bw.resize(static_cast<std::size_t>(L));
    lh.ww.resize(static_cast<std::size_t>(L));
    lh.bz.resize(static_cast<std::size_t>(L));
    lh.wz_local.resize(static_cast<std::size_t>(L));
    lh.zz_local.resize(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
      const Block& bl = blk_[static_cast<std::size_t>(l)];
      const std::size_t sl = static_cast<std::size_t>(l);
      lh.bw[sl] = Eigen::MatrixXd::Zero(nb, d + 1);
      lh.ww[sl] = Eigen::MatrixXd::Zero(d + 1, d + 1);
      lh.bz[sl] = Eigen::MatrixXd::Zero(nb, d * bl.r);
      lh.wz_local[sl] = Eigen::MatrixXd::Zero(d + 1, bl.p * bl.r);
      lh.zz_local[sl] = Eigen::MatrixXd::Zero(bl.p * bl.r, bl.p * bl.r);
      add_eq_curvature(p, m.eq_line[sl], l, lh);
      add_zeq_curvature(p, m.zeq[sl], l, lh);
      add_ineq_curvature(p, m.ineq_line[sl], l, lh);
    }
    return lh;
  }

 private:
  struct NetLine {
    int i = 0, j = 0;
    double b = 0.0;
    std::array<int, 4> bcol{};  // base column of (V_i, V_j, th_i, th_j), -1 fixed
    std::array<int, 4> sc{};    // static coordinate of each slot, -1 if none
  };

  struct Block {
    Block(int line_in, LineFlow flow_in) : line(line_in), flow(std::move(flow_in)) {}
    int line = -1;
    LineFlow flow;
    int p = 0, r = 0, nvg = 0;
    std::vector<int> xc;               // static coordinates of the locals
    std::array<int, 4> role_local{};   // role slot -> local index, -1 absent
    int vg_base = -1;                  // base column of the generator-endpoint V
    double lambda_lim = 0.0;
    Eigen::VectorXd w0;
    Eigen::MatrixXd z0;
  };

  static int slot(FlowCoord k) { return static_cast<int>(k); }
  static double dval(double x) { return x; }
  template <int N>
  static double dval(const Dual2<N>& x) {
    return x.value();
  }

  // failure-point line state of block l (locals from w, the rest from y)
  LineState star_state(const NlpPoint& p, const Block& bl, int l) const {
    Eigen::VectorXd loc(bl.p);
    for (int k = 0; k < bl.p; ++k)
      loc(k) = p.w[static_cast<std::size_t>(l)](bl.xc[static_cast<std::size_t>(k)]);
    return bl.flow.from_local(loc, dispatch(p));
  }

  // quadruple of a network line at the base point as local variables
  template <int N>
  std::array<Dual2<N>, 4> quad_vars(const DualSpace<N>& sp, const NlpPoint& p,
                                    const NetLine& L, const int qpos[4]) const {
    std::array<Dual2<N>, 4> u;
    for (int a = 0; a < 4; ++a)
      u[static_cast<std::size_t>(a)] =
          L.bcol[a] >= 0 ? sp.var(qpos[a], p.base(L.bcol[a])) : sp.c(0.0);
    return u;
  }

  // per-line block of the energy Hessian over the quadruple, entry by entry
  template <int N>
  std::array<std::array<Dual2<N>, 4>, 4> line_hb(const DualSpace<N>& sp,
                                                 const std::array<Dual2<N>, 4>& u,
                                                 double b) const {
    const Dual2<N> c = cos(u[2] - u[3]);
    const Dual2<N> s = sin(u[2] - u[3]);
    std::array<std::array<Dual2<N>, 4>, 4> H;
    H[0][0] = sp.c(0.0);
    H[1][1] = sp.c(0.0);
    H[0][1] = -b * c;
    H[0][2] = b * u[1] * s;
    H[0][3] = -(b * u[1] * s);
    H[1][2] = b * u[0] * s;
    H[1][3] = -(b * u[0] * s);
    H[2][2] = b * u[0] * u[1] * c;
    H[3][3] = H[2][2];
    H[2][3] = -H[2][2];
    H[1][0] = H[0][1];
    H[2][0] = H[0][2];
    H[3][0] = H[0][3];
    H[2][1] = H[1][2];
    H[3][1] = H[1][3];
    H[3][2] = H[2][3];
    return H;
  }

  // role values of the active line's failure point over [x* | V_gen | mu]
  template <int N>
  std::array<Dual2<N>, 4> star_vars(const DualSpace<N>& sp, const NlpPoint& p,
                                    const Block& bl, int l) const {
    std::array<Dual2<N>, 4> u;
    const Eigen::VectorXd& w = p.w[static_cast<std::size_t>(l)];
    for (int a = 0; a < 4; ++a) {
      const int k = bl.role_local[static_cast<std::size_t>(a)];
      if (k >= 0)
        u[static_cast<std::size_t>(a)] = sp.var(k, w(bl.xc[static_cast<std::size_t>(k)]));
      else if (a == 1 && bl.vg_base >= 0)
        u[static_cast<std::size_t>(a)] = sp.var(bl.p, p.base(bl.vg_base));
      else
        u[static_cast<std::size_t>(a)] = sp.c(0.0);
    }
    return u;
  }

  template <int N>
  std::array<Dual2<N>, 4> grad4_ad(const Block& bl, const std::array<Dual2<N>, 4>& u) const {
    const double g = bl.flow.y_mag() * bl.flow.y_mag();
    const Dual2<N> c = cos(u[2] - u[3]);
    const Dual2<N> s = sin(u[2] - u[3]);
    std::array<Dual2<N>, 4> gr;
    gr[0] = 2.0 * g * (u[0] - u[1] * c);
    gr[1] = 2.0 * g * (u[1] - u[0] * c);
    gr[2] = 2.0 * g * u[0] * u[1] * s;
    gr[3] = -gr[2];
    return gr;
  }

  template <int N>
  Dual2<N> flow_ad(const Block& bl, const std::array<Dual2<N>, 4>& u) const {
    const double g = bl.flow.y_mag() * bl.flow.y_mag();
    return g * (u[0] * u[0] + u[1] * u[1] - 2.0 * u[0] * u[1] * cos(u[2] - u[3]));
  }

  template <int N>
  struct FactorAd {
    std::array<std::array<Dual2<N>, 3>, 4> Q;  // local rows, rank columns
    std::array<Dual2<N>, 3> K;
  };

  // the scaled factor Q(x*) and diagonal K(x*), rows in local order
  template <int N>
  FactorAd<N> factor_ad(const Block& bl, const std::array<Dual2<N>, 4>& u,
                        const DualSpace<N>& sp) const {
    const double scale = std::numbers::sqrt2 * bl.flow.y_mag();
    const Dual2<N> c = cos(u[2] - u[3]);
    const Dual2<N> s = sin(u[2] - u[3]);
    std::array<std::array<Dual2<N>, 3>, 4> role_rows;  // indexed by role slot
    FactorAd<N> f;
    f.K = {sp.c(1.0), sp.c(1.0), sp.c(-1.0)};
    if (bl.r == 3) {
      const Dual2<N> t = sqrt(u[0] * u[0] + u[1] * u[1] + u[0] * u[1] * c);
      role_rows[0] = {sp.c(scale), sp.c(0.0), sp.c(0.0)};
      role_rows[1] = {scale * (-c), scale * s, sp.c(0.0)};
      role_rows[2] = {scale * (u[1] * s), scale * (u[0] + u[1] * c), scale * t};
      role_rows[3] = {-role_rows[2][0], -role_rows[2][1], -role_rows[2][2]};
    } else {
      f.K[1] = u[0] * u[1] * c - u[1] * u[1] * s * s;
      role_rows[0] = {sp.c(scale), sp.c(0.0), sp.c(0.0)};
      role_rows[2] = {scale * (u[1] * s), sp.c(scale), sp.c(0.0)};
      role_rows[3] = {-role_rows[2][0], sp.c(-scale), sp.c(0.0)};
    }
    for (int k = 0; k < bl.p; ++k)
      f.Q[static_cast<std::size_t>(k)] = role_rows[static_cast<std::size_t>(
          slot(bl.flow.local_kinds()[static_cast<std::size_t>(k)]))];
    return f;
  }

  // value-path context: plain doubles straight from the point
  struct ValueCtx {
    const RateConstrainedOpf* pr;
    const Block* bl;
    const NlpPoint* p;
    int l;
    double xbar(int k) const { return p->base(bl->xc[static_cast<std::size_t>(k)]); }
    double xstar(int k) const {
      return p->w[static_cast<std::size_t>(l)](bl->xc[static_cast<std::size_t>(k)]);
    }
    double vg() const { return p->base(bl->vg_base); }
    double mu() const { return p->w[static_cast<std::size_t>(l)](pr->d_static()); }
    double z(int k, int c) const {
      return p->z[static_cast<std::size_t>(l)](bl->xc[static_cast<std::size_t>(k)], c);
    }
    double cst(double v) const { return v; }
  };

  // derivative-path context over [xbar_P | x*_P | V_gen | mu | Z_P col-major]
  struct DualCtx {
    const RateConstrainedOpf* pr;
    const Block* bl;
    const NlpPoint* p;
    int l;
    const DualSpace<28>* sp;
    Dual28 xbar(int k) const {
      return sp->var(k, p->base(bl->xc[static_cast<std::size_t>(k)]));
    }
    Dual28 xstar(int k) const {
      return sp->var(bl->p + k,
                     p->w[static_cast<std::size_t>(l)](bl->xc[static_cast<std::size_t>(k)]));
    }
    Dual28 vg() const { return sp->var(2 * bl->p, p->base(bl->vg_base)); }
    Dual28 mu() const {
      return sp->var(2 * bl->p + bl->nvg, p->w[static_cast<std::size_t>(l)](pr->d_static()));
    }
    Dual28 z(int k, int c) const {
      return sp->var(2 * bl->p + bl->nvg + 1 + c * bl->p + k,
                     p->z[static_cast<std::size_t>(l)](bl->xc[static_cast<std::size_t>(k)], c));
    }
    Dual28 cst(double v) const { return sp->c(v); }
  };

  std::array<Dual28, 2> dual_pair(const Block& bl, const NlpPoint& p, int l) const {
    const DualSpace<28> sp(2 * bl.p + bl.nvg + 1 + bl.p * bl.r);
    return rate_pair<Dual28>(bl, DualCtx{this, &bl, &p, l, &sp});
  }

  // The two inequality rows of a block: the spectral-stability surrogate and
  // the log-rate bound, evaluated over any scalar type.
  template <typename T, typename Cx>
  std::array<T, 2> rate_pair(const Block& bl, const Cx& cx) const {
    using std::cos;
    using std::log;
    using std::sin;
    using std::sqrt;
    const int pp = bl.p, r = bl.r;
    // role values at the failure point
    std::array<T, 4> u = {cx.cst(0.0), cx.cst(0.0), cx.cst(0.0), cx.cst(0.0)};
    for (int a = 0; a < 4; ++a) {
      const int k = bl.role_local[static_cast<std::size_t>(a)];
      if (k >= 0)
        u[static_cast<std::size_t>(a)] = cx.xstar(k);
      else if (a == 1 && bl.vg_base >= 0)
        u[static_cast<std::size_t>(a)] = cx.vg();
    }
    const double ymag = bl.flow.y_mag();
    const double gsq = ymag * ymag;
    const T c = cos(u[2] - u[3]);
    const T s = sin(u[2] - u[3]);
    std::array<T, 4> g4 = {2.0 * gsq * (u[0] - u[1] * c), 2.0 * gsq * (u[1] - u[0] * c),
                           2.0 * gsq * (u[0] * u[1] * s), cx.cst(0.0)};
    g4[3] = -g4[2];
    // displacement, gradient, alpha = delta . gradF, squared S-norm of gradF
    T alpha = cx.cst(0.0);
    T snorm = cx.cst(0.0);
    std::array<T, 4> gl{}, dl{};
    for (int k = 0; k < pp; ++k) {
      gl[static_cast<std::size_t>(k)] = g4[static_cast<std::size_t>(
          slot(bl.flow.local_kinds()[static_cast<std::size_t>(k)]))];
      dl[static_cast<std::size_t>(k)] = cx.xstar(k) - cx.xbar(k);
      alpha += dl[static_cast<std::size_t>(k)] * gl[static_cast<std::size_t>(k)];
      snorm += sdiag_(bl.xc[static_cast<std::size_t>(k)]) *
               (gl[static_cast<std::size_t>(k)] * gl[static_cast<std::size_t>(k)]);
    }
    // the scaled factor rows in local order
    const double scale = std::numbers::sqrt2 * ymag;
    std::array<std::array<T, 3>, 4> role_rows = {
        std::array<T, 3>{cx.cst(scale), cx.cst(0.0), cx.cst(0.0)},
        std::array<T, 3>{cx.cst(0.0), cx.cst(0.0), cx.cst(0.0)},
        std::array<T, 3>{cx.cst(0.0), cx.cst(0.0), cx.cst(0.0)},
        std::array<T, 3>{cx.cst(0.0), cx.cst(0.0), cx.cst(0.0)}};
    std::array<T, 3> K = {cx.cst(1.0), cx.cst(1.0), cx.cst(-1.0)};
    if (r == 3) {
      const T t = sqrt(u[0] * u[0] + u[1] * u[1] + u[0] * u[1] * c);
      role_rows[1] = {scale * (-c), scale * s, cx.cst(0.0)};
      role_rows[2] = {scale * (u[1] * s), scale * (u[0] + u[1] * c), scale * t};
      role_rows[3] = {-role_rows[2][0], -role_rows[2][1], -role_rows[2][2]};
    } else {
      K[1] = u[0] * u[1] * c - u[1] * u[1] * s * s;
      role_rows[2] = {scale * (u[1] * s), cx.cst(scale), cx.cst(0.0)};
      role_rows[3] = {-role_rows[2][0], cx.cst(-scale), cx.cst(0.0)};
    }
    const auto qrow = [&](int k) -> const std::array<T, 3>& {
      return role_rows[static_cast<std::size_t>(
          slot(bl.flow.local_kinds()[static_cast<std::size_t>(k)]))];
    };
    // A = K Q' Z_P and the rank-space displacement u_q = Q' delta
    std::array<std::array<T, 3>, 3> A{};
    std::array<T, 3> uq{};
    for (int a = 0; a < r; ++a) {
      uq[static_cast<std::size_t>(a)] = cx.cst(0.0);
      for (int k = 0; k < pp; ++k)
        uq[static_cast<std::size_t>(a)] +=
            qrow(k)[static_cast<std::size_t>(a)] * dl[static_cast<std::size_t>(k)];
      for (int b2 = 0; b2 < r; ++b2) {
        T acc = cx.cst(0.0);
        for (int k = 0; k < pp; ++k)
          acc += qrow(k)[static_cast<std::size_t>(a)] * cx.z(k, b2);
        A[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] =
            K[static_cast<std::size_t>(a)] * acc;
      }
    }
    const T mu = cx.mu();
    T tr_a = A[0][0];
    for (int a = 1; a < r; ++a) tr_a += A[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)];
    // W = I - mu A: determinant, adjugate, and beta = u_q' adj(W) K u_q
    std::array<std::array<T, 3>, 3> W{}, adjw{};
    for (int a = 0; a < r; ++a)
      for (int b2 = 0; b2 < r; ++b2) {
        W[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] =
            -(mu * A[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)]);
        if (a == b2)
          W[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] += 1.0;
      }
    T detw = cx.cst(0.0);
    if (r == 2) {
      detw = W[0][0] * W[1][1] - W[0][1] * W[1][0];
      adjw[0][0] = W[1][1];
      adjw[0][1] = -W[0][1];
      adjw[1][0] = -W[1][0];
      adjw[1][1] = W[0][0];
    } else {
      adjw[0][0] = W[1][1] * W[2][2] - W[1][2] * W[2][1];
      adjw[0][1] = W[0][2] * W[2][1] - W[0][1] * W[2][2];
      adjw[0][2] = W[0][1] * W[1][2] - W[0][2] * W[1][1];
      adjw[1][0] = W[1][2] * W[2][0] - W[1][0] * W[2][2];
      adjw[1][1] = W[0][0] * W[2][2] - W[0][2] * W[2][0];
      adjw[1][2] = W[0][2] * W[1][0] - W[0][0] * W[1][2];
      adjw[2][0] = W[1][0] * W[2][1] - W[1][1] * W[2][0];
      adjw[2][1] = W[0][1] * W[2][0] - W[0][0] * W[2][1];
      adjw[2][2] = W[0][0] * W[1][1] - W[0][1] * W[1][0];
      detw = W[0][0] * adjw[0][0] + W[0][1] * adjw[1][0] + W[0][2] * adjw[2][0];
    }
    T beta = cx.cst(0.0);
    for (int a = 0; a < r; ++a)
      for (int b2 = 0; b2 < r; ++b2)
        beta += uq[static_cast<std::size_t>(a)] *
                adjw[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] *
                K[static_cast<std::size_t>(b2)] * uq[static_cast<std::size_t>(b2)];
    // spectral-stability surrogate: for r = 2 the exact eigenvalue bound in
    // trace/determinant form, for r = 3 (indefinite K) the trace relaxation
    T cspec = cx.cst(0.0);
    if (r == 2) {
      const T deta = A[0][0] * A[1][1] - A[0][1] * A[1][0];
      cspec = mu * tr_a - mu * mu * deta - (1.0 - spectral_slack_);
    } else {
      cspec = mu * tr_a - (3.0 - spectral_slack_);
    }
    const T denom = alpha * detw + beta;
    if (!(dval(mu) > 0.0) || !(dval(alpha) > 0.0) || !(dval(snorm) > 0.0) ||
        !(dval(denom) > 0.0))
      throw NumericError("rate block left the domain of its log-rate row");
    const double tau = prm_.tau;
    const T crate = 1.5 * log(mu) + log(snorm) - 0.5 * log(denom) +
                    log(1.0 + (2.0 * tau) / (mu * alpha)) - mu * alpha / (2.0 * tau) -
                    std::log(std::sqrt(2.0 * std::numbers::pi * tau) * bl.lambda_lim);
    return {cspec, crate};
  }

  // ---- curvature of the line blocks -----------------------------------------
  void add_eq_curvature(const NlpPoint& p, const Eigen::VectorXd& nu, int l,
                        LagrangianHessian& lh) const {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const std::size_t sl = static_cast<std::size_t>(l);
    const int d = d_static();
    const Eigen::VectorXd& w = p.w[sl];
    for (const NetLine& L : nl_) {
      int qpos[4], spos[4], n = 0;
      for (int a = 0; a < 4; ++a) qpos[a] = L.bcol[a] >= 0 ? n++ : -1;
      for (int a = 0; a < 4; ++a) spos[a] = L.sc[a] >= 0 ? n++ : -1;
      const DualSpace<8> sp(n);
      const std::array<Dual8, 4> u = quad_vars(sp, p, L, qpos);
      const auto HB = line_hb(sp, u, L.b);
      Dual8 e = sp.c(0.0);
      std::array<Dual8, 4> delta;
      for (int a = 0; a < 4; ++a)
        if (L.sc[a] >= 0)
          delta[static_cast<std::size_t>(a)] = sp.var(spos[a], w(L.sc[a])) - u[static_cast<std::size_t>(a)];
      for (int a = 0; a < 4; ++a) {
        if (L.sc[a] < 0) continue;
        Dual8 row = sp.c(0.0);
        for (int b2 = 0; b2 < 4; ++b2)
          if (L.sc[b2] >= 0)
            row += HB[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] *
                   delta[static_cast<std::size_t>(b2)];
        e += nu(L.sc[a]) * row;
      }
      const auto& H = e.hess();
      // scatter over [quadruple base columns | x* static coordinates]
      for (int a = 0; a < 4; ++a) {
        for (int b2 = 0; b2 < 4; ++b2) {
          if (L.bcol[a] >= 0 && L.bcol[b2] >= 0)
            lh.bb(L.bcol[a], L.bcol[b2]) += H(qpos[a], qpos[b2]);
          if (L.bcol[a] >= 0 && L.sc[b2] >= 0)
            lh.bw[sl](L.bcol[a], L.sc[b2]) += H(qpos[a], spos[b2]);
          if (L.sc[a] >= 0 && L.sc[b2] >= 0)
            lh.ww[sl](L.sc[a], L.sc[b2]) += H(spos[a], spos[b2]);
        }
      }
    }
    const StateIndexMap& map = network().index_map();
    const Eigen::MatrixXd& B = network().susceptance();
    for (int k = 0; k < map.n_v; ++k) {
      const int bus = map.v_bus[static_cast<std::size_t>(k)];
      const int qcol = qs_var(bus);
      const DualSpace<8> sp(qcol >= 0 ? 3 : 2);
      const Dual8 uv = sp.var(0, p.base(k));
      const Dual8 xsv = sp.var(1, w(k));
      const double qd = network().buses[static_cast<std::size_t>(bus)].q_d;
      const Dual8 qn = qcol >= 0 ? qd - sp.var(2, p.base(qcol)) : sp.c(qd);
      const Dual8 e = nu(k) * ((-B(bus, bus) - qn / (uv * uv)) * (xsv - uv));
      const auto& H = e.hess();
      lh.bb(k, k) += H(0, 0);
      lh.bw[sl](k, k) += H(0, 1);
      if (qcol >= 0) {
        lh.bb(k, qcol) += H(0, 2);
        lh.bb(qcol, k) += H(2, 0);
        lh.bw[sl](qcol, k) += H(2, 1);
      }
    }
    // force rows and the trip-surface row over [x* | V_gen | mu]
    {
      const DualSpace<8> sp(bl.p + bl.nvg + 1);
      const auto u = star_vars(sp, p, bl, l);
      const auto g4 = grad4_ad<8>(bl, u);
      const Dual8 mu = sp.var(bl.p + bl.nvg, w(d));
      Dual8 e = nu(d) * (flow_ad<8>(bl, u) - bl.flow.trip_limit_sq());
      for (int k = 0; k < bl.p; ++k)
        e += nu(bl.xc[static_cast<std::size_t>(k)]) *
             (-(mu * g4[static_cast<std::size_t>(
                  slot(bl.flow.local_kinds()[static_cast<std::size_t>(k)]))]));
      scatter_star(e.hess(), bl, l, lh);
    }
  }

  void add_zeq_curvature(const NlpPoint& p, const Eigen::MatrixXd& nu_z, int l,
                         LagrangianHessian& lh) const {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const std::size_t sl = static_cast<std::size_t>(l);
    const int d = d_static();
    const Eigen::MatrixXd& Z = p.z[sl];
    for (const NetLine& L : nl_) {
      int qpos[4], n = 0;
      for (int a = 0; a < 4; ++a) qpos[a] = L.bcol[a] >= 0 ? n++ : -1;
      const DualSpace<8> sp(n);
      const std::array<Dual8, 4> u = quad_vars(sp, p, L, qpos);
      const auto HB = line_hb(sp, u, L.b);
      Dual8 e = sp.c(0.0);
      for (int a = 0; a < 4; ++a) {
        if (L.sc[a] < 0) continue;
        for (int b2 = 0; b2 < 4; ++b2) {
          if (L.sc[b2] < 0) continue;
          double cab = 0.0;
          for (int cz = 0; cz < bl.r; ++cz)
            cab += nu_z(L.sc[a], cz) * Z(L.sc[b2], cz);
          e += HB[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)] * cab;
          // mixed curvature against the Z entries of the same column
          const auto& gh =
              HB[static_cast<std::size_t>(a)][static_cast<std::size_t>(b2)].grad();
          for (int c2 = 0; c2 < 4; ++c2) {
            if (L.bcol[c2] < 0) continue;
            for (int cz = 0; cz < bl.r; ++cz)
              lh.bz[sl](L.bcol[c2], cz * d + L.sc[b2]) +=
                  nu_z(L.sc[a], cz) * gh(qpos[c2]);
          }
        }
      }
      const auto& H = e.hess();
      for (int a = 0; a < 4; ++a)
        for (int b2 = 0; b2 < 4; ++b2)
          if (L.bcol[a] >= 0 && L.bcol[b2] >= 0)
            lh.bb(L.bcol[a], L.bcol[b2]) += H(qpos[a], qpos[b2]);
    }
    const StateIndexMap& map = network().index_map();
    const Eigen::MatrixXd& B = network().susceptance();
    for (int k = 0; k < map.n_v; ++k) {
      const int bus = map.v_bus[static_cast<std::size_t>(k)];
      const int qcol = qs_var(bus);
      const DualSpace<8> sp(qcol >= 0 ? 2 : 1);
      const Dual8 uv = sp.var(0, p.base(k));
      const double qd = network().buses[static_cast<std::size_t>(bus)].q_d;
      const Dual8 qn = qcol >= 0 ? qd - sp.var(1, p.base(qcol)) : sp.c(qd);
      const Dual8 h = -B(bus, bus) - qn / (uv * uv);
      double ck = 0.0;
      for (int cz = 0; cz < bl.r; ++cz) ck += nu_z(k, cz) * Z(k, cz);
      const Dual8 e = h * ck;
      const auto& H = e.hess();
      lh.bb(k, k) += H(0, 0);
      if (qcol >= 0) {
        lh.bb(k, qcol) += H(0, 1);
        lh.bb(qcol, k) += H(1, 0);
      }
      for (int cz = 0; cz < bl.r; ++cz) {
        lh.bz[sl](k, cz * d + k) += nu_z(k, cz) * h.grad()(0);
        if (qcol >= 0) lh.bz[sl](qcol, cz * d + k) += nu_z(k, cz) * h.grad()(1);
      }
    }
    // the -Q(x*) side over [x* | V_gen | mu]
    {
      const DualSpace<8> sp(bl.p + bl.nvg + 1);
      const auto u = star_vars(sp, p, bl, l);
      const auto F = factor_ad<8>(bl, u, sp);
      Dual8 e = sp.c(0.0);
      for (int k = 0; k < bl.p; ++k)
        for (int cz = 0; cz < bl.r; ++cz)
          e -= nu_z(bl.xc[static_cast<std::size_t>(k)], cz) *
               F.Q[static_cast<std::size_t>(k)][static_cast<std::size_t>(cz)];
      scatter_star(e.hess(), bl, l, lh);
    }
  }

  void add_ineq_curvature(const NlpPoint& p, const Eigen::VectorXd& lam, int l,
                          LagrangianHessian& lh) const {
    const Block& bl = blk_[static_cast<std::size_t>(l)];
    const std::size_t sl = static_cast<std::size_t>(l);
    if (lam(0) == 0.0 && lam(1) == 0.0) return;
    const int d = d_static();
    const auto pair = dual_pair(bl, p, l);
    const auto H = (lam(0) * pair[0] + lam(1) * pair[1]).hess();
    // category of every local variable: base column, w coordinate, Z entry
    const int nv = 2 * bl.p + bl.nvg + 1 + bl.p * bl.r;
    std::vector<int> cat(static_cast<std::size_t>(nv)), col(static_cast<std::size_t>(nv));
    for (int k = 0; k < bl.p; ++k) {
      cat[static_cast<std::size_t>(k)] = 0;
      col[static_cast<std::size_t>(k)] = bl.xc[static_cast<std::size_t>(k)];
      cat[static_cast<std::size_t>(bl.p + k)] = 1;
      col[static_cast<std::size_t>(bl.p + k)] = bl.xc[static_cast<std::size_t>(k)];
    }
    if (bl.nvg > 0) {
      cat[static_cast<std::size_t>(2 * bl.p)] = 0;
      col[static_cast<std::size_t>(2 * bl.p)] = bl.vg_base;
    }
    cat[static_cast<std::size_t>(2 * bl.p + bl.nvg)] = 1;
    col[static_cast<std::size_t>(2 * bl.p + bl.nvg)] = d;
    const int zoff = 2 * bl.p + bl.nvg + 1;
    for (int c = 0; c < bl.p * bl.r; ++c) {
      cat[static_cast<std::size_t>(zoff + c)] = 2;
      col[static_cast<std::size_t>(zoff + c)] = c;  // local flat index
    }
    for (int i = 0; i < nv; ++i) {
      for (int j = 0; j < nv; ++j) {
        const double h = H(i, j);
        if (h == 0.0) continue;
        const int ci = cat[static_cast<std::size_t>(i)], cj = cat[static_cast<std::size_t>(j)];
        const int a = col[static_cast<std::size_t>(i)], b2 = col[static_cast<std::size_t>(j)];
        if (ci == 0 && cj == 0) lh.bb(a, b2) += h;
        else if (ci == 0 && cj == 1) lh.bw[sl](a, b2) += h;
        else if (ci == 1 && cj == 1) lh.ww[sl](a, b2) += h;
        else if (ci == 0 && cj == 2) {
          const int cz = b2 / bl.p, k2 = b2 % bl.p;
          lh.bz[sl](a, cz * d + bl.xc[static_cast<std::size_t>(k2)]) += h;
        } else if (ci == 1 && cj == 2) {
          lh.wz_local[sl](a, b2) += h;
        } else if (ci == 2 && cj == 2) {
          lh.zz_local[sl](a, b2) += h;
        }
        // remaining orderings are covered by the symmetric pair
      }
    }
  }

  // scatter a Hessian over [x* | V_gen | mu] into the block matrices
  void scatter_star(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>& H,
                    const Block& bl, int l, LagrangianHessian& lh) const {
    const std::size_t sl = static_cast<std::size_t>(l);
    const int d = d_static();
    const int n = bl.p + bl.nvg + 1;
    std::array<int, 8> cat{}, col{};
    for (int k = 0; k < bl.p; ++k) {
      cat[static_cast<std::size_t>(k)] = 1;
      col[static_cast<std::size_t>(k)] = bl.xc[static_cast<std::size_t>(k)];
    }
    if (bl.nvg > 0) {
      cat[static_cast<std::size_t>(bl.p)] = 0;
      col[static_cast<std::size_t>(bl.p)] = bl.vg_base;
    }
    cat[static_cast<std::size_t>(bl.p + bl.nvg)] = 1;
    col[static_cast<std::size_t>(bl.p + bl.nvg)] = d;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double h = H(i, j);
        if (h == 0.0) continue;
        const int ci = cat[static_cast<std::size_t>(i)], cj = cat[static_cast<std::size_t>(j)];
        const int a = col[static_cast<std::size_t>(i)], b2 = col[static_cast<std::size_t>(j)];
        if (ci == 0 && cj == 0) lh.bb(a, b2) += h;
        else if (ci == 0 && cj == 1) lh.bw[sl](a, b2) += h;
        else if (ci == 1 && cj == 1) lh.ww[sl](a, b2) += h;
      }
  }

  ModelParams prm_;
  double lambda_lim_ = 0.0;
  double spectral_slack_ = 1e-6;
  Eigen::VectorXd sdiag_;
  std::vector<NetLine> nl_;
  std::vector<Block> blk_;
};

}  // namespace fpopf
