// Primal-dual interior-point method for BlockNlp problems.
//
// Inequalities c(x) <= 0 are handled through slacks (c + s = 0, s > 0)
// so that constraints violated at a warm start are simply infeasible
// equalities rather than barrier domain errors.  Variable bounds get a
// direct logarithmic barrier with explicit bound multipliers.  The barrier
// parameter decreases monotonically (mu <- mu/10) once the scaled KKT
// error of the barrier problem drops below 10*mu.  Globalization is an
// l1-penalty merit function with Armijo backtracking plus the usual
// fraction-to-boundary rule.
//
// The Newton system is never formed whole.  Per line block, the
// sensitivity columns Z and their multipliers form a saddle sub-block
// [[W_zz, B'], [B, 0]] with B = I_r (x) coupling(x); since B is square and
// nonsingular this block has fixed inertia (dr, dr) and is eliminated
// exactly using one factorization of the coupling matrix.  The remaining
// per-line blocks (x*, mu, their equality rows, two inequality rows) are
// factored independently with Bunch-Kaufman and condensed onto the base
// block by a Schur complement.  Inertia of the full KKT matrix is the sum
// over block factorizations; when it disagrees with the constraint count,
// the primal diagonal is shifted (delta_w) and everything is refactored.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/ldlt.hpp"
#include "fpopf/nlp.hpp"

namespace fpopf {

struct IpmOptions {
  double tol = 1e-6;
  double mu_init = 0.1;
  double mu_min = 1e-11;
  double mu_shrink = 0.1;      // monotone barrier reduction factor
  double kappa_eps = 10.0;     // inner loop: stop when error <= kappa_eps * mu
  int max_iter = 500;
  double ftb_min = 0.99;       // fraction-to-boundary limits
  double ftb_max = 0.995;
  double bound_frac = 1e-3;    // interior push as fraction of bound range
  double slack_floor = 1e-2;   // smallest initial slack
  double armijo = 1e-4;
  double alpha_min = 1e-12;    // line-search give-up threshold
  double penalty_cap = 1e12;
  int threads = 1;             // per-line elimination workers
  bool verbose = false;
  std::string log_path;        // per-iteration CSV when nonempty
};

struct IpmResult {
  bool ok = false;
  std::string message;
  int iterations = 0;
  double objective = 0.0;
  NlpPoint point;
  NlpMultipliers mult;
  Eigen::VectorXd slack_base;
  std::vector<Eigen::VectorXd> slack_line;
  Eigen::VectorXd z_lower, z_upper;  // stacked over [base; w_0; w_1; ...]
  KktResiduals kkt;
};

class InteriorPoint {
 public:
  explicit InteriorPoint(const BlockNlp& nlp, IpmOptions opt = IpmOptions())
      : nlp_(nlp), opt_(opt) {
    nb_ = nlp_.n_base();
    meq_ = nlp_.m_eq_base();
    min_ = nlp_.m_ineq_base();
    L_ = nlp_.n_lines();
    d_ = nlp_.dim_coupling();
    lo_base_ = nlp_.base_lower();
    up_base_ = nlp_.base_upper();
    for (int l = 0; l < L_; ++l) {
      lo_w_.push_back(nlp_.w_lower(l));
      up_w_.push_back(nlp_.w_upper(l));
      ranks_.push_back(nlp_.line_rank(l));
      rows_.push_back(nlp_.z_local_rows(l));
    }
    nbound_ = nb_ + L_ * (d_ + 1);
  }

  IpmResult solve() { return solve(nlp_.initial_point(), nullptr); }

  IpmResult solve(NlpPoint start, const NlpMultipliers* warm) {
    initialize(std::move(start), warm);
    std::ofstream log;
    if (!opt_.log_path.empty()) {
      log.open(opt_.log_path);
      log << "iter,mu,objective,eq_infeas,ineq_infeas,error_mu,error_0,"
             "alpha_primal,alpha_dual,delta_w,ls_steps\n";
    }

    IpmResult res;
    double delta_w_last = 0.0;
    for (int iter = 0; iter < opt_.max_iter; ++iter) {
      Eval ev = evaluate(x_);
      if (!std::isfinite(ev.f)) throw NumericError("objective not finite at iterate");
      Errors err = errors(ev);
      if (err.e0 <= opt_.tol) {
        res.ok = true;
        res.message = "converged";
        res.iterations = iter;
        return finish(res, ev);
      }
      while (err.emu <= opt_.kappa_eps * mu_ && mu_ > opt_.mu_min) {
        mu_ = std::max(opt_.mu_min, mu_ * opt_.mu_shrink);
        err = errors(ev);
      }

      Step st;
      double delta_w = 0.0;
      solve_kkt(ev, st, delta_w);
      delta_w_last = delta_w;

      const double tau = std::min(opt_.ftb_max, std::max(opt_.ftb_min, 1.0 - mu_));
      const double amax_pr = max_primal_step(st, tau);
      const double adu = dual_step(st, tau);

      int ls_steps = 0;
      const double apr = line_search(ev, st, amax_pr, ls_steps);
      apply_step(st, apr, adu);

      if (log.is_open()) {
        log << iter << ',' << std::setprecision(16) << mu_ << ',' << ev.f << ','
            << err.eq << ',' << err.ineq << ',' << err.emu << ',' << err.e0 << ','
            << apr << ',' << adu << ',' << delta_w << ',' << ls_steps << '\n';
      }
      if (opt_.verbose) {
        // single status line per iteration for interactive runs
        std::string line = "it " + num_str(iter) + " mu " + num_str(mu_) + " f " +
                           num_str(ev.f) + " err " + num_str(err.e0) + " a " +
                           num_str(apr);
        std::fputs((line + "\n").c_str(), stderr);
      }
    }
    Eval ev = evaluate(x_);
    res.ok = false;
    res.message = "iteration limit reached";
    res.iterations = opt_.max_iter;
    (void)delta_w_last;
    return finish(res, ev);
  }

 private:
  // ---- cached per-iterate evaluation ------------------------------------
  struct Eval {
    double f = 0.0;
    Eigen::VectorXd gf;
    Eigen::VectorXd ceqb, cinb;
    Eigen::MatrixXd Jeqb, Jinb;
    std::vector<Eigen::VectorXd> ceql, cinl, zeq;
    std::vector<Eigen::MatrixXd> Ab, Aw, Gb, Gw, Gz, Cb, Cw;
    Eigen::MatrixXd coupling;
    LagrangianHessian lh;
  };

  struct Step {
    Eigen::VectorXd dxb;
    std::vector<Eigen::VectorXd> dw;
    std::vector<Eigen::MatrixXd> dz;
    Eigen::VectorXd dnu_b, dlam_b, ds_b;
    std::vector<Eigen::VectorXd> dnu_l, dlam_l, ds_l;
    std::vector<Eigen::MatrixXd> dnu_z;
    Eigen::VectorXd dzl, dzu;
  };

  struct Errors {
    double stat = 0.0, eq = 0.0, ineq = 0.0, comp0 = 0.0, compmu = 0.0;
    double emu = 0.0, e0 = 0.0;
  };

  // ---- initialization ------------------------------------------------------
  void initialize(NlpPoint start, const NlpMultipliers* warm) {
    x_ = std::move(start);
    if (x_.base.size() != nb_) throw ValidationError("start point: bad base size");
    if (static_cast<int>(x_.w.size()) != L_)
      throw ValidationError("start point: bad line block count");
    mu_ = opt_.mu_init;
    penalty_ = 10.0;

    push_interior(x_.base, lo_base_, up_base_);
    for (int l = 0; l < L_; ++l)
      push_interior(x_.w[static_cast<std::size_t>(l)], lo_w_[static_cast<std::size_t>(l)],
                    up_w_[static_cast<std::size_t>(l)]);

    mult_ = zero_multipliers(nlp_);
    if (warm) {
      if (warm->eq_base.size() == meq_) mult_.eq_base = warm->eq_base;
      if (warm->ineq_base.size() == min_)
        mult_.ineq_base = warm->ineq_base.cwiseMax(1e-8).cwiseMin(1e8);
      for (int l = 0; l < L_; ++l) {
        const auto sl = static_cast<std::size_t>(l);
        if (sl < warm->eq_line.size() && warm->eq_line[sl].size() == d_ + 1)
          mult_.eq_line[sl] = warm->eq_line[sl];
        if (sl < warm->ineq_line.size() && warm->ineq_line[sl].size() == 2)
          mult_.ineq_line[sl] = warm->ineq_line[sl].cwiseMax(1e-8).cwiseMin(1e8);
        if (sl < warm->zeq.size() && warm->zeq[sl].rows() == d_ &&
            warm->zeq[sl].cols() == ranks_[sl])
          mult_.zeq[sl] = warm->zeq[sl];
      }
    }

    // slacks from the initial constraint values
    const auto init_slack = [this](const Eigen::VectorXd& c) {
      Eigen::VectorXd s(c.size());
      for (long i = 0; i < c.size(); ++i) s(i) = std::max(-c(i), opt_.slack_floor);
      return s;
    };
    s_b_ = init_slack(nlp_.ineq_base(x_));
    s_l_.clear();
    for (int l = 0; l < L_; ++l) s_l_.push_back(init_slack(nlp_.ineq_line(x_, l)));
    if (!warm || warm->ineq_base.size() != min_)
      for (long i = 0; i < s_b_.size(); ++i)
        mult_.ineq_base(i) = std::min(mu_ / s_b_(i), 1e4);
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      if (!warm || sl >= warm->ineq_line.size())
        for (int i = 0; i < 2; ++i)
          mult_.ineq_line[sl](i) = std::min(mu_ / s_l_[sl](i), 1e4);
    }

    // bound multipliers
    zl_ = Eigen::VectorXd::Zero(nbound_);
    zu_ = Eigen::VectorXd::Zero(nbound_);
    for_each_bound([this](long k, double x, double lo, double up) {
      if (lo > -BlockNlp::kInf) zl_(k) = std::min(mu_ / (x - lo), 1e3);
      if (up < BlockNlp::kInf) zu_(k) = std::min(mu_ / (up - x), 1e3);
    });
  }

  void push_interior(Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                     const Eigen::VectorXd& up) const {
    for (long i = 0; i < x.size(); ++i) {
      const bool has_lo = lo(i) > -BlockNlp::kInf, has_up = up(i) < BlockNlp::kInf;
      if (has_lo && has_up) {
        const double pad = opt_.bound_frac * (up(i) - lo(i));
        if (up(i) - lo(i) <= 0.0)
          throw ValidationError("empty bound interval in start point");
        x(i) = std::min(std::max(x(i), lo(i) + pad), up(i) - pad);
      } else if (has_lo) {
        x(i) = std::max(x(i), lo(i) + 1e-9 * std::max(1.0, std::abs(lo(i))));
      } else if (has_up) {
        x(i) = std::min(x(i), up(i) - 1e-9 * std::max(1.0, std::abs(up(i))));
      }
    }
  }

  // visit every bounded coordinate with its stacked index
  template <typename F>
  void for_each_bound(F&& f) const {
    for (long i = 0; i < nb_; ++i) f(i, x_.base(i), lo_base_(i), up_base_(i));
    long off = nb_;
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      for (long i = 0; i <= d_; ++i)
        f(off + i, x_.w[sl](i), lo_w_[sl](i), up_w_[sl](i));
      off += d_ + 1;
    }
  }

  // ---- evaluation -----------------------------------------------------------
  Eval evaluate(const NlpPoint& p) const {
    Eval ev;
    ev.f = nlp_.objective(p);
    ev.gf = nlp_.objective_gradient(p);
    ev.ceqb = nlp_.eq_base(p);
    ev.cinb = nlp_.ineq_base(p);
    ev.Jeqb = nlp_.jac_eq_base(p);
    ev.Jinb = nlp_.jac_ineq_base(p);
    for (int l = 0; l < L_; ++l) {
      ev.ceql.push_back(nlp_.eq_line(p, l));
      ev.cinl.push_back(nlp_.ineq_line(p, l));
      ev.zeq.push_back(nlp_.zeq_line(p, l));
      ev.Ab.push_back(nlp_.jac_eq_line_base(p, l));
      ev.Aw.push_back(nlp_.jac_eq_line_w(p, l));
      ev.Gb.push_back(nlp_.jac_ineq_line_base(p, l));
      ev.Gw.push_back(nlp_.jac_ineq_line_w(p, l));
      ev.Gz.push_back(nlp_.jac_ineq_line_z(p, l));
      ev.Cb.push_back(nlp_.jac_zeq_base(p, l));
      ev.Cw.push_back(nlp_.jac_zeq_w(p, l));
    }
    if (L_ > 0) ev.coupling = nlp_.coupling(p);
    ev.lh = nlp_.lagrangian_hessian(p, mult_, 1.0);
    return ev;
  }

  // stationarity residuals (gradient of the barrier Lagrangian)
  Eigen::VectorXd resid_x(const Eval& ev) const {
    Eigen::VectorXd r = ev.gf;
    r += ev.Jeqb.transpose() * mult_.eq_base;
    if (min_ > 0) r += ev.Jinb.transpose() * mult_.ineq_base;
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      r += ev.Ab[sl].transpose() * mult_.eq_line[sl];
      r += ev.Gb[sl].transpose() * mult_.ineq_line[sl];
      const Eigen::VectorXd nu_flat = Eigen::Map<const Eigen::VectorXd>(
          mult_.zeq[sl].data(), mult_.zeq[sl].size());
      r += ev.Cb[sl].transpose() * nu_flat;
    }
    r -= zl_.head(nb_);
    r += zu_.head(nb_);
    return r;
  }

  Eigen::VectorXd resid_w(const Eval& ev, int l) const {
    const auto sl = static_cast<std::size_t>(l);
    Eigen::VectorXd r = ev.Aw[sl].transpose() * mult_.eq_line[sl];
    r += ev.Gw[sl].transpose() * mult_.ineq_line[sl];
    const Eigen::VectorXd nu_flat =
        Eigen::Map<const Eigen::VectorXd>(mult_.zeq[sl].data(), mult_.zeq[sl].size());
    r += ev.Cw[sl].transpose() * nu_flat;
    const long off = nb_ + static_cast<long>(l) * (d_ + 1);
    r -= zl_.segment(off, d_ + 1);
    r += zu_.segment(off, d_ + 1);
    return r;
  }

  // flattened Z-stationarity residual for line l
  Eigen::VectorXd resid_z(const Eval& ev, int l) const {
    const auto sl = static_cast<std::size_t>(l);
    const int r = ranks_[sl];
    Eigen::MatrixXd rz = ev.coupling * mult_.zeq[sl];
    const std::vector<int>& rows = rows_[sl];
    const int pl = static_cast<int>(rows.size());
    for (int c = 0; c < r; ++c)
      for (int k = 0; k < pl; ++k)
        rz(rows[static_cast<std::size_t>(k)], c) +=
            ev.Gz[sl].col(c * pl + k).dot(mult_.ineq_line[sl]);
    return Eigen::Map<const Eigen::VectorXd>(rz.data(), rz.size());
  }

  // ---- scaled optimality errors ---------------------------------------------
  Errors errors(const Eval& ev) const {
    Errors e;
    // unscaled residuals: accepted solutions must satisfy the raw
    // stationarity / feasibility / complementarity tolerances, so no
    // multiplier-magnitude rescaling is applied to the convergence test
    const double sd = 1.0, sc = 1.0;

    e.stat = resid_x(ev).lpNorm<Eigen::Infinity>();
    for (int l = 0; l < L_; ++l) {
      e.stat = std::max(e.stat, resid_w(ev, l).lpNorm<Eigen::Infinity>());
      e.stat = std::max(e.stat, resid_z(ev, l).lpNorm<Eigen::Infinity>());
    }
    e.eq = ev.ceqb.lpNorm<Eigen::Infinity>();
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      e.eq = std::max(e.eq, ev.ceql[sl].lpNorm<Eigen::Infinity>());
      e.eq = std::max(e.eq, ev.zeq[sl].lpNorm<Eigen::Infinity>());
    }
    e.ineq = (min_ > 0) ? (ev.cinb + s_b_).lpNorm<Eigen::Infinity>() : 0.0;
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      e.ineq = std::max(e.ineq, (ev.cinl[sl] + s_l_[sl]).lpNorm<Eigen::Infinity>());
    }

    double c0 = 0.0, cmu = 0.0;
    const auto comp = [&c0, &cmu, this](double prod) {
      c0 = std::max(c0, std::abs(prod));
      cmu = std::max(cmu, std::abs(prod - mu_));
    };
    for (long i = 0; i < s_b_.size(); ++i) comp(s_b_(i) * mult_.ineq_base(i));
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      for (int i = 0; i < 2; ++i) comp(s_l_[sl](i) * mult_.ineq_line[sl](i));
    }
    for_each_bound([&](long k, double x, double lo, double up) {
      if (lo > -BlockNlp::kInf) comp((x - lo) * zl_(k));
      if (up < BlockNlp::kInf) comp((up - x) * zu_(k));
    });
    e.comp0 = c0 / sc;
    e.compmu = cmu / sc;
    const double feas = std::max(e.eq, e.ineq);
    e.e0 = std::max(std::max(e.stat / sd, feas), e.comp0);
    e.emu = std::max(std::max(e.stat / sd, feas), e.compmu);
    return e;
  }

  // ---- KKT assembly and structured solve -------------------------------------
  // Precomputed per-line elimination data (independent of delta_w).
  struct LineElim {
    Eigen::MatrixXd Tb, Tw;        // dr x nb, dr x (d+1)
    Eigen::VectorXd t24, rz;       // dr
    Eigen::MatrixXd Tb_loc, Tw_loc;  // pr x nb, pr x (d+1)
    Eigen::MatrixXd dHbb, dHbw, dHww;
    Eigen::MatrixXd Gb_mod, Gw_mod;  // 2 x nb, 2 x (d+1)
    Eigen::VectorXd drhs_x, drhs_w;
    Eigen::Vector2d drhs_lam;
  };

  void solve_kkt(const Eval& ev, Step& st, double& delta_w_used) {
    // factor the coupling matrix (shared across line blocks)
    SymIndefSolver bfac;
    if (L_ > 0) {
      Eigen::MatrixXd b = ev.coupling;
      double jitter = 0.0;
      const double scale = std::max(1.0, b.lpNorm<Eigen::Infinity>());
      while (true) {
        if (bfac.factorize(b) && !bfac.singular()) break;
        jitter = (jitter == 0.0) ? 1e-12 * scale : jitter * 100.0;
        if (jitter > 1e-2 * scale)
          throw NumericError("coupling matrix could not be factored");
        b = ev.coupling + jitter * Eigen::MatrixXd::Identity(d_, d_);
      }
    }

    // per-line elimination of (Z, nu_z)
    std::vector<LineElim> elim(static_cast<std::size_t>(L_));
    {
      std::atomic<int> next{0};
      const int workers = std::max(1, std::min(opt_.threads, L_ == 0 ? 1 : L_));
      const auto work = [&]() {
        while (true) {
          const int l = next.fetch_add(1);
          if (l >= L_) break;
          elim[static_cast<std::size_t>(l)] = eliminate_line(ev, bfac, l);
        }
      };
      if (workers <= 1) {
        work();
      } else {
        std::vector<std::thread> ts;
        for (int t = 0; t < workers; ++t) ts.emplace_back(work);
        for (auto& t : ts) t.join();
      }
    }

    // residual vectors
    const Eigen::VectorXd rx = resid_x(ev);
    std::vector<Eigen::VectorXd> rw;
    for (int l = 0; l < L_; ++l) rw.push_back(resid_w(ev, l));

    const int gb = nb_ + meq_ + min_;
    const int gl = 2 * (d_ + 1) + 2;

    // delta-independent parts of the base block
    Eigen::MatrixXd K0 = Eigen::MatrixXd::Zero(gb, gb);
    K0.topLeftCorner(nb_, nb_) = ev.lh.bb;
    for (int l = 0; l < L_; ++l)
      K0.topLeftCorner(nb_, nb_) += elim[static_cast<std::size_t>(l)].dHbb;
    for_each_bound([&](long k, double x, double lo, double up) {
      if (k >= nb_) return;
      double add = 0.0;
      if (lo > -BlockNlp::kInf) add += zl_(k) / (x - lo);
      if (up < BlockNlp::kInf) add += zu_(k) / (up - x);
      K0(k, k) += add;
    });
    K0.block(nb_, 0, meq_, nb_) = ev.Jeqb;
    K0.block(0, nb_, nb_, meq_) = ev.Jeqb.transpose();
    if (min_ > 0) {
      K0.block(nb_ + meq_, 0, min_, nb_) = ev.Jinb;
      K0.block(0, nb_ + meq_, nb_, min_) = ev.Jinb.transpose();
      for (long i = 0; i < min_; ++i)
        K0(nb_ + meq_ + i, nb_ + meq_ + i) = -s_b_(i) / mult_.ineq_base(i);
    }

    Eigen::VectorXd rhs_b(gb);
    rhs_b.head(nb_) = -rx;
    // condensed rows carry the primal barrier gradient: replace the
    // multiplier estimates z by mu/dist so the step is a descent
    // direction for the barrier merit function
    for_each_bound([&](long k, double x, double lo, double up) {
      if (k >= nb_) return;
      if (lo > -BlockNlp::kInf) rhs_b(k) += mu_ / (x - lo) - zl_(k);
      if (up < BlockNlp::kInf) rhs_b(k) -= mu_ / (up - x) - zu_(k);
    });
    for (int l = 0; l < L_; ++l)
      rhs_b.head(nb_) += elim[static_cast<std::size_t>(l)].drhs_x;
    rhs_b.segment(nb_, meq_) = -ev.ceqb;
    for (long i = 0; i < min_; ++i)
      rhs_b(nb_ + meq_ + i) = -(ev.cinb(i) + mu_ / mult_.ineq_base(i));

    // per-line delta-independent blocks
    std::vector<Eigen::MatrixXd> Kl0(static_cast<std::size_t>(L_));
    std::vector<Eigen::MatrixXd> Mlb(static_cast<std::size_t>(L_));  // gl x nb
    std::vector<Eigen::VectorXd> rhs_l(static_cast<std::size_t>(L_));
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      const LineElim& el = elim[sl];
      Eigen::MatrixXd K(gl, gl);
      K.setZero();
      K.topLeftCorner(d_ + 1, d_ + 1) = ev.lh.ww[sl] + el.dHww;
      const long off = nb_ + static_cast<long>(l) * (d_ + 1);
      for (long i = 0; i <= d_; ++i) {
        double add = 0.0;
        const double lo = lo_w_[sl](i), up = up_w_[sl](i);
        if (lo > -BlockNlp::kInf) add += zl_(off + i) / (x_.w[sl](i) - lo);
        if (up < BlockNlp::kInf) add += zu_(off + i) / (up - x_.w[sl](i));
        K(i, i) += add;
      }
      K.block(d_ + 1, 0, d_ + 1, d_ + 1) = ev.Aw[sl];
      K.block(0, d_ + 1, d_ + 1, d_ + 1) = ev.Aw[sl].transpose();
      K.block(2 * (d_ + 1), 0, 2, d_ + 1) = el.Gw_mod;
      K.block(0, 2 * (d_ + 1), d_ + 1, 2) = el.Gw_mod.transpose();
      for (int i = 0; i < 2; ++i)
        K(2 * (d_ + 1) + i, 2 * (d_ + 1) + i) = -s_l_[sl](i) / mult_.ineq_line[sl](i);
      Kl0[sl] = std::move(K);

      Eigen::MatrixXd M(gl, nb_);
      M.setZero();
      M.topRows(d_ + 1) = (ev.lh.bw[sl] + el.dHbw).transpose();
      M.middleRows(d_ + 1, d_ + 1) = ev.Ab[sl];
      M.bottomRows(2) = el.Gb_mod;
      Mlb[sl] = std::move(M);

      Eigen::VectorXd r(gl);
      r.head(d_ + 1) = -rw[sl] + el.drhs_w;
      for (long i = 0; i <= d_; ++i) {
        const double lo = lo_w_[sl](i), up = up_w_[sl](i);
        if (lo > -BlockNlp::kInf)
          r(i) += mu_ / (x_.w[sl](i) - lo) - zl_(off + i);
        if (up < BlockNlp::kInf)
          r(i) -= mu_ / (up - x_.w[sl](i)) - zu_(off + i);
      }
      r.segment(d_ + 1, d_ + 1) = -ev.ceql[sl];
      for (int i = 0; i < 2; ++i)
        r(2 * (d_ + 1) + i) =
            -(ev.cinl[sl](i) + mu_ / mult_.ineq_line[sl](i)) + el.drhs_lam(i);
      rhs_l[sl] = std::move(r);
    }

    // inertia-corrected factorization loop
    const long want_neg = meq_ + min_ + static_cast<long>(L_) * (d_ + 3);
    const long want_pos = nb_ + static_cast<long>(L_) * (d_ + 1);
    double delta_w = 0.0, delta_c = 0.0;
    std::vector<SymIndefSolver> lfac(static_cast<std::size_t>(L_));
    std::vector<Eigen::MatrixXd> Y(static_cast<std::size_t>(L_));
    SymIndefSolver bbfac;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 40) throw NumericError("inertia correction failed");
      bool singular = false, wrong = false;
      long got_neg = 0, got_pos = 0;

      Eigen::MatrixXd Kbb = K0;
      Eigen::VectorXd rb = rhs_b;
      Kbb.topLeftCorner(nb_, nb_).diagonal().array() += delta_w;
      Kbb.bottomRightCorner(meq_ + min_, meq_ + min_).diagonal().array() -= delta_c;

      for (int l = 0; l < L_ && !singular; ++l) {
        const auto sl = static_cast<std::size_t>(l);
        Eigen::MatrixXd K = Kl0[sl];
        K.topLeftCorner(d_ + 1, d_ + 1).diagonal().array() += delta_w;
        K.bottomRightCorner(d_ + 3, d_ + 3).diagonal().array() -= delta_c;
        if (!lfac[sl].factorize(K) || lfac[sl].singular()) {
          singular = true;
          break;
        }
        const auto in = lfac[sl].inertia();
        got_neg += in.negative;
        got_pos += in.positive;
        Eigen::MatrixXd rhs_all(gl, nb_ + 1);
        rhs_all.leftCols(nb_) = Mlb[sl];
        rhs_all.col(nb_) = rhs_l[sl];
        Y[sl] = lfac[sl].solve(rhs_all);
        Kbb.topLeftCorner(nb_, nb_).noalias() -=
            Mlb[sl].transpose() * Y[sl].leftCols(nb_);
        rb.head(nb_).noalias() -= Mlb[sl].transpose() * Y[sl].col(nb_);
      }
      if (!singular) {
        if (!bbfac.factorize(Kbb) || bbfac.singular()) {
          singular = true;
        } else {
          const auto in = bbfac.inertia();
          got_neg += in.negative;
          got_pos += in.positive;
          wrong = (got_neg != want_neg) || (got_pos != want_pos);
        }
      }
      if (!singular && !wrong) {
        delta_w_used = delta_w;
        // back-substitution
        const Eigen::VectorXd ub = bbfac.solve(rb);
        st.dxb = ub.head(nb_);
        st.dnu_b = ub.segment(nb_, meq_);
        st.dlam_b = ub.tail(min_);
        st.dw.assign(static_cast<std::size_t>(L_), Eigen::VectorXd());
        st.dnu_l.assign(static_cast<std::size_t>(L_), Eigen::VectorXd());
        st.dlam_l.assign(static_cast<std::size_t>(L_), Eigen::VectorXd());
        st.dz.assign(static_cast<std::size_t>(L_), Eigen::MatrixXd());
        st.dnu_z.assign(static_cast<std::size_t>(L_), Eigen::MatrixXd());
        for (int l = 0; l < L_; ++l) {
          const auto sl = static_cast<std::size_t>(l);
          const Eigen::VectorXd ul = Y[sl].col(nb_) - Y[sl].leftCols(nb_) * st.dxb;
          st.dw[sl] = ul.head(d_ + 1);
          st.dnu_l[sl] = ul.segment(d_ + 1, d_ + 1);
          st.dlam_l[sl] = ul.tail(2);
          recover_z(ev, bfac, elim[sl], l, st);
        }
        ds_and_dz(ev, st);
        return;
      }
      if (singular) delta_c = 1e-8;
      delta_w = (delta_w == 0.0) ? 1e-8 : delta_w * 100.0;
      if (delta_w > 1e24) throw NumericError("inertia correction failed");
    }
  }

  // exact elimination data for line l (see header comment)
  LineElim eliminate_line(const Eval& ev, const SymIndefSolver& bfac, int l) const {
    const auto sl = static_cast<std::size_t>(l);
    const int r = ranks_[sl];
    const std::vector<int>& rows = rows_[sl];
    const int pl = static_cast<int>(rows.size());
    const long dr = static_cast<long>(d_) * r;

    LineElim el;
    el.rz = resid_z(ev, l);

    // T = (I (x) B)^{-1} C, applied block-row-wise
    const auto block_solve = [&](const Eigen::MatrixXd& c) {
      Eigen::MatrixXd t(c.rows(), c.cols());
      for (int blk = 0; blk < r; ++blk)
        t.middleRows(static_cast<long>(blk) * d_, d_) =
            bfac.solve(Eigen::MatrixXd(c.middleRows(static_cast<long>(blk) * d_, d_)));
      return t;
    };
    el.Tb = block_solve(ev.Cb[sl]);
    el.Tw = block_solve(ev.Cw[sl]);
    {
      Eigen::MatrixXd t24m(d_, r);
      for (int blk = 0; blk < r; ++blk)
        t24m.col(blk) = bfac.solve(
            Eigen::VectorXd(ev.zeq[sl].segment(static_cast<long>(blk) * d_, d_)));
      el.t24 = Eigen::Map<const Eigen::VectorXd>(t24m.data(), dr);
    }

    // local-row extracts (flat index c*d + rows[k], local column c*p + k)
    const auto extract_local = [&](const Eigen::MatrixXd& m) {
      Eigen::MatrixXd out(static_cast<long>(pl) * r, m.cols());
      for (int c = 0; c < r; ++c)
        for (int k = 0; k < pl; ++k)
          out.row(static_cast<long>(c) * pl + k) =
              m.row(static_cast<long>(c) * d_ + rows[static_cast<std::size_t>(k)]);
      return out;
    };
    el.Tb_loc = extract_local(el.Tb);
    el.Tw_loc = extract_local(el.Tw);
    Eigen::VectorXd t24_loc(static_cast<long>(pl) * r);
    for (int c = 0; c < r; ++c)
      for (int k = 0; k < pl; ++k)
        t24_loc(static_cast<long>(c) * pl + k) =
            el.t24(static_cast<long>(c) * d_ + rows[static_cast<std::size_t>(k)]);

    const Eigen::MatrixXd& bz = ev.lh.bz[sl];        // nb x dr
    const Eigen::MatrixXd& wz = ev.lh.wz_local[sl];  // (d+1) x pr
    const Eigen::MatrixXd& zz = ev.lh.zz_local[sl];  // pr x pr
    const Eigen::MatrixXd& gz = ev.Gz[sl];           // 2 x pr

    el.dHbb = -bz * el.Tb;
    el.dHbb += el.dHbb.transpose().eval();
    el.dHbb.noalias() += el.Tb_loc.transpose() * zz * el.Tb_loc;

    el.dHbw = -bz * el.Tw;
    el.dHbw.noalias() -= el.Tb_loc.transpose() * wz.transpose();
    el.dHbw.noalias() += el.Tb_loc.transpose() * zz * el.Tw_loc;

    el.dHww = -wz * el.Tw_loc;
    el.dHww += el.dHww.transpose().eval();
    el.dHww.noalias() += el.Tw_loc.transpose() * zz * el.Tw_loc;

    el.Gb_mod = ev.Gb[sl] - gz * el.Tb_loc;
    el.Gw_mod = ev.Gw[sl] - gz * el.Tw_loc;

    const Eigen::VectorXd zz_t24 = zz * t24_loc;
    el.drhs_x = bz * el.t24 + el.Tb.transpose() * el.rz - el.Tb_loc.transpose() * zz_t24;
    el.drhs_w =
        wz * t24_loc + el.Tw.transpose() * el.rz - el.Tw_loc.transpose() * zz_t24;
    el.drhs_lam = gz * t24_loc;
    return el;
  }

  void recover_z(const Eval& ev, const SymIndefSolver& bfac, const LineElim& el, int l,
                 Step& st) const {
    const auto sl = static_cast<std::size_t>(l);
    const int r = ranks_[sl];
    const std::vector<int>& rows = rows_[sl];
    const int pl = static_cast<int>(rows.size());

    const Eigen::VectorXd dz_flat = -el.t24 - el.Tb * st.dxb - el.Tw * st.dw[sl];
    st.dz[sl] = Eigen::Map<const Eigen::MatrixXd>(dz_flat.data(), d_, r);

    // q = r_z + W_zb dx + W_zw dw + G_z' dlam + W_zz dz   (local scatters)
    Eigen::VectorXd q = el.rz;
    q.noalias() += ev.lh.bz[sl].transpose() * st.dxb;
    Eigen::VectorXd dz_loc(static_cast<long>(pl) * r);
    for (int c = 0; c < r; ++c)
      for (int k = 0; k < pl; ++k)
        dz_loc(static_cast<long>(c) * pl + k) =
            dz_flat(static_cast<long>(c) * d_ + rows[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd local_add = ev.lh.wz_local[sl].transpose() * st.dw[sl] +
                                      ev.Gz[sl].transpose() * st.dlam_l[sl] +
                                      ev.lh.zz_local[sl] * dz_loc;
    for (int c = 0; c < r; ++c)
      for (int k = 0; k < pl; ++k)
        q(static_cast<long>(c) * d_ + rows[static_cast<std::size_t>(k)]) +=
            local_add(static_cast<long>(c) * pl + k);
    Eigen::MatrixXd dnu(d_, r);
    for (int blk = 0; blk < r; ++blk)
      dnu.col(blk) =
          -bfac.solve(Eigen::VectorXd(q.segment(static_cast<long>(blk) * d_, d_)));
    st.dnu_z[sl] = dnu;
  }

  void ds_and_dz(const Eval& ev, Step& st) const {
    st.ds_b.resize(s_b_.size());
    for (long i = 0; i < s_b_.size(); ++i)
      st.ds_b(i) = mu_ / mult_.ineq_base(i) - s_b_(i) -
                   s_b_(i) / mult_.ineq_base(i) * st.dlam_b(i);
    st.ds_l.assign(static_cast<std::size_t>(L_), Eigen::VectorXd());
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      st.ds_l[sl].resize(2);
      for (int i = 0; i < 2; ++i)
        st.ds_l[sl](i) = mu_ / mult_.ineq_line[sl](i) - s_l_[sl](i) -
                         s_l_[sl](i) / mult_.ineq_line[sl](i) * st.dlam_l[sl](i);
    }
    (void)ev;
    st.dzl = Eigen::VectorXd::Zero(nbound_);
    st.dzu = Eigen::VectorXd::Zero(nbound_);
    for_each_bound([&](long k, double x, double lo, double up) {
      const double dx = step_coord(st, k);
      if (lo > -BlockNlp::kInf)
        st.dzl(k) = mu_ / (x - lo) - zl_(k) - zl_(k) / (x - lo) * dx;
      if (up < BlockNlp::kInf)
        st.dzu(k) = mu_ / (up - x) - zu_(k) + zu_(k) / (up - x) * dx;
    });
  }

  double step_coord(const Step& st, long k) const {
    if (k < nb_) return st.dxb(k);
    const long j = k - nb_;
    const int l = static_cast<int>(j / (d_ + 1));
    return st.dw[static_cast<std::size_t>(l)](j % (d_ + 1));
  }

  // ---- step sizes -------------------------------------------------------------
  double max_primal_step(const Step& st, double tau) const {
    double a = 1.0;
    const auto limit = [&a, tau](double v, double dv) {
      if (dv < 0.0) a = std::min(a, -tau * v / dv);
    };
    for (long i = 0; i < s_b_.size(); ++i) limit(s_b_(i), st.ds_b(i));
    for (int l = 0; l < L_; ++l)
      for (int i = 0; i < 2; ++i)
        limit(s_l_[static_cast<std::size_t>(l)](i),
              st.ds_l[static_cast<std::size_t>(l)](i));
    for_each_bound([&](long k, double x, double lo, double up) {
      const double dx = step_coord(st, k);
      if (lo > -BlockNlp::kInf) limit(x - lo, dx);
      if (up < BlockNlp::kInf) limit(up - x, -dx);
    });
    return a;
  }

  double dual_step(const Step& st, double tau) const {
    double a = 1.0;
    const auto limit = [&a, tau](double v, double dv) {
      if (dv < 0.0) a = std::min(a, -tau * v / dv);
    };
    for (long i = 0; i < mult_.ineq_base.size(); ++i)
      limit(mult_.ineq_base(i), st.dlam_b(i));
    for (int l = 0; l < L_; ++l)
      for (int i = 0; i < 2; ++i)
        limit(mult_.ineq_line[static_cast<std::size_t>(l)](i),
              st.dlam_l[static_cast<std::size_t>(l)](i));
    for (long k = 0; k < nbound_; ++k) {
      limit(zl_(k) > 0.0 ? zl_(k) : 1.0, zl_(k) > 0.0 ? st.dzl(k) : 0.0);
      limit(zu_(k) > 0.0 ? zu_(k) : 1.0, zu_(k) > 0.0 ? st.dzu(k) : 0.0);
    }
    return a;
  }

  // ---- merit line search ---------------------------------------------------
  struct TrialEval {
    double f = 0.0;
    double constr_l1 = 0.0;  // all equalities plus c_in + s
    double barrier = 0.0;
    bool valid = false;
  };

  TrialEval trial(const NlpPoint& p, const Eigen::VectorXd& sb,
                  const std::vector<Eigen::VectorXd>& sl) const {
    TrialEval t;
    try {
      t.f = nlp_.objective(p);
      double l1 = nlp_.eq_base(p).lpNorm<1>();
      if (min_ > 0) l1 += (nlp_.ineq_base(p) + sb).lpNorm<1>();
      for (int l = 0; l < L_; ++l) {
        const auto s = static_cast<std::size_t>(l);
        l1 += nlp_.eq_line(p, l).lpNorm<1>();
        l1 += nlp_.zeq_line(p, l).lpNorm<1>();
        l1 += (nlp_.ineq_line(p, l) + sl[s]).lpNorm<1>();
      }
      t.constr_l1 = l1;
      double bar = 0.0;
      for (long i = 0; i < sb.size(); ++i) {
        if (sb(i) <= 0.0) return t;
        bar -= std::log(sb(i));
      }
      for (int l = 0; l < L_; ++l)
        for (int i = 0; i < 2; ++i) {
          if (sl[static_cast<std::size_t>(l)](i) <= 0.0) return t;
          bar -= std::log(sl[static_cast<std::size_t>(l)](i));
        }
      bool ok = true;
      const auto bound_bar = [&bar, &ok](const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& lo,
                                         const Eigen::VectorXd& up) {
        for (long i = 0; i < x.size(); ++i) {
          if (lo(i) > -BlockNlp::kInf) {
            if (x(i) - lo(i) <= 0.0) {
              ok = false;
              return;
            }
            bar -= std::log(x(i) - lo(i));
          }
          if (up(i) < BlockNlp::kInf) {
            if (up(i) - x(i) <= 0.0) {
              ok = false;
              return;
            }
            bar -= std::log(up(i) - x(i));
          }
        }
      };
      bound_bar(p.base, lo_base_, up_base_);
      for (int l = 0; l < L_ && ok; ++l)
        bound_bar(p.w[static_cast<std::size_t>(l)], lo_w_[static_cast<std::size_t>(l)],
                  up_w_[static_cast<std::size_t>(l)]);
      if (!ok) return t;
      t.barrier = bar;
      t.valid = std::isfinite(t.f) && std::isfinite(t.constr_l1) &&
                std::isfinite(t.barrier);
    } catch (const std::exception&) {
      t.valid = false;
    }
    return t;
  }

  NlpPoint advance(const Step& st, double a) const {
    NlpPoint p = x_;
    p.base += a * st.dxb;
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      p.w[sl] += a * st.dw[sl];
      p.z[sl] += a * st.dz[sl];
    }
    return p;
  }

  double line_search(const Eval& ev, const Step& st, double amax, int& steps) {
    // current merit pieces
    TrialEval cur = trial(x_, s_b_, s_l_);
    if (!cur.valid) throw NumericError("merit function invalid at iterate");

    // directional derivative of the barrier part
    double dbar = 0.0;
    for (long i = 0; i < s_b_.size(); ++i) dbar -= st.ds_b(i) / s_b_(i);
    for (int l = 0; l < L_; ++l)
      for (int i = 0; i < 2; ++i)
        dbar -= st.ds_l[static_cast<std::size_t>(l)](i) /
                s_l_[static_cast<std::size_t>(l)](i);
    for_each_bound([&](long k, double x, double lo, double up) {
      const double dx = step_coord(st, k);
      if (lo > -BlockNlp::kInf) dbar -= dx / (x - lo);
      if (up < BlockNlp::kInf) dbar += dx / (up - x);
    });
    double dobj = ev.gf.dot(st.dxb);
    double ddir = dobj + mu_ * dbar;

    // exact penalty weight: enough to dominate the directional derivative
    if (cur.constr_l1 > 1e-14) {
      const double need = ddir / (0.5 * cur.constr_l1);
      if (need > penalty_) penalty_ = std::min(opt_.penalty_cap, 1.1 * need);
    }
    double dphi = ddir - penalty_ * cur.constr_l1;
    if (dphi > 0.0 && cur.constr_l1 > 1e-14) {
      penalty_ = std::min(opt_.penalty_cap, penalty_ * 10.0);
      dphi = ddir - penalty_ * cur.constr_l1;
    }
    const double phi0 = cur.f + mu_ * cur.barrier + penalty_ * cur.constr_l1;

    double a = amax;
    steps = 0;
    while (a >= opt_.alpha_min) {
      ++steps;
      Eigen::VectorXd sb = s_b_ + a * st.ds_b;
      std::vector<Eigen::VectorXd> sl;
      for (int l = 0; l < L_; ++l)
        sl.push_back(s_l_[static_cast<std::size_t>(l)] +
                     a * st.ds_l[static_cast<std::size_t>(l)]);
      const TrialEval te = trial(advance(st, a), sb, sl);
      if (te.valid) {
        const double phi = te.f + mu_ * te.barrier + penalty_ * te.constr_l1;
        if (phi <= phi0 + opt_.armijo * a * dphi) return a;
      }
      a *= 0.5;
    }
    throw ConvergenceError("line search failed (step below minimum)");
  }

  void apply_step(const Step& st, double apr, double adu) {
    x_ = advance(st, apr);
    s_b_ += apr * st.ds_b;
    for (int l = 0; l < L_; ++l)
      s_l_[static_cast<std::size_t>(l)] += apr * st.ds_l[static_cast<std::size_t>(l)];
    mult_.eq_base += apr * st.dnu_b;
    mult_.ineq_base += adu * st.dlam_b;
    for (int l = 0; l < L_; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      mult_.eq_line[sl] += apr * st.dnu_l[sl];
      mult_.ineq_line[sl] += adu * st.dlam_l[sl];
      mult_.zeq[sl] += apr * st.dnu_z[sl];
    }
    zl_ += adu * st.dzl;
    zu_ += adu * st.dzu;
    // keep bound multipliers within a large primal-dual box around mu/dist
    const double ks = 1e10;
    for_each_bound([&](long k, double x, double lo, double up) {
      if (lo > -BlockNlp::kInf)
        zl_(k) = std::min(std::max(zl_(k), mu_ / (ks * (x - lo))), ks * mu_ / (x - lo));
      if (up < BlockNlp::kInf)
        zu_(k) = std::min(std::max(zu_(k), mu_ / (ks * (up - x))), ks * mu_ / (up - x));
    });
  }

  IpmResult finish(IpmResult res, const Eval& ev) {
    res.objective = ev.f;
    res.point = x_;
    res.mult = mult_;
    res.slack_base = s_b_;
    res.slack_line = s_l_;
    res.z_lower = zl_;
    res.z_upper = zu_;
    res.kkt = kkt_residuals(nlp_, x_, mult_, zl_, zu_);
    return res;
  }

  const BlockNlp& nlp_;
  IpmOptions opt_;
  long nb_ = 0, meq_ = 0, min_ = 0;
  int L_ = 0, d_ = 0;
  long nbound_ = 0;
  Eigen::VectorXd lo_base_, up_base_;
  std::vector<Eigen::VectorXd> lo_w_, up_w_;
  std::vector<int> ranks_;
  std::vector<std::vector<int>> rows_;

  NlpPoint x_;
  NlpMultipliers mult_;
  Eigen::VectorXd s_b_;
  std::vector<Eigen::VectorXd> s_l_;
  Eigen::VectorXd zl_, zu_;
  double mu_ = 0.1;
  double penalty_ = 10.0;
};

}  // namespace fpopf
