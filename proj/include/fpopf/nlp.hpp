// Block-structured nonlinear program.
//
// The problems solved here share one shape: a BASE block of variables
// (network state and dispatch) carrying equality and inequality
// constraints, plus zero or more LINE blocks.  Line block l adds
//
//   w_l = (x*_l, mu_l)          auxiliary stationary point and multiplier,
//   Z_l  (d x r_l)              sensitivity columns,
//
// with equalities tying them to the base ((d+1) rows in eq_line and d*r_l
// rows in zeq_line, the latter of the special form  coupling(x) Z - Q = 0),
// and two scalar inequalities (a spectral-admissibility row and a
// failure-rate row).  Toy problems and the plain dispatch problem simply
// have no line blocks.
//
// All Jacobian and Hessian blocks are dense; the interior-point method
// exploits the coupling structure, not entry sparsity.  Objectives depend
// on the base block only.  Inequalities use the convention c(x) <= 0.
//
// Hessian cross blocks touching Z split in two: the zeq rows couple Z to
// the base densely (through third derivatives of the energy), while the
// inequality rows touch only the p*r "local" entries of Z singled out by
// z_local_rows(); the Hessian interface reflects that split.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fpopf/common.hpp"

namespace fpopf {

struct NlpPoint {
  Eigen::VectorXd base;
  std::vector<Eigen::VectorXd> w;   // per line block, size d+1 (x*, mu)
  std::vector<Eigen::MatrixXd> z;   // per line block, d x r
};

struct NlpMultipliers {
  Eigen::VectorXd eq_base;               // m_eq_base
  Eigen::VectorXd ineq_base;             // m_ineq_base, >= 0
  std::vector<Eigen::VectorXd> eq_line;  // per block, d+1
  std::vector<Eigen::VectorXd> ineq_line;  // per block, 2, >= 0
  std::vector<Eigen::MatrixXd> zeq;      // per block, d x r (one per zeq row)
};

// Hessian of the Lagrangian sigma_f * f + nu' c, written blockwise.
// z-flattening is column-major: entry (i, c) of Z_l sits at c*d + i.
struct LagrangianHessian {
  Eigen::MatrixXd bb;                    // n_base x n_base
  std::vector<Eigen::MatrixXd> bw;       // n_base x (d+1)
  std::vector<Eigen::MatrixXd> ww;       // (d+1) x (d+1)
  std::vector<Eigen::MatrixXd> bz;       // n_base x d*r (dense coupling)
  std::vector<Eigen::MatrixXd> wz_local; // (d+1) x p*r   (local Z entries)
  std::vector<Eigen::MatrixXd> zz_local; // p*r x p*r
};

class BlockNlp {
 public:
  virtual ~BlockNlp() = default;

  // ---- dimensions ------------------------------------------------------
  virtual int n_base() const = 0;
  virtual int m_eq_base() const = 0;
  virtual int m_ineq_base() const = 0;
  virtual int n_lines() const { return 0; }
  // shared row dimension of the coupling matrix and every Z block
  virtual int dim_coupling() const { return 0; }
  virtual int line_rank(int) const { throw ValidationError("no line blocks"); }
  // indices (into 0..dim_coupling) of the local rows of Z used by the
  // inequality rows of block l; size p_l
  virtual std::vector<int> z_local_rows(int) const {
    throw ValidationError("no line blocks");
  }

  int n_w(int) const { return dim_coupling() + 1; }

  // ---- bounds and start ------------------------------------------------
  virtual Eigen::VectorXd base_lower() const {
    return Eigen::VectorXd::Constant(n_base(), -kInf);
  }
  virtual Eigen::VectorXd base_upper() const {
    return Eigen::VectorXd::Constant(n_base(), kInf);
  }
  virtual Eigen::VectorXd w_lower(int l) const {
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(n_w(l), -kInf);
    lo(dim_coupling()) = 1e-12;  // the multiplier coordinate stays positive
    return lo;
  }
  virtual Eigen::VectorXd w_upper(int l) const {
    return Eigen::VectorXd::Constant(n_w(l), kInf);
  }
  virtual NlpPoint initial_point() const = 0;

  // ---- objective (base block only) --------------------------------------
  virtual double objective(const NlpPoint& p) const = 0;
  virtual Eigen::VectorXd objective_gradient(const NlpPoint& p) const = 0;

  // ---- base constraints --------------------------------------------------
  virtual Eigen::VectorXd eq_base(const NlpPoint& p) const = 0;
  virtual Eigen::VectorXd ineq_base(const NlpPoint& p) const = 0;
  virtual Eigen::MatrixXd jac_eq_base(const NlpPoint& p) const = 0;
  virtual Eigen::MatrixXd jac_ineq_base(const NlpPoint& p) const = 0;

  // ---- line-block constraints ---------------------------------------------
  virtual Eigen::VectorXd eq_line(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::MatrixXd jac_eq_line_base(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::MatrixXd jac_eq_line_w(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::VectorXd ineq_line(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::MatrixXd jac_ineq_line_base(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::MatrixXd jac_ineq_line_w(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  // 2 x p*r, derivatives with respect to the local Z entries
  virtual Eigen::MatrixXd jac_ineq_line_z(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }

  // zeq rows: coupling(base) * Z_l - Q_l(w_l, base) = 0, flattened
  // column-major (d*r rows).  The Jacobian with respect to Z itself is
  // I_r (x) coupling(base) by construction and is not exposed separately.
  virtual Eigen::VectorXd zeq_line(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::MatrixXd jac_zeq_base(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  virtual Eigen::MatrixXd jac_zeq_w(const NlpPoint&, int) const {
    throw ValidationError("no line blocks");
  }
  // the symmetric d x d matrix appearing in the zeq rows
  virtual Eigen::MatrixXd coupling(const NlpPoint&) const {
    throw ValidationError("no line blocks");
  }

  // ---- Lagrangian Hessian --------------------------------------------------
  virtual LagrangianHessian lagrangian_hessian(const NlpPoint& p,
                                               const NlpMultipliers& m,
                                               double sigma_f) const = 0;

  static constexpr double kInf = 1e30;
};

// Zero-initialized multiplier set shaped for a given problem.
inline NlpMultipliers zero_multipliers(const BlockNlp& nlp) {
  NlpMultipliers m;
  m.eq_base = Eigen::VectorXd::Zero(nlp.m_eq_base());
  m.ineq_base = Eigen::VectorXd::Zero(nlp.m_ineq_base());
  const int d = nlp.dim_coupling();
  for (int l = 0; l < nlp.n_lines(); ++l) {
    m.eq_line.push_back(Eigen::VectorXd::Zero(d + 1));
    m.ineq_line.push_back(Eigen::VectorXd::Zero(2));
    m.zeq.push_back(Eigen::MatrixXd::Zero(d, nlp.line_rank(l)));
  }
  return m;
}

// Infinity-norm KKT residuals of a candidate primal-dual solution,
// assembled directly from the problem's own Jacobians.  zl and zu are the
// bound multipliers for base and w blocks, stacked [base; w_0; w_1; ...].
struct KktResiduals {
  double stationarity = 0.0;   // gradient of the Lagrangian
  double eq = 0.0;             // equality violation
  double ineq = 0.0;           // inequality violation (positive part)
  double complementarity = 0.0;
  double overall() const {
    return std::max(std::max(stationarity, eq), std::max(ineq, complementarity));
  }
};

inline KktResiduals kkt_residuals(const BlockNlp& nlp, const NlpPoint& p,
                                  const NlpMultipliers& mult,
                                  const Eigen::VectorXd& zl,
                                  const Eigen::VectorXd& zu) {
  KktResiduals r;
  const int nb = nlp.n_base();
  const int d = nlp.dim_coupling();
  const int nl = nlp.n_lines();

  // stationarity, base block
  Eigen::VectorXd st = nlp.objective_gradient(p);
  st += nlp.jac_eq_base(p).transpose() * mult.eq_base;
  if (nlp.m_ineq_base() > 0)
    st += nlp.jac_ineq_base(p).transpose() * mult.ineq_base;
  for (int l = 0; l < nl; ++l) {
    st += nlp.jac_eq_line_base(p, l).transpose() * mult.eq_line[static_cast<std::size_t>(l)];
    st += nlp.jac_ineq_line_base(p, l).transpose() *
          mult.ineq_line[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd& nu_z = mult.zeq[static_cast<std::size_t>(l)];
    const Eigen::VectorXd nu_flat =
        Eigen::Map<const Eigen::VectorXd>(nu_z.data(), nu_z.size());
    st += nlp.jac_zeq_base(p, l).transpose() * nu_flat;
  }
  st -= zl.head(nb);
  st += zu.head(nb);
  r.stationarity = st.lpNorm<Eigen::Infinity>();

  // stationarity, line blocks
  int zoff = nb;
  for (int l = 0; l < nl; ++l) {
    const auto sl = static_cast<std::size_t>(l);
    Eigen::VectorXd sw = nlp.jac_eq_line_w(p, l).transpose() * mult.eq_line[sl];
    sw += nlp.jac_ineq_line_w(p, l).transpose() * mult.ineq_line[sl];
    const Eigen::MatrixXd& nu_z = mult.zeq[sl];
    const Eigen::VectorXd nu_flat =
        Eigen::Map<const Eigen::VectorXd>(nu_z.data(), nu_z.size());
    sw += nlp.jac_zeq_w(p, l).transpose() * nu_flat;
    sw -= zl.segment(zoff, d + 1);
    sw += zu.segment(zoff, d + 1);
    zoff += d + 1;
    r.stationarity = std::max(r.stationarity, sw.lpNorm<Eigen::Infinity>());

    // Z stationarity: coupling' nu_z + local inequality pullback
    const Eigen::MatrixXd coup = nlp.coupling(p);
    Eigen::MatrixXd sz = coup * nu_z;  // symmetric coupling
    const Eigen::MatrixXd gz = nlp.jac_ineq_line_z(p, l);
    const std::vector<int> rows = nlp.z_local_rows(l);
    const int pl = static_cast<int>(rows.size());
    const int rl = nlp.line_rank(l);
    for (int c = 0; c < rl; ++c)
      for (int k = 0; k < pl; ++k)
        sz(rows[static_cast<std::size_t>(k)], c) +=
            gz.col(c * pl + k).dot(mult.ineq_line[sl]);
    r.stationarity = std::max(r.stationarity, sz.lpNorm<Eigen::Infinity>());
  }

  // primal feasibility
  r.eq = nlp.eq_base(p).lpNorm<Eigen::Infinity>();
  for (int l = 0; l < nl; ++l) {
    r.eq = std::max(r.eq, nlp.eq_line(p, l).lpNorm<Eigen::Infinity>());
    r.eq = std::max(r.eq, nlp.zeq_line(p, l).lpNorm<Eigen::Infinity>());
  }
  const auto ineq_terms = [&r](const Eigen::VectorXd& c, const Eigen::VectorXd& lam) {
    for (long i = 0; i < c.size(); ++i) {
      r.ineq = std::max(r.ineq, c(i));
      r.complementarity = std::max(r.complementarity, std::abs(lam(i) * c(i)));
    }
  };
  if (nlp.m_ineq_base() > 0) ineq_terms(nlp.ineq_base(p), mult.ineq_base);
  for (int l = 0; l < nl; ++l)
    ineq_terms(nlp.ineq_line(p, l), mult.ineq_line[static_cast<std::size_t>(l)]);

  // bound complementarity
  const auto bound_terms = [&r](const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                const Eigen::VectorXd& up, const Eigen::VectorXd& l_mult,
                                const Eigen::VectorXd& u_mult) {
    for (long i = 0; i < x.size(); ++i) {
      if (lo(i) > -BlockNlp::kInf)
        r.complementarity =
            std::max(r.complementarity, std::abs(l_mult(i) * (x(i) - lo(i))));
      if (up(i) < BlockNlp::kInf)
        r.complementarity =
            std::max(r.complementarity, std::abs(u_mult(i) * (up(i) - x(i))));
      r.ineq = std::max(r.ineq, lo(i) - x(i));
      r.ineq = std::max(r.ineq, x(i) - up(i));
    }
  };
  bound_terms(p.base, nlp.base_lower(), nlp.base_upper(), zl.head(nb), zu.head(nb));
  zoff = nb;
  for (int l = 0; l < nl; ++l) {
    bound_terms(p.w[static_cast<std::size_t>(l)], nlp.w_lower(l), nlp.w_upper(l),
                zl.segment(zoff, d + 1), zu.segment(zoff, d + 1));
    zoff += d + 1;
  }
  return r;
}

// Finite-difference validation of every analytic derivative a problem
// exposes.  Returns the worst absolute deviation found; intended for small
// problems and debug runs, not for production solves.
struct DerivativeCheck {
  double worst = 0.0;
  std::string where;
  void track(double dev, const std::string& tag) {
    if (dev > worst) {
      worst = dev;
      where = tag;
    }
  }
};

inline DerivativeCheck check_derivatives(const BlockNlp& nlp, const NlpPoint& p0,
                                         double h = 1e-6) {
  DerivativeCheck chk;
  const int nb = nlp.n_base();
  const int d = nlp.dim_coupling();
  const int nl = nlp.n_lines();

  const auto perturb = [](NlpPoint pt, Eigen::VectorXd* vec, long i, double step) {
    (*vec)(i) += step;
    return pt;
  };
  (void)perturb;

  // Derivatives with respect to one scalar coordinate, central differences.
  const auto fd_all = [&](const std::function<void(NlpPoint&, double)>& bump,
                          const std::function<Eigen::VectorXd(const NlpPoint&)>& eval) {
    NlpPoint pp = p0, pm = p0;
    bump(pp, h);
    bump(pm, -h);
    return Eigen::VectorXd(((eval(pp) - eval(pm)) / (2.0 * h)).eval());
  };

  // Collected residual evaluator spanning every constraint block, so each
  // Jacobian column is validated in one sweep.
  const auto stacked = [&](const NlpPoint& pt) {
    std::vector<Eigen::VectorXd> parts;
    parts.push_back(nlp.eq_base(pt));
    if (nlp.m_ineq_base() > 0) parts.push_back(nlp.ineq_base(pt));
    for (int l = 0; l < nl; ++l) {
      parts.push_back(nlp.eq_line(pt, l));
      parts.push_back(nlp.ineq_line(pt, l));
      parts.push_back(nlp.zeq_line(pt, l));
    }
    long total = 0;
    for (const auto& v : parts) total += v.size();
    Eigen::VectorXd out(total + 1);
    out(0) = nlp.objective(pt);
    long at = 1;
    for (const auto& v : parts) {
      out.segment(at, v.size()) = v;
      at += v.size();
    }
    return out;
  };

  // Analytic stacked Jacobian column for the same layout.
  const auto analytic_column = [&](const NlpPoint& pt, int blk, int line, long i) {
    std::vector<Eigen::VectorXd> parts;
    const auto col_of = [&](const Eigen::MatrixXd& m) -> Eigen::VectorXd {
      return m.col(i);
    };
    if (blk == 0) {
      parts.push_back(Eigen::VectorXd::Constant(1, nlp.objective_gradient(pt)(i)));
      parts.push_back(col_of(nlp.jac_eq_base(pt)));
      if (nlp.m_ineq_base() > 0) parts.push_back(col_of(nlp.jac_ineq_base(pt)));
      for (int l = 0; l < nl; ++l) {
        parts.push_back(col_of(nlp.jac_eq_line_base(pt, l)));
        parts.push_back(col_of(nlp.jac_ineq_line_base(pt, l)));
        parts.push_back(col_of(nlp.jac_zeq_base(pt, l)));
      }
    } else {
      parts.push_back(Eigen::VectorXd::Zero(1));
      parts.push_back(Eigen::VectorXd::Zero(nlp.m_eq_base()));
      if (nlp.m_ineq_base() > 0)
        parts.push_back(Eigen::VectorXd::Zero(nlp.m_ineq_base()));
      for (int l = 0; l < nl; ++l) {
        const int rl = nlp.line_rank(l);
        if (l != line) {
          parts.push_back(Eigen::VectorXd::Zero(d + 1));
          parts.push_back(Eigen::VectorXd::Zero(2));
          parts.push_back(Eigen::VectorXd::Zero(d * rl));
          continue;
        }
        if (blk == 1) {  // w coordinate
          parts.push_back(col_of(nlp.jac_eq_line_w(pt, l)));
          parts.push_back(col_of(nlp.jac_ineq_line_w(pt, l)));
          parts.push_back(col_of(nlp.jac_zeq_w(pt, l)));
        } else {  // z coordinate, flattened column-major
          parts.push_back(Eigen::VectorXd::Zero(d + 1));
          const std::vector<int> rows = nlp.z_local_rows(l);
          const int pl = static_cast<int>(rows.size());
          Eigen::VectorXd gi = Eigen::VectorXd::Zero(2);
          const long c = i / d, k = i % d;
          for (int kk = 0; kk < pl; ++kk)
            if (rows[static_cast<std::size_t>(kk)] == k)
              gi = nlp.jac_ineq_line_z(pt, l).col(c * pl + kk);
          parts.push_back(gi);
          // zeq depends on Z through I (x) coupling
          const Eigen::MatrixXd coup = nlp.coupling(pt);
          Eigen::VectorXd zc = Eigen::VectorXd::Zero(d * rl);
          zc.segment(c * d, d) = coup.col(k);
          parts.push_back(zc);
        }
      }
    }
    long total = 0;
    for (const auto& v : parts) total += v.size();
    Eigen::VectorXd out(total);
    long at = 0;
    for (const auto& v : parts) {
      out.segment(at, v.size()) = v;
      at += v.size();
    }
    return out;
  };

  for (int i = 0; i < nb; ++i) {
    const Eigen::VectorXd fd = fd_all(
        [&](NlpPoint& pt, double s) { pt.base(i) += s; }, stacked);
    const Eigen::VectorXd an = analytic_column(p0, 0, -1, i);
    chk.track((fd - an).lpNorm<Eigen::Infinity>(), "base column " + num_str(i));
  }
  for (int l = 0; l < nl; ++l) {
    for (int i = 0; i <= d; ++i) {
      const Eigen::VectorXd fd = fd_all(
          [&](NlpPoint& pt, double s) { pt.w[static_cast<std::size_t>(l)](i) += s; },
          stacked);
      const Eigen::VectorXd an = analytic_column(p0, 1, l, i);
      chk.track((fd - an).lpNorm<Eigen::Infinity>(),
                "line " + num_str(l) + " w column " + num_str(i));
    }
    const int rl = nlp.line_rank(l);
    for (long i = 0; i < static_cast<long>(d) * rl; ++i) {
      const Eigen::VectorXd fd = fd_all(
          [&](NlpPoint& pt, double s) {
            auto& zm = pt.z[static_cast<std::size_t>(l)];
            zm(i % d, i / d) += s;
          },
          stacked);
      const Eigen::VectorXd an = analytic_column(p0, 2, l, i);
      chk.track((fd - an).lpNorm<Eigen::Infinity>(),
                "line " + num_str(l) + " z column " + num_str(static_cast<int>(i)));
    }
  }

  // Lagrangian Hessian against finite differences of the stationarity map,
  // with pseudo-random multipliers fixed across evaluations.
  NlpMultipliers mult = zero_multipliers(nlp);
  {
    std::uint64_t s = 0x9e3779b97f4a7c15ull;
    const auto next = [&s]() {
      s ^= s << 13;
      s ^= s >> 7;
      s ^= s << 17;
      return 0.25 + 0.5 * static_cast<double>(s % 1000) / 1000.0;
    };
    for (long i = 0; i < mult.eq_base.size(); ++i) mult.eq_base(i) = next();
    for (long i = 0; i < mult.ineq_base.size(); ++i) mult.ineq_base(i) = next();
    for (int l = 0; l < nl; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      for (long i = 0; i < mult.eq_line[sl].size(); ++i) mult.eq_line[sl](i) = next();
      for (long i = 0; i < mult.ineq_line[sl].size(); ++i)
        mult.ineq_line[sl](i) = next();
      for (long i = 0; i < mult.zeq[sl].size(); ++i)
        mult.zeq[sl].data()[i] = next();
    }
  }

  // gradient of the Lagrangian over all variables, stacked
  const auto lag_grad = [&](const NlpPoint& pt) {
    Eigen::VectorXd gb = nlp.objective_gradient(pt);
    gb += nlp.jac_eq_base(pt).transpose() * mult.eq_base;
    if (nlp.m_ineq_base() > 0)
      gb += nlp.jac_ineq_base(pt).transpose() * mult.ineq_base;
    std::vector<Eigen::VectorXd> gw;
    std::vector<Eigen::MatrixXd> gz;
    const Eigen::MatrixXd coup = nl > 0 ? nlp.coupling(pt) : Eigen::MatrixXd();
    for (int l = 0; l < nl; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      gb += nlp.jac_eq_line_base(pt, l).transpose() * mult.eq_line[sl];
      gb += nlp.jac_ineq_line_base(pt, l).transpose() * mult.ineq_line[sl];
      const Eigen::VectorXd nu_flat = Eigen::Map<const Eigen::VectorXd>(
          mult.zeq[sl].data(), mult.zeq[sl].size());
      gb += nlp.jac_zeq_base(pt, l).transpose() * nu_flat;
      Eigen::VectorXd w = nlp.jac_eq_line_w(pt, l).transpose() * mult.eq_line[sl];
      w += nlp.jac_ineq_line_w(pt, l).transpose() * mult.ineq_line[sl];
      w += nlp.jac_zeq_w(pt, l).transpose() * nu_flat;
      gw.push_back(w);
      Eigen::MatrixXd zg = coup * mult.zeq[sl];
      const Eigen::MatrixXd gzl = nlp.jac_ineq_line_z(pt, l);
      const std::vector<int> rows = nlp.z_local_rows(l);
      const int pl = static_cast<int>(rows.size());
      for (int c = 0; c < nlp.line_rank(l); ++c)
        for (int k = 0; k < pl; ++k)
          zg(rows[static_cast<std::size_t>(k)], c) +=
              gzl.col(c * pl + k).dot(mult.ineq_line[sl]);
      gz.push_back(zg);
    }
    long total = gb.size();
    for (const auto& v : gw) total += v.size();
    for (const auto& m : gz) total += m.size();
    Eigen::VectorXd out(total);
    out.head(gb.size()) = gb;
    long at = gb.size();
    // blocks interleave per line, matching the stacked variable order
    for (int l = 0; l < nl; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      out.segment(at, gw[sl].size()) = gw[sl];
      at += gw[sl].size();
      out.segment(at, gz[sl].size()) =
          Eigen::Map<const Eigen::VectorXd>(gz[sl].data(), gz[sl].size());
      at += gz[sl].size();
    }
    return out;
  };

  const LagrangianHessian lh = nlp.lagrangian_hessian(p0, mult, 1.0);
  long ntot = nb;
  for (int l = 0; l < nl; ++l) ntot += (d + 1) + static_cast<long>(d) * nlp.line_rank(l);
  // analytic Hessian column for stacked variable index j
  const auto hess_column = [&](long j) {
    Eigen::VectorXd col = Eigen::VectorXd::Zero(ntot);
    long off = nb;
    std::vector<long> woff(static_cast<std::size_t>(nl)), zoffv(static_cast<std::size_t>(nl));
    for (int l = 0; l < nl; ++l) {
      woff[static_cast<std::size_t>(l)] = off;
      off += d + 1;
      zoffv[static_cast<std::size_t>(l)] = off;
      off += static_cast<long>(d) * nlp.line_rank(l);
    }
    if (j < nb) {
      col.head(nb) = lh.bb.col(j);
      for (int l = 0; l < nl; ++l) {
        const auto sl = static_cast<std::size_t>(l);
        col.segment(woff[sl], d + 1) = lh.bw[sl].row(j).transpose();
        col.segment(zoffv[sl], static_cast<long>(d) * nlp.line_rank(l)) =
            lh.bz[sl].row(j).transpose();
      }
      return col;
    }
    for (int l = 0; l < nl; ++l) {
      const auto sl = static_cast<std::size_t>(l);
      const std::vector<int> rows = nlp.z_local_rows(l);
      const int pl = static_cast<int>(rows.size());
      const int rl = nlp.line_rank(l);
      if (j >= woff[sl] && j < woff[sl] + d + 1) {
        const long i = j - woff[sl];
        col.head(nb) = lh.bw[sl].col(i);
        col.segment(woff[sl], d + 1) = lh.ww[sl].col(i);
        for (int c = 0; c < rl; ++c)
          for (int k = 0; k < pl; ++k)
            col(zoffv[sl] + static_cast<long>(c) * d + rows[static_cast<std::size_t>(k)]) +=
                lh.wz_local[sl](i, c * pl + k);
        return col;
      }
      if (j >= zoffv[sl] && j < zoffv[sl] + static_cast<long>(d) * rl) {
        const long i = j - zoffv[sl];
        col.head(nb) = lh.bz[sl].col(i);
        const long c = i / d, k = i % d;
        int klocal = -1;
        for (int kk = 0; kk < pl; ++kk)
          if (rows[static_cast<std::size_t>(kk)] == k) klocal = kk;
        if (klocal >= 0) {
          const long lc = c * pl + klocal;
          col.segment(woff[sl], d + 1) += lh.wz_local[sl].col(lc);
          for (int c2 = 0; c2 < rl; ++c2)
            for (int k2 = 0; k2 < pl; ++k2)
              col(zoffv[sl] + static_cast<long>(c2) * d +
                  rows[static_cast<std::size_t>(k2)]) += lh.zz_local[sl](c2 * pl + k2, lc);
        }
        return col;
      }
    }
    throw NumericError("hess_column index out of range");
  };

  long j = 0;
  const auto check_hess = [&](const std::function<void(NlpPoint&, double)>& bump,
                              const std::string& tag) {
    NlpPoint pp = p0, pm = p0;
    bump(pp, h);
    bump(pm, -h);
    const Eigen::VectorXd fd = (lag_grad(pp) - lag_grad(pm)) / (2.0 * h);
    chk.track((fd - hess_column(j)).lpNorm<Eigen::Infinity>(), "hessian " + tag);
    ++j;
  };
  for (int i = 0; i < nb; ++i)
    check_hess([&](NlpPoint& pt, double s) { pt.base(i) += s; },
               "base " + num_str(i));
  for (int l = 0; l < nl; ++l) {
    for (int i = 0; i <= d; ++i)
      check_hess(
          [&](NlpPoint& pt, double s) { pt.w[static_cast<std::size_t>(l)](i) += s; },
          "w " + num_str(l) + ":" + num_str(i));
    for (long i = 0; i < static_cast<long>(d) * nlp.line_rank(l); ++i)
      check_hess(
          [&](NlpPoint& pt, double s) {
            auto& zm = pt.z[static_cast<std::size_t>(l)];
            zm(i % d, i / d) += s;
          },
          "z " + num_str(l) + ":" + num_str(static_cast<int>(i)));
  }
  return chk;
}

}  // namespace fpopf
