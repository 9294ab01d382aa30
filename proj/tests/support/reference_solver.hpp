// Augmented-Lagrangian reference solver for the base block of a BlockNlp.
//
// Method of multipliers with projected-Newton inner iterations.  Shares the
// problem callbacks with the production solver but nothing of its algorithm:
// no barrier, no slacks, no KKT factorization structure.  Used as an
// independent cross-check of optimal objective values on small problems.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "fpopf/nlp.hpp"

namespace fpopf::testing {

struct ReferenceResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  double max_violation = 0.0;
  bool converged = false;
};

inline ReferenceResult solve_reference(const BlockNlp& nlp, int outer_iters = 60,
                                       double rho0 = 1e3) {
  const int n = nlp.n_base();
  const int me = nlp.m_eq_base();
  const int mi = nlp.m_ineq_base();
  const Eigen::VectorXd lo = nlp.base_lower(), up = nlp.base_upper();

  NlpPoint pt = nlp.initial_point();
  Eigen::VectorXd x = pt.base;
  for (int k = 0; k < n; ++k) x(k) = std::clamp(x(k), lo(k), up(k));

  Eigen::VectorXd lam_e = Eigen::VectorXd::Zero(me);
  Eigen::VectorXd lam_i = Eigen::VectorXd::Zero(mi);
  double rho = rho0;

  const auto project = [&](Eigen::VectorXd v) {
    for (int k = 0; k < n; ++k) v(k) = std::clamp(v(k), lo(k), up(k));
    return v;
  };

  const auto al_value = [&](const Eigen::VectorXd& xv) {
    NlpPoint p;
    p.base = xv;
    double val = nlp.objective(p);
    const Eigen::VectorXd ce = nlp.eq_base(p);
    for (int i = 0; i < me; ++i) val += lam_e(i) * ce(i) + rho * ce(i) * ce(i);
    const Eigen::VectorXd ci = nlp.ineq_base(p);
    for (int i = 0; i < mi; ++i) {
      if (lam_i(i) + 2.0 * rho * ci(i) > 0.0)
        val += lam_i(i) * ci(i) + rho * ci(i) * ci(i);
      else
        val -= lam_i(i) * lam_i(i) / (4.0 * rho);
    }
    return val;
  };

  double viol = 1e300;
  for (int out = 0; out < outer_iters; ++out) {
    const double gtol = std::max(1e-10, 1e-3 * std::pow(0.3, out));

    // projected Newton on the augmented Lagrangian
    for (int inner = 0; inner < 80; ++inner) {
      NlpPoint p;
      p.base = x;
      const Eigen::VectorXd ce = nlp.eq_base(p);
      const Eigen::VectorXd ci = nlp.ineq_base(p);
      const Eigen::MatrixXd je = nlp.jac_eq_base(p);
      const Eigen::MatrixXd ji = nlp.jac_ineq_base(p);

      NlpMultipliers mult = zero_multipliers(nlp);
      mult.eq_base = lam_e + 2.0 * rho * ce;
      Eigen::VectorXd wi = Eigen::VectorXd::Zero(mi);
      for (int i = 0; i < mi; ++i) wi(i) = std::max(0.0, lam_i(i) + 2.0 * rho * ci(i));
      mult.ineq_base = wi;

      Eigen::VectorXd g = nlp.objective_gradient(p) + je.transpose() * mult.eq_base +
                          ji.transpose() * wi;
      Eigen::MatrixXd h = nlp.lagrangian_hessian(p, mult, 1.0).bb;
      h += 2.0 * rho * je.transpose() * je;
      for (int i = 0; i < mi; ++i)
        if (wi(i) > 0.0) h += 2.0 * rho * ji.row(i).transpose() * ji.row(i);

      // active bounds: at the box with an outward-pushing gradient
      std::vector<int> free;
      const double eps_a = 1e-9;
      for (int k = 0; k < n; ++k) {
        const bool at_lo = x(k) <= lo(k) + eps_a && g(k) > 0.0;
        const bool at_up = x(k) >= up(k) - eps_a && g(k) < 0.0;
        if (!at_lo && !at_up) free.push_back(k);
      }
      Eigen::VectorXd pg = project(x - g) - x;
      if (pg.lpNorm<Eigen::Infinity>() < gtol) break;
      if (free.empty()) break;

      const int nf = static_cast<int>(free.size());
      Eigen::MatrixXd hf(nf, nf);
      Eigen::VectorXd gf(nf);
      for (int a = 0; a < nf; ++a) {
        gf(a) = g(free[static_cast<std::size_t>(a)]);
        for (int b = 0; b < nf; ++b)
          hf(a, b) = h(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      }
      Eigen::VectorXd df;
      double delta = 0.0;
      for (;;) {
        Eigen::LLT<Eigen::MatrixXd> llt(
            hf + delta * Eigen::MatrixXd::Identity(nf, nf));
        if (llt.info() == Eigen::Success) {
          df = llt.solve(-gf);
          break;
        }
        delta = delta == 0.0 ? 1e-8 * (1.0 + hf.diagonal().cwiseAbs().maxCoeff())
                             : 10.0 * delta;
      }
      Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
      for (int a = 0; a < nf; ++a) d(free[static_cast<std::size_t>(a)]) = df(a);

      const double f0 = al_value(x);
      double alpha = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 50; ++ls) {
        const Eigen::VectorXd xt = project(x + alpha * d);
        if (al_value(xt) <= f0 - 1e-4 * alpha * std::abs(gf.dot(df)) ||
            al_value(xt) < f0) {
          x = xt;
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;
    }

    NlpPoint p;
    p.base = x;
    const Eigen::VectorXd ce = nlp.eq_base(p);
    const Eigen::VectorXd ci = nlp.ineq_base(p);
    double v = ce.size() > 0 ? ce.lpNorm<Eigen::Infinity>() : 0.0;
    for (int i = 0; i < mi; ++i) v = std::max(v, std::max(0.0, ci(i)));
    lam_e += 2.0 * rho * ce;
    for (int i = 0; i < mi; ++i) lam_i(i) = std::max(0.0, lam_i(i) + 2.0 * rho * ci(i));
    if (v > 0.25 * viol) rho = std::min(1e9, 2.0 * rho);
    viol = v;
    if (v < 1e-9 && out > 3) break;
  }

  ReferenceResult res;
  NlpPoint p;
  p.base = x;
  res.x = x;
  res.objective = nlp.objective(p);
  res.max_violation = viol;
  res.converged = viol < 1e-7;
  return res;
}

}  // namespace fpopf::testing
