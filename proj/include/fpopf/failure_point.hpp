// Most-likely failure point of one line: the constrained minimizer of the
// quadratic energy model on the trip surface of that line.
//
// With G = E_P' (hess H)^-1 E_P the p x p block of the inverse energy
// Hessian on the line's local coordinates P, the stationarity conditions
// reduce to the (p+1)-dimensional system
//
//   x*_P - xbar_P - mu G gradF(x*_P) = 0
//   F(x*_P) - F_trip               = 0
//
// solved here by a damped Newton iteration, warm-started at the base point
// and continued over the trip level when the direct solve stalls.  The
// non-local components of the failure point follow from x*_P by one linear
// solve and are never needed for the rate itself.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/theta.hpp"

namespace fpopf {

struct FailurePointOptions {
  double tol = 1e-10;          // infinity norm of the stationarity residual
  int max_iter = 100;
  double mu_init = 1e-6;
  int continuation_steps = 4;  // intermediate trip levels after a stall
  bool probe_roots = false;    // restart from perturbed seeds, keep lowest barrier
  double probe_step = 0.05;
};

struct FailurePoint {
  bool ok = false;
  std::string message;
  Eigen::VectorXd x_local;      // x*_P
  Eigen::VectorXd delta_local;  // x*_P - xbar_P
  double mu = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

class FailurePointSolver {
 public:
  FailurePointSolver(const LineFlow& flow, Eigen::MatrixXd g_hat,
                     Eigen::VectorXd x_base_local, DispatchPoint y)
      : flow_(&flow), g_hat_(std::move(g_hat)),
        x_base_(std::move(x_base_local)), y_(std::move(y)) {}

  const LineFlow& flow() const { return *flow_; }
  const Eigen::MatrixXd& g_hat() const { return g_hat_; }
  const Eigen::VectorXd& base_local() const { return x_base_; }

  FailurePoint solve(const FailurePointOptions& opt = {}) const {
    const double f_base = flow_->value(flow_->from_local(x_base_, y_));
    const double f_trip = flow_->trip_limit_sq();
    FailurePoint direct = newton(x_base_, opt.mu_init, f_trip, opt);
    if (direct.ok && !opt.probe_roots) return direct;

    FailurePoint best = direct;
    if (!best.ok && opt.continuation_steps > 0) {
      // Walk the trip level from the base value up to the true one, warm
      // starting each stage at the previous solution.
      Eigen::VectorXd x = x_base_;
      double mu = opt.mu_init;
      FailurePoint stage;
      bool alive = true;
      for (int k = 1; k <= opt.continuation_steps && alive; ++k) {
        const double level =
            f_base + (f_trip - f_base) * static_cast<double>(k) /
                         static_cast<double>(opt.continuation_steps);
        stage = newton(x, mu, level, opt);
        if (!stage.ok) {
          alive = false;
        } else {
          x = stage.x_local;
          mu = std::max(stage.mu, 1e-14);
        }
      }
      if (alive) best = stage;
    }

    if (opt.probe_roots) {
      for (int k = 0; k < flow_->p(); ++k) {
        for (const double sgn : {1.0, -1.0}) {
          Eigen::VectorXd seed = x_base_;
          seed(k) += sgn * opt.probe_step;
          const FailurePoint cand = newton(seed, opt.mu_init, f_trip, opt);
          if (!cand.ok) continue;
          if (!best.ok || barrier_proxy(cand) < barrier_proxy(best)) best = cand;
        }
      }
    }
    return best;
  }

 private:
  // mu * alpha orders roots by barrier height without needing the full rate.
  double barrier_proxy(const FailurePoint& fp) const {
    const Eigen::VectorXd g = flow_->grad_local(flow_->from_local(fp.x_local, y_));
    return fp.mu * fp.delta_local.dot(g);
  }

  FailurePoint newton(const Eigen::VectorXd& x0, double mu0, double f_target,
                      const FailurePointOptions& opt) const {
    const int p = flow_->p();
    FailurePoint out;
    Eigen::VectorXd u(p + 1);
    u.head(p) = x0;
    u(p) = mu0;

    const auto residual = [&](const Eigen::VectorXd& w, Eigen::VectorXd& r) {
      const LineState s = flow_->from_local(w.head(p), y_);
      const Eigen::VectorXd g = flow_->grad_local(s);
      r.resize(p + 1);
      r.head(p) = w.head(p) - x_base_ - w(p) * (g_hat_ * g);
      r(p) = flow_->value(s) - f_target;
    };

    Eigen::VectorXd r;
    residual(u, r);
    for (int it = 0; it < opt.max_iter; ++it) {
      out.iterations = it;
      if (r.lpNorm<Eigen::Infinity>() <= opt.tol) {
        out.ok = true;
        break;
      }
      const LineState s = flow_->from_local(u.head(p), y_);
      const Eigen::VectorXd g = flow_->grad_local(s);
      const Eigen::MatrixXd h = flow_->hess_local(s);
      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(p + 1, p + 1);
      jac.topLeftCorner(p, p) =
          Eigen::MatrixXd::Identity(p, p) - u(p) * (g_hat_ * h);
      jac.block(0, p, p, 1) = -(g_hat_ * g);
      jac.block(p, 0, 1, p) = g.transpose();
      Eigen::VectorXd step = Eigen::PartialPivLU<Eigen::MatrixXd>(jac).solve(-r);
      if (!step.allFinite()) break;

      // Keep the multiplier positive and local voltages well away from zero.
      double alpha = 1.0;
      if (step(p) < 0.0) alpha = std::min(alpha, -0.9 * (u(p) + 1e-14) / step(p));
      for (int k = 0; k < p; ++k) {
        const bool is_v = flow_->local_kinds()[static_cast<std::size_t>(k)] == FlowCoord::Vi ||
                          flow_->local_kinds()[static_cast<std::size_t>(k)] == FlowCoord::Vj;
        if (is_v && step(k) < 0.0) alpha = std::min(alpha, -0.8 * u(k) / step(k));
      }

      const double norm0 = r.norm();
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        Eigen::VectorXd trial = u + alpha * step;
        Eigen::VectorXd rt;
        residual(trial, rt);
        if (rt.allFinite() && rt.norm() <= (1.0 - 1e-4 * alpha) * norm0) {
          u = trial;
          r = rt;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        out.message = "line search stalled";
        break;
      }
    }

    residual(u, r);
    out.residual = r.lpNorm<Eigen::Infinity>();
    out.ok = out.residual <= opt.tol;
    if (!out.ok && out.message.empty()) out.message = "newton did not converge";
    out.x_local = u.head(p);
    out.delta_local = out.x_local - x_base_;
    out.mu = u(p);
    if (out.ok && out.mu <= 0.0) {
      out.ok = false;
      out.message = "nonpositive multiplier at the stationary point";
    }
    return out;
  }

  const LineFlow* flow_;
  Eigen::MatrixXd g_hat_;
  Eigen::VectorXd x_base_;
  DispatchPoint y_;
};

}  // namespace fpopf
