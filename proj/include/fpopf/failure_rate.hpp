// Analytic per-line failure rates of the stochastic network model.
//
// In the small-noise regime the rate at which thermal fluctuations push a
// line's squared current from a stable operating point across its trip
// threshold has the Kramers form
//
//   rate = pf1 * exp(-gap / tau),
//   gap  = 1/2 mu alpha,
//   pf1  = pf0 (1 + 2 tau / (mu alpha)),
//   pf0  = mu^(3/2) |gradF|_S^2 / sqrt(2 pi tau (alpha det W + beta)),
//
// where (x*, mu) is the most-likely failure point on the trip surface,
// alpha = (x* - xbar)' gradF(x*), W = I - mu K Q' G Q on the r-dimensional
// factor space of the flow Hessian, beta = u' adj(W) K u with u = Q'(x*-xbar),
// and |.|_S the norm weighted by the inverse damping.  All pieces are local:
// the only network-sized work is one Cholesky factorization of the energy
// Hessian shared by every line.
//
// A line already at or above its trip threshold fails immediately (infinite
// rate); a barrier larger than 700 tau is reported as rate zero, below the
// smallest positive double.
//
// dense_line_rate() evaluates the same rate without the low-rank shortcut
// and with the energy barrier taken from the nonlinear energy difference
// instead of its quadratic model.  It is the O(d^3) reference the fast path
// is verified against.
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "fpopf/common.hpp"
#include "fpopf/energy.hpp"
#include "fpopf/failure_point.hpp"
#include "fpopf/theta.hpp"

namespace fpopf {

// Failure intensity that keeps the probability of any failure within the
// horizon at or below eps: P(T <= t) = 1 - exp(-lambda t).
inline double rate_limit(double eps, double horizon_s) {
  if (!(eps > 0.0 && eps < 1.0)) throw ValidationError("failure budget must lie in (0,1)");
  if (!(horizon_s > 0.0)) throw ValidationError("horizon must be positive");
  return -std::log1p(-eps) / horizon_s;
}

inline double prob_within(double lambda, double horizon_s) {
  return -std::expm1(-lambda * horizon_s);
}

// Adjugate of a small matrix (adj(W) W = det(W) I), exact for r <= 3.
inline Eigen::MatrixXd adjugate_small(const Eigen::MatrixXd& w) {
  const long n = w.rows();
  Eigen::MatrixXd a(n, n);
  if (n == 1) {
    a(0, 0) = 1.0;
  } else if (n == 2) {
    a << w(1, 1), -w(0, 1), -w(1, 0), w(0, 0);
  } else if (n == 3) {
    a(0, 0) = w(1, 1) * w(2, 2) - w(1, 2) * w(2, 1);
    a(0, 1) = w(0, 2) * w(2, 1) - w(0, 1) * w(2, 2);
    a(0, 2) = w(0, 1) * w(1, 2) - w(0, 2) * w(1, 1);
    a(1, 0) = w(1, 2) * w(2, 0) - w(1, 0) * w(2, 2);
    a(1, 1) = w(0, 0) * w(2, 2) - w(0, 2) * w(2, 0);
    a(1, 2) = w(0, 2) * w(1, 0) - w(0, 0) * w(1, 2);
    a(2, 0) = w(1, 0) * w(2, 1) - w(1, 1) * w(2, 0);
    a(2, 1) = w(0, 1) * w(2, 0) - w(0, 0) * w(2, 1);
    a(2, 2) = w(0, 0) * w(1, 1) - w(0, 1) * w(1, 0);
  } else {
    throw ValidationError("adjugate_small supports order <= 3");
  }
  return a;
}

inline double det_small(const Eigen::MatrixXd& w) {
  const long n = w.rows();
  if (n == 1) return w(0, 0);
  if (n == 2) return w(0, 0) * w(1, 1) - w(0, 1) * w(1, 0);
  if (n == 3)
    return w(0, 0) * (w(1, 1) * w(2, 2) - w(1, 2) * w(2, 1)) -
           w(0, 1) * (w(1, 0) * w(2, 2) - w(1, 2) * w(2, 0)) +
           w(0, 2) * (w(1, 0) * w(2, 1) - w(1, 1) * w(2, 0));
  throw ValidationError("det_small supports order <= 3");
}

struct RateOptions {
  FailurePointOptions fp;
  double exp_floor = 700.0;       // gap / tau beyond which the rate is zero
  double spectral_slack = 1e-9;   // mu lambda_max(A) must stay below 1 by this
};

struct LineRate {
  int line_idx = -1;
  int line_id = 0;
  bool in_set = false;   // line belongs to the failure set
  bool ok = false;
  std::string message;
  bool immediate = false;  // flow already at/above the trip threshold
  double f_base = 0.0;     // squared current at the base point
  double lambda = 0.0;     // failures per second
  double gap = 0.0;        // energy barrier
  double mu = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double det_w = 0.0;
  double snorm = 0.0;      // |gradF(x*)|_S^2
  double pf0 = 0.0;
  double pf1 = 0.0;
  double mu_lambda_max = 0.0;  // spectral margin: must be < 1
  bool spectral_ok = false;
  int fp_iterations = 0;
  Eigen::VectorXd x_local;
};

class FailureRateAnalyzer {
 public:
  FailureRateAnalyzer(const EnergyModel& model, DispatchPoint y, Eigen::VectorXd x_base)
      : model_(&model), y_(std::move(y)), x_base_(std::move(x_base)) {
    hess_ = model.hess_static(x_base_, y_);
    llt_.compute(hess_);
    if (llt_.info() != Eigen::Success)
      throw NumericError("rate evaluation requires a stable base point "
                         "(energy Hessian is not positive definite)");
    bus_state_ = model.assemble(x_base_, y_);
    s_diag_ = model.s_diag_static();
    tau_ = model.tau();
  }

  const Eigen::MatrixXd& hessian() const { return hess_; }
  const Eigen::VectorXd& base_state() const { return x_base_; }
  const DispatchPoint& dispatch() const { return y_; }

  // p x p block of the inverse energy Hessian on the line's local coordinates.
  Eigen::MatrixXd local_inverse_block(const LineFlow& flow) const {
    const auto& idx = flow.local_indices();
    const int p = flow.p();
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(hess_.rows(), p);
    for (int k = 0; k < p; ++k) rhs(idx[static_cast<std::size_t>(k)], k) = 1.0;
    const Eigen::MatrixXd sol = llt_.solve(rhs);
    Eigen::MatrixXd g(p, p);
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) g(a, b) = sol(idx[static_cast<std::size_t>(a)], b);
    return 0.5 * (g + g.transpose());
  }

  LineRate line_rate(int line_idx, const RateOptions& opt = {}) const {
    const LineFlow flow(model_->network(), line_idx);
    LineRate out;
    out.line_idx = line_idx;
    out.line_id = flow.line_id();
    out.in_set = flow.in_failure_set();
    out.f_base = flow.value(flow.extract(bus_state_));
    if (!out.in_set) {
      out.ok = true;
      out.message = "outside failure set";
      return out;
    }
    if (out.f_base >= flow.trip_limit_sq()) {
      out.ok = true;
      out.immediate = true;
      out.lambda = std::numeric_limits<double>::infinity();
      return out;
    }

    const Eigen::MatrixXd g_hat = local_inverse_block(flow);
    const FailurePointSolver solver(flow, g_hat, flow.local_from_static(x_base_), y_);
    const FailurePoint fp = solver.solve(opt.fp);
    out.fp_iterations = fp.iterations;
    if (!fp.ok) {
      out.message = "failure point: " + fp.message;
      return out;
    }
    out.x_local = fp.x_local;
    out.mu = fp.mu;

    const LineState s = flow.from_local(fp.x_local, y_);
    const Eigen::VectorXd g = flow.grad_local(s);
    const FlowFactor fac = flow.factor(s);
    const long r = fac.K.size();

    out.alpha = fp.delta_local.dot(g);
    if (!(out.alpha > 0.0)) {
      out.message = "failure point lies against the barrier direction";
      return out;
    }
    out.gap = 0.5 * out.mu * out.alpha;

    const Eigen::MatrixXd a_mat =
        fac.K.asDiagonal() * (fac.Q.transpose() * g_hat * fac.Q);
    const Eigen::MatrixXd w =
        Eigen::MatrixXd::Identity(r, r) - out.mu * a_mat;
    out.det_w = det_small(w);
    const Eigen::VectorXd u = fac.Q.transpose() * fp.delta_local;
    out.beta = u.dot(adjugate_small(w) * (fac.K.asDiagonal() * u));

    const Eigen::EigenSolver<Eigen::MatrixXd> eig(a_mat);
    out.mu_lambda_max = out.mu * eig.eigenvalues().real().maxCoeff();
    out.spectral_ok = out.mu_lambda_max < 1.0 - opt.spectral_slack;

    // A barrier beyond the floor forces the rate to zero no matter what the
    // prefactor would be, so it need not (and may not) be evaluable there.
    if (out.gap / tau_ > opt.exp_floor) {
      out.lambda = 0.0;
      out.ok = true;
      return out;
    }

    const double denom = out.alpha * out.det_w + out.beta;
    if (!(denom > 0.0)) {
      out.message = "nonpositive curvature normalization (spectral condition violated)";
      return out;
    }

    for (int k = 0; k < flow.p(); ++k)
      out.snorm += s_diag_(flow.local_indices()[static_cast<std::size_t>(k)]) * g(k) * g(k);

    out.pf0 = std::pow(out.mu, 1.5) * out.snorm /
              std::sqrt(2.0 * std::numbers::pi * tau_ * denom);
    out.pf1 = out.pf0 * (1.0 + 2.0 * tau_ / (out.mu * out.alpha));
    out.lambda = out.pf1 * std::exp(-out.gap / tau_);
    out.ok = true;
    return out;
  }

  // Rates for every line, in line order, evaluated on a thread pool.
  std::vector<LineRate> all_rates(const RateOptions& opt = {}, int threads = 0) const {
    const int n = model_->network().n_line();
    std::vector<LineRate> rates(static_cast<std::size_t>(n));
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, n));
    std::atomic<int> next{0};
    const auto worker = [&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
        rates[static_cast<std::size_t>(i)] = line_rate(i, opt);
    };
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(threads));
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    return rates;
  }

 private:
  const EnergyModel* model_;
  DispatchPoint y_;
  Eigen::VectorXd x_base_;
  Eigen::MatrixXd hess_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  EnergyModel::BusState bus_state_;
  Eigen::VectorXd s_diag_;
  double tau_ = 0.0;
};

// ---- dense reference evaluation -------------------------------------------

struct DenseRate {
  bool ok = false;
  std::string message;
  double lambda = 0.0;
  double gap = 0.0;        // exact nonlinear energy difference
  double gap_quadratic = 0.0;
  double mu = 0.0;
  double log_pf1 = 0.0;
  Eigen::VectorXd x_full;  // full static failure point
};

// Evaluates the rate of one line through the full d-dimensional formulas:
// prefactor from determinants of the complete Hessians (in log space) and
// barrier from the nonlinear energy difference H(x*) - H(xbar).
inline DenseRate dense_line_rate(const EnergyModel& model, const DispatchPoint& y,
                                 const Eigen::VectorXd& x_base, int line_idx,
                                 const FailurePointOptions& fp_opt = {}) {
  DenseRate out;
  const LineFlow flow(model.network(), line_idx);
  if (!flow.in_failure_set()) {
    out.message = "outside failure set";
    return out;
  }
  const Eigen::MatrixXd hess = model.hess_static(x_base, y);
  Eigen::LLT<Eigen::MatrixXd> llt(hess);
  if (llt.info() != Eigen::Success) {
    out.message = "base point is not stable";
    return out;
  }
  const long d = hess.rows();

  // Failure point via the same local stationarity system.
  const auto& idx = flow.local_indices();
  const int p = flow.p();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(d, p);
  for (int k = 0; k < p; ++k) rhs(idx[static_cast<std::size_t>(k)], k) = 1.0;
  const Eigen::MatrixXd cols = llt.solve(rhs);
  Eigen::MatrixXd g_hat(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b) g_hat(a, b) = cols(idx[static_cast<std::size_t>(a)], b);
  g_hat = 0.5 * (g_hat + g_hat.transpose()).eval();
  const FailurePointSolver solver(flow, g_hat, flow.local_from_static(x_base), y);
  const FailurePoint fp = solver.solve(fp_opt);
  if (!fp.ok) {
    out.message = "failure point: " + fp.message;
    return out;
  }
  out.mu = fp.mu;

  // Full-space failure point and the dense quantities.
  const LineState s = flow.from_local(fp.x_local, y);
  const Eigen::VectorXd g_loc = flow.grad_local(s);
  Eigen::VectorXd grad_full = Eigen::VectorXd::Zero(d);
  for (int k = 0; k < p; ++k) grad_full(idx[static_cast<std::size_t>(k)]) = g_loc(k);
  const Eigen::VectorXd delta_full = fp.mu * llt.solve(grad_full);
  out.x_full = x_base + delta_full;

  out.gap = model.energy(out.x_full, y) - model.energy(x_base, y);
  const double alpha = delta_full.dot(grad_full);
  out.gap_quadratic = 0.5 * fp.mu * alpha;

  Eigen::MatrixXd x_mat = hess;
  const Eigen::MatrixXd h_loc = flow.hess_local(s);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b)
      x_mat(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]) -=
          fp.mu * h_loc(a, b);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_x(x_mat);
  if (eig_x.eigenvalues().minCoeff() <= 0.0) {
    out.message = "constrained Hessian is not positive definite at the failure point";
    return out;
  }
  const double logdet_x = eig_x.eigenvalues().array().log().sum();
  const Eigen::MatrixXd chol_l = llt.matrixL();
  double logdet_h = 0.0;
  for (long i = 0; i < d; ++i) logdet_h += 2.0 * std::log(chol_l(i, i));

  // grad of the quadratic energy model at x*: hess * delta = mu gradF.
  const Eigen::VectorXd grad_h = fp.mu * grad_full;
  const Eigen::VectorXd s_diag = model.s_diag_static();
  const double snorm = grad_h.dot(s_diag.asDiagonal() * grad_h);
  const Eigen::VectorXd xinv_g = eig_x.eigenvectors() *
      (eig_x.eigenvectors().transpose() * grad_h).cwiseQuotient(eig_x.eigenvalues());
  const double quad = grad_h.dot(xinv_g);
  if (!(quad > 0.0)) {
    out.message = "nonpositive curvature normalization";
    return out;
  }
  const double log_cstar = logdet_x + std::log(quad);
  const double log_pf0 = std::log(snorm) +
                         0.5 * (logdet_h - std::log(2.0 * std::numbers::pi * model.tau()) - log_cstar);
  out.log_pf1 = log_pf0 + std::log1p(2.0 * model.tau() / (fp.mu * alpha));
  const double log_lambda = out.log_pf1 - out.gap / model.tau();
  out.lambda = log_lambda < -745.0 ? 0.0 : std::exp(log_lambda);
  out.ok = true;
  return out;
}

}  // namespace fpopf
