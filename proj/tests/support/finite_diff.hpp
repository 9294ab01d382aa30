// Central finite-difference helpers used to cross-check analytic derivatives.
#pragma once

#include <Eigen/Dense>

namespace fpopf_test {

template <class F>
Eigen::VectorXd fd_gradient(F&& f, const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (long i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Jacobian of a vector-valued map, one column per input coordinate.
template <class F>
Eigen::MatrixXd fd_jacobian(F&& f, const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (long i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const Eigen::VectorXd fp = f(xp);
    xp(i) = x(i) - h;
    const Eigen::VectorXd fm = f(xp);
    xp(i) = x(i);
    j.col(i) = (fp - fm) / (2.0 * h);
  }
  return j;
}

// Hessian of a scalar function via second differences.
template <class F>
Eigen::MatrixXd fd_hessian(F&& f, const Eigen::VectorXd& x, double h = 1e-4) {
  const long n = x.size();
  Eigen::MatrixXd hm(n, n);
  Eigen::VectorXd xp = x;
  const double f0 = f(x);
  for (long i = 0; i < n; ++i) {
    xp(i) = x(i) + h;
    const double fpp = f(xp);
    xp(i) = x(i) - h;
    const double fmm = f(xp);
    xp(i) = x(i);
    hm(i, i) = (fpp - 2.0 * f0 + fmm) / (h * h);
    for (long j = i + 1; j < n; ++j) {
      xp(i) = x(i) + h;
      xp(j) = x(j) + h;
      const double fa = f(xp);
      xp(j) = x(j) - h;
      const double fb = f(xp);
      xp(i) = x(i) - h;
      const double fd = f(xp);
      xp(j) = x(j) + h;
      const double fc = f(xp);
      xp(i) = x(i);
      xp(j) = x(j);
      hm(i, j) = hm(j, i) = (fa - fb - fc + fd) / (4.0 * h * h);
    }
  }
  return hm;
}

}  // namespace fpopf_test
