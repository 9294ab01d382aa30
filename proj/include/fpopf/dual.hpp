// Forward-mode scalar carrying an exact gradient and Hessian over a small
// set of local variables.
//
// Constraint rows in this project touch only a handful of variables each
// (a line's endpoint voltages/angles, one multiplier, a few intermediate
// entries), so second derivatives are propagated densely over that local
// set and scattered into the global matrices afterwards.  MaxN bounds the
// local set at compile time; storage stays on the stack.
#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>

namespace fpopf {

template <int MaxN>
class Dual2 {
 public:
  using Grad = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, MaxN, 1>;
  using Hess =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, MaxN, MaxN>;

  Dual2() : v_(0.0) {}

  static Dual2 constant(int n, double c) {
    Dual2 r;
    r.v_ = c;
    r.g_ = Grad::Zero(n);
    r.h_ = Hess::Zero(n, n);
    return r;
  }

  static Dual2 variable(int n, int index, double value) {
    Dual2 r = constant(n, value);
    assert(index >= 0 && index < n);
    r.g_(index) = 1.0;
    return r;
  }

  double value() const { return v_; }
  const Grad& grad() const { return g_; }
  const Hess& hess() const { return h_; }
  int size() const { return static_cast<int>(g_.size()); }

  Dual2 operator-() const {
    Dual2 r(*this);
    r.v_ = -r.v_;
    r.g_ = -r.g_;
    r.h_ = -r.h_;
    return r;
  }

  Dual2& operator+=(const Dual2& o) {
    v_ += o.v_;
    g_ += o.g_;
    h_ += o.h_;
    return *this;
  }
  Dual2& operator-=(const Dual2& o) {
    v_ -= o.v_;
    g_ -= o.g_;
    h_ -= o.h_;
    return *this;
  }
  Dual2& operator+=(double c) {
    v_ += c;
    return *this;
  }
  Dual2& operator-=(double c) {
    v_ -= c;
    return *this;
  }
  Dual2& operator*=(double c) {
    v_ *= c;
    g_ *= c;
    h_ *= c;
    return *this;
  }

  friend Dual2 operator+(Dual2 a, const Dual2& b) { return a += b; }
  friend Dual2 operator-(Dual2 a, const Dual2& b) { return a -= b; }
  friend Dual2 operator+(Dual2 a, double c) { return a += c; }
  friend Dual2 operator+(double c, Dual2 a) { return a += c; }
  friend Dual2 operator-(Dual2 a, double c) { return a -= c; }
  friend Dual2 operator-(double c, const Dual2& a) { return (-a) += c; }
  friend Dual2 operator*(const Dual2& a, double c) {
    Dual2 r(a);
    return r *= c;
  }
  friend Dual2 operator*(double c, const Dual2& a) { return a * c; }
  friend Dual2 operator/(const Dual2& a, double c) { return a * (1.0 / c); }

  friend Dual2 operator*(const Dual2& a, const Dual2& b) {
    Dual2 r = constant(a.size(), a.v_ * b.v_);
    r.g_ = a.v_ * b.g_ + b.v_ * a.g_;
    r.h_ = a.v_ * b.h_ + b.v_ * a.h_;
    r.h_.noalias() += a.g_ * b.g_.transpose();
    r.h_.noalias() += b.g_ * a.g_.transpose();
    return r;
  }

  friend Dual2 operator/(const Dual2& a, const Dual2& b) {
    return a * inverse(b);
  }
  friend Dual2 operator/(double c, const Dual2& b) { return inverse(b) * c; }

  // f(u) with user-supplied first and second derivative values at u.
  static Dual2 chain(const Dual2& u, double f, double df, double d2f) {
    Dual2 r = constant(u.size(), f);
    r.g_ = df * u.g_;
    r.h_ = df * u.h_;
    r.h_.noalias() += d2f * (u.g_ * u.g_.transpose());
    return r;
  }

  friend Dual2 inverse(const Dual2& u) {
    const double iv = 1.0 / u.v_;
    return chain(u, iv, -iv * iv, 2.0 * iv * iv * iv);
  }
  friend Dual2 sin(const Dual2& u) {
    const double s = std::sin(u.v_), c = std::cos(u.v_);
    return chain(u, s, c, -s);
  }
  friend Dual2 cos(const Dual2& u) {
    const double s = std::sin(u.v_), c = std::cos(u.v_);
    return chain(u, c, -s, -c);
  }
  friend Dual2 exp(const Dual2& u) {
    const double e = std::exp(u.v_);
    return chain(u, e, e, e);
  }
  friend Dual2 log(const Dual2& u) {
    const double iv = 1.0 / u.v_;
    return chain(u, std::log(u.v_), iv, -iv * iv);
  }
  friend Dual2 sqrt(const Dual2& u) {
    const double r = std::sqrt(u.v_);
    return chain(u, r, 0.5 / r, -0.25 / (r * u.v_));
  }
  friend Dual2 square(const Dual2& u) { return chain(u, u.v_ * u.v_, 2.0 * u.v_, 2.0); }

 private:
  double v_;
  Grad g_;
  Hess h_;
};

// Local variable space helper: binds a size once, hands out constants and
// indexed variables of that size.
template <int MaxN>
struct DualSpace {
  int n;
  explicit DualSpace(int n_in) : n(n_in) { assert(n <= MaxN); }
  Dual2<MaxN> c(double v) const { return Dual2<MaxN>::constant(n, v); }
  Dual2<MaxN> var(int i, double v) const { return Dual2<MaxN>::variable(n, i, v); }
};

using Dual8 = Dual2<8>;
using Dual28 = Dual2<28>;

}  // namespace fpopf
