#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "fpopf/dual.hpp"
#include "support/finite_diff.hpp"

using fpopf::Dual8;
using fpopf::DualSpace;

namespace {

// A deliberately tangled composite touching every supported operation.
template <class T>
T composite(const T& a, const T& b, const T& c) {
  return sin(a) * exp(b) / sqrt(c) + log(c) * square(a) - inverse(b + 2.0) +
         (a * b - c) * (a + 0.5) + cos(a * c) * 0.75;
}

double composite_plain(const Eigen::VectorXd& v) {
  const double a = v(0), b = v(1), c = v(2);
  return std::sin(a) * std::exp(b) / std::sqrt(c) + std::log(c) * a * a -
         1.0 / (b + 2.0) + (a * b - c) * (a + 0.5) + std::cos(a * c) * 0.75;
}

}  // namespace

TEST_CASE("second-order duals match finite differences") {
  Eigen::VectorXd v(3);
  v << 0.7, -0.4, 1.9;
  const DualSpace<8> sp(3);
  const Dual8 r = composite(sp.var(0, v(0)), sp.var(1, v(1)), sp.var(2, v(2)));

  REQUIRE(r.value() == Catch::Approx(composite_plain(v)).epsilon(1e-14));

  const Eigen::VectorXd g_fd = fpopf_test::fd_gradient(composite_plain, v);
  for (int i = 0; i < 3; ++i)
    REQUIRE(r.grad()(i) == Catch::Approx(g_fd(i)).margin(1e-7));

  const Eigen::MatrixXd h_fd = fpopf_test::fd_hessian(composite_plain, v);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      REQUIRE(r.hess()(i, j) == Catch::Approx(h_fd(i, j)).margin(1e-5));

  // The Hessian must be exactly symmetric by construction.
  REQUIRE((r.hess() - r.hess().transpose()).norm() == 0.0);
}

TEST_CASE("dual arithmetic identities hold exactly") {
  const DualSpace<8> sp(2);
  const Dual8 x = sp.var(0, 1.3);
  const Dual8 y = sp.var(1, -0.2);

  const Dual8 p = (x + y) * (x - y);
  const Dual8 q = square(x) - square(y);
  REQUIRE(p.value() == Catch::Approx(q.value()).epsilon(1e-14));
  REQUIRE((p.grad() - q.grad()).norm() < 1e-14);
  REQUIRE((p.hess() - q.hess()).norm() < 1e-14);

  const Dual8 one = x * inverse(x);
  REQUIRE(one.value() == Catch::Approx(1.0).epsilon(1e-14));
  REQUIRE(one.grad().norm() < 1e-14);
  REQUIRE(one.hess().norm() < 1e-13);
}

TEST_CASE("variables carry unit gradients and zero curvature") {
  const DualSpace<8> sp(4);
  const Dual8 x = sp.var(2, 5.5);
  REQUIRE(x.value() == 5.5);
  REQUIRE(x.grad()(2) == 1.0);
  REQUIRE(x.grad().sum() == 1.0);
  REQUIRE(x.hess().norm() == 0.0);
  const Dual8 c = sp.c(3.25);
  REQUIRE(c.value() == 3.25);
  REQUIRE(c.grad().norm() == 0.0);
}
