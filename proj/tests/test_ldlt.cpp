#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "fpopf/ldlt.hpp"
#include "fpopf/rng.hpp"

using fpopf::Rng;
using fpopf::SymIndefSolver;

namespace {

Eigen::MatrixXd random_symmetric(int n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = 2.0 * rng.u01() - 1.0;
  return a;
}

}  // namespace

TEST_CASE("inertia matches the eigenvalue signs") {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform_index(40));
    const Eigen::MatrixXd a = random_symmetric(n, rng);
    SymIndefSolver solver;
    REQUIRE(solver.factorize(a));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    int pos = 0, neg = 0;
    for (int i = 0; i < n; ++i) {
      if (eig.eigenvalues()(i) > 0.0) ++pos;
      else ++neg;
    }
    const fpopf::Inertia in = solver.inertia();
    REQUIRE(in.positive == pos);
    REQUIRE(in.negative == neg);
    REQUIRE(in.zero == 0);
  }
}

TEST_CASE("solve agrees with a dense LU factorization") {
  Rng rng(7);
  const int n = 30;
  const Eigen::MatrixXd a = random_symmetric(n, rng);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = 2.0 * rng.u01() - 1.0;

  SymIndefSolver solver;
  REQUIRE(solver.factorize(a));
  const Eigen::VectorXd x = solver.solve(b);
  const Eigen::VectorXd x_ref = Eigen::FullPivLU<Eigen::MatrixXd>(a).solve(b);
  REQUIRE((x - x_ref).norm() < 1e-10 * x_ref.norm());
  REQUIRE((a * x - b).norm() < 1e-10 * b.norm());
}

TEST_CASE("matrix right-hand sides are solved column-wise") {
  Rng rng(15);
  const int n = 20;
  const Eigen::MatrixXd a = random_symmetric(n, rng);
  Eigen::MatrixXd b(n, 4);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) b(i, j) = 2.0 * rng.u01() - 1.0;
  SymIndefSolver solver;
  REQUIRE(solver.factorize(a));
  const Eigen::MatrixXd x = solver.solve(b);
  REQUIRE((a * x - b).norm() < 1e-9 * b.norm());
}

TEST_CASE("exact singularity is reported") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 3);
  a(0, 0) = 1.0;
  a(1, 1) = -2.0;
  // third row/column identically zero
  SymIndefSolver solver;
  const bool ok = solver.factorize(a);
  REQUIRE((!ok || solver.singular()));
}

TEST_CASE("iterative refinement does not degrade the residual") {
  Rng rng(3);
  const int n = 40;
  Eigen::MatrixXd a = random_symmetric(n, rng);
  // Skew the spectrum to make the system mildly ill-conditioned.
  a += 1e4 * Eigen::MatrixXd::Identity(n, n);
  a(0, 0) = 1e-6;
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = 2.0 * rng.u01() - 1.0;
  SymIndefSolver solver;
  REQUIRE(solver.factorize(a));
  const Eigen::VectorXd x0 = solver.solve(b);
  const Eigen::VectorXd x1 = solver.solve_refined(a, b, 2);
  REQUIRE((a * x1 - b).norm() <= (a * x0 - b).norm() + 1e-12);
}
