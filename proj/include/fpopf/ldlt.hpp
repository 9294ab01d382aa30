// Dense symmetric indefinite factorization (Bunch-Kaufman via LAPACK's
// dsytrf/dsytrs) with inertia extraction.  The interior-point method uses
// the inertia to decide when the KKT matrix needs primal regularization.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

extern "C" {
void dsytrf_(const char* uplo, const int* n, double* a, const int* lda,
             int* ipiv, double* work, const int* lwork, int* info);
void dsytrs_(const char* uplo, const int* n, const int* nrhs, const double* a,
             const int* lda, const int* ipiv, double* b, const int* ldb,
             int* info);
void dsytri_(const char* uplo, const int* n, double* a, const int* lda,
             const int* ipiv, double* work, int* info);
void dsymm_(const char* side, const char* uplo, const int* m, const int* n,
            const double* alpha, const double* a, const int* lda,
            const double* b, const int* ldb, const double* beta, double* c,
            const int* ldc);
}

namespace fpopf {

struct Inertia {
  int positive = 0;
  int negative = 0;
  int zero = 0;
};

class SymIndefSolver {
 public:
  // Factors the lower triangle of A (A is copied).  Returns false when a
  // pivot is exactly zero (singular matrix); the inertia is still filled
  // for the columns processed before the breakdown.
  bool factorize(const Eigen::MatrixXd& A) {
    n_ = static_cast<int>(A.rows());
    f_ = A;
    ipiv_.assign(static_cast<std::size_t>(n_), 0);
    int info = 0;
    const char uplo = 'L';
    int lwork = -1;
    double wk_query = 0.0;
    dsytrf_(&uplo, &n_, f_.data(), &n_, ipiv_.data(), &wk_query, &lwork, &info);
    lwork = static_cast<int>(wk_query);
    if (lwork < n_) lwork = n_ > 1 ? n_ : 1;
    work_.resize(static_cast<std::size_t>(lwork));
    dsytrf_(&uplo, &n_, f_.data(), &n_, ipiv_.data(), work_.data(), &lwork, &info);
    singular_ = info > 0;
    compute_inertia();
    factored_ = !singular_;
    return factored_;
  }

  const Inertia& inertia() const { return inertia_; }
  bool singular() const { return singular_; }

  void solve_in_place(Eigen::Ref<Eigen::MatrixXd> b) const {
    const char uplo = 'L';
    const int nrhs = static_cast<int>(b.cols());
    const int ldb = static_cast<int>(b.outerStride());
    int info = 0;
    dsytrs_(&uplo, &n_, &nrhs, f_.data(), &n_, ipiv_.data(), b.data(), &ldb, &info);
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    Eigen::MatrixXd b = rhs;
    solve_in_place(b);
    return b.col(0);
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd b = rhs;
    solve_in_place(b);
    return b;
  }

  // One step of iterative refinement against the original matrix.
  Eigen::VectorXd solve_refined(const Eigen::MatrixXd& A,
                                const Eigen::VectorXd& rhs,
                                int refine_steps = 1) const {
    Eigen::VectorXd x = solve(rhs);
    for (int it = 0; it < refine_steps; ++it) {
      Eigen::VectorXd r = rhs - A.selfadjointView<Eigen::Lower>() * x;
      x += solve(r);
    }
    return x;
  }

 private:
  void compute_inertia() {
    inertia_ = Inertia{};
    int k = 0;
    while (k < n_) {
      if (ipiv_[static_cast<std::size_t>(k)] > 0) {
        const double d = f_(k, k);
        if (d > 0.0) {
          ++inertia_.positive;
        } else if (d < 0.0) {
          ++inertia_.negative;
        } else {
          ++inertia_.zero;
        }
        ++k;
      } else {
        // 2x2 pivot block; Bunch-Kaufman selects these to be indefinite,
        // but classify from trace/determinant to be safe.
        const double a = f_(k, k);
        const double c = f_(k + 1, k + 1);
        const double b = f_(k + 1, k);
        const double det = a * c - b * b;
        const double tr = a + c;
        if (det < 0.0) {
          ++inertia_.positive;
          ++inertia_.negative;
        } else if (det > 0.0) {
          if (tr > 0.0) {
            inertia_.positive += 2;
          } else {
            inertia_.negative += 2;
          }
        } else {
          ++inertia_.zero;
          if (tr > 0.0) {
            ++inertia_.positive;
          } else if (tr < 0.0) {
            ++inertia_.negative;
          } else {
            ++inertia_.zero;
          }
        }
        k += 2;
      }
    }
  }

  int n_ = 0;
  Eigen::MatrixXd f_;
  std::vector<int> ipiv_;
  std::vector<double> work_;
  Inertia inertia_;
  bool singular_ = false;
  bool factored_ = false;
};

}  // namespace fpopf
