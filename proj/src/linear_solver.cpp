#include "conic/linear_solver.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

namespace conic {

IterativeSolver::IterativeSolver(double rel_tol, int max_iter)
    : rel_tol_(rel_tol), max_iter_(max_iter) {
  ilu_.setDroptol(1e-6);
  ilu_.setFillfactor(10);
}

Eigen::VectorXd IterativeSolver::solve(const SparseMatrix& a, const Eigen::VectorXd& b) {
  if (stale_) {
    ilu_.compute(a);
    if (ilu_.info() != Eigen::Success) throw LinearSolveError("incomplete LU failed");
    stale_ = false;
  }
  // Hand-rolled preconditioned BiCGSTAB so the factorization can be reused
  // across Jacobians that differ slightly.
  const double bnorm = b.norm();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) {
    iterations_ = 0;
    return x;
  }
  Eigen::VectorXd r = b;
  const Eigen::VectorXd r0 = r;
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd p = Eigen::VectorXd::Zero(b.size());
  for (int it = 1; it <= max_iter_; ++it) {
    const double rho_new = r0.dot(r);
    if (rho_new == 0.0) break;
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    p = r + beta * (p - omega * v);
    const Eigen::VectorXd y = ilu_.solve(p);
    v = a * y;
    alpha = rho / r0.dot(v);
    const Eigen::VectorXd s = r - alpha * v;
    if (s.norm() <= rel_tol_ * bnorm) {
      x += alpha * y;
      iterations_ = it;
      return x;
    }
    const Eigen::VectorXd z = ilu_.solve(s);
    const Eigen::VectorXd t = a * z;
    const double tt = t.squaredNorm();
    omega = tt > 0.0 ? t.dot(s) / tt : 0.0;
    x += alpha * y + omega * z;
    r = s - omega * t;
    if (r.norm() <= rel_tol_ * bnorm) {
      iterations_ = it;
      return x;
    }
    if (omega == 0.0) break;
  }
  // Fall back to a fresh factorization once before giving up.
  if (!stale_) {
    stale_ = true;
    return solve(a, b);
  }
  throw LinearSolveError("BiCGSTAB did not converge");
}

Eigen::VectorXd direct_solve(const SparseMatrix& a, const Eigen::VectorXd& b) {
  Eigen::SparseMatrix<double> col = a;
  col.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(col);
  if (lu.info() != Eigen::Success) throw LinearSolveError("sparse LU factorization failed");
  Eigen::VectorXd x = lu.solve(b);
  if (lu.info() != Eigen::Success) throw LinearSolveError("sparse LU solve failed");
  return x;
}

SparseMatrix assemble(std::size_t rows, std::size_t cols, const Triplets& t) {
  SparseMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

}  // namespace conic
