#pragma once

// Sparse linear solves shared by the flow and elliptic modules.

#include <Eigen/Sparse>

#include <stdexcept>
#include <string>
#include <vector>

namespace conic {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplets = std::vector<Eigen::Triplet<double>>;

class LinearSolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// BiCGSTAB with an incomplete-LU preconditioner. The preconditioner is kept
/// until refresh() so Newton iterations within one step can share it.
class IterativeSolver {
 public:
  explicit IterativeSolver(double rel_tol = 1e-11, int max_iter = 2000);

  void refresh() { stale_ = true; }
  Eigen::VectorXd solve(const SparseMatrix& a, const Eigen::VectorXd& b);
  [[nodiscard]] int last_iterations() const { return iterations_; }

 private:
  double rel_tol_;
  int max_iter_;
  bool stale_ = true;
  int iterations_ = 0;
  Eigen::IncompleteLUT<double> ilu_;
};

/// Sparse LU for small numbers of solves with awkward structure (bordered
/// systems with zero diagonals).
Eigen::VectorXd direct_solve(const SparseMatrix& a, const Eigen::VectorXd& b);

SparseMatrix assemble(std::size_t rows, std::size_t cols, const Triplets& t);

}  // namespace conic
