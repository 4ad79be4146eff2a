// SPDX-License-Identifier: MIT
#pragma once

#include "thinobs/common.hpp"

#include <Eigen/Sparse>

namespace thinobs::detail {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// BiCGSTAB with an incomplete-LU preconditioner; `who` prefixes the error text.
inline Eigen::VectorXd solve_sparse(const SpMat& M, const Eigen::VectorXd& rhs, int& iterations,
                                    const std::string& who = "split") {
    Eigen::BiCGSTAB<SpMat, Eigen::IncompleteLUT<double>> solver;
    solver.preconditioner().setDroptol(1e-4);
    solver.preconditioner().setFillfactor(10);
    solver.setTolerance(1e-13);
    solver.setMaxIterations(5000);
    solver.compute(M);
    if (solver.info() != Eigen::Success) fail_numerical(who + ": preconditioner factorization failed");
    Eigen::VectorXd x = solver.solve(rhs);
    iterations = int(solver.iterations());
    const double rel = (M * x - rhs).norm() / std::max(rhs.norm(), 1e-300);
    if (solver.info() != Eigen::Success && rel > 1e-10) fail_numerical(who + ": linear solve failed");
    return x;
}

}  // namespace thinobs::detail
