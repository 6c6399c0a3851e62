#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <memory>
#include <string>

namespace graphfield {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Sparse LL^T with fill-reducing (AMD) ordering, plus the operations the
/// GMRF layer needs from a factor: solves, log-determinant, sampling and
/// selected inversion.
class SparseCholesky {
public:
    SparseCholesky() = default;
    /// Throws std::runtime_error("... not SPD ...") if the factorization fails.
    explicit SparseCholesky(const SparseMatrix& A, const std::string& label = "matrix");

    Eigen::Index size() const { return n_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
    Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const;

    double log_determinant() const;

    /// Draws x with covariance A^{-1} from standard normal z: x = P^T L^{-T} z.
    Eigen::VectorXd sample(const Eigen::VectorXd& z) const;

    /// Diagonal of the Cholesky factor (permuted ordering).
    Eigen::VectorXd factor_diagonal() const;

    /// diag(A^{-1}) by the Takahashi recurrences on the factor.
    Eigen::VectorXd inverse_diagonal() const;

    /// Entries of A^{-1} on the symmetric pattern of the factor, original ordering.
    SparseMatrix selected_inverse() const;

private:
    SparseMatrix takahashi() const;  // permuted ordering, lower triangle

    using Factor = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;
    std::shared_ptr<const Factor> llt_;  // shared read-only between copies
    SparseMatrix L_;
    Eigen::Index n_ = 0;
};

}  // namespace graphfield
