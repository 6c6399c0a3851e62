#pragma once

#include "graphfield/assembly.hpp"
#include "graphfield/cholesky.hpp"
#include "graphfield/mesh.hpp"
#include "graphfield/rational.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace graphfield {

/// Largest rational order used when m is calibrated from the mesh width.
inline constexpr int kMaxRationalOrder = 16;

/// Discretized generalized Whittle-Matern field
/// (kappa^2 - Laplacian)^{alpha/2} (tau u) = W on a mesh, with nodal kappa and tau.
class FieldModel {
public:
    /// m: rational order. std::nullopt calibrates it from the mesh width
    /// (capped at kMaxRationalOrder, and lowered while the rational fit does
    /// not converge, which happens for fractional parts near 0); ignored (set
    /// to 0) for integer alpha.
    FieldModel(std::shared_ptr<const Mesh> mesh, double alpha, const Diagonal& kappa, const Diagonal& tau,
               std::optional<int> m = std::nullopt);
    FieldModel(std::shared_ptr<const Mesh> mesh, double alpha, const EdgeFunction& kappa, const EdgeFunction& tau,
               std::optional<int> m = std::nullopt);

    const Mesh& mesh() const { return *mesh_; }
    std::shared_ptr<const Mesh> mesh_ptr() const { return mesh_; }
    int size() const { return mesh_->num_nodes(); }
    double alpha() const { return alpha_; }
    int floor_alpha() const { return integer_part(alpha_); }
    double frac_alpha() const { return fractional_part(alpha_); }
    /// 0 for integer alpha.
    int order() const { return m_; }

    const Diagonal& kappa() const { return kappa_; }
    const Diagonal& tau() const { return tau_; }
    const SparseMatrix& L() const { return L_; }
    const Diagonal& Ctilde() const { return Ctilde_; }

    /// Minimum nodal kappa^2, used to normalize L before the rational step.
    double kappa0_squared() const { return kappa_.array().square().minCoeff(); }

    /// Partial fractions of lambda^{-{alpha}} for the unnormalized operator
    /// C~^{-1} L (residues and poles already rescaled). Empty for integer alpha.
    const PartialFractions& fractions() const { return pf_; }
    const RationalApprox& approximation() const { return approx_; }

    FieldModel with_tau(const Diagonal& tau) const;

private:
    void init(std::optional<int> m);

    std::shared_ptr<const Mesh> mesh_;
    double alpha_;
    Diagonal kappa_;
    Diagonal tau_;
    SparseMatrix L_;
    Diagonal Ctilde_;
    int m_ = 0;
    RationalApprox approx_;
    PartialFractions pf_;
};

/// Cached rational approximation of x^{frac} on [0, 1] (thread-safe).
const RationalApprox& cached_rational(double frac, int m);

/// Q_1..Q_{m+1} (or the single integer-alpha block) with factorizations.
struct PrecisionBlocks {
    std::vector<SparseMatrix> Q;
    std::vector<SparseCholesky> factors;
    /// Crude condition estimates (max/min squared factor diagonal) per block.
    std::vector<double> condition;
    std::vector<std::string> warnings;

    std::size_t count() const { return Q.size(); }
    int size() const { return Q.empty() ? 0 : static_cast<int>(Q.front().rows()); }
};

/// Throws std::runtime_error("block <i> not SPD ...") on factorization failure.
PrecisionBlocks precision_blocks(const FieldModel& model);

/// Sigma_u by the partial-fraction formula with solves against L and
/// L - p_i C~ (independent of the block precisions). Throws above N = 20000.
Eigen::MatrixXd covariance_matrix(const FieldModel& model);

/// Selected columns of the same matrix.
Eigen::MatrixXd covariance_columns(const FieldModel& model, const std::vector<int>& columns);

/// sum_i Q_i^{-1}, dense.
Eigen::MatrixXd covariance_from_blocks(const PrecisionBlocks& blocks);

/// Sigma_u psi(s0) for a point on the graph.
Eigen::VectorXd covariance_row(const FieldModel& model, const PrecisionBlocks& blocks, const GraphPoint& s0);

enum class VarianceMethod { Auto, Selected, Dense };

/// Nodal marginal variances diag(sum_i Q_i^{-1}). Auto uses dense inversion
/// below N = 300 and selected inversion otherwise.
Eigen::VectorXd marginal_variance(const PrecisionBlocks& blocks, VarianceMethod method = VarianceMethod::Auto);
Eigen::VectorXd marginal_std(const PrecisionBlocks& blocks, VarianceMethod method = VarianceMethod::Auto);

/// Per-block RNG seed derived from (seed, block).
std::uint64_t block_seed(std::uint64_t seed, std::uint64_t block);

/// n_samples x N matrix of nodal samples u = sum_i x_i, x_i ~ N(0, Q_i^{-1}).
/// Blocks are sampled on up to `threads` threads; output does not depend on it.
Eigen::MatrixXd sample(const PrecisionBlocks& blocks, int n_samples, std::uint64_t seed, int threads = 1);

/// tau = sigma_kappa / sigma0 with sigma_kappa the marginal std of the tau = 1 field.
FieldModel variance_stationary_model(std::shared_ptr<const Mesh> mesh, const Diagonal& kappa, double alpha,
                                     double sigma0, std::optional<int> m = std::nullopt);

/// log tau = theta_tau(0) + G theta_tau(1:), log kappa likewise; G is N x p.
std::pair<Diagonal, Diagonal> log_regression_coefficients(const Eigen::MatrixXd& covariates,
                                                         const Eigen::VectorXd& theta_tau,
                                                         const Eigen::VectorXd& theta_kappa);

}  // namespace graphfield
