#pragma once

#include "graphfield/oracle.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <optional>
#include <string>
#include <vector>

namespace graphfield {

/// error^2 = w^T (D o D) w with D = exact_fine - A approx_coarse A^T.
double l2_error(const Eigen::MatrixXd& exact_fine, const Eigen::MatrixXd& approx_coarse,
                const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& w);

/// max |D_ij| over the fine nodes.
double sup_error(const Eigen::MatrixXd& exact_fine, const Eigen::MatrixXd& approx_coarse,
                 const Eigen::SparseMatrix<double>& A);

struct ErrorRecord {
    std::string graph;
    double alpha = 0.0;
    double rho = 0.0;
    int m = 0;
    double h_target = 0.0;
    double h = 0.0;  // realized mesh width
    double l2 = 0.0;
    double sup = 0.0;
    double seconds = 0.0;
};

struct RateFit {
    double alpha = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // residual standard deviation of the fit
    double theoretical = 0.0;
    int levels = 0;
};

/// min(2 alpha - 1/2, 2).
double theoretical_rate(double alpha);

/// Least-squares fit of log error = c + r log h. Needs at least 4 levels.
RateFit fit_rate(double alpha, const std::vector<double>& h, const std::vector<double>& error);

struct ExperimentOptions {
    double h_ok = 1.0 / 512.0;  // fine reference mesh
    double calibration = 1.0;   // c in the order calibration
    std::optional<int> fixed_m;  // overrides the calibration
    int threads = 1;
};

struct RateResult {
    std::vector<ErrorRecord> records;
    std::vector<RateFit> fits;
};

/// For each alpha and each level l, mesh width h = 2^{-l}; kappa from the
/// practical range rho and tau for unit marginal variance.
RateResult rate_experiment(OracleGraph graph, const std::vector<double>& alphas, const std::vector<double>& levels,
                           double rho, const ExperimentOptions& opts = {});

/// Errors for every (alpha, m, rho) at one coarse mesh width.
std::vector<ErrorRecord> error_grid(OracleGraph graph, const std::vector<double>& alphas, const std::vector<int>& ms,
                                    const std::vector<double>& rhos, double h, const ExperimentOptions& opts = {});

}  // namespace graphfield
