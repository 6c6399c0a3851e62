#pragma once

#include "graphfield/field.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace graphfield {

/// Observations of one replicate: y_i = F_i beta + u(s_i) + eps_i.
struct Replicate {
    std::vector<GraphPoint> locations;
    Eigen::VectorXd y;
    Eigen::MatrixXd design;  // n x p fixed-effect covariates; p may be 0
};

struct ObservationSet {
    std::vector<Replicate> replicates;

    std::size_t total() const;
    int num_covariates() const;
};

/// CSV with columns edge_id,t,value,replicate (header required, any order;
/// replicate defaults to 0 when absent). Any further columns are read as
/// fixed-effect covariates. Edge ids are mapped to edge indices through the
/// graph and replicates are numbered in order of first appearance.
ObservationSet read_observations_csv(const std::string& text, const MetricGraph& graph);
std::string write_observations_csv(const ObservationSet& obs, const MetricGraph& graph);

/// Factorized posterior precision Q + A_bar^T A_bar / sigma_e^2 of the stacked
/// block vector X = (x_1, ..., x_{m+1}) for one set of locations.
class Posterior {
public:
    Posterior(const FieldModel& model, const PrecisionBlocks& blocks, const std::vector<GraphPoint>& locations,
              double sigma_e);

    /// Posterior mean of X for data y (already centered by the fixed effects).
    Eigen::VectorXd stacked_mean(const Eigen::VectorXd& y) const;
    /// Posterior mean of u at the mesh nodes.
    Eigen::VectorXd field_mean(const Eigen::VectorXd& y) const;
    /// u(s) under a stacked mean returned by stacked_mean.
    double mean_at(const GraphPoint& s, const Eigen::VectorXd& stacked) const;
    /// Posterior variance of u(s).
    double variance_at(const GraphPoint& s) const;
    /// Posterior variances of u at every mesh node (one solve per node).
    Eigen::VectorXd node_variances() const;

    double log_det_posterior() const { return chol_.log_determinant(); }
    const Eigen::SparseMatrix<double>& A_bar() const { return Abar_; }
    double sigma_e() const { return sigma_e_; }
    /// Sigma_y^{-1} v via the Woodbury identity.
    Eigen::MatrixXd apply_inverse_covariance(const Eigen::MatrixXd& v) const;

private:
    Eigen::SparseMatrix<double> stacked_row(const GraphPoint& s) const;

    const Mesh* mesh_;
    int blocks_;
    int n_nodes_;
    double sigma_e_;
    Eigen::SparseMatrix<double> Abar_;
    SparseCholesky chol_;
};

struct PosteriorSummary {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;  // empty unless requested
};

PosteriorSummary kriging(const FieldModel& model, const PrecisionBlocks& blocks, const std::vector<GraphPoint>& locations,
                         const Eigen::VectorXd& y, double sigma_e, bool with_variance = false);

/// beta0 + E(w | z) at the nodes, where z - beta0 is kriged under `model`.
/// Optionally standardized to node mean 0 and standard deviation 1.
Eigen::VectorXd covariate_from_observations(const FieldModel& model, const std::vector<GraphPoint>& locations,
                                            const Eigen::VectorXd& z, double beta0, double sigma_e,
                                            bool standardize = false);

/// Gaussian marginal log-likelihood summed over replicates, beta fixed.
double log_likelihood(const FieldModel& model, const PrecisionBlocks& blocks, const ObservationSet& obs,
                      double sigma_e, const Eigen::VectorXd& beta);

struct ProfileLikelihood {
    double value = 0.0;
    Eigen::VectorXd beta;  // generalized least squares estimate
};

/// Same with beta profiled out by generalized least squares.
ProfileLikelihood profile_log_likelihood(const FieldModel& model, const PrecisionBlocks& blocks,
                                         const ObservationSet& obs, double sigma_e);

/// Structure of a model to be fitted.
struct ModelTemplate {
    std::shared_ptr<const Mesh> mesh;
    Eigen::MatrixXd tau_covariates;    // N x p_tau, may have no columns
    Eigen::MatrixXd kappa_covariates;  // N x p_kappa
    std::optional<double> alpha;       // std::nullopt: estimate alpha in (1/2, 3)
    std::optional<int> m;              // std::nullopt: calibrate from the mesh
    /// tau = sigma_kappa / sigma0 with log sigma0 = theta_tau(0); tau covariates unused.
    bool variance_stationary = false;
};

struct FitParameters {
    Eigen::VectorXd theta_tau;
    Eigen::VectorXd theta_kappa;
    double sigma_e = 1.0;
    double alpha = 1.0;
    Eigen::VectorXd beta;
};

FieldModel build_model(const ModelTemplate& tmpl, const FitParameters& p);

struct FitOptions {
    int max_evaluations = 3000;
    double tolerance = 1e-5;  // simplex size at convergence
    std::vector<double> alpha_grid{0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5};
    bool standard_errors = true;
};

struct FitResult {
    FitParameters estimate;
    std::vector<std::string> names;  // packed parameter names
    Eigen::VectorXd packed;          // optimizer scale (logs, transformed alpha)
    Eigen::VectorXd standard_errors; // on the packed scale; NaN if the Hessian is not PD
    double log_likelihood = 0.0;
    bool converged = false;
    int evaluations = 0;
    std::string message;
    std::vector<std::string> notes;  // rational order changes, Hessian problems
};

/// Maximum likelihood by Nelder-Mead on log-scale parameters, beta profiled.
FitResult fit(const ModelTemplate& tmpl, const ObservationSet& obs, const FitParameters& start,
              const FitOptions& opts = {});

struct CvResult {
    std::vector<double> radii;
    std::vector<double> mse;
    std::vector<double> nls;
    std::vector<int> predictions;  // held-out predictions per radius
    std::vector<int> skipped;      // locations with every observation excluded
};

/// Leave-radius-out cross-validation: for each location and radius R, drop
/// observations within geodesic distance R, predict, and score. Fixed effects
/// use `beta` (size must match the design). Averages over locations and replicates.
CvResult leave_radius_out_cv(const FieldModel& model, const PrecisionBlocks& blocks, const ObservationSet& obs,
                             double sigma_e, const Eigen::VectorXd& beta, const std::vector<double>& radii,
                             int threads = 1);

}  // namespace graphfield
