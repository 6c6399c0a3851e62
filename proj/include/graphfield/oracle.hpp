#pragma once

#include "graphfield/assembly.hpp"
#include "graphfield/graph.hpp"
#include "graphfield/mesh.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace graphfield {

/// Matern parameters in the SPDE parameterization: nu = alpha - 1/2.
struct MaternParams {
    double nu = 0.5;
    double kappa = 1.0;
    double tau = 1.0;

    static MaternParams from_alpha(double alpha, double kappa, double tau);
    double alpha() const { return nu + 0.5; }
    /// sigma^2 = Gamma(nu) / (tau^2 kappa^{2 nu} sqrt(4 pi) Gamma(nu + 1/2)).
    double variance() const;
    /// rho = sqrt(8 nu) / kappa.
    double practical_range() const;
};

/// kappa giving practical range rho, and tau giving marginal variance sigma2.
double kappa_for_range(double alpha, double rho);
double tau_for_variance(double alpha, double kappa, double sigma2 = 1.0);

double matern(double h, const MaternParams& p);

/// Number of wrap terms K so the folded sum with the given period drops
/// terms below ~1e-17 of C(0).
int default_fold_terms(const MaternParams& p, double period);

/// G_P(x) = sum_{|k| <= K} C(x + kP).
double periodized_matern(double x, double period, const MaternParams& p, int terms);

/// Interval [0, L] with Neumann ends: G_{2L}(s1 - s2) + G_{2L}(s1 + s2).
/// terms <= 0 selects the default.
double folded_interval(double s1, double s2, double length, const MaternParams& p, int terms = 0);

/// Circle of circumference L: G_L(s1 - s2).
double folded_circle(double s1, double s2, double length, const MaternParams& p, int terms = 0);

/// Tadpole of make_tadpole(): edge 0 is the tail (tip at t = 0, junction at
/// t = 1), edge 1 the loop of length 2. Constant kappa and tau.
struct TadpoleEigenpair {
    double lambda;  // eigenvalue of -Laplacian
    int kind;       // 0: constant, 1: phi_i, 2: psi_i
    int index;
};

/// Eigenfunction value on the tadpole.
double tadpole_eigenfunction(const TadpoleEigenpair& ep, const GraphPoint& s);

/// Eigenpairs with index i <= max_index, in increasing eigenvalue order.
std::vector<TadpoleEigenpair> tadpole_eigenpairs(int max_index);

/// Smallest index K with (kappa^2 + (K pi / 2)^2)^{-alpha} K < tol kappa^{-2 alpha},
/// capped at `cap`.
int default_mercer_terms(double alpha, double kappa, double tol = 1e-10, int cap = 1000000);

/// Truncated Mercer series tau^{-2} sum_j (kappa^2 + lambda_j)^{-alpha} e_j(s1) e_j(s2).
double tadpole_cov(const GraphPoint& s1, const GraphPoint& s2, double alpha, double kappa, double tau,
                   int max_index = 0);

/// Same covariance in closed form through the length-4 periodization of the
/// Matern covariance. No truncation beyond the exponentially convergent fold.
double tadpole_cov_folded(const GraphPoint& s1, const GraphPoint& s2, double alpha, double kappa, double tau);

enum class OracleGraph { Interval, Circle, Tadpole };

OracleGraph parse_oracle_graph(const std::string& name);
std::string to_string(OracleGraph g);
/// interval: length 1; circle: length 2; tadpole: make_tadpole().
MetricGraph oracle_graph(OracleGraph g);

/// Exact covariance matrix at the given points of the oracle graph.
/// Arguments on a common grid are tabulated, so mesh nodes are cheap.
Eigen::MatrixXd exact_covariance(OracleGraph g, const std::vector<GraphPoint>& points, double alpha,
                                 double kappa, double tau);

/// Exact covariance at the nodes of a mesh of the oracle graph.
Eigen::MatrixXd exact_covariance(OracleGraph g, const Mesh& mesh, double alpha, double kappa, double tau);

/// Generalized eigenpairs of L v = lambda C~ v with V^T C~ V = I.
struct DiscreteSpectrum {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
};
DiscreteSpectrum discrete_spectrum(const SparseMatrix& L, const Diagonal& Ctilde);

/// tau^{-1} V Lambda^{-alpha} V^T tau^{-1}. Dense; throws above N = 500.
Eigen::MatrixXd spectral_discrete_cov(const SparseMatrix& L, const Diagonal& Ctilde, const Diagonal& tau,
                                      double alpha);

}  // namespace graphfield
