#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace graphfield {

/// Monomial coefficients are only formed up to this order.
inline constexpr int kMaxMonomialOrder = 8;

/// Type (m, m) rational approximation of x^alpha on [0, b].
///
/// Internally the approximant lives on [0, 1] in barycentric form
/// r(x) = sum_j w_j f_j / (x - z_j) / sum_j w_j / (x - z_j); evaluation on
/// [0, b] uses r_b(x) = b^alpha r(x / b).
struct RationalApprox {
    double alpha = 0.5;
    int m = 1;
    double b = 1.0;

    Eigen::VectorXd support;   // z_j in [0, 1], m + 1 entries
    Eigen::VectorXd values;    // z_j^alpha
    Eigen::VectorXd weights;   // barycentric weights
    Eigen::VectorXd nodes;     // the 2m + 1 interpolation nodes on [0, 1]

    /// Monomial coefficients on [0, b], lowest degree first, with b_0 = 1.
    /// Empty when m > kMaxMonomialOrder.
    Eigen::VectorXd numerator;
    Eigen::VectorXd denominator;

    double sup_error = 0.0;        // on [0, b]
    double deviation_ratio = 0.0;  // min / max of the local error extrema
    int iterations = 0;

    double operator()(double x) const;
    /// Same approximant through the monomial coefficients.
    double eval_monomial(double x) const;
    /// r on [0, 1], before rescaling.
    double eval_unit(double x) const;
};

struct BrasilOptions {
    double target_ratio = 0.95;
    int max_iterations = 1000;
};

/// Thrown when the node adjustment does not reach the target ratio. Carries
/// the last iterate.
class BrasilNonConvergence : public std::runtime_error {
public:
    BrasilNonConvergence(const std::string& what, RationalApprox last)
        : std::runtime_error(what), last_(std::move(last)) {}
    const RationalApprox& last_iterate() const { return last_; }
    double deviation_ratio() const { return last_.deviation_ratio; }

private:
    RationalApprox last_;
};

/// Minimax approximation of x^alpha on [0, b] by iterated rescaling of the
/// interpolation intervals until the local error maxima level out.
RationalApprox brasil(double alpha, int m, double b = 1.0, const BrasilOptions& opts = {});

/// Local maxima of |x^alpha - r(x)| on each interval between consecutive
/// interpolation nodes (2m + 2 values), on [0, 1].
Eigen::VectorXd local_error_extrema(const RationalApprox& r);

/// r expressed in lambda = 1/x: r(1/lambda) = sum_i r_i / (lambda - p_i) + k.
struct PartialFractions {
    Eigen::VectorXd residues;
    Eigen::VectorXd poles;
    double k = 0.0;

    double operator()(double lambda) const;
};

/// Throws std::runtime_error on complex or repeated poles, and
/// "decomposition not a covariance" if any r_i <= 0, p_i >= 0 or k <= 0.
PartialFractions partial_fractions(const RationalApprox& r);

/// m = c * ceil((min(2 alpha - 1/2, 2) + 1/2)^2 log^2(h) / (4 pi^2 {alpha})),
/// natural log. Returns 0 for integer alpha. Throws unless 0 < h < 1.
int calibrate_order(double alpha, double h, double c = 1.0);

/// Fractional part {alpha} and floor.
double fractional_part(double alpha);
int integer_part(double alpha);

}  // namespace graphfield
