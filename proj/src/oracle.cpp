#include "graphfield/oracle.hpp"

#include "graphfield/bessel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

namespace graphfield {

MaternParams MaternParams::from_alpha(double alpha, double kappa, double tau) {
    if (!(alpha > 0.5)) throw std::invalid_argument("Matern: alpha must exceed 1/2");
    if (!(kappa > 0.0) || !(tau > 0.0)) throw std::invalid_argument("Matern: kappa and tau must be positive");
    return {alpha - 0.5, kappa, tau};
}

double MaternParams::variance() const {
    return std::tgamma(nu) /
           (tau * tau * std::pow(kappa, 2.0 * nu) * std::sqrt(4.0 * std::numbers::pi) * std::tgamma(nu + 0.5));
}

double MaternParams::practical_range() const { return std::sqrt(8.0 * nu) / kappa; }

double kappa_for_range(double alpha, double rho) { return std::sqrt(8.0 * (alpha - 0.5)) / rho; }

double tau_for_variance(double alpha, double kappa, double sigma2) {
    const MaternParams unit = MaternParams::from_alpha(alpha, kappa, 1.0);
    return std::sqrt(unit.variance() / sigma2);
}

double matern(double h, const MaternParams& p) {
    const double s2 = p.variance();
    const double x = p.kappa * std::abs(h);
    if (x == 0.0) return s2;
    if (x > 700.0) return 0.0;
    return s2 / (std::pow(2.0, p.nu - 1.0) * std::tgamma(p.nu)) * std::pow(x, p.nu) * bessel_k(p.nu, x);
}

int default_fold_terms(const MaternParams& p, double period) {
    return static_cast<int>(std::ceil(45.0 / (p.kappa * period))) + 1;
}

double periodized_matern(double x, double period, const MaternParams& p, int terms) {
    double s = matern(x, p);
    for (int k = 1; k <= terms; ++k) s += matern(x + k * period, p) + matern(x - k * period, p);
    return s;
}

double folded_interval(double s1, double s2, double length, const MaternParams& p, int terms) {
    const double period = 2.0 * length;
    if (terms <= 0) terms = default_fold_terms(p, period);
    return periodized_matern(s1 - s2, period, p, terms) + periodized_matern(s1 + s2, period, p, terms);
}

double folded_circle(double s1, double s2, double length, const MaternParams& p, int terms) {
    if (terms <= 0) terms = default_fold_terms(p, length);
    return periodized_matern(s1 - s2, length, p, terms);
}

double tadpole_eigenfunction(const TadpoleEigenpair& ep, const GraphPoint& s) {
    const double pi = std::numbers::pi;
    const double i = ep.index;
    switch (ep.kind) {
        case 0:
            return 1.0 / std::sqrt(3.0);
        case 1: {
            const double c = ep.index % 2 == 0 ? 1.0 : 1.0 / std::sqrt(3.0);
            if (s.edge == 0) return -2.0 * c * std::sin(i * pi / 2.0) * std::cos(i * pi * s.t / 2.0);
            return c * std::sin(i * pi * s.t / 2.0);
        }
        default: {
            const double c = std::sqrt(2.0 / 3.0);
            const double sign = (ep.index / 2) % 2 == 0 ? 1.0 : -1.0;
            if (s.edge == 0) return c * sign * std::cos(i * pi * s.t / 2.0);
            return c * std::cos(i * pi * s.t / 2.0);
        }
    }
}

std::vector<TadpoleEigenpair> tadpole_eigenpairs(int max_index) {
    std::vector<TadpoleEigenpair> out{{0.0, 0, 0}};
    for (int i = 1; i <= max_index; ++i) {
        const double lam = std::pow(i * std::numbers::pi / 2.0, 2);
        out.push_back({lam, 1, i});
        if (i % 2 == 0) out.push_back({lam, 2, i});
    }
    return out;
}

int default_mercer_terms(double alpha, double kappa, double tol, int cap) {
    const double lead = std::pow(kappa, -2.0 * alpha);
    auto tail = [&](double k) { return std::pow(kappa * kappa + std::pow(k * std::numbers::pi / 2.0, 2), -alpha) * k; };
    if (tail(cap) >= tol * lead) return cap;
    int lo = 1, hi = cap;
    while (lo < hi) {
        const int mid = lo + (hi - lo) / 2;
        if (tail(mid) < tol * lead)
            hi = mid;
        else
            lo = mid + 1;
    }
    return lo;
}

double tadpole_cov(const GraphPoint& s1, const GraphPoint& s2, double alpha, double kappa, double tau,
                   int max_index) {
    if (max_index <= 0) max_index = default_mercer_terms(alpha, kappa);
    const double k2 = kappa * kappa;
    double sum = std::pow(k2, -alpha) / 3.0;
    for (int i = 1; i <= max_index; ++i) {
        const double lam = std::pow(i * std::numbers::pi / 2.0, 2);
        const double w = std::pow(k2 + lam, -alpha);
        double term = tadpole_eigenfunction({lam, 1, i}, s1) * tadpole_eigenfunction({lam, 1, i}, s2);
        if (i % 2 == 0) term += tadpole_eigenfunction({lam, 2, i}, s1) * tadpole_eigenfunction({lam, 2, i}, s2);
        sum += w * term;
    }
    return sum / (tau * tau);
}

namespace {

// Memoized G_P with P-periodic, even reduction of the argument.
class PeriodicTable {
public:
    PeriodicTable(double period, const MaternParams& p)
        : period_(period), params_(p), terms_(default_fold_terms(p, period)) {}

    double operator()(double x) {
        x = std::fmod(std::abs(x), period_);
        if (x > 0.5 * period_) x = period_ - x;
        const long long key = std::llround(x * 1e12);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const double v = periodized_matern(static_cast<double>(key) * 1e-12, period_, params_, terms_);
        cache_.emplace(key, v);
        return v;
    }

private:
    double period_;
    MaternParams params_;
    int terms_;
    std::unordered_map<long long, double> cache_;
};

// Tadpole covariance with tau = 1 from the period-4 Matern fold. With
// S(x) = sum_{n >= 1} (kappa^2 + (n pi / 2)^2)^{-alpha} cos(n pi x / 2) split into
// even and odd n, each block of the Mercer sum reduces to these series.
class TadpoleFold {
public:
    TadpoleFold(double alpha, double kappa)
        : g4_(4.0, MaternParams::from_alpha(alpha, kappa, 1.0)), c0_(std::pow(kappa, -2.0 * alpha)) {}

    double operator()(const GraphPoint& a, const GraphPoint& b) {
        if (a.edge == 1 && b.edge == 1) {
            const double d = a.t - b.t, s = a.t + b.t;
            return c0_ / 3.0 + (odd(d) - odd(s)) / 6.0 + 0.5 * (even(d) - even(s)) + (even(d) + even(s)) / 3.0;
        }
        if (a.edge == 0 && b.edge == 0) {
            const double d = a.t - b.t, s = a.t + b.t;
            return c0_ / 3.0 + 2.0 / 3.0 * (odd(d) + odd(s)) + (even(d) + even(s)) / 3.0;
        }
        const double t = a.edge == 0 ? a.t : b.t;   // tail
        const double u = a.edge == 0 ? b.t : a.t;   // loop
        return c0_ / 3.0 - (odd(u + t - 1.0) - odd(u + t + 1.0) + odd(u - t - 1.0) - odd(u - t + 1.0)) / 6.0 +
               (even(t + 1.0 - u) + even(t + 1.0 + u)) / 3.0;
    }

private:
    double S(double x) { return 2.0 * g4_(x) - 0.5 * c0_; }
    double even(double x) { return 0.5 * (S(x) + S(x + 2.0)); }
    double odd(double x) { return 0.5 * (S(x) - S(x + 2.0)); }

    PeriodicTable g4_;
    double c0_;
};

}  // namespace

double tadpole_cov_folded(const GraphPoint& s1, const GraphPoint& s2, double alpha, double kappa, double tau) {
    TadpoleFold f(alpha, kappa);
    return f(s1, s2) / (tau * tau);
}

OracleGraph parse_oracle_graph(const std::string& name) {
    if (name == "interval") return OracleGraph::Interval;
    if (name == "circle") return OracleGraph::Circle;
    if (name == "tadpole") return OracleGraph::Tadpole;
    throw std::invalid_argument("no exact covariance for graph '" + name + "' (use interval, circle or tadpole)");
}

std::string to_string(OracleGraph g) {
    switch (g) {
        case OracleGraph::Interval: return "interval";
        case OracleGraph::Circle: return "circle";
        default: return "tadpole";
    }
}

MetricGraph oracle_graph(OracleGraph g) {
    switch (g) {
        case OracleGraph::Interval: return make_interval(1.0);
        case OracleGraph::Circle: return make_circle(2.0);
        default: return make_tadpole();
    }
}

Eigen::MatrixXd exact_covariance(OracleGraph g, const std::vector<GraphPoint>& points, double alpha, double kappa,
                                 double tau) {
    const MetricGraph graph = oracle_graph(g);
    for (const auto& p : points) graph.check_point(p);
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd out(n, n);
    const MaternParams p = MaternParams::from_alpha(alpha, kappa, tau);
    if (g == OracleGraph::Tadpole) {
        TadpoleFold f(alpha, kappa);
        const double s = 1.0 / (tau * tau);
        for (Eigen::Index j = 0; j < n; ++j)
            for (Eigen::Index i = j; i < n; ++i)
                out(i, j) = out(j, i) = s * f(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
        return out;
    }
    const double length = graph.edge(0).length;
    PeriodicTable table(g == OracleGraph::Interval ? 2.0 * length : length, p);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double b = points[static_cast<std::size_t>(j)].t;
        for (Eigen::Index i = j; i < n; ++i) {
            const double a = points[static_cast<std::size_t>(i)].t;
            const double v = g == OracleGraph::Interval ? table(a - b) + table(a + b) : table(a - b);
            out(i, j) = out(j, i) = v;
        }
    }
    return out;
}

Eigen::MatrixXd exact_covariance(OracleGraph g, const Mesh& mesh, double alpha, double kappa, double tau) {
    std::vector<GraphPoint> pts(static_cast<std::size_t>(mesh.num_nodes()));
    for (int i = 0; i < mesh.num_nodes(); ++i) pts[static_cast<std::size_t>(i)] = mesh.node_point(i);
    return exact_covariance(g, pts, alpha, kappa, tau);
}

DiscreteSpectrum discrete_spectrum(const SparseMatrix& L, const Diagonal& Ctilde) {
    const Eigen::VectorXd isq = Ctilde.array().rsqrt();
    const Eigen::MatrixXd M = isq.asDiagonal() * Eigen::MatrixXd(L) * isq.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) throw std::runtime_error("spectral oracle: eigensolver failed");
    return {es.eigenvalues(), isq.asDiagonal() * es.eigenvectors()};
}

Eigen::MatrixXd spectral_discrete_cov(const SparseMatrix& L, const Diagonal& Ctilde, const Diagonal& tau,
                                      double alpha) {
    if (L.rows() > 500) throw std::invalid_argument("spectral oracle limited to N_h <= 500");
    const DiscreteSpectrum sp = discrete_spectrum(L, Ctilde);
    const Eigen::VectorXd lam = sp.eigenvalues.array().pow(-alpha);
    const Eigen::MatrixXd W = tau.cwiseInverse().asDiagonal() * sp.eigenvectors;
    return W * lam.asDiagonal() * W.transpose();
}

}  // namespace graphfield
