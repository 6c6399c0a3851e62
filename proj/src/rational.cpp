#include "graphfield/rational.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <limits>
#include <sstream>
#include <vector>

namespace graphfield {

namespace {

// Neumaier compensated sum.
struct CompensatedSum {
    double sum = 0.0;
    double c = 0.0;
    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            c += (sum - t) + v;
        else
            c += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + c; }
};

double bary_eval(const Eigen::VectorXd& z, const Eigen::VectorXd& f, const Eigen::VectorXd& w, double x) {
    CompensatedSum num, den;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
        const double d = x - z(j);
        if (d == 0.0) return f(j);
        num.add(w(j) * f(j) / d);
        den.add(w(j) / d);
    }
    return num.value() / den.value();
}

// Denominator D(x) = sum w_j / (x - z_j) and its derivative.
std::pair<double, double> bary_denominator(const Eigen::VectorXd& z, const Eigen::VectorXd& w, double x) {
    CompensatedSum d, dd;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
        const double inv = 1.0 / (x - z(j));
        d.add(w(j) * inv);
        dd.add(-w(j) * inv * inv);
    }
    return {d.value(), dd.value()};
}

double bary_numerator(const Eigen::VectorXd& z, const Eigen::VectorXd& f, const Eigen::VectorXd& w, double x) {
    CompensatedSum n;
    for (Eigen::Index j = 0; j < z.size(); ++j) n.add(w(j) * f(j) / (x - z(j)));
    return n.value();
}

// Barycentric interpolant through all 2m+1 nodes: even nodes are support
// points, odd nodes enter through the Loewner matrix null vector.
void interpolate(RationalApprox& r) {
    const int m = r.m;
    r.support.resize(m + 1);
    r.values.resize(m + 1);
    Eigen::VectorXd test(m), ftest(m);
    for (int j = 0; j <= m; ++j) {
        r.support(j) = r.nodes(2 * j);
        r.values(j) = std::pow(r.support(j), r.alpha);
    }
    for (int i = 0; i < m; ++i) {
        test(i) = r.nodes(2 * i + 1);
        ftest(i) = std::pow(test(i), r.alpha);
    }
    Eigen::MatrixXd loewner(m + 1, m + 1);
    loewner.setZero();  // padded with a zero row so the SVD is square
    for (int i = 0; i < m; ++i)
        for (int j = 0; j <= m; ++j) loewner(i, j) = (ftest(i) - r.values(j)) / (test(i) - r.support(j));
    // Equilibrate rows and columns: with nodes spread over many decades the
    // raw entries span as many orders of magnitude. The exact null vector
    // transforms back through the column scaling.
    Eigen::VectorXd colscale = Eigen::VectorXd::Ones(m + 1);
    for (int sweep = 0; sweep < 3; ++sweep) {
        for (int i = 0; i < m; ++i) {
            const double nrm = loewner.row(i).norm();
            if (nrm > 0.0) loewner.row(i) /= nrm;
        }
        for (int j = 0; j <= m; ++j) {
            const double nrm = loewner.col(j).norm();
            if (nrm > 0.0) {
                loewner.col(j) /= nrm;
                colscale(j) /= nrm;
            }
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(loewner, Eigen::ComputeFullV);
    Eigen::VectorXd w = colscale.cwiseProduct(svd.matrixV().col(m));
    r.weights = w / w.norm();
}

double unit_error(const RationalApprox& r, double x) { return std::pow(x, r.alpha) - r.eval_unit(x); }

// max |error| on [lo, hi]: coarse scan then golden-section refinement.
double interval_max(const RationalApprox& r, double lo, double hi) {
    constexpr int kScan = 30;
    std::vector<double> xs;
    xs.reserve(kScan + 1);
    if (lo == 0.0) {
        xs.push_back(0.0);
        for (int i = 0; i < kScan; ++i) xs.push_back(hi * std::pow(10.0, -8.0 + 8.0 * i / (kScan - 1)));
    } else if (hi / lo > 4.0) {
        for (int i = 0; i < kScan; ++i) xs.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (kScan - 1)));
    } else {
        for (int i = 0; i < kScan; ++i) xs.push_back(lo + (hi - lo) * i / (kScan - 1));
    }
    std::size_t best = 0;
    double best_val = -1.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double e = std::abs(unit_error(r, xs[i]));
        if (e > best_val) {
            best_val = e;
            best = i;
        }
    }
    double a = xs[best == 0 ? 0 : best - 1];
    double b = xs[std::min(best + 1, xs.size() - 1)];
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 40; ++it) {
        const double c = b - g * (b - a);
        const double d = a + g * (b - a);
        if (std::abs(unit_error(r, c)) > std::abs(unit_error(r, d)))
            b = d;
        else
            a = c;
    }
    return std::max(best_val, std::abs(unit_error(r, 0.5 * (a + b))));
}

Eigen::VectorXd initial_nodes(double alpha, int m) {
    // Clustered toward 0 like the poles of the best approximant.
    const int n = 2 * m + 1;
    const double s = std::numbers::pi * std::sqrt(2.0 * m) / std::sqrt(alpha);
    Eigen::VectorXd x(n);
    for (int k = 1; k <= n; ++k) {
        const double u = static_cast<double>(k) / (n + 1);
        x(k - 1) = std::exp(-s * (1.0 - u) * (1.0 - u)) * u;
    }
    return x;
}

std::vector<double> poly_mul_linear(const std::vector<double>& p, double root) {
    std::vector<double> out(p.size() + 1, 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i + 1] += p[i];
        out[i] -= root * p[i];
    }
    return out;
}

// Monomial coefficients (ascending) of sum_j c_j prod_{k != j} (x - z_k).
Eigen::VectorXd lagrange_sum(const Eigen::VectorXd& z, const Eigen::VectorXd& c) {
    const Eigen::Index n = z.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        std::vector<double> p{1.0};
        for (Eigen::Index k = 0; k < n; ++k)
            if (k != j) p = poly_mul_linear(p, z(k));
        for (Eigen::Index i = 0; i < n; ++i) out(i) += c(j) * p[static_cast<std::size_t>(i)];
    }
    return out;
}

void fill_monomial(RationalApprox& r) {
    if (r.m > kMaxMonomialOrder) {
        r.numerator.resize(0);
        r.denominator.resize(0);
        return;
    }
    Eigen::VectorXd p = lagrange_sum(r.support, r.weights.cwiseProduct(r.values));
    Eigen::VectorXd q = lagrange_sum(r.support, r.weights);
    const double scale = std::pow(r.b, r.alpha);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double bi = std::pow(r.b, static_cast<double>(i));
        p(i) *= scale / bi;
        q(i) /= bi;
    }
    const double q0 = q(0);
    r.numerator = p / q0;
    r.denominator = q / q0;
}

// Parlett-Reinsch diagonal similarity scaling by powers of 2; keeps the
// companion matrix of a badly graded polynomial from losing its small roots.
void balance(Eigen::MatrixXd& A) {
    const Eigen::Index n = A.rows();
    bool done = false;
    while (!done) {
        done = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            double c = 0.0, r = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i) {
                    c += std::abs(A(j, i));
                    r += std::abs(A(i, j));
                }
            if (c == 0.0 || r == 0.0) continue;
            double g = r / 2.0, f = 1.0;
            const double s = c + r;
            while (c < g) {
                f *= 2.0;
                c *= 4.0;
            }
            g = r * 2.0;
            while (c > g) {
                f /= 2.0;
                c /= 4.0;
            }
            if ((c + r) / f < 0.95 * s) {
                done = false;
                A.row(i) /= f;
                A.col(i) *= f;
            }
        }
    }
}

}  // namespace

double RationalApprox::eval_unit(double x) const { return bary_eval(support, values, weights, x); }

double RationalApprox::operator()(double x) const { return std::pow(b, alpha) * eval_unit(x / b); }

double RationalApprox::eval_monomial(double x) const {
    if (numerator.size() == 0) throw std::logic_error("monomial coefficients are only kept for m <= 8");
    double p = 0.0, q = 0.0;
    for (Eigen::Index i = numerator.size(); i-- > 0;) {
        p = p * x + numerator(i);
        q = q * x + denominator(i);
    }
    return p / q;
}

Eigen::VectorXd local_error_extrema(const RationalApprox& r) {
    const Eigen::Index n = r.nodes.size();
    Eigen::VectorXd ext(n + 1);
    double lo = 0.0;
    for (Eigen::Index i = 0; i <= n; ++i) {
        const double hi = i < n ? r.nodes(i) : 1.0;
        ext(i) = interval_max(r, lo, hi);
        lo = hi;
    }
    return ext;
}

namespace {

double log_spread(const Eigen::VectorXd& e) {
    const Eigen::ArrayXd l = e.array().log();
    return (l - l.mean()).square().sum();
}

// Differences of consecutive log extrema at nodes exp(y); false if the nodes
// are not increasing in (0, 1) or the errors are not finite.
bool leveling_residual(RationalApprox& r, const Eigen::VectorXd& y, Eigen::VectorXd& F, Eigen::VectorXd& ext) {
    const Eigen::Index n = y.size();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(y(i)) || y(i) >= 0.0) return false;
        if (i > 0 && !(y(i) > y(i - 1))) return false;
    }
    r.nodes = y.array().exp();
    for (Eigen::Index i = 1; i < n; ++i)
        if (!(r.nodes(i) > r.nodes(i - 1))) return false;
    interpolate(r);
    ext = local_error_extrema(r);
    if (!ext.allFinite() || ext.minCoeff() <= 0.0) return false;
    F = ext.head(n).array().log() - ext.tail(n).array().log();
    return true;
}

}  // namespace

RationalApprox brasil(double alpha, int m, double b, const BrasilOptions& opts) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("brasil: alpha must lie in (0, 1)");
    if (m < 1) throw std::invalid_argument("brasil: order m must be at least 1");
    if (!(b > 0.0)) throw std::invalid_argument("brasil: interval endpoint b must be positive");

    RationalApprox r;
    r.alpha = alpha;
    r.m = m;
    r.b = b;
    r.nodes = initial_nodes(alpha, m);
    const Eigen::Index n = r.nodes.size();

    auto finish = [&](const Eigen::VectorXd& ext, int it) {
        const double emax = ext.maxCoeff();
        r.deviation_ratio = ext.minCoeff() / emax;
        r.sup_error = std::pow(b, alpha) * emax;
        r.iterations = it;
        return r.deviation_ratio >= opts.target_ratio;
    };
    auto fail = [&](int it) {
        fill_monomial(r);
        std::ostringstream msg;
        msg << "brasil did not converge for alpha=" << alpha << ", m=" << m << " after " << it
            << " iterations (deviation ratio " << r.deviation_ratio << ")";
        throw BrasilNonConvergence(msg.str(), r);
    };

    // Phase 1: interval lengths are rescaled by (error / geometric mean)^(-gamma).
    // The error on [0, x_1] scales like x_1^alpha, so small alpha needs large
    // exponents; gamma grows while the spread of the log errors shrinks and is
    // halved, with the step undone, when it does not.
    const double gamma_max = std::max(1.0, 1.0 / alpha);
    double gamma = 0.5;
    Eigen::VectorXd prev_nodes, prev_ext, ext;
    double prev_spread = std::numeric_limits<double>::infinity();
    int it = 0;
    for (;; ++it) {
        interpolate(r);
        ext = local_error_extrema(r);
        double sp = log_spread(ext);
        if (!(sp < prev_spread) && prev_nodes.size() > 0) {
            r.nodes = prev_nodes;
            ext = prev_ext;
            sp = prev_spread;
            interpolate(r);
            gamma *= 0.5;
        } else {
            gamma = std::min(gamma * 1.25, gamma_max);
        }
        if (finish(ext, it)) {
            fill_monomial(r);
            return r;
        }
        if (it >= opts.max_iterations) fail(it);
        // Stalled: once the nodes span many decades each error depends on the
        // ratios of neighbouring nodes and this update oscillates.
        if (gamma < 1e-3 || it >= 200) break;
        prev_nodes = r.nodes;
        prev_ext = ext;
        prev_spread = sp;

        const double log_mean = ext.array().log().mean();
        Eigen::VectorXd loglen(n + 1);
        double lo = 0.0;
        for (Eigen::Index i = 0; i <= n; ++i) {
            const double hi = i < n ? r.nodes(i) : 1.0;
            loglen(i) = std::log(hi - lo) - gamma * (std::log(ext(i)) - log_mean);
            lo = hi;
        }
        // Normalize in log space so tiny intervals survive.
        const double top = loglen.maxCoeff();
        Eigen::VectorXd len = (loglen.array() - top).exp();
        len /= len.sum();
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            acc += len(i);
            r.nodes(i) = acc;
        }
    }

    // Phase 2: damped Newton on log-node coordinates for equal consecutive
    // extrema, with a forward-difference Jacobian.
    Eigen::VectorXd y = r.nodes.array().log();
    Eigen::VectorXd F, Ft, et;
    if (!leveling_residual(r, y, F, ext)) fail(it);
    while (!finish(ext, it)) {
        if (++it > opts.max_iterations) {
            --it;
            fail(it);
        }
        Eigen::MatrixXd J(n, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            Eigen::VectorXd yj = y;
            const double d = 1e-6 * std::max(1.0, std::abs(y(j)));
            yj(j) += d;
            if (!leveling_residual(r, yj, Ft, et)) {
                yj(j) = y(j) - d;
                if (!leveling_residual(r, yj, Ft, et)) fail(it);
                J.col(j) = (F - Ft) / d;
            } else {
                J.col(j) = (Ft - F) / d;
            }
        }
        const Eigen::VectorXd step = J.colPivHouseholderQr().solve(-F);
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30 && !accepted; ++ls, t *= 0.5) {
            const Eigen::VectorXd yt = y + t * step;
            if (leveling_residual(r, yt, Ft, et) && Ft.norm() < F.norm()) {
                y = yt;
                F = Ft;
                ext = et;
                accepted = true;
            }
        }
        if (!accepted) {
            leveling_residual(r, y, F, ext);
            finish(ext, it);
            fail(it);
        }
    }
    leveling_residual(r, y, F, ext);
    finish(ext, it);
    fill_monomial(r);
    return r;
}

double PartialFractions::operator()(double lambda) const {
    double s = k;
    for (Eigen::Index i = 0; i < poles.size(); ++i) s += residues(i) / (lambda - poles(i));
    return s;
}

PartialFractions partial_fractions(const RationalApprox& r) {
    const int m = r.m;
    // Roots of the unit-interval denominator q(x) = D(x) prod (x - z_k) via
    // the companion matrix, then Newton polish on D.
    const Eigen::VectorXd q = lagrange_sum(r.support, r.weights);
    const double lead = q(m);
    if (lead == 0.0) throw std::runtime_error("partial fractions: denominator degree below m");
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(m, m);
    for (int i = 1; i < m; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < m; ++i) comp(i, m - 1) = -q(i) / lead;
    balance(comp);
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    if (es.info() != Eigen::Success) throw std::runtime_error("partial fractions: companion eigensolver failed");

    std::vector<double> xi;
    for (int i = 0; i < m; ++i) {
        const std::complex<double> root = es.eigenvalues()(i);
        if (std::abs(root.imag()) > 1e-8 * std::abs(root))
            throw std::runtime_error("partial fractions: complex pole in the denominator");
        double x = root.real();
        for (int it = 0; it < 50; ++it) {
            const auto [d, dd] = bary_denominator(r.support, r.weights, x);
            const double dx = d / dd;
            x -= dx;
            if (std::abs(dx) <= 1e-15 * std::abs(x)) break;
        }
        xi.push_back(x);
    }
    std::sort(xi.begin(), xi.end());
    for (int i = 0; i + 1 < m; ++i)
        if (std::abs(xi[static_cast<std::size_t>(i + 1)] - xi[static_cast<std::size_t>(i)]) <=
            1e-10 * std::max(std::abs(xi[static_cast<std::size_t>(i)]), std::abs(xi[static_cast<std::size_t>(i + 1)])))
            throw std::runtime_error("partial fractions: repeated pole");

    // On [0, b]: r_b(x) = b^alpha r(x / b), so x-poles scale by b.
    const double scale = std::pow(r.b, r.alpha);
    PartialFractions pf;
    pf.poles.resize(m);
    pf.residues.resize(m);
    for (int i = 0; i < m; ++i) {
        const double x = xi[static_cast<std::size_t>(i)];
        const double rho_unit = bary_numerator(r.support, r.values, r.weights, x) /
                                bary_denominator(r.support, r.weights, x).second;
        const double xb = r.b * x;            // pole of r_b
        const double rho = scale * r.b * rho_unit;  // residue of r_b at xb
        pf.poles(i) = 1.0 / xb;
        pf.residues(i) = -rho / (xb * xb);
    }
    pf.k = scale * r.eval_unit(0.0);

    bool ok = pf.k > 0.0;
    for (int i = 0; i < m; ++i) ok = ok && pf.residues(i) > 0.0 && pf.poles(i) < 0.0;
    if (!ok) throw std::runtime_error("decomposition not a covariance: sign constraint r_i > 0, p_i < 0, k > 0 violated");
    return pf;
}

double fractional_part(double alpha) {
    const double f = alpha - std::floor(alpha);
    if (f < 1e-12) return 0.0;
    if (f > 1.0 - 1e-12) return 0.0;
    return f;
}

int integer_part(double alpha) {
    const double f = alpha - std::floor(alpha);
    if (f > 1.0 - 1e-12) return static_cast<int>(std::floor(alpha)) + 1;
    return static_cast<int>(std::floor(alpha));
}

int calibrate_order(double alpha, double h, double c) {
    if (!(alpha > 0.5)) throw std::invalid_argument("calibrate_order: alpha must exceed 1/2");
    const double frac = fractional_part(alpha);
    if (frac == 0.0) return 0;
    if (!(h > 0.0 && h < 1.0)) throw std::invalid_argument("calibrate_order: mesh width h must lie in (0, 1)");
    const double beta = std::min(2.0 * alpha - 0.5, 2.0) + 0.5;
    const double lg = std::log(h);
    const double raw = beta * beta * lg * lg / (4.0 * std::numbers::pi * std::numbers::pi * frac);
    return std::max(1, static_cast<int>(std::lround(c * std::ceil(raw))));
}

}  // namespace graphfield
