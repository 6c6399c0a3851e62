#include "graphfield/bessel.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace graphfield {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 10000;

// gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu), gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2,
// plus 1/Gamma(1+mu) and 1/Gamma(1-mu). |mu| <= 1/2.
struct TemmeGammas {
    double gam1, gam2, gampl, gammi;
};

TemmeGammas temme_gammas(double mu) {
    TemmeGammas g{};
    g.gampl = 1.0 / std::tgamma(1.0 + mu);
    g.gammi = 1.0 / std::tgamma(1.0 - mu);
    g.gam2 = 0.5 * (g.gammi + g.gampl);
    if (std::abs(mu) > 0.1) {
        g.gam1 = (g.gammi - g.gampl) / (2.0 * mu);
    } else {
        // Taylor coefficients c_k of 1/Gamma(1+x); only odd ones enter gam1.
        static constexpr double c[] = {1.0,
                                       0.5772156649015328606,
                                       -0.6558780715202538811,
                                       -0.0420026350340952355,
                                       0.1665386113822914895,
                                       -0.0421977345555443367,
                                       -0.0096219715278769736,
                                       0.0072189432466630995,
                                       -0.0011651675918590651,
                                       -0.0002152416741149510,
                                       0.0001280502823881162,
                                       -0.0000201348547807882,
                                       -0.0000012504934821427};
        const double m2 = mu * mu;
        g.gam1 = -(c[1] + m2 * (c[3] + m2 * (c[5] + m2 * (c[7] + m2 * (c[9] + m2 * c[11])))));
    }
    return g;
}

// K_mu and K_{mu+1} for |mu| <= 1/2.
void k_pair(double mu, double x, double& kmu, double& kmu1) {
    if (x < 2.0) {
        const double x2 = 0.5 * x;
        const double pimu = std::numbers::pi * mu;
        const double fact = std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
        double d = -std::log(x2);
        double e = mu * d;
        const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
        const TemmeGammas g = temme_gammas(mu);
        double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
        double sum = ff;
        e = std::exp(e);
        double p = 0.5 * e / g.gampl;
        double q = 0.5 / (e * g.gammi);
        double c = 1.0;
        d = x2 * x2;
        double sum1 = p;
        int i = 1;
        for (; i <= kMaxIter; ++i) {
            ff = (i * ff + p + q) / (i * i - mu * mu);
            c *= d / i;
            p /= i - mu;
            q /= i + mu;
            const double del = c * ff;
            sum += del;
            sum1 += c * (p - i * ff);
            if (std::abs(del) < std::abs(sum) * kEps) break;
        }
        if (i > kMaxIter) throw std::runtime_error("bessel_k: series failed to converge");
        kmu = sum;
        kmu1 = sum1 * 2.0 / x;
        return;
    }
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - mu * mu;
    double q = a1, c = a1, a = -a1;
    double s = 1.0 + q * delh;
    int i = 1;
    for (; i <= kMaxIter; ++i) {
        a -= 2 * i;
        c = -a * c / (i + 1.0);
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < kEps) break;
    }
    if (i > kMaxIter) throw std::runtime_error("bessel_k: continued fraction failed to converge");
    h = a1 * h;
    kmu = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
    kmu1 = kmu * (mu + x + 0.5 - h) / x;
}

}  // namespace

double bessel_k(double nu, double x) {
    if (!(x > 0.0)) throw std::domain_error("bessel_k: x must be positive");
    nu = std::abs(nu);  // K_{-nu} = K_nu
    const int nl = static_cast<int>(nu + 0.5);
    const double mu = nu - nl;
    double kmu = 0.0, k1 = 0.0;
    k_pair(mu, x, kmu, k1);
    for (int i = 1; i <= nl; ++i) {
        const double next = (mu + i) * (2.0 / x) * k1 + kmu;
        kmu = k1;
        k1 = next;
        if (!std::isfinite(k1) && i < nl) return std::numeric_limits<double>::infinity();
    }
    return kmu;
}

}  // namespace graphfield
