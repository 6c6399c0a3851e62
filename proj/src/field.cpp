#include "graphfield/field.hpp"
#include "graphfield/parallel.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>

namespace graphfield {

namespace {

// (L - shift * C~) as a sparse matrix.
SparseMatrix shifted(const SparseMatrix& L, const Diagonal& C, double shift) {
    SparseMatrix out = L - diagonal_matrix(shift * C);
    out.makeCompressed();
    return out;
}

SparseMatrix symmetrize(const SparseMatrix& A) {
    SparseMatrix At = A.transpose();
    SparseMatrix S = 0.5 * (A + At);
    S.prune(0.0);
    S.makeCompressed();
    return S;
}

// A (C~^{-1} L)^n.
SparseMatrix times_power(SparseMatrix A, const SparseMatrix& L, const Diagonal& C, int n) {
    const SparseMatrix M = C.cwiseInverse().asDiagonal() * L;
    for (int j = 0; j < n; ++j) A = (A * M).pruned();
    return symmetrize(A);
}

SparseMatrix scale_by_tau(const SparseMatrix& P, const Diagonal& tau, double factor) {
    SparseMatrix out = tau.asDiagonal() * P * tau.asDiagonal();
    out *= factor;
    out.makeCompressed();
    return out;
}

void check_positive(const Diagonal& v, const char* name) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!(v(i) > 0.0) || !std::isfinite(v(i))) {
            std::ostringstream msg;
            msg << "positivity violated: " << name << " = " << v(i) << " at node " << i;
            throw std::invalid_argument(msg.str());
        }
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

const RationalApprox& cached_rational(double frac, int m) {
    static std::mutex mu;
    static std::map<std::pair<double, int>, RationalApprox> cache;
    std::lock_guard<std::mutex> lock(mu);
    const auto key = std::make_pair(frac, m);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, brasil(frac, m, 1.0)).first;
    return it->second;
}

FieldModel::FieldModel(std::shared_ptr<const Mesh> mesh, double alpha, const Diagonal& kappa, const Diagonal& tau,
                       std::optional<int> m)
    : mesh_(std::move(mesh)), alpha_(alpha), kappa_(kappa), tau_(tau) {
    init(m);
}

FieldModel::FieldModel(std::shared_ptr<const Mesh> mesh, double alpha, const EdgeFunction& kappa,
                       const EdgeFunction& tau, std::optional<int> m)
    : mesh_(std::move(mesh)), alpha_(alpha) {
    kappa_ = mesh_->sample(kappa);
    tau_ = mesh_->sample(tau);
    init(m);
}

void FieldModel::init(std::optional<int> m) {
    if (!mesh_) throw std::invalid_argument("field model needs a mesh");
    if (!(alpha_ > 0.5)) throw std::invalid_argument("field model: alpha must exceed 1/2");
    if (alpha_ > 3.0) throw std::invalid_argument("field model: alpha above 3 is not supported");
    const int n = mesh_->num_nodes();
    if (kappa_.size() != n || tau_.size() != n)
        throw std::invalid_argument("field model: kappa and tau need one value per mesh node");
    check_positive(kappa_, "kappa");
    check_positive(tau_, "tau");

    const SparseMatrix C = assemble_mass(*mesh_);
    Ctilde_ = lump_mass(C);
    L_ = assemble_stiffness(*mesh_) + diagonal_matrix(kappa_.array().square().matrix().cwiseProduct(Ctilde_));
    L_.makeCompressed();

    const double frac = frac_alpha();
    if (frac == 0.0) {
        m_ = 0;
        return;
    }
    if (m) {
        if (*m < 1) throw std::invalid_argument("field model: rational order m must be at least 1");
        m_ = *m;
        approx_ = cached_rational(frac, m_);
    } else {
        // Near-integer alpha pushes the optimal nodes toward the underflow
        // range; step down the order until the approximation levels out.
        m_ = std::min(calibrate_order(alpha_, mesh_->h()), kMaxRationalOrder);
        for (;;) {
            try {
                approx_ = cached_rational(frac, m_);
                break;
            } catch (const BrasilNonConvergence&) {
                if (m_ == 1) throw;
                --m_;
            }
        }
    }
    const PartialFractions unit = partial_fractions(approx_);
    // Spectrum of C~^{-1} L lies above kappa0^2; rescale the [0, 1] fit.
    const double k02 = kappa0_squared();
    pf_.residues = unit.residues * std::pow(k02, 1.0 - frac);
    pf_.poles = unit.poles * k02;
    pf_.k = unit.k * std::pow(k02, -frac);
}

FieldModel FieldModel::with_tau(const Diagonal& tau) const {
    if (tau.size() != tau_.size()) throw std::invalid_argument("with_tau: size mismatch");
    check_positive(tau, "tau");
    FieldModel copy = *this;
    copy.tau_ = tau;
    return copy;
}

PrecisionBlocks precision_blocks(const FieldModel& model) {
    PrecisionBlocks out;
    const SparseMatrix& L = model.L();
    const Diagonal& C = model.Ctilde();
    const int n = model.floor_alpha();
    if (model.order() == 0) {
        out.Q.push_back(scale_by_tau(times_power(L, L, C, n - 1), model.tau(), 1.0));
    } else {
        const PartialFractions& pf = model.fractions();
        for (Eigen::Index i = 0; i < pf.poles.size(); ++i) {
            const SparseMatrix P = times_power(shifted(L, C, pf.poles(i)), L, C, n);
            out.Q.push_back(scale_by_tau(P, model.tau(), 1.0 / pf.residues(i)));
        }
        SparseMatrix last;
        if (n == 0)
            last = diagonal_matrix(C);
        else
            last = times_power(L, L, C, n - 1);
        out.Q.push_back(scale_by_tau(last, model.tau(), 1.0 / pf.k));
    }
    for (std::size_t i = 0; i < out.Q.size(); ++i) {
        try {
            out.factors.emplace_back(out.Q[i], "block " + std::to_string(i + 1));
        } catch (const std::runtime_error& e) {
            throw std::runtime_error(std::string(e.what()) + " (check the partial-fraction signs)");
        }
        const Eigen::VectorXd d = out.factors.back().factor_diagonal();
        const double cond = std::pow(d.maxCoeff() / d.minCoeff(), 2);
        out.condition.push_back(cond);
        if (model.order() >= 5 && cond > 1e10) {
            std::ostringstream msg;
            msg << "block " << i + 1 << " poorly conditioned (estimate " << cond << ")";
            out.warnings.push_back(msg.str());
        }
    }
    return out;
}

Eigen::MatrixXd covariance_columns(const FieldModel& model, const std::vector<int>& columns) {
    const int N = model.size();
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const int c = columns[j];
        if (c < 0 || c >= N) throw std::out_of_range("covariance column out of range");
        X(c, static_cast<Eigen::Index>(j)) = 1.0 / model.tau()(c);
    }
    const SparseMatrix& L = model.L();
    const Diagonal& C = model.Ctilde();
    const SparseCholesky cholL(L, "L");
    Eigen::MatrixXd Y;
    int powers = model.floor_alpha();
    if (model.order() == 0) {
        Y = cholL.solve(X);
        powers -= 1;
    } else {
        const PartialFractions& pf = model.fractions();
        Y = pf.k * (C.cwiseInverse().asDiagonal() * X);
        for (Eigen::Index i = 0; i < pf.poles.size(); ++i) {
            const SparseCholesky ch(shifted(L, C, pf.poles(i)), "L - p C");
            Y += pf.residues(i) * ch.solve(X);
        }
    }
    for (int j = 0; j < powers; ++j) {
        const Eigen::MatrixXd CY = C.asDiagonal() * Y;
        Y = cholL.solve(CY);
    }
    return model.tau().cwiseInverse().asDiagonal() * Y;
}

Eigen::MatrixXd covariance_matrix(const FieldModel& model) {
    const int N = model.size();
    if (N > 20000) throw std::invalid_argument("covariance_matrix: N_h above 20000; request columns instead");
    std::vector<int> cols(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) cols[static_cast<std::size_t>(i)] = i;
    return covariance_columns(model, cols);
}

Eigen::MatrixXd covariance_from_blocks(const PrecisionBlocks& blocks) {
    const int N = blocks.size();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(N, N);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
    for (const auto& f : blocks.factors) S += f.solve(I);
    return S;
}

Eigen::VectorXd covariance_row(const FieldModel& model, const PrecisionBlocks& blocks, const GraphPoint& s0) {
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(model.size());
    for (auto [j, w] : model.mesh().eval_basis(s0)) psi(j) += w;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(model.size());
    for (const auto& f : blocks.factors) out += f.solve(psi);
    return out;
}

Eigen::VectorXd marginal_variance(const PrecisionBlocks& blocks, VarianceMethod method) {
    const int N = blocks.size();
    if (method == VarianceMethod::Auto) method = N < 300 ? VarianceMethod::Dense : VarianceMethod::Selected;
    Eigen::VectorXd v = Eigen::VectorXd::Zero(N);
    if (method == VarianceMethod::Dense) {
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(N, N);
        for (const auto& f : blocks.factors) v += f.solve(I).diagonal();
    } else {
        for (const auto& f : blocks.factors) v += f.inverse_diagonal();
    }
    return v;
}

Eigen::VectorXd marginal_std(const PrecisionBlocks& blocks, VarianceMethod method) {
    return marginal_variance(blocks, method).cwiseSqrt();
}

std::uint64_t block_seed(std::uint64_t seed, std::uint64_t block) {
    return splitmix64(splitmix64(seed) ^ splitmix64(block + 0x632be59bd9b4e019ULL));
}

Eigen::MatrixXd sample(const PrecisionBlocks& blocks, int n_samples, std::uint64_t seed, int threads) {
    if (n_samples < 0) throw std::invalid_argument("sample: negative sample count");
    const int N = blocks.size();
    const std::size_t nb = blocks.count();
    std::vector<Eigen::MatrixXd> parts(nb);
    auto work = [&](std::size_t b) {
        std::mt19937_64 rng(block_seed(seed, b));
        std::normal_distribution<double> normal;
        Eigen::MatrixXd X(n_samples, N);
        Eigen::VectorXd z(N);
        for (int s = 0; s < n_samples; ++s) {
            for (int i = 0; i < N; ++i) z(i) = normal(rng);
            X.row(s) = blocks.factors[b].sample(z).transpose();
        }
        parts[b] = std::move(X);
    };
    parallel_for(nb, threads, work);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_samples, N);
    for (const auto& p : parts) out += p;
    return out;
}

FieldModel variance_stationary_model(std::shared_ptr<const Mesh> mesh, const Diagonal& kappa, double alpha,
                                     double sigma0, std::optional<int> m) {
    if (!(sigma0 > 0.0)) throw std::invalid_argument("variance-stationary model: sigma0 must be positive");
    const FieldModel aux(mesh, alpha, kappa, Diagonal::Ones(kappa.size()), m);
    const Eigen::VectorXd sk = marginal_std(precision_blocks(aux));
    return aux.with_tau(sk / sigma0);
}

std::pair<Diagonal, Diagonal> log_regression_coefficients(const Eigen::MatrixXd& covariates,
                                                         const Eigen::VectorXd& theta_tau,
                                                         const Eigen::VectorXd& theta_kappa) {
    const Eigen::Index p = covariates.cols();
    if (theta_tau.size() != p + 1 || theta_kappa.size() != p + 1)
        throw std::invalid_argument("log regression: theta needs an intercept plus one slope per covariate");
    if (!covariates.allFinite()) throw std::invalid_argument("log regression: non-finite covariate value");
    auto predictor = [&](const Eigen::VectorXd& th) {
        Eigen::VectorXd eta = Eigen::VectorXd::Constant(covariates.rows(), th(0));
        if (p > 0) eta += covariates * th.tail(p);
        return Diagonal(eta.array().exp());
    };
    return {predictor(theta_tau), predictor(theta_kappa)};
}

}  // namespace graphfield
