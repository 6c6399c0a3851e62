#include "graphfield/inference.hpp"
#include "graphfield/io.hpp"
#include "graphfield/parallel.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace graphfield {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
        throw std::invalid_argument("observations line " + std::to_string(line) + ": column '" + column +
                                    "' is not a finite number: '" + s + "'");
    return v;
}

bool same_locations(const std::vector<GraphPoint>& a, const std::vector<GraphPoint>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].edge != b[i].edge || a[i].t != b[i].t) return false;
    return true;
}

// Replicate indices grouped by identical location lists.
std::vector<std::vector<std::size_t>> location_groups(const ObservationSet& obs) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t r = 0; r < obs.replicates.size(); ++r) {
        bool placed = false;
        for (auto& g : groups)
            if (same_locations(obs.replicates[g.front()].locations, obs.replicates[r].locations)) {
                g.push_back(r);
                placed = true;
                break;
            }
        if (!placed) groups.push_back({r});
    }
    return groups;
}

void check_observations(const ObservationSet& obs, const Mesh& mesh, double sigma_e) {
    if (!(sigma_e > 0.0) || !std::isfinite(sigma_e)) throw std::invalid_argument("observations: sigma_e must be positive");
    if (obs.replicates.empty()) throw std::invalid_argument("observations: no replicates");
    const int p = obs.num_covariates();
    for (const auto& rep : obs.replicates) {
        const auto n = static_cast<Eigen::Index>(rep.locations.size());
        if (rep.y.size() != n) throw std::invalid_argument("observations: value count does not match locations");
        if (rep.design.cols() != p || (p > 0 && rep.design.rows() != n))
            throw std::invalid_argument("observations: design matrices differ between replicates");
        if (!rep.y.allFinite()) throw std::invalid_argument("observations: non-finite value");
        for (const auto& s : rep.locations) mesh.graph().check_point(s);
    }
}

Eigen::VectorXd fixed_effects(const Replicate& rep, const Eigen::VectorXd& beta) {
    if (rep.design.cols() == 0) return Eigen::VectorXd::Zero(rep.y.size());
    return rep.design * beta;
}

SparseMatrix stacked_precision(const PrecisionBlocks& blocks) {
    const int N = blocks.size();
    const auto nb = static_cast<int>(blocks.count());
    std::vector<Eigen::Triplet<double>> trip;
    for (int b = 0; b < nb; ++b) {
        const SparseMatrix& Q = blocks.Q[static_cast<std::size_t>(b)];
        for (int k = 0; k < Q.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(Q, k); it; ++it)
                trip.emplace_back(b * N + static_cast<int>(it.row()), b * N + static_cast<int>(it.col()), it.value());
    }
    SparseMatrix out(nb * N, nb * N);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

double blocks_log_det(const PrecisionBlocks& blocks) {
    double s = 0.0;
    for (const auto& f : blocks.factors) s += f.log_determinant();
    return s;
}

Eigen::VectorXd log_linear(const Eigen::MatrixXd& G, const Eigen::VectorXd& theta, Eigen::Index n,
                           const char* what) {
    if (theta.size() != G.cols() + 1)
        throw std::invalid_argument(std::string(what) + ": theta needs an intercept plus one slope per covariate");
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, theta(0));
    if (G.cols() > 0) {
        if (G.rows() != n) throw std::invalid_argument(std::string(what) + ": covariates need one row per mesh node");
        eta += G * theta.tail(G.cols());
    }
    if (!eta.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite linear predictor");
    return eta.array().exp();
}

}  // namespace

std::size_t ObservationSet::total() const {
    std::size_t n = 0;
    for (const auto& r : replicates) n += r.locations.size();
    return n;
}

int ObservationSet::num_covariates() const {
    return replicates.empty() ? 0 : static_cast<int>(replicates.front().design.cols());
}

ObservationSet read_observations_csv(const std::string& text, const MetricGraph& graph) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        header = split_csv_line(line);
        break;
    }
    if (header.empty()) throw std::invalid_argument("observations: missing header line");
    int c_edge = -1, c_t = -1, c_value = -1, c_rep = -1;
    std::vector<int> c_cov;
    std::vector<std::string> cov_names;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string& h = header[static_cast<std::size_t>(c)];
        if (h == "edge_id") c_edge = c;
        else if (h == "t") c_t = c;
        else if (h == "value") c_value = c;
        else if (h == "replicate") c_rep = c;
        else {
            c_cov.push_back(c);
            cov_names.push_back(h);
        }
    }
    if (c_edge < 0 || c_t < 0 || c_value < 0)
        throw std::invalid_argument("observations: header must contain edge_id, t and value");

    std::map<long long, std::size_t> rep_index;
    std::vector<std::vector<GraphPoint>> locs;
    std::vector<std::vector<double>> vals;
    std::vector<std::vector<std::vector<double>>> covs;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::invalid_argument("observations line " + std::to_string(lineno) + ": expected " +
                                        std::to_string(header.size()) + " columns");
        const double id = parse_number(cells[static_cast<std::size_t>(c_edge)], lineno, "edge_id");
        if (id != std::floor(id)) throw std::invalid_argument("observations line " + std::to_string(lineno) + ": edge_id must be an integer");
        GraphPoint s{graph.edge_index(static_cast<int>(id)), parse_number(cells[static_cast<std::size_t>(c_t)], lineno, "t")};
        graph.check_point(s);
        long long rep = 0;
        if (c_rep >= 0) {
            const double r = parse_number(cells[static_cast<std::size_t>(c_rep)], lineno, "replicate");
            if (r != std::floor(r)) throw std::invalid_argument("observations line " + std::to_string(lineno) + ": replicate must be an integer");
            rep = static_cast<long long>(r);
        }
        auto [it, inserted] = rep_index.try_emplace(rep, locs.size());
        if (inserted) {
            locs.emplace_back();
            vals.emplace_back();
            covs.emplace_back();
        }
        const std::size_t k = it->second;
        locs[k].push_back(s);
        vals[k].push_back(parse_number(cells[static_cast<std::size_t>(c_value)], lineno, "value"));
        std::vector<double> row;
        for (std::size_t j = 0; j < c_cov.size(); ++j)
            row.push_back(parse_number(cells[static_cast<std::size_t>(c_cov[j])], lineno, cov_names[j]));
        covs[k].push_back(std::move(row));
    }
    ObservationSet out;
    for (std::size_t k = 0; k < locs.size(); ++k) {
        Replicate rep;
        rep.locations = std::move(locs[k]);
        rep.y = Eigen::Map<const Eigen::VectorXd>(vals[k].data(), static_cast<Eigen::Index>(vals[k].size()));
        rep.design.resize(rep.y.size(), static_cast<Eigen::Index>(c_cov.size()));
        for (Eigen::Index i = 0; i < rep.design.rows(); ++i)
            for (Eigen::Index j = 0; j < rep.design.cols(); ++j)
                rep.design(i, j) = covs[k][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        out.replicates.push_back(std::move(rep));
    }
    return out;
}

std::string write_observations_csv(const ObservationSet& obs, const MetricGraph& graph) {
    std::ostringstream out;
    out << "edge_id,t,value,replicate";
    const int p = obs.num_covariates();
    for (int j = 0; j < p; ++j) out << ",x" << j + 1;
    out << '\n';
    for (std::size_t r = 0; r < obs.replicates.size(); ++r) {
        const Replicate& rep = obs.replicates[r];
        for (std::size_t i = 0; i < rep.locations.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            out << graph.edge(rep.locations[i].edge).id << ',' << format_double(rep.locations[i].t) << ','
                << format_double(rep.y(ii)) << ',' << r;
            for (int j = 0; j < p; ++j) out << ',' << format_double(rep.design(ii, j));
            out << '\n';
        }
    }
    return out.str();
}

Posterior::Posterior(const FieldModel& model, const PrecisionBlocks& blocks, const std::vector<GraphPoint>& locations,
                     double sigma_e)
    : mesh_(&model.mesh()), blocks_(static_cast<int>(blocks.count())), n_nodes_(model.size()), sigma_e_(sigma_e) {
    if (!(sigma_e > 0.0) || !std::isfinite(sigma_e)) throw std::invalid_argument("posterior: sigma_e must be positive");
    if (blocks.size() != n_nodes_) throw std::invalid_argument("posterior: blocks do not match the model");
    const SparseMatrix A = mesh_->projector(locations);
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < A.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(A, k); it; ++it)
            for (int b = 0; b < blocks_; ++b)
                trip.emplace_back(static_cast<int>(it.row()), b * n_nodes_ + static_cast<int>(it.col()), it.value());
    Abar_.resize(A.rows(), static_cast<Eigen::Index>(blocks_) * n_nodes_);
    Abar_.setFromTriplets(trip.begin(), trip.end());
    const SparseMatrix AtA = SparseMatrix(Abar_.transpose()) * Abar_;
    const SparseMatrix Qpost = stacked_precision(blocks) + AtA / (sigma_e * sigma_e);
    chol_ = SparseCholesky(Qpost, "posterior precision");
}

Eigen::VectorXd Posterior::stacked_mean(const Eigen::VectorXd& y) const {
    if (y.size() != Abar_.rows()) throw std::invalid_argument("posterior: data length does not match locations");
    return chol_.solve(Eigen::VectorXd(Abar_.transpose() * y / (sigma_e_ * sigma_e_)));
}

Eigen::VectorXd Posterior::field_mean(const Eigen::VectorXd& y) const {
    const Eigen::VectorXd X = stacked_mean(y);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n_nodes_);
    for (int b = 0; b < blocks_; ++b) u += X.segment(static_cast<Eigen::Index>(b) * n_nodes_, n_nodes_);
    return u;
}

SparseMatrix Posterior::stacked_row(const GraphPoint& s) const {
    const BasisRow row = mesh_->eval_basis(s);
    SparseMatrix v(static_cast<Eigen::Index>(blocks_) * n_nodes_, 1);
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& [j, w] : row)
        for (int b = 0; b < blocks_; ++b) trip.emplace_back(b * n_nodes_ + j, 0, w);
    v.setFromTriplets(trip.begin(), trip.end());
    return v;
}

double Posterior::mean_at(const GraphPoint& s, const Eigen::VectorXd& stacked) const {
    const SparseMatrix v = stacked_row(s);
    return (SparseMatrix(v.transpose()) * stacked)(0);
}

double Posterior::variance_at(const GraphPoint& s) const {
    const Eigen::VectorXd v = Eigen::MatrixXd(stacked_row(s)).col(0);
    return v.dot(chol_.solve(v));
}

Eigen::VectorXd Posterior::node_variances() const {
    constexpr int kChunk = 64;
    const Eigen::Index M = static_cast<Eigen::Index>(blocks_) * n_nodes_;
    Eigen::VectorXd out(n_nodes_);
    for (int j0 = 0; j0 < n_nodes_; j0 += kChunk) {
        const int w = std::min(kChunk, n_nodes_ - j0);
        Eigen::MatrixXd V = Eigen::MatrixXd::Zero(M, w);
        for (int c = 0; c < w; ++c)
            for (int b = 0; b < blocks_; ++b) V(static_cast<Eigen::Index>(b) * n_nodes_ + j0 + c, c) = 1.0;
        const Eigen::MatrixXd X = chol_.solve(V);
        for (int c = 0; c < w; ++c) out(j0 + c) = V.col(c).dot(X.col(c));
    }
    return out;
}

Eigen::MatrixXd Posterior::apply_inverse_covariance(const Eigen::MatrixXd& v) const {
    const double s2 = sigma_e_ * sigma_e_;
    const Eigen::MatrixXd inner = chol_.solve(Eigen::MatrixXd(Abar_.transpose() * v));
    return v / s2 - Abar_ * inner / (s2 * s2);
}

PosteriorSummary kriging(const FieldModel& model, const PrecisionBlocks& blocks, const std::vector<GraphPoint>& locations,
                         const Eigen::VectorXd& y, double sigma_e, bool with_variance) {
    const Posterior post(model, blocks, locations, sigma_e);
    PosteriorSummary out;
    out.mean = post.field_mean(y);
    if (with_variance) out.variance = post.node_variances();
    if (!out.mean.allFinite() || (with_variance && !out.variance.allFinite()))
        throw std::runtime_error("kriging: non-finite posterior");
    return out;
}

Eigen::VectorXd covariate_from_observations(const FieldModel& model, const std::vector<GraphPoint>& locations,
                                            const Eigen::VectorXd& z, double beta0, double sigma_e, bool standardize) {
    const PrecisionBlocks blocks = precision_blocks(model);
    const Posterior post(model, blocks, locations, sigma_e);
    Eigen::VectorXd c = post.field_mean((z.array() - beta0).matrix());
    c.array() += beta0;
    if (standardize) {
        const double mean = c.mean();
        const double sd = std::sqrt((c.array() - mean).square().mean());
        if (!(sd > 0.0)) throw std::runtime_error("covariate: constant field cannot be standardized");
        c = ((c.array() - mean) / sd).matrix();
    }
    return c;
}

namespace {

struct ReplicateTerms {
    double log_det_sigma = 0.0;  // log det Sigma_y
    double quad = 0.0;           // r^T Sigma_y^{-1} r
    Eigen::Index n = 0;
};

// Accumulates over replicates; `visit` sees each group's posterior.
template <class Visit>
void for_each_group(const FieldModel& model, const PrecisionBlocks& blocks, const ObservationSet& obs, double sigma_e,
                    Visit&& visit) {
    check_observations(obs, model.mesh(), sigma_e);
    for (const auto& g : location_groups(obs)) {
        const Posterior post(model, blocks, obs.replicates[g.front()].locations, sigma_e);
        for (std::size_t r : g) visit(post, obs.replicates[r]);
    }
}

double assemble_log_likelihood(double log_det_sigma, double quad, Eigen::Index n) {
    return -0.5 * (static_cast<double>(n) * kLog2Pi + log_det_sigma + quad);
}

}  // namespace

double log_likelihood(const FieldModel& model, const PrecisionBlocks& blocks, const ObservationSet& obs,
                      double sigma_e, const Eigen::VectorXd& beta) {
    if (beta.size() != obs.num_covariates())
        throw std::invalid_argument("log-likelihood: beta size does not match the design");
    const double ldQ = blocks_log_det(blocks);
    double total = 0.0;
    for_each_group(model, blocks, obs, sigma_e, [&](const Posterior& post, const Replicate& rep) {
        const Eigen::VectorXd r = rep.y - fixed_effects(rep, beta);
        const auto n = r.size();
        const double ld = static_cast<double>(n) * std::log(sigma_e * sigma_e) + post.log_det_posterior() - ldQ;
        const double quad = r.dot(post.apply_inverse_covariance(r).col(0));
        total += assemble_log_likelihood(ld, quad, n);
    });
    return total;
}

ProfileLikelihood profile_log_likelihood(const FieldModel& model, const PrecisionBlocks& blocks,
                                         const ObservationSet& obs, double sigma_e) {
    const int p = obs.num_covariates();
    const double ldQ = blocks_log_det(blocks);
    Eigen::MatrixXd FtF = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd Fty = Eigen::VectorXd::Zero(p);
    double yty = 0.0, log_det = 0.0;
    Eigen::Index n_total = 0;
    for_each_group(model, blocks, obs, sigma_e, [&](const Posterior& post, const Replicate& rep) {
        const auto n = rep.y.size();
        Eigen::MatrixXd rhs(n, p + 1);
        rhs.leftCols(p) = rep.design;
        rhs.col(p) = rep.y;
        const Eigen::MatrixXd S = post.apply_inverse_covariance(rhs);
        FtF += rep.design.transpose() * S.leftCols(p);
        Fty += rep.design.transpose() * S.col(p);
        yty += rep.y.dot(S.col(p));
        log_det += static_cast<double>(n) * std::log(sigma_e * sigma_e) + post.log_det_posterior() - ldQ;
        n_total += n;
    });
    ProfileLikelihood out;
    out.beta = Eigen::VectorXd::Zero(p);
    double quad = yty;
    if (p > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(0.5 * (FtF + FtF.transpose()));
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
            throw std::runtime_error("profile likelihood: design matrix is rank deficient");
        out.beta = ldlt.solve(Fty);
        quad = yty - Fty.dot(out.beta);
    }
    out.value = assemble_log_likelihood(log_det, quad, n_total);
    return out;
}

FieldModel build_model(const ModelTemplate& tmpl, const FitParameters& p) {
    if (!tmpl.mesh) throw std::invalid_argument("model template: missing mesh");
    const Eigen::Index N = tmpl.mesh->num_nodes();
    const Diagonal kappa = log_linear(tmpl.kappa_covariates, p.theta_kappa, N, "kappa");
    if (tmpl.variance_stationary) {
        if (p.theta_tau.size() != 1)
            throw std::invalid_argument("variance-stationary model: theta_tau holds only log sigma0");
        return variance_stationary_model(tmpl.mesh, kappa, p.alpha, std::exp(p.theta_tau(0)), tmpl.m);
    }
    const Diagonal tau = log_linear(tmpl.tau_covariates, p.theta_tau, N, "tau");
    return FieldModel(tmpl.mesh, p.alpha, kappa, tau, tmpl.m);
}

namespace {

constexpr double kAlphaLo = 0.5;
constexpr double kAlphaHi = 3.0;

double alpha_from_eta(double eta) { return kAlphaLo + (kAlphaHi - kAlphaLo) / (1.0 + std::exp(-eta)); }
double eta_from_alpha(double alpha) {
    const double u = (alpha - kAlphaLo) / (kAlphaHi - kAlphaLo);
    return std::log(u / (1.0 - u));
}

// Packed layout: theta_tau, theta_kappa, log sigma_e, [eta(alpha)].
struct Packing {
    Eigen::Index n_tau = 0, n_kappa = 0;
    bool alpha_free = false;
    double alpha_fixed = 1.0;

    Eigen::Index size() const { return n_tau + n_kappa + 1 + (alpha_free ? 1 : 0); }

    Eigen::VectorXd pack(const FitParameters& p) const {
        Eigen::VectorXd x(size());
        x.head(n_tau) = p.theta_tau;
        x.segment(n_tau, n_kappa) = p.theta_kappa;
        x(n_tau + n_kappa) = std::log(p.sigma_e);
        if (alpha_free) x(size() - 1) = eta_from_alpha(p.alpha);
        return x;
    }
    FitParameters unpack(const Eigen::VectorXd& x) const {
        FitParameters p;
        p.theta_tau = x.head(n_tau);
        p.theta_kappa = x.segment(n_tau, n_kappa);
        p.sigma_e = std::exp(x(n_tau + n_kappa));
        p.alpha = alpha_free ? alpha_from_eta(x(size() - 1)) : alpha_fixed;
        return p;
    }
};

struct Objective {
    const ModelTemplate* tmpl;
    const ObservationSet* obs;
    Packing packing;
    int evaluations = 0;
    int last_m = -1;
    std::vector<std::string>* notes;

    // Negative profile log-likelihood; +inf where the model cannot be built.
    double operator()(const Eigen::VectorXd& x) {
        ++evaluations;
        try {
            const FitParameters p = packing.unpack(x);
            const FieldModel model = build_model(*tmpl, p);
            if (model.order() != last_m && last_m >= 0 && notes)
                notes->push_back("rational order " + std::to_string(last_m) + " -> " + std::to_string(model.order()) +
                                 " at alpha " + format_double(p.alpha));
            last_m = model.order();
            const PrecisionBlocks blocks = precision_blocks(model);
            const double v = -profile_log_likelihood(model, blocks, *obs, p.sigma_e).value;
            return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
        } catch (const std::exception&) {
            return std::numeric_limits<double>::infinity();
        }
    }
};

double gsl_objective(const gsl_vector* v, void* params) {
    auto* obj = static_cast<Objective*>(params);
    Eigen::VectorXd x(static_cast<Eigen::Index>(v->size));
    for (std::size_t i = 0; i < v->size; ++i) x(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
    const double f = (*obj)(x);
    return std::isfinite(f) ? f : GSL_POSINF;
}

struct SimplexResult {
    Eigen::VectorXd x;
    double f = 0.0;
    bool converged = false;
};

SimplexResult nelder_mead(Objective& obj, const Eigen::VectorXd& x0, double step, int max_evals, double tol) {
    gsl_set_error_handler_off();
    const auto n = static_cast<std::size_t>(x0.size());
    gsl_vector* x = gsl_vector_alloc(n);
    gsl_vector* ss = gsl_vector_alloc(n);
    for (std::size_t i = 0; i < n; ++i) {
        gsl_vector_set(x, i, x0(static_cast<Eigen::Index>(i)));
        gsl_vector_set(ss, i, step);
    }
    gsl_multimin_function fn{&gsl_objective, n, &obj};
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
    gsl_multimin_fminimizer_set(s, &fn, x, ss);
    SimplexResult out;
    const int start = obj.evaluations;
    int status = GSL_CONTINUE;
    while (status == GSL_CONTINUE && obj.evaluations - start < max_evals) {
        if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
        status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), tol);
    }
    out.converged = status == GSL_SUCCESS;
    out.x.resize(x0.size());
    for (std::size_t i = 0; i < n; ++i) out.x(static_cast<Eigen::Index>(i)) = gsl_vector_get(s->x, i);
    out.f = s->fval;
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(ss);
    gsl_vector_free(x);
    return out;
}

// Central-difference Hessian of f at x.
Eigen::MatrixXd hessian(Objective& f, const Eigen::VectorXd& x, double fx) {
    const Eigen::Index n = x.size();
    Eigen::VectorXd h(n);
    for (Eigen::Index i = 0; i < n; ++i) h(i) = 1e-3 * std::max(1.0, std::abs(x(i)));
    Eigen::MatrixXd H(n, n);
    auto at = [&](Eigen::Index i, double di, Eigen::Index j, double dj) {
        Eigen::VectorXd y = x;
        y(i) += di;
        y(j) += dj;
        return f(y);
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        H(i, i) = (at(i, h(i), i, 0.0) - 2.0 * fx + at(i, -h(i), i, 0.0)) / (h(i) * h(i));
        for (Eigen::Index j = 0; j < i; ++j) {
            H(i, j) = (at(i, h(i), j, h(j)) - at(i, h(i), j, -h(j)) - at(i, -h(i), j, h(j)) + at(i, -h(i), j, -h(j))) /
                      (4.0 * h(i) * h(j));
            H(j, i) = H(i, j);
        }
    }
    return H;
}

}  // namespace

FitResult fit(const ModelTemplate& tmpl, const ObservationSet& obs, const FitParameters& start, const FitOptions& opts) {
    if (!tmpl.mesh) throw std::invalid_argument("fit: missing mesh");
    check_observations(obs, *tmpl.mesh, start.sigma_e);
    FitResult result;
    Packing packing;
    packing.n_tau = tmpl.variance_stationary ? 1 : tmpl.tau_covariates.cols() + 1;
    packing.n_kappa = tmpl.kappa_covariates.cols() + 1;
    packing.alpha_free = !tmpl.alpha.has_value();
    packing.alpha_fixed = tmpl.alpha.value_or(start.alpha);
    if (start.theta_tau.size() != packing.n_tau || start.theta_kappa.size() != packing.n_kappa)
        throw std::invalid_argument("fit: starting theta sizes do not match the template");
    if (packing.alpha_free && !(start.alpha > kAlphaLo && start.alpha < kAlphaHi))
        throw std::invalid_argument("fit: starting alpha must lie in (1/2, 3)");

    Objective obj{&tmpl, &obs, packing, 0, -1, &result.notes};
    FitParameters init = start;
    init.alpha = packing.alpha_fixed;
    if (packing.alpha_free) init.alpha = start.alpha;

    for (Eigen::Index i = 0; i < packing.n_tau; ++i) result.names.push_back(
        tmpl.variance_stationary ? "log_sigma0" : (i == 0 ? "tau_intercept" : "tau_slope_" + std::to_string(i)));
    for (Eigen::Index i = 0; i < packing.n_kappa; ++i)
        result.names.push_back(i == 0 ? "kappa_intercept" : "kappa_slope_" + std::to_string(i));
    result.names.push_back("log_sigma_e");
    if (packing.alpha_free) result.names.push_back("alpha_logit");

    Eigen::VectorXd x = packing.pack(init);
    if (packing.alpha_free && !opts.alpha_grid.empty()) {
        // Coarse grid with the other parameters optimized at each alpha, then
        // a fine scan around the best, before the joint polish.
        Packing fixed = packing;
        fixed.alpha_free = false;
        const int budget = std::max(50, opts.max_evaluations / (3 * static_cast<int>(opts.alpha_grid.size())));
        double best = std::numeric_limits<double>::infinity();
        double best_alpha = init.alpha;
        Eigen::VectorXd best_x = x.head(x.size() - 1);
        for (double a : opts.alpha_grid) {
            if (!(a > kAlphaLo && a < kAlphaHi)) throw std::invalid_argument("fit: alpha grid outside (1/2, 3)");
            fixed.alpha_fixed = a;
            Objective sub{&tmpl, &obs, fixed, 0, -1, nullptr};
            const SimplexResult r = nelder_mead(sub, best_x, 0.3, budget, 1e-3);
            obj.evaluations += sub.evaluations;
            if (r.f < best) {
                best = r.f;
                best_alpha = a;
                best_x = r.x;
            }
        }
        double spacing = 0.25;
        if (opts.alpha_grid.size() > 1) {
            std::vector<double> g = opts.alpha_grid;
            std::sort(g.begin(), g.end());
            spacing = g.back() - g.front();
            for (std::size_t i = 1; i < g.size(); ++i) spacing = std::min(spacing, g[i] - g[i - 1]);
        }
        for (int k = -2; k <= 2; ++k) {
            const double a = best_alpha + 0.25 * k * spacing;
            if (k == 0 || !(a > kAlphaLo && a < kAlphaHi)) continue;
            fixed.alpha_fixed = a;
            Objective sub{&tmpl, &obs, fixed, 0, -1, nullptr};
            const double f = sub(best_x);
            obj.evaluations += sub.evaluations;
            if (f < best) {
                best = f;
                best_alpha = a;
            }
        }
        x.head(x.size() - 1) = best_x;
        x(x.size() - 1) = eta_from_alpha(best_alpha);
    }

    if (!std::isfinite(obj(x)))
        throw std::runtime_error("fit: log-likelihood is not finite at the starting point");
    const int remaining = std::max(100, opts.max_evaluations - obj.evaluations);
    SimplexResult r = nelder_mead(obj, x, 0.3, remaining, opts.tolerance);
    if (!r.converged) {
        // One restart from the best iterate often finishes a stalled simplex.
        const SimplexResult r2 = nelder_mead(obj, r.x, 0.05, remaining / 2, opts.tolerance);
        if (r2.f <= r.f) r = r2;
    }
    result.converged = r.converged;
    result.packed = r.x;
    result.log_likelihood = -r.f;
    result.estimate = packing.unpack(r.x);
    {
        const FieldModel model = build_model(tmpl, result.estimate);
        const PrecisionBlocks blocks = precision_blocks(model);
        result.estimate.beta = profile_log_likelihood(model, blocks, obs, result.estimate.sigma_e).beta;
    }
    result.message = r.converged ? "converged" : "maximum evaluations reached; returning best iterate";

    result.standard_errors = Eigen::VectorXd::Constant(r.x.size(), std::numeric_limits<double>::quiet_NaN());
    if (opts.standard_errors) {
        const Eigen::MatrixXd H = hessian(obj, r.x, r.f);
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        if (H.allFinite() && ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0) {
            const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(H.rows(), H.cols()));
            result.standard_errors = cov.diagonal().array().sqrt();
        } else {
            result.notes.push_back("observed information not positive definite; standard errors unavailable");
        }
    }
    result.evaluations = obj.evaluations;
    return result;
}

CvResult leave_radius_out_cv(const FieldModel& model, const PrecisionBlocks& blocks, const ObservationSet& obs,
                             double sigma_e, const Eigen::VectorXd& beta, const std::vector<double>& radii,
                             int threads) {
    check_observations(obs, model.mesh(), sigma_e);
    if (beta.size() != obs.num_covariates()) throw std::invalid_argument("cv: beta size does not match the design");
    if (radii.empty()) throw std::invalid_argument("cv: no radii");
    for (double R : radii)
        if (!(R >= 0.0) || !std::isfinite(R)) throw std::invalid_argument("cv: radii must be finite and nonnegative");

    const MetricGraph& graph = model.mesh().graph();
    const std::size_t nr = radii.size();
    struct Acc {
        double se = 0.0, nls = 0.0;
        int count = 0, skipped = 0;
    };
    CvResult out;
    out.radii = radii;
    std::vector<Acc> total(nr);
    const double s2 = sigma_e * sigma_e;

    for (const auto& g : location_groups(obs)) {
        const auto& locs = obs.replicates[g.front()].locations;
        const std::size_t n = locs.size();
        Eigen::MatrixXd D(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        parallel_for(n, threads, [&](std::size_t i) {
            for (std::size_t j = 0; j < n; ++j)
                D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = geodesic(graph, locs[i], locs[j]);
        });
        std::vector<Acc> task(n * nr);
        parallel_for(n * nr, threads, [&](std::size_t k) {
            const std::size_t i = k / nr, ri = k % nr;
            std::vector<GraphPoint> kept;
            std::vector<Eigen::Index> idx;
            for (std::size_t j = 0; j < n; ++j)
                if (D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > radii[ri]) {
                    kept.push_back(locs[j]);
                    idx.push_back(static_cast<Eigen::Index>(j));
                }
            Acc& acc = task[k];
            if (kept.empty()) {
                acc.skipped = static_cast<int>(g.size());
                return;
            }
            const Posterior post(model, blocks, kept, sigma_e);
            const double var = post.variance_at(locs[i]) + s2;
            const auto ii = static_cast<Eigen::Index>(i);
            for (std::size_t r : g) {
                const Replicate& rep = obs.replicates[r];
                const Eigen::VectorXd fe = fixed_effects(rep, beta);
                Eigen::VectorXd resid(static_cast<Eigen::Index>(idx.size()));
                for (std::size_t j = 0; j < idx.size(); ++j)
                    resid(static_cast<Eigen::Index>(j)) = rep.y(idx[j]) - fe(idx[j]);
                const double pred = fe(ii) + post.mean_at(locs[i], post.stacked_mean(resid));
                const double err = rep.y(ii) - pred;
                acc.se += err * err;
                acc.nls += 0.5 * (kLog2Pi + std::log(var)) + 0.5 * err * err / var;
                ++acc.count;
            }
        });
        for (std::size_t k = 0; k < task.size(); ++k) {
            Acc& t = total[k % nr];
            t.se += task[k].se;
            t.nls += task[k].nls;
            t.count += task[k].count;
            t.skipped += task[k].skipped;
        }
    }
    for (const Acc& t : total) {
        const double c = t.count > 0 ? static_cast<double>(t.count) : std::numeric_limits<double>::quiet_NaN();
        out.mse.push_back(t.se / c);
        out.nls.push_back(t.nls / c);
        out.predictions.push_back(t.count);
        out.skipped.push_back(t.skipped);
    }
    return out;
}

}  // namespace graphfield
