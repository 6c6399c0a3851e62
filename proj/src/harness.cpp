#include "graphfield/harness.hpp"
#include "graphfield/parallel.hpp"

#include "graphfield/assembly.hpp"
#include "graphfield/field.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace graphfield {

namespace {

Eigen::MatrixXd difference(const Eigen::MatrixXd& exact_fine, const Eigen::MatrixXd& approx_coarse,
                           const Eigen::SparseMatrix<double>& A) {
    if (A.rows() != exact_fine.rows() || exact_fine.rows() != exact_fine.cols() ||
        A.cols() != approx_coarse.rows() || approx_coarse.rows() != approx_coarse.cols())
        throw std::invalid_argument("error metric: dimension mismatch");
    const Eigen::MatrixXd AS = A * approx_coarse;
    const Eigen::MatrixXd proj = AS * A.transpose();
    return exact_fine - proj;
}

// Everything about one (graph, alpha, rho) that does not depend on the coarse mesh.
struct Reference {
    OracleGraph graph;
    double alpha, rho, kappa, tau;
    std::shared_ptr<const Mesh> fine;
    Eigen::MatrixXd exact;
    Eigen::VectorXd w;
};

Reference make_reference(OracleGraph g, double alpha, double rho, double h_ok) {
    Reference r{g, alpha, rho, kappa_for_range(alpha, rho), 0.0, nullptr, {}, {}};
    r.tau = tau_for_variance(alpha, r.kappa, 1.0);
    r.fine = std::make_shared<const Mesh>(build_mesh(oracle_graph(g), h_ok));
    r.exact = exact_covariance(g, *r.fine, alpha, r.kappa, r.tau);
    r.w = lump_mass(assemble_mass(*r.fine));
    return r;
}

ErrorRecord evaluate(const Reference& ref, double h_target, std::optional<int> m, double calibration) {
    const auto t0 = std::chrono::steady_clock::now();
    auto coarse = std::make_shared<const Mesh>(build_mesh(oracle_graph(ref.graph), h_target));
    if (!m && fractional_part(ref.alpha) != 0.0)
        m = std::min(calibrate_order(ref.alpha, coarse->h(), calibration), kMaxRationalOrder);
    const Diagonal kappa = Diagonal::Constant(coarse->num_nodes(), ref.kappa);
    const Diagonal tau = Diagonal::Constant(coarse->num_nodes(), ref.tau);
    const FieldModel model(coarse, ref.alpha, kappa, tau, m);
    const Eigen::MatrixXd approx = covariance_matrix(model);
    const Eigen::SparseMatrix<double> A = coarse->projector_to(*ref.fine);
    ErrorRecord rec;
    rec.graph = to_string(ref.graph);
    rec.alpha = ref.alpha;
    rec.rho = ref.rho;
    rec.m = model.order();
    rec.h_target = h_target;
    rec.h = coarse->h();
    const Eigen::MatrixXd D = difference(ref.exact, approx, A);
    rec.l2 = std::sqrt(ref.w.dot(D.array().square().matrix() * ref.w));
    rec.sup = D.cwiseAbs().maxCoeff();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// Largest neglected fold term relative to the marginal variance.
double fold_tail(const Reference& ref) {
    const MaternParams p = MaternParams::from_alpha(ref.alpha, ref.kappa, ref.tau);
    const double length = oracle_graph(ref.graph).edge(0).length;
    double period = ref.graph == OracleGraph::Interval ? 2.0 * length : length;
    if (ref.graph == OracleGraph::Tadpole) period = 4.0;
    const int terms = default_fold_terms(p, period);
    return 2.0 * matern(terms * period, p);
}


}  // namespace

double l2_error(const Eigen::MatrixXd& exact_fine, const Eigen::MatrixXd& approx_coarse,
                const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& w) {
    const Eigen::MatrixXd D = difference(exact_fine, approx_coarse, A);
    if (w.size() != D.rows()) throw std::invalid_argument("error metric: dimension mismatch");
    return std::sqrt(w.dot(D.array().square().matrix() * w));
}

double sup_error(const Eigen::MatrixXd& exact_fine, const Eigen::MatrixXd& approx_coarse,
                 const Eigen::SparseMatrix<double>& A) {
    return difference(exact_fine, approx_coarse, A).cwiseAbs().maxCoeff();
}

double theoretical_rate(double alpha) { return std::min(2.0 * alpha - 0.5, 2.0); }

RateFit fit_rate(double alpha, const std::vector<double>& h, const std::vector<double>& error) {
    if (h.size() != error.size()) throw std::invalid_argument("fit_rate: size mismatch");
    if (h.size() < 4) throw std::invalid_argument("fit_rate: at least 4 mesh levels required");
    const auto n = static_cast<Eigen::Index>(h.size());
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = std::log(h[static_cast<std::size_t>(i)]);
        y(i) = std::log(error[static_cast<std::size_t>(i)]);
    }
    const Eigen::Vector2d beta = X.colPivHouseholderQr().solve(y);
    RateFit f;
    f.alpha = alpha;
    f.intercept = beta(0);
    f.slope = beta(1);
    f.residual = std::sqrt((y - X * beta).squaredNorm() / std::max<Eigen::Index>(1, n - 2));
    f.theoretical = theoretical_rate(alpha);
    f.levels = static_cast<int>(n);
    return f;
}

RateResult rate_experiment(OracleGraph graph, const std::vector<double>& alphas, const std::vector<double>& levels,
                           double rho, const ExperimentOptions& opts) {
    for (double l : levels)
        if (std::pow(2.0, -l) <= opts.h_ok) throw std::invalid_argument("rate experiment: reference mesh not finer than test meshes");
    std::vector<std::vector<ErrorRecord>> per_alpha(alphas.size());
    parallel_for(alphas.size(), opts.threads, [&](std::size_t a) {
        const Reference ref = make_reference(graph, alphas[a], rho, opts.h_ok);
        for (double l : levels) per_alpha[a].push_back(evaluate(ref, std::pow(2.0, -l), opts.fixed_m, opts.calibration));
        double smallest = per_alpha[a].front().l2;
        for (const auto& r : per_alpha[a]) smallest = std::min(smallest, r.l2);
        if (fold_tail(ref) > 0.01 * smallest)
            throw std::runtime_error("rate experiment: oracle truncation insufficient");
    });
    RateResult out;
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        std::vector<double> hs, es;
        for (const auto& r : per_alpha[a]) {
            hs.push_back(r.h);
            es.push_back(r.l2);
            out.records.push_back(r);
        }
        out.fits.push_back(fit_rate(alphas[a], hs, es));
    }
    return out;
}

std::vector<ErrorRecord> error_grid(OracleGraph graph, const std::vector<double>& alphas, const std::vector<int>& ms,
                                    const std::vector<double>& rhos, double h, const ExperimentOptions& opts) {
    struct Cell {
        double alpha, rho;
    };
    std::vector<Cell> cells;
    for (double r : rhos)
        for (double a : alphas) cells.push_back({a, r});
    std::vector<std::vector<ErrorRecord>> out(cells.size());
    parallel_for(cells.size(), opts.threads, [&](std::size_t i) {
        const Reference ref = make_reference(graph, cells[i].alpha, cells[i].rho, opts.h_ok);
        for (int m : ms) out[i].push_back(evaluate(ref, h, m, opts.calibration));
    });
    std::vector<ErrorRecord> flat;
    for (auto& v : out) flat.insert(flat.end(), v.begin(), v.end());
    return flat;
}

}  // namespace graphfield
