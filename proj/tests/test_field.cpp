#include "graphfield/field.hpp"
#include "graphfield/oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace graphfield;

namespace {

std::shared_ptr<const Mesh> mesh_of(const MetricGraph& g, double h) { return std::make_shared<const Mesh>(build_mesh(g, h)); }

Diagonal varying(const Mesh& mesh, double base, double slope) {
    Diagonal d(mesh.num_nodes());
    for (int i = 0; i < d.size(); ++i) d(i) = base + slope * std::sin(0.3 * i);
    return d;
}

}  // namespace

TEST(Field, IntegerOrderBlocks) {
    auto mesh = mesh_of(make_tadpole(), 0.1);
    const Diagonal kappa = varying(*mesh, 2.0, 0.3), tau = varying(*mesh, 1.0, 0.2);
    const Eigen::MatrixXd T = tau.asDiagonal(), L = testutil::dense(FieldModel(mesh, 1.0, kappa, tau).L());
    const FieldModel m1(mesh, 1.0, kappa, tau), m2(mesh, 2.0, kappa, tau);
    EXPECT_EQ(m1.order(), 0);
    const PrecisionBlocks b1 = precision_blocks(m1), b2 = precision_blocks(m2);
    ASSERT_EQ(b1.count(), 1u);
    ASSERT_EQ(b2.count(), 1u);
    EXPECT_LT(testutil::max_abs(testutil::dense(b1.Q[0]) - T * L * T), 1e-12 * L.cwiseAbs().maxCoeff());
    const Eigen::MatrixXd Ci = m2.Ctilde().cwiseInverse().asDiagonal();
    const Eigen::MatrixXd want = T * L * Ci * L * T;
    EXPECT_LT(testutil::max_abs(testutil::dense(b2.Q[0]) - want), 1e-12 * want.cwiseAbs().maxCoeff());
}

TEST(Field, BlockCountAndSymmetry) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 64.0);
    const FieldModel model(mesh, 1.75, constant_function(3.0), constant_function(1.0), 3);
    const PrecisionBlocks b = precision_blocks(model);
    ASSERT_EQ(b.count(), 4u);
    for (const auto& Q : b.Q) {
        const Eigen::MatrixXd D = testutil::dense(Q);
        EXPECT_LT(testutil::max_abs(D - D.transpose()), 1e-12 * testutil::max_abs(D));
    }
}

// The sum of the block inverses equals the partial-fraction covariance
// computed by direct solves.
TEST(Field, BlocksMatchDirectPartialFractions) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 64.0);
    ASSERT_EQ(mesh->num_nodes(), 65);
    for (double alpha : {0.75, 1.4, 2.6}) {
        const FieldModel model(mesh, alpha, varying(*mesh, 4.0, 1.0), varying(*mesh, 1.0, 0.3), 3);
        const Eigen::MatrixXd direct = covariance_matrix(model);
        const Eigen::MatrixXd blocks = covariance_from_blocks(precision_blocks(model));
        EXPECT_LT(testutil::max_abs(direct - blocks), 1e-9 * std::max(1.0, testutil::max_abs(direct))) << alpha;
    }
}

TEST(Field, RationalCovarianceApproachesSpectral) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 64.0);
    const Diagonal kappa = varying(*mesh, 3.0, 0.5), tau = varying(*mesh, 1.0, 0.2);
    for (double alpha : {0.6, 0.75, 1.3}) {
        const FieldModel m0(mesh, alpha, kappa, tau, 1);
        const Eigen::MatrixXd exact = spectral_discrete_cov(m0.L(), m0.Ctilde(), tau, alpha);
        double previous = 1e300;
        for (int m = 1; m <= 5; ++m) {
            const FieldModel model(mesh, alpha, kappa, tau, m);
            const double err = (covariance_matrix(model) - exact).norm();
            EXPECT_LT(err, previous) << alpha << " m=" << m;
            previous = err;
        }
        EXPECT_LT(previous, 1e-2 * exact.norm()) << alpha;
    }
}

// With V^T C~ V = I and L V = C~ V Lambda, the partial-fraction covariance is
// tau^{-1} V Lambda^{-floor(alpha)} r(Lambda) V^T tau^{-1} exactly; in particular
// the constant term acts as k C~^{-1} = k V V^T.
TEST(Field, PartialFractionsAsSpectralCalculus) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 64.0);
    const Diagonal kappa = varying(*mesh, 2.0, 0.5), tau = varying(*mesh, 1.0, 0.2);
    for (double alpha : {0.75, 1.3, 2.4}) {
        const FieldModel model(mesh, alpha, kappa, tau, 4);
        const DiscreteSpectrum sp = discrete_spectrum(model.L(), model.Ctilde());
        const PartialFractions& pf = model.fractions();
        Eigen::VectorXd f(sp.eigenvalues.size());
        for (int j = 0; j < f.size(); ++j) {
            const double lam = sp.eigenvalues(j);
            f(j) = pf(lam) * std::pow(lam, -model.floor_alpha());
        }
        const Eigen::MatrixXd Ti = tau.cwiseInverse().asDiagonal();
        const Eigen::MatrixXd want = Ti * sp.eigenvectors * f.asDiagonal() * sp.eigenvectors.transpose() * Ti;
        const Eigen::MatrixXd got = covariance_matrix(model);
        EXPECT_LT(testutil::max_abs(got - want), 1e-9 * testutil::max_abs(want)) << alpha;
    }
}

TEST(Field, SelectedInversionMatchesDense) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 64.0);
    const FieldModel model(mesh, 1.25, varying(*mesh, 3.0, 1.0), varying(*mesh, 1.0, 0.4), 2);
    const PrecisionBlocks b = precision_blocks(model);
    const Eigen::VectorXd sel = marginal_variance(b, VarianceMethod::Selected);
    const Eigen::VectorXd den = marginal_variance(b, VarianceMethod::Dense);
    EXPECT_LT((sel - den).cwiseAbs().maxCoeff(), 1e-9 * den.maxCoeff());
    EXPECT_LT((marginal_std(b, VarianceMethod::Selected) - den.cwiseSqrt()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Field, StarTipsVaryMoreThanCenter) {
    auto mesh = mesh_of(make_star(3, 1.0), 0.05);
    const FieldModel model(mesh, 1.0, constant_function(1.0), constant_function(1.0));
    const Eigen::VectorXd v = marginal_variance(precision_blocks(model));
    const MetricGraph& g = mesh->graph();
    int center = -1;
    for (int i = 0; i < static_cast<int>(g.num_vertices()); ++i)
        if (g.degree(i) == 3) center = i;
    ASSERT_GE(center, 0);
    for (int i = 0; i < static_cast<int>(g.num_vertices()); ++i)
        if (g.degree(i) == 1) EXPECT_GT(v(i), v(center));
    EXPECT_TRUE((v.array() > 0.0).all());
}

TEST(Field, VarianceStationaryModel) {
    auto mesh = mesh_of(make_star(3, 1.0), 0.05);
    const Diagonal kappa = varying(*mesh, 2.0, 0.5);
    for (double alpha : {0.8, 1.0, 1.6}) {
        const FieldModel model = variance_stationary_model(mesh, kappa, alpha, 1.7, 3);
        const Eigen::VectorXd sd = marginal_std(precision_blocks(model));
        EXPECT_LT((sd.array() - 1.7).abs().maxCoeff(), 1e-8) << alpha;
    }
    // On a circle with constant parameters tau is already constant.
    auto circle = mesh_of(make_circle(2.0), 0.05);
    const FieldModel c = variance_stationary_model(circle, Diagonal::Constant(circle->num_nodes(), 3.0), 1.5, 1.0, 2);
    EXPECT_LT(c.tau().maxCoeff() - c.tau().minCoeff(), 1e-10 * c.tau().maxCoeff());
    EXPECT_THROW(variance_stationary_model(circle, Diagonal::Ones(circle->num_nodes()), 1.5, 0.0), std::invalid_argument);
}

TEST(Field, SamplingDeterministicAndThreadIndependent) {
    auto mesh = mesh_of(make_tadpole(), 0.05);
    const FieldModel model(mesh, 0.75, constant_function(3.0), constant_function(1.0), 3);
    const PrecisionBlocks b = precision_blocks(model);
    const Eigen::MatrixXd s1 = sample(b, 5, 42, 1);
    const Eigen::MatrixXd s4 = sample(b, 5, 42, 4);
    EXPECT_TRUE(s1 == s4);
    EXPECT_TRUE(s1 == sample(b, 5, 42, 1));
    EXPECT_FALSE(s1 == sample(b, 5, 43, 1));
    EXPECT_NE(block_seed(1, 0), block_seed(1, 1));
    EXPECT_NE(block_seed(1, 0), block_seed(2, 0));
}

TEST(Field, DoublingTauHalvesSamples) {
    auto mesh = mesh_of(make_tadpole(), 0.05);
    const FieldModel model(mesh, 1.3, constant_function(3.0), constant_function(1.0), 2);
    const FieldModel doubled = model.with_tau(2.0 * model.tau());
    const Eigen::MatrixXd a = sample(precision_blocks(model), 4, 7);
    const Eigen::MatrixXd b = sample(precision_blocks(doubled), 4, 7);
    EXPECT_LT(testutil::max_abs(2.0 * b - a), 1e-14 * testutil::max_abs(a));
}

TEST(Field, MonteCarloMatchesCovariance) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 32.0);
    const FieldModel model(mesh, 0.75, constant_function(4.0), constant_function(1.0), 3);
    const Eigen::MatrixXd S = covariance_matrix(model);
    const int n = 20000;
    const Eigen::MatrixXd X = sample(precision_blocks(model), n, 99);
    const Eigen::MatrixXd emp = X.transpose() * X / n;
    int inside = 0, total = 0;
    for (int i = 0; i < S.rows(); ++i)
        for (int j = 0; j <= i; ++j) {
            const double se = std::sqrt((S(i, j) * S(i, j) + S(i, i) * S(j, j)) / n);
            inside += std::abs(emp(i, j) - S(i, j)) <= 4.0 * se;
            ++total;
        }
    EXPECT_GE(inside, static_cast<int>(0.99 * total));
}

TEST(Field, CovarianceRowAndPsd) {
    auto mesh = mesh_of(make_tadpole(), 0.1);
    const FieldModel model(mesh, 1.4, varying(*mesh, 2.0, 0.5), Diagonal::Ones(mesh->num_nodes()), 2);
    const PrecisionBlocks b = precision_blocks(model);
    const Eigen::MatrixXd S = covariance_from_blocks(b);
    EXPECT_LT(testutil::max_abs(S - S.transpose()), 1e-13 * testutil::max_abs(S));
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S).eigenvalues().minCoeff(), 0.0);
    const int node = 5;
    const Eigen::VectorXd row = covariance_row(model, b, mesh->node_point(node));
    EXPECT_LT((row - S.col(node)).cwiseAbs().maxCoeff(), 1e-12 * S(node, node));
    // Between nodes the row interpolates linearly.
    const GraphPoint mid{1, 0.5 * mesh->segment_length(1)};
    const Eigen::VectorXd r = covariance_row(model, b, mid);
    const int a0 = mesh->node(1, 0), a1 = mesh->node(1, 1);
    EXPECT_LT((r - 0.5 * (S.col(a0) + S.col(a1))).cwiseAbs().maxCoeff(), 1e-12 * S(a0, a0));
}

TEST(Field, LogRegression) {
    Eigen::MatrixXd G(3, 1);
    G << -1.0, 0.0, 2.0;
    Eigen::VectorXd tt(2), tk(2);
    tt << 0.5, 0.1;
    tk << std::log(3.0), -0.2;
    const auto [tau, kappa] = log_regression_coefficients(G, tt, tk);
    EXPECT_NEAR(tau(0), std::exp(0.4), 1e-15);
    EXPECT_NEAR(tau(2), std::exp(0.7), 1e-15);
    EXPECT_NEAR(kappa(1), 3.0, 1e-15);
    EXPECT_NEAR(kappa(2), 3.0 * std::exp(-0.4), 1e-15);
    EXPECT_THROW(log_regression_coefficients(G, tt, Eigen::VectorXd::Ones(3)), std::invalid_argument);
    G(1, 0) = std::nan("");
    EXPECT_THROW(log_regression_coefficients(G, tt, tk), std::invalid_argument);
}

TEST(Field, InvalidParameters) {
    auto mesh = mesh_of(make_interval(1.0), 0.1);
    EXPECT_THROW(FieldModel(mesh, 0.5, constant_function(1.0), constant_function(1.0)), std::invalid_argument);
    EXPECT_THROW(FieldModel(mesh, 3.5, constant_function(1.0), constant_function(1.0)), std::invalid_argument);
    EXPECT_THROW(FieldModel(mesh, 1.0, constant_function(-1.0), constant_function(1.0)), std::invalid_argument);
    EXPECT_THROW(FieldModel(mesh, 1.5, constant_function(1.0), constant_function(1.0), 0), std::invalid_argument);
}

TEST(Field, CalibratedOrderIsCapped) {
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 64.0);
    const FieldModel model(mesh, 1.5, constant_function(1.0), constant_function(1.0));
    EXPECT_EQ(model.order(), std::min(calibrate_order(1.5, mesh->h()), kMaxRationalOrder));
    const FieldModel tiny(mesh, 0.51, constant_function(1.0), constant_function(1.0));
    EXPECT_LE(tiny.order(), kMaxRationalOrder);
}
