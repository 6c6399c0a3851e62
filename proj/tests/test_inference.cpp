#include "graphfield/inference.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace graphfield;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

std::shared_ptr<const Mesh> mesh_of(const MetricGraph& g, double h) { return std::make_shared<const Mesh>(build_mesh(g, h)); }

// Covariance form: Sigma_y = A Sigma_u A^T + sigma^2 I with Sigma_u = sum_i Q_i^{-1}.
struct Dense {
    Eigen::MatrixXd S, A, Sy;

    Dense(const PrecisionBlocks& b, const Mesh& mesh, const std::vector<GraphPoint>& locs, double sigma)
        : S(covariance_from_blocks(b)), A(testutil::dense(mesh.projector(locs))) {
        Sy = A * S * A.transpose();
        Sy.diagonal().array() += sigma * sigma;
    }
    Eigen::VectorXd node_mean(const Eigen::VectorXd& y) const { return S * A.transpose() * Sy.ldlt().solve(y); }
    double variance(const Eigen::RowVectorXd& a) const {
        const Eigen::VectorXd c = A * S * a.transpose();
        return (a * S * a.transpose())(0, 0) - c.dot(Sy.ldlt().solve(c));
    }
    double loglik(const Eigen::VectorXd& r) const {
        const Eigen::LLT<Eigen::MatrixXd> llt(Sy);
        const double ld = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
        return -0.5 * (r.size() * kLog2Pi + ld + r.dot(llt.solve(r)));
    }
};

ObservationSet single(const std::vector<GraphPoint>& locs, const Eigen::VectorXd& y) {
    ObservationSet obs;
    obs.replicates.push_back({locs, y, Eigen::MatrixXd(static_cast<Eigen::Index>(locs.size()), 0)});
    return obs;
}

// Replicates of u + noise at common locations, simulated from `model`.
ObservationSet simulate(const FieldModel& model, const std::vector<GraphPoint>& locs, int replicates, double sigma,
                        std::uint64_t seed) {
    const Eigen::MatrixXd U = sample(precision_blocks(model), replicates, seed);
    const Eigen::SparseMatrix<double> A = model.mesh().projector(locs);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> noise(0.0, sigma);
    ObservationSet obs;
    for (int r = 0; r < replicates; ++r) {
        Eigen::VectorXd y = A * U.row(r).transpose();
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
        obs.replicates.push_back({locs, y, Eigen::MatrixXd(y.size(), 0)});
    }
    return obs;
}

// Pool-adjacent-violators fit of a nondecreasing sequence.
std::vector<double> isotonic(const std::vector<double>& v) {
    std::vector<double> mean;
    std::vector<int> count;
    for (double x : v) {
        mean.push_back(x);
        count.push_back(1);
        while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
            const std::size_t k = mean.size() - 1;
            mean[k - 1] = (mean[k - 1] * count[k - 1] + mean[k] * count[k]) / (count[k - 1] + count[k]);
            count[k - 1] += count[k];
            mean.pop_back();
            count.pop_back();
        }
    }
    std::vector<double> out;
    for (std::size_t k = 0; k < mean.size(); ++k) out.insert(out.end(), static_cast<std::size_t>(count[k]), mean[k]);
    return out;
}

}  // namespace

TEST(Kriging, MatchesCovarianceForm) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto mesh = mesh_of(make_interval(1.0), 1.0 / 32.0);
    for (int c = 0; c < 20; ++c) {
        const double alpha = 0.6 + 2.2 * u(rng), kappa = 2.0 + 8.0 * u(rng), sigma = 0.05 + 0.5 * u(rng);
        Diagonal tau(mesh->num_nodes());
        for (int i = 0; i < tau.size(); ++i) tau(i) = 0.5 + 0.2 * std::sin(i * u(rng));
        const FieldModel model(mesh, alpha, Diagonal::Constant(mesh->num_nodes(), kappa), tau, 3);
        const PrecisionBlocks b = precision_blocks(model);
        const auto locs = testutil::random_points(mesh->graph(), 10, rng);
        Eigen::VectorXd y(10);
        for (int i = 0; i < 10; ++i) y(i) = u(rng) - 0.5;
        const Dense d(b, *mesh, locs, sigma);
        const PosteriorSummary ps = kriging(model, b, locs, y, sigma, true);
        const Eigen::VectorXd want = d.node_mean(y);
        EXPECT_LT((ps.mean - want).cwiseAbs().maxCoeff(), 1e-8 * std::max(1.0, want.cwiseAbs().maxCoeff())) << c;
        const Posterior post(model, b, locs, sigma);
        const GraphPoint s = testutil::random_point(mesh->graph(), rng);
        const Eigen::RowVectorXd a = testutil::dense(mesh->projector({s})).row(0);
        EXPECT_NEAR(post.mean_at(s, post.stacked_mean(y)), a.dot(want), 1e-8);
        EXPECT_NEAR(post.variance_at(s), d.variance(a), 1e-8 * d.S.diagonal().maxCoeff());
        for (int i : {0, 7, 20})
            EXPECT_NEAR(ps.variance(i), d.variance(Eigen::RowVectorXd::Unit(mesh->num_nodes(), i)),
                        1e-8 * d.S.diagonal().maxCoeff());
    }
}

TEST(Kriging, NoiselessInterpolatesAtNodes) {
    auto mesh = mesh_of(make_tadpole(), 0.1);
    const FieldModel model(mesh, 1.5, constant_function(2.0), constant_function(1.0));
    const PrecisionBlocks b = precision_blocks(model);
    const std::vector<GraphPoint> locs{mesh->node_point(3), mesh->node_point(12), mesh->node_point(25)};
    Eigen::VectorXd y(3);
    y << 0.4, -1.2, 0.9;
    const PosteriorSummary ps = kriging(model, b, locs, y, 1e-7);
    EXPECT_NEAR(ps.mean(3), 0.4, 1e-6);
    EXPECT_NEAR(ps.mean(12), -1.2, 1e-6);
    EXPECT_NEAR(ps.mean(25), 0.9, 1e-6);
    EXPECT_LT(kriging(model, b, locs, Eigen::VectorXd::Zero(3), 0.1).mean.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Kriging, PermutationInvariant) {
    auto mesh = mesh_of(make_star(3, 1.0), 0.1);
    const FieldModel model(mesh, 0.8, constant_function(3.0), constant_function(1.0), 2);
    const PrecisionBlocks b = precision_blocks(model);
    std::mt19937_64 rng(4);
    auto locs = testutil::random_points(mesh->graph(), 12, rng);
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(12, -1.0, 1.0);
    const Eigen::VectorXd m1 = kriging(model, b, locs, y, 0.2).mean;
    const double l1 = log_likelihood(model, b, single(locs, y), 0.2, Eigen::VectorXd());
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<GraphPoint> lp;
    Eigen::VectorXd yp(12);
    for (int i = 0; i < 12; ++i) {
        lp.push_back(locs[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
        yp(i) = y(perm[static_cast<std::size_t>(i)]);
    }
    EXPECT_LT((kriging(model, b, lp, yp, 0.2).mean - m1).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(log_likelihood(model, b, single(lp, yp), 0.2, Eigen::VectorXd()), l1, 1e-10 * std::abs(l1));
}

TEST(Likelihood, MatchesDenseGaussian) {
    std::mt19937_64 rng(21);
    auto mesh = mesh_of(make_tadpole(), 0.1);
    for (double alpha : {0.7, 1.0, 1.6, 2.0}) {
        const FieldModel model(mesh, alpha, constant_function(2.5), constant_function(0.8), 3);
        const PrecisionBlocks b = precision_blocks(model);
        for (int n = 1; n <= 10; ++n) {
            const auto locs = testutil::random_points(mesh->graph(), n, rng);
            Eigen::VectorXd y = Eigen::VectorXd::Random(n);
            const Dense d(b, *mesh, locs, 0.3);
            EXPECT_NEAR(log_likelihood(model, b, single(locs, y), 0.3, Eigen::VectorXd()), d.loglik(y), 1e-9)
                << alpha << " n=" << n;
        }
    }
}

TEST(Likelihood, FixedEffectsAndProfile) {
    std::mt19937_64 rng(22);
    auto mesh = mesh_of(make_interval(2.0), 0.05);
    const FieldModel model(mesh, 1.25, constant_function(3.0), constant_function(1.0), 2);
    const PrecisionBlocks b = precision_blocks(model);
    const auto locs = testutil::random_points(mesh->graph(), 15, rng);
    Eigen::MatrixXd F(15, 2);
    for (int i = 0; i < 15; ++i) F.row(i) << 1.0, locs[static_cast<std::size_t>(i)].t;
    Eigen::VectorXd y = Eigen::VectorXd::Random(15).array() + 2.0;
    ObservationSet obs;
    obs.replicates.push_back({locs, y, F});
    const Dense d(b, *mesh, locs, 0.2);
    Eigen::VectorXd beta(2);
    beta << 1.5, 0.3;
    EXPECT_NEAR(log_likelihood(model, b, obs, 0.2, beta), d.loglik(y - F * beta), 1e-9);
    const Eigen::MatrixXd SiF = d.Sy.ldlt().solve(F);
    const Eigen::VectorXd gls = (F.transpose() * SiF).ldlt().solve(SiF.transpose() * y);
    const ProfileLikelihood p = profile_log_likelihood(model, b, obs, 0.2);
    EXPECT_LT((p.beta - gls).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(p.value, d.loglik(y - F * gls), 1e-9);
    EXPECT_THROW(log_likelihood(model, b, obs, 0.2, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Likelihood, QuadraticInData) {
    auto mesh = mesh_of(make_circle(2.0), 0.1);
    const FieldModel model(mesh, 1.5, constant_function(2.0), constant_function(1.0));
    const PrecisionBlocks b = precision_blocks(model);
    std::mt19937_64 rng(5);
    const auto locs = testutil::random_points(mesh->graph(), 6, rng);
    const Eigen::VectorXd y = Eigen::VectorXd::Random(6);
    auto l = [&](double t) { return log_likelihood(model, b, single(locs, t * y), 0.4, Eigen::VectorXd()); };
    EXPECT_NEAR(l(0) - 2 * l(1) + l(2), l(1) - 2 * l(2) + l(3), 1e-9);
    EXPECT_LT(l(1), l(0));
    // Large noise: the field is negligible and y ~ N(0, sigma^2 I).
    const double s = 1e4;
    const double iid = -0.5 * (6 * kLog2Pi + 6 * std::log(s * s) + y.squaredNorm() / (s * s));
    EXPECT_NEAR(log_likelihood(model, b, single(locs, y), s, Eigen::VectorXd()), iid, 1e-6);
}

TEST(Observations, CsvRoundTrip) {
    const MetricGraph g = make_tadpole();
    const std::string text =
        "value,edge_id,t,replicate,elev\n"
        "0.5," + std::to_string(g.edge(1).id) + ",0.25,7,1.0\n" +
        "-1.25," + std::to_string(g.edge(0).id) + ",0.5,7,2.0\n" +
        "3," + std::to_string(g.edge(1).id) + ",0.25,2,1.0\n" +
        "4," + std::to_string(g.edge(0).id) + ",0.5,2,2.0\n";
    const ObservationSet obs = read_observations_csv(text, g);
    ASSERT_EQ(obs.replicates.size(), 2u);
    EXPECT_EQ(obs.total(), 4u);
    EXPECT_EQ(obs.num_covariates(), 1);
    EXPECT_EQ(obs.replicates[0].locations[0].edge, 1);
    EXPECT_DOUBLE_EQ(obs.replicates[0].y(1), -1.25);
    EXPECT_DOUBLE_EQ(obs.replicates[1].design(1, 0), 2.0);
    const ObservationSet again = read_observations_csv(write_observations_csv(obs, g), g);
    ASSERT_EQ(again.replicates.size(), 2u);
    for (std::size_t r = 0; r < 2; ++r) {
        EXPECT_EQ(again.replicates[r].y, obs.replicates[r].y);
        EXPECT_EQ(again.replicates[r].design, obs.replicates[r].design);
        for (std::size_t i = 0; i < 2; ++i) {
            EXPECT_EQ(again.replicates[r].locations[i].edge, obs.replicates[r].locations[i].edge);
            EXPECT_EQ(again.replicates[r].locations[i].t, obs.replicates[r].locations[i].t);
        }
    }
}

TEST(Observations, CsvErrors) {
    const MetricGraph g = make_tadpole();
    const std::string e0 = std::to_string(g.edge(0).id);
    auto message = [&](const std::string& text) {
        try {
            read_observations_csv(text, g);
        } catch (const std::exception& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message("edge_id,t\n" + e0 + ",0.5\n").find("header"), std::string::npos);
    EXPECT_NE(message("edge_id,t,value\n" + e0 + ",0.5,abc\n").find("line 2"), std::string::npos);
    EXPECT_FALSE(message("edge_id,t,value\n" + e0 + ",5.0,1\n").empty());
    EXPECT_FALSE(message("edge_id,t,value\n12345,0.5,1\n").empty());
    EXPECT_FALSE(message("").empty());
}

TEST(Covariates, StandardizedFromObservations) {
    auto mesh = mesh_of(make_lattice(2, 2, 1.0), 0.1);
    const FieldModel model(mesh, 1.5, constant_function(2.0), constant_function(1.0));
    std::mt19937_64 rng(13);
    const auto locs = testutil::random_points(mesh->graph(), 30, rng);
    Eigen::VectorXd z(30);
    for (int i = 0; i < 30; ++i) z(i) = 10.0 + mesh->graph().coordinates(locs[static_cast<std::size_t>(i)])[0];
    const Eigen::VectorXd raw = covariate_from_observations(model, locs, z, 10.0, 0.1);
    const Eigen::VectorXd st = covariate_from_observations(model, locs, z, 10.0, 0.1, true);
    EXPECT_NEAR(st.mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt((st.array() - st.mean()).square().mean()), 1.0, 1e-12);
    const double sd = std::sqrt((raw.array() - raw.mean()).square().mean());
    EXPECT_LT(((raw.array() - raw.mean()) / sd - st.array()).abs().maxCoeff(), 1e-12);
    EXPECT_THROW(covariate_from_observations(model, locs, Eigen::VectorXd::Constant(30, 10.0), 10.0, 0.1, true),
                 std::runtime_error);
}

class FitOnInterval : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        mesh_ = mesh_of(make_interval(10.0), 0.1);
        std::mt19937_64 rng(31);
        locs_ = testutil::random_points(mesh_->graph(), 200, rng);
        const FieldModel truth(mesh_, 1.5, constant_function(kKappa), constant_function(kTau));
        obs_ = simulate(truth, locs_, 10, kSigma, 77);
    }

    static ModelTemplate stationary() {
        ModelTemplate t;
        t.mesh = mesh_;
        t.tau_covariates = Eigen::MatrixXd(mesh_->num_nodes(), 0);
        t.kappa_covariates = Eigen::MatrixXd(mesh_->num_nodes(), 0);
        t.alpha = 1.5;
        return t;
    }
    static FitParameters truth_parameters(Eigen::Index slopes = 0) {
        FitParameters p;
        p.theta_tau = Eigen::VectorXd::Zero(slopes + 1);
        p.theta_kappa = Eigen::VectorXd::Zero(slopes + 1);
        p.theta_tau(0) = std::log(kTau);
        p.theta_kappa(0) = std::log(kKappa);
        p.sigma_e = kSigma;
        p.alpha = 1.5;
        return p;
    }

    static constexpr double kKappa = 2.0, kTau = 1.5, kSigma = 0.2;
    static inline std::shared_ptr<const Mesh> mesh_;
    static inline std::vector<GraphPoint> locs_;
    static inline ObservationSet obs_;
};

TEST_F(FitOnInterval, RecoversParametersWithinThreeStandardErrors) {
    FitParameters start = truth_parameters();
    start.theta_tau(0) += 0.4;
    start.theta_kappa(0) -= 0.4;
    start.sigma_e = 0.5;
    const FitResult r = fit(stationary(), obs_, start);
    EXPECT_TRUE(r.converged) << r.message;
    ASSERT_EQ(r.names.size(), 3u);
    ASSERT_TRUE(r.standard_errors.allFinite());
    EXPECT_LE(std::abs(r.packed(0) - std::log(kTau)), 3 * r.standard_errors(0));
    EXPECT_LE(std::abs(r.packed(1) - std::log(kKappa)), 3 * r.standard_errors(1));
    EXPECT_LE(std::abs(r.packed(2) - std::log(kSigma)), 3 * r.standard_errors(2));
    const FitParameters tp = truth_parameters();
    const FieldModel tm = build_model(stationary(), tp);
    EXPECT_GE(r.log_likelihood, log_likelihood(tm, precision_blocks(tm), obs_, kSigma, Eigen::VectorXd()) - 1e-6);
}

TEST_F(FitOnInterval, TruthBeatsPerturbations) {
    const FieldModel tm = build_model(stationary(), truth_parameters());
    const double at_truth = log_likelihood(tm, precision_blocks(tm), obs_, kSigma, Eigen::VectorXd());
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> mag(0.3, 0.6);
    std::bernoulli_distribution sign;
    for (int k = 0; k < 20; ++k) {
        FitParameters p = truth_parameters();
        const int which = k % 3;
        const double d = (sign(rng) ? 1.0 : -1.0) * mag(rng);
        if (which == 0) p.theta_tau(0) += d;
        if (which == 1) p.theta_kappa(0) += d;
        if (which == 2) p.sigma_e *= std::exp(d);
        const FieldModel m = build_model(stationary(), p);
        EXPECT_GT(at_truth, log_likelihood(m, precision_blocks(m), obs_, p.sigma_e, Eigen::VectorXd())) << k;
    }
}

TEST_F(FitOnInterval, SlopesNearZeroOnStationaryData) {
    ModelTemplate t = stationary();
    Eigen::MatrixXd G(mesh_->num_nodes(), 1);
    for (int i = 0; i < mesh_->num_nodes(); ++i) G(i, 0) = std::sin(2.0 * M_PI * mesh_->node_point(i).t / 10.0);
    t.tau_covariates = G;
    t.kappa_covariates = G;
    const FitResult r = fit(t, obs_, truth_parameters(1));
    ASSERT_EQ(r.names.size(), 5u);
    ASSERT_TRUE(r.standard_errors.allFinite());
    EXPECT_LE(std::abs(r.estimate.theta_tau(1)), 3 * r.standard_errors(1));
    EXPECT_LE(std::abs(r.estimate.theta_kappa(1)), 3 * r.standard_errors(3));
}

TEST_F(FitOnInterval, CrossValidationCurves) {
    const FieldModel tm = build_model(stationary(), truth_parameters());
    const PrecisionBlocks b = precision_blocks(tm);
    const std::vector<double> radii{0.0, 0.1, 0.25, 0.5, 1.0, 2.0};
    const CvResult cv = leave_radius_out_cv(tm, b, obs_, kSigma, Eigen::VectorXd(), radii);
    ASSERT_EQ(cv.mse.size(), radii.size());
    for (std::size_t k = 0; k < radii.size(); ++k) {
        EXPECT_EQ(cv.predictions[k], 2000);
        EXPECT_GE(cv.mse[k], cv.mse[0]);
    }
    const std::vector<double> iso = isotonic(cv.mse);
    for (std::size_t k = 0; k < radii.size(); ++k) EXPECT_LT(std::abs(iso[k] - cv.mse[k]), 0.05 * cv.mse.back());
    // Beyond the practical range (about 1.4) little is left beyond the prior
    // predictive variance sigma_u^2 + sigma^2.
    const double prior = marginal_variance(b).mean() + kSigma * kSigma;
    EXPECT_GT(cv.mse.back(), 1.3 * cv.mse.front());
    EXPECT_NEAR(cv.mse.back(), prior, 0.25 * prior);

    // Thread count does not change the result.
    const CvResult cv2 = leave_radius_out_cv(tm, b, obs_, kSigma, Eigen::VectorXd(), radii, 3);
    for (std::size_t k = 0; k < radii.size(); ++k) EXPECT_NEAR(cv2.mse[k], cv.mse[k], 1e-12 * cv.mse[k]);

    // The log score is proper: a model with inflated variance scores worse.
    FitParameters wide = truth_parameters();
    wide.theta_tau(0) -= std::log(2.0);
    const FieldModel wm = build_model(stationary(), wide);
    const CvResult cw = leave_radius_out_cv(wm, precision_blocks(wm), obs_, kSigma, Eigen::VectorXd(), {0.0, 0.5});
    EXPECT_LT(cv.nls[0], cw.nls[0]);
    EXPECT_LT(cv.nls[3], cw.nls[1]);
}

TEST(CrossValidation, SkipsWhenEverythingExcluded) {
    auto mesh = mesh_of(make_interval(1.0), 0.1);
    const FieldModel model(mesh, 1.0, constant_function(2.0), constant_function(1.0));
    const PrecisionBlocks b = precision_blocks(model);
    const ObservationSet obs = single({{0, 0.2}, {0, 0.4}}, Eigen::Vector2d(1.0, 2.0));
    const CvResult cv = leave_radius_out_cv(model, b, obs, 0.1, Eigen::VectorXd(), {0.1, 5.0});
    EXPECT_EQ(cv.predictions[0], 2);
    EXPECT_EQ(cv.predictions[1], 0);
    EXPECT_EQ(cv.skipped[1], 2);
    EXPECT_TRUE(std::isnan(cv.mse[1]));
    EXPECT_THROW(leave_radius_out_cv(model, b, obs, 0.1, Eigen::VectorXd(), {-1.0}), std::invalid_argument);
}
