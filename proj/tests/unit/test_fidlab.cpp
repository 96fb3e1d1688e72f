#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "oracles.hpp"
#include "rsgen/diffusion.hpp"
#include "rsgen/errors.hpp"
#include "rsgen/fidlab.hpp"
#include "rsgen/ingest.hpp"
#include "support.hpp"

namespace rsgen::fidlab {
namespace {

FeatureStats diag_stats(const std::vector<double>& mu, const std::vector<double>& var) {
    FeatureStats s;
    s.mean = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    s.cov = Eigen::VectorXd::Map(var.data(), static_cast<Eigen::Index>(var.size())).asDiagonal();
    s.n = 100;
    return s;
}

Eigen::MatrixXd random_spd(Eigen::Index d, Rng& rng) {
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.normal();
    return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

TEST(Frechet, UnivariateClosedForm) {
    EXPECT_NEAR(frechet_distance(diag_stats({0}, {1}), diag_stats({3}, {4})), 10.0, 1e-12);
}

TEST(Frechet, IdentityIsZero) {
    Rng rng(1);
    FeatureStats s;
    s.mean = Eigen::VectorXd::Random(6);
    s.cov = random_spd(6, rng);
    EXPECT_NEAR(frechet_distance(s, s), 0.0, 1e-9);
}

TEST(Frechet, DiagonalOracle) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 1 + rng.below(12);
        std::vector<double> ma(d), mb(d), va(d), vb(d);
        for (std::size_t i = 0; i < d; ++i) {
            ma[i] = rng.uniform(-3, 3);
            mb[i] = rng.uniform(-3, 3);
            va[i] = rng.uniform(0.01, 5);
            vb[i] = rng.uniform(0.01, 5);
        }
        const auto a = diag_stats(ma, va), b = diag_stats(mb, vb);
        const double expected = oracle::diagonal_frechet(ma, va, mb, vb);
        EXPECT_NEAR(frechet_distance(a, b), expected, 1e-9 * std::max(1.0, expected));
        EXPECT_NEAR(frechet_distance(b, a), expected, 1e-9 * std::max(1.0, expected));
    }
}

// For 2x2 PSD M: tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)), and for
// M = sqrt(A) B sqrt(A), tr M = tr(AB) and det M = det A det B.
TEST(Frechet, NonCommutingTwoByTwo) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        FeatureStats a, b;
        a.mean = Eigen::Vector2d(rng.normal(), rng.normal());
        b.mean = Eigen::Vector2d(rng.normal(), rng.normal());
        a.cov = random_spd(2, rng);
        b.cov = random_spd(2, rng);
        const double tr_sqrt =
            std::sqrt((a.cov * b.cov).trace() + 2.0 * std::sqrt(a.cov.determinant() * b.cov.determinant()));
        const double expected =
            (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
        EXPECT_NEAR(frechet_distance(a, b), expected, 1e-9 * std::max(1.0, expected));
        EXPECT_NEAR(frechet_distance(a, b), frechet_distance(b, a), 1e-9 * std::max(1.0, expected));
    }
}

TEST(Frechet, DimensionMismatch) {
    EXPECT_THROW(frechet_distance(diag_stats({0, 0}, {1, 1}), diag_stats({0}, {1})), ArgumentError);
}

TEST(Frechet, ClippingIsReported) {
    std::vector<std::string> warnings;
    set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
    const auto r = frechet_distance_detailed(diag_stats({0, 0}, {1, -0.5}), diag_stats({0, 0}, {1, 1}));
    EXPECT_GT(r.clipped, 0.0);
    EXPECT_GE(r.distance, 0.0);
    EXPECT_EQ(warnings.size(), 1u);
    set_warning_sink(nullptr);
}

TEST(Gaussian, MatchesTwoPassCovariance) {
    Rng rng(8);
    Eigen::MatrixXd x(37, 5);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = 1e3 + rng.normal() * (1 + static_cast<double>(j));
    const auto st = fit_gaussian(x);
    EXPECT_EQ(st.n, 37u);
    const Eigen::MatrixXd oracle_cov = oracle::two_pass_cov(x);
    EXPECT_LT((st.cov - oracle_cov).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE(st.cov.isApprox(st.cov.transpose(), 0.0));
    for (Eigen::Index j = 0; j < x.cols(); ++j) EXPECT_NEAR(st.mean(j), x.col(j).sum() / 37.0, 1e-9);
    EXPECT_THROW(fit_gaussian(Eigen::MatrixXd(1, 3)), ArgumentError);
}

TEST(Extractor, ProjectionOracle) {
    const RandomProjectionExtractor ex(4, 3, 9);
    EXPECT_EQ(ex.projection().rows(), 4);
    EXPECT_EQ(ex.projection().cols(), 27);
    std::vector<Raster> images = {testing::random_raster(6, 5, 3, 1), testing::random_raster(3, 3, 3, 2)};
    const Eigen::MatrixXd f = extract_features(images, ex);
    ASSERT_EQ(f.rows(), 2);
    ASSERT_EQ(f.cols(), 4);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Raster small = ingest::resize_to(images[i], 3);
        for (Eigen::Index r = 0; r < 4; ++r) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < 27; ++k)
                acc += ex.projection()(r, k) * small.data[static_cast<std::size_t>(k)] / 255.0;
            EXPECT_NEAR(f(static_cast<Eigen::Index>(i), r), acc, 1e-12);
        }
    }
    EXPECT_EQ(RandomProjectionExtractor(4, 3, 9).projection(), ex.projection());
    EXPECT_NE(RandomProjectionExtractor(4, 3, 10).projection(), ex.projection());
}

TEST(Sampled, IdenticalSetsScoreZero) {
    std::vector<Raster> imgs;
    for (int i = 0; i < 40; ++i) {
        PromptSpec p{.class_name = std::string(i % 2 ? "Snow Ice" : "Crop Land"), .positive = "x",
                     .seed = static_cast<std::uint64_t>(i), .width = 16, .height = 16};
        imgs.push_back(render_procedural(p));
    }
    const RandomProjectionExtractor ex(6, 8);
    const auto r = sampled_fid(imgs, imgs, ex, 20, 4, 3);
    ASSERT_EQ(r.per_run.size(), 4u);
    for (double v : r.per_run) EXPECT_LT(v, 1e-6);
    EXPECT_LT(r.mean_fid, 1e-6);
}

TEST(Sampled, ShiftIsDetectedAndDeterministic) {
    Rng rng(3);
    Eigen::MatrixXd real(200, 3), gen(150, 3);
    for (Eigen::Index i = 0; i < real.rows(); ++i)
        for (Eigen::Index j = 0; j < 3; ++j) real(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < gen.rows(); ++i)
        for (Eigen::Index j = 0; j < 3; ++j) gen(i, j) = rng.normal() + 2.0;
    const auto a = sampled_fid_features(real, gen, 100, 5, 1);
    const auto b = sampled_fid_features(real, gen, 100, 5, 1);
    EXPECT_EQ(a.per_run, b.per_run);
    EXPECT_NEAR(a.mean_fid, 12.0, 1.5);
    double sum = 0;
    for (double v : a.per_run) sum += v;
    EXPECT_DOUBLE_EQ(a.mean_fid, sum / 5.0);
}

TEST(Sampled, Errors) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Random(10, 2);
    EXPECT_THROW(sampled_fid_features(m, m, 11, 1, 0), ArgumentError);
    EXPECT_THROW(sampled_fid_features(m, m, 1, 1, 0), ArgumentError);
    EXPECT_THROW(sampled_fid_features(m, m, 5, 0, 0), ArgumentError);
}

}  // namespace
}  // namespace rsgen::fidlab
