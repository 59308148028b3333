#include "capfa/correlation.hpp"
#include "capfa/error.hpp"
#include "capfa/synth.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace capfa;

TEST_SUITE("synth") {

TEST_CASE("ground truth has a unit-diagonal implied covariance") {
    const auto gt = default_three_block(29, 1);
    CHECK(gt.loadings.rows() == 27);
    CHECK(gt.loadings.cols() == 3);
    CHECK((gt.implied_covariance().diagonal() - Eigen::VectorXd::Ones(27)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(gt.phi(0, 1) == 0.43);
    CHECK(gt.phi(0, 2) == 0.51);
    CHECK(gt.phi(1, 2) == 0.22);
    CHECK_THROWS_AS(make_ground_truth(Eigen::MatrixXd::Constant(3, 1, 1.2), Eigen::MatrixXd::Identity(1, 1), 10, 1),
                    UsageError);
}

TEST_CASE("same seed gives identical matrices") {
    const auto gt = default_three_block(50, 99);
    const auto a = generate(gt), b = generate(gt);
    CHECK(a.scores == b.scores);
    CHECK(a.systems == b.systems);
    auto other = gt;
    other.seed = 100;
    CHECK(generate(other).scores != a.scores);
}

TEST_CASE("two indicators of one factor correlate at lambda squared") {
    const auto gt = make_ground_truth(Eigen::MatrixXd::Constant(2, 1, 0.8), Eigen::MatrixXd::Identity(1, 1), 100000, 5);
    const auto m = generate(gt);
    const double r = pearson(std::span<const double>(m.scores.col(0).data(), 100000),
                             std::span<const double>(m.scores.col(1).data(), 100000));
    CHECK(std::abs(r - 0.64) < 0.01);
}

TEST_CASE("zero loadings give independent columns") {
    const int n = 2000;
    const auto gt = make_ground_truth(Eigen::MatrixXd::Zero(6, 1), Eigen::MatrixXd::Identity(1, 1), n, 6);
    CHECK(gt.uniquenesses == Eigen::VectorXd::Ones(6));
    const auto c = correlation_matrix(generate(gt));
    Eigen::MatrixXd off = c.r - Eigen::MatrixXd::Identity(6, 6);
    CHECK(off.cwiseAbs().maxCoeff() < 4.0 / std::sqrt(n));
}

TEST_CASE("sample correlation converges to the population matrix") {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(6, 2);
    l.block(0, 0, 3, 1).setConstant(0.7);
    l.block(3, 1, 3, 1).setConstant(0.6);
    Eigen::MatrixXd phi(2, 2);
    phi << 1, 0.4, 0.4, 1;
    double last = 1e9;
    for (int n : {100, 1000, 100000}) {
        const auto gt = make_ground_truth(l, phi, n, 7);
        const double err = (correlation_matrix(generate(gt)).r - gt.implied_covariance()).norm();
        CHECK(err < last);
        last = err;
    }
    CHECK(last < 0.02);
}

TEST_CASE("latent draws are returned alongside the data") {
    const auto gt = block_ground_truth(2, 4, 0.8, Eigen::MatrixXd::Identity(2, 2), 5000, 8);
    Eigen::MatrixXd eta;
    const auto m = generate(gt, eta);
    REQUIRE(eta.rows() == 5000);
    REQUIRE(eta.cols() == 2);
    CHECK(m.scores == generate(gt).scores);
    const double r = pearson(std::span<const double>(eta.col(0).data(), 5000),
                             std::span<const double>(m.scores.col(0).data(), 5000));
    CHECK(std::abs(r - 0.8) < 0.03);
}

TEST_CASE("uniform masking") {
    const auto m = generate(default_three_block(400, 9));
    const auto masked = mask_uniform(m, 0.1, 3);
    const double rate = 1.0 - static_cast<double>(masked.present.count()) / static_cast<double>(masked.present.size());
    CHECK(std::abs(rate - 0.1) < 0.02);
    CHECK(mask_uniform(m, 0.1, 3).present == masked.present);
}

TEST_CASE("tucker congruence") {
    const Eigen::VectorXd a = (Eigen::VectorXd(4) << 0.9, 0.1, -0.3, 0.5).finished();
    CHECK(tucker_congruence(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(tucker_congruence(a, Eigen::VectorXd(-a)) == doctest::Approx(-1.0).epsilon(1e-15));

    std::mt19937_64 rng(10);
    const Eigen::MatrixXd v = test::random_normal(20, 2, rng);
    const Eigen::VectorXd x = v.col(0);
    const Eigen::VectorXd y = v.col(1) - (v.col(1).dot(x) / x.squaredNorm()) * x;  // Gram-Schmidt
    CHECK(std::abs(tucker_congruence(x, y)) < 1e-12);

    CHECK_THROWS_AS(tucker_congruence(a, Eigen::VectorXd::Zero(4)), UsageError);
    const std::vector<double> s1{1, 2, 3}, s2{2, 4, 6};
    CHECK(tucker_congruence(s1, s2) == doctest::Approx(1.0));
}

}  // TEST_SUITE
