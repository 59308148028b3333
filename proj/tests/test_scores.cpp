#include "capfa/error.hpp"
#include "capfa/scores_analysis.hpp"
#include "capfa/synth.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace capfa;

namespace {

RotatedSolution single_factor(const UnrotatedSolution& s) {
    RotatedSolution rs;
    rs.labels = s.labels;
    rs.pattern = s.loadings;
    rs.structure = s.loadings;
    rs.phi = Eigen::MatrixXd::Identity(1, 1);
    rs.uniquenesses = s.uniquenesses;
    return rs;
}

double r_of(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return pearson(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                   std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

FactorScores toy_scores(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    FactorScores fs;
    for (int i = 0; i < n; ++i) fs.systems.push_back("m" + std::to_string(i));
    fs.scores = test::random_normal(n, 2, rng);
    return fs;
}

std::vector<SystemMetadata> toy_meta(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> size(0.4, 530.0);
    std::vector<SystemMetadata> meta;
    for (int i = 0; i < n; ++i) {
        SystemMetadata m;
        m.name = "m" + std::to_string(i);
        m.size_b = size(rng);
        m.instruction_tuned = i % 3 == 0;
        if (i % 4 != 1) m.total_tokens = 1e11 + 1e10 * i;
        meta.push_back(m);
    }
    return meta;
}

const CharacteristicCorrelation& find(const std::vector<CharacteristicCorrelation>& v, Characteristic c, int f) {
    for (const auto& x : v)
        if (x.characteristic == c && x.factor == f) return x;
    throw std::runtime_error("missing row");
}

}  // namespace

TEST_SUITE("scores") {

TEST_CASE("single-factor scores track the latent factor") {
    const auto gt = block_ground_truth(1, 10, 0.7, Eigen::MatrixXd::Identity(1, 1), 300, 71);
    Eigen::MatrixXd eta;
    const auto z = standardize(generate(gt, eta));
    const auto s = ml_efa(correlation_matrix(z), 1, 300);
    const auto fs = factor_scores(single_factor(s), z);
    CHECK(std::abs(r_of(fs.scores.col(0), eta.col(0))) > 0.9);
    CHECK(fs.method == ScoreMethod::Regression);
    CHECK(to_string(fs.method) == "regression");
    CHECK(fs.ridge == 1e-4);
}

TEST_CASE("regression scores: closed form, zero means, covariance near phi") {
    const auto gt = default_three_block(400, 72);
    const auto z = standardize(generate(gt));
    const auto rs = rotate_oblimin(ml_efa(correlation_matrix(z), 3, 400));
    const auto fs = factor_scores(rs, z);
    CHECK(fs.scores.colwise().mean().cwiseAbs().maxCoeff() < 1e-8);

    const Eigen::MatrixXd centered = z.scores.rowwise() - z.scores.colwise().mean();
    Eigen::MatrixXd r = centered.transpose() * centered / 399.0;
    const Eigen::VectorXd inv_sd = r.diagonal().cwiseSqrt().cwiseInverse();
    r = inv_sd.asDiagonal() * r * inv_sd.asDiagonal();
    r.diagonal().array() += 1e-4;
    const Eigen::MatrixXd oracle = centered * r.inverse() * rs.structure;
    CHECK((fs.scores - oracle).cwiseAbs().maxCoeff() < 1e-8);

    const Eigen::MatrixXd cov = fs.scores.transpose() * fs.scores / 399.0;
    Eigen::MatrixXd cor = cov;
    const Eigen::VectorXd sd = cov.diagonal().cwiseSqrt().cwiseInverse();
    cor = sd.asDiagonal() * cov * sd.asDiagonal();
    CHECK((cor - rs.phi).cwiseAbs().maxCoeff() < 0.15);
}

TEST_CASE("scores do not depend on the order of the task columns") {
    const auto gt = default_three_block(300, 73);
    const auto z = standardize(generate(gt));
    const auto a = factor_scores(rotate_oblimin(ml_efa(correlation_matrix(z), 3, 300)), z);

    std::vector<Eigen::Index> perm(27);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[0], perm[13]);
    Eigen::MatrixXd shuffled(300, 27);
    for (Eigen::Index j = 0; j < 27; ++j) shuffled.col(j) = z.scores.col(perm[static_cast<std::size_t>(j)]);
    const auto zp = test::make_matrix(shuffled);
    const auto b = factor_scores(rotate_oblimin(ml_efa(correlation_matrix(zp), 3, 300)), zp);

    const auto al = align_solutions(a.scores, b.scores);
    CHECK((apply_alignment(b.scores, al) - a.scores).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("score dimensions must agree") {
    const auto z = standardize(generate(default_three_block(50, 74)));
    RotatedSolution rs;
    rs.pattern = rs.structure = Eigen::MatrixXd::Ones(5, 1);
    rs.phi = Eigen::MatrixXd::Identity(1, 1);
    CHECK_THROWS(factor_scores(rs, z));
}

TEST_CASE("characteristic correlations match direct Pearson and Fisher") {
    const auto fs = toy_scores(29, 75);
    const auto meta = toy_meta(29, 76);
    const auto rows = correlate_with_characteristics(fs, meta);
    CHECK(rows.size() == 6);

    Eigen::VectorXd logsize(29), it(29);
    for (int i = 0; i < 29; ++i) {
        logsize(i) = std::log(meta[static_cast<std::size_t>(i)].size_b);
        it(i) = *meta[static_cast<std::size_t>(i)].instruction_tuned ? 1.0 : 0.0;
    }
    const auto& ls = find(rows, Characteristic::LogSize, 1);
    CHECK(ls.r == doctest::Approx(r_of(logsize, fs.scores.col(1))).epsilon(1e-12));
    CHECK(ls.ci.lo == doctest::Approx(fisher_ci(ls.r, 29).lo));
    CHECK(ls.n == 29);
    CHECK(ls.dropped == 0);
    CHECK(find(rows, Characteristic::InstructionTuned, 0).r == doctest::Approx(r_of(it, fs.scores.col(0))).epsilon(1e-12));

    const auto& tok = find(rows, Characteristic::TotalTokens, 0);
    CHECK(tok.dropped == 7);
    CHECK(tok.n == 22);
}

TEST_CASE("characteristic correlations ignore log base and positive affine rescaling") {
    const auto fs = toy_scores(29, 77);
    auto meta = toy_meta(29, 78);
    const auto base = correlate_with_characteristics(fs, meta);
    for (auto& m : meta) {
        m.size_b = std::pow(m.size_b, 2.0) * 1000.0;  // log scales by 2 and shifts
        if (m.total_tokens) m.total_tokens = *m.total_tokens * 3.0 + 5e9;
    }
    const auto moved = correlate_with_characteristics(fs, meta);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(moved[i].r - base[i].r) < 1e-10);
}

TEST_CASE("characteristic errors") {
    const auto fs = toy_scores(10, 79);
    auto meta = toy_meta(10, 80);
    meta.pop_back();
    CHECK_THROWS_WITH_AS(correlate_with_characteristics(fs, meta), doctest::Contains("m9"), DataError);

    meta = toy_meta(10, 80);
    for (auto& m : meta) m.instruction_tuned = false;
    CHECK_THROWS_AS(correlate_with_characteristics(fs, meta), DataError);

    meta = toy_meta(10, 80);
    for (std::size_t i = 0; i < meta.size(); ++i)
        if (i > 1) meta[i].total_tokens.reset();
    CHECK_THROWS_AS(correlate_with_characteristics(fs, meta), DataError);
}

TEST_CASE("rankings are invariant to positive affine transforms of scores") {
    const auto fs = toy_scores(29, 81);
    auto order = [](const Eigen::VectorXd& v) {
        std::vector<int> idx(static_cast<std::size_t>(v.size()));
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v(a) > v(b); });
        return idx;
    };
    const Eigen::VectorXd s = fs.scores.col(0);
    CHECK(order(s) == order((2.5 * s.array() + 4.0).matrix()));
}

TEST_CASE("least-squares line and confidence band") {
    Eigen::VectorXd x(5), y(5);
    x << 1, 2, 3, 4, 5;
    y = (2.0 + 3.0 * x.array()).matrix();
    const auto exact = fit_line(x, y);
    CHECK(exact.slope == doctest::Approx(3.0));
    CHECK(exact.intercept == doctest::Approx(2.0));
    CHECK(exact.residual_sd == doctest::Approx(0.0).epsilon(1e-12));

    y << 1.0, 2.5, 2.9, 4.8, 5.1;
    const auto f = fit_line(x, y);
    // closed form: slope = Sxy / Sxx
    const double xm = 3.0, ym = y.mean();
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 5; ++i) {
        sxy += (x(i) - xm) * (y(i) - ym);
        sxx += (x(i) - xm) * (x(i) - xm);
    }
    CHECK(f.slope == doctest::Approx(sxy / sxx));
    CHECK(f.predict(3.0) == doctest::Approx(ym));
    double rss = 0;
    for (int i = 0; i < 5; ++i) rss += std::pow(y(i) - f.predict(x(i)), 2);
    CHECK(f.residual_sd == doctest::Approx(std::sqrt(rss / 3.0)));

    const double t975_df3 = 3.182446305284263;
    const auto band = f.band(5.0);
    const double half = t975_df3 * f.residual_sd * std::sqrt(1.0 / 5.0 + 4.0 / sxx);
    CHECK(band.lo == doctest::Approx(f.predict(5.0) - half));
    CHECK(band.hi == doctest::Approx(f.predict(5.0) + half));
    CHECK(f.band(3.0).hi - f.band(3.0).lo < band.hi - band.lo);
}

}  // TEST_SUITE
