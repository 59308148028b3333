#include "capfa/synth.hpp"

#include "capfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace capfa {

Eigen::MatrixXd GroundTruth::implied_covariance() const {
    Eigen::MatrixXd s = loadings * phi * loadings.transpose();
    s.diagonal() += uniquenesses;
    return s;
}

GroundTruth make_ground_truth(Eigen::MatrixXd loadings, Eigen::MatrixXd phi, int n, std::uint64_t seed) {
    if (phi.rows() != loadings.cols() || phi.cols() != loadings.cols())
        throw UsageError("make_ground_truth: phi does not match the loading matrix");
    GroundTruth gt;
    const Eigen::VectorXd communality = (loadings * phi * loadings.transpose()).diagonal();
    if ((communality.array() >= 1.0).any()) throw UsageError("make_ground_truth: communality >= 1");
    gt.uniquenesses = (1.0 - communality.array()).matrix();
    gt.loadings = std::move(loadings);
    gt.phi = std::move(phi);
    gt.n = n;
    gt.seed = seed;
    return gt;
}

GroundTruth block_ground_truth(int blocks, int per_block, double loading, const Eigen::MatrixXd& phi,
                               int n, std::uint64_t seed) {
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(blocks * per_block, blocks);
    for (int b = 0; b < blocks; ++b) l.block(b * per_block, b, per_block, 1).setConstant(loading);
    return make_ground_truth(l, phi, n, seed);
}

GroundTruth default_three_block(int n, std::uint64_t seed) {
    Eigen::MatrixXd phi(3, 3);
    phi << 1.0, 0.43, 0.51,
           0.43, 1.0, 0.22,
           0.51, 0.22, 1.0;
    return block_ground_truth(3, 9, 0.7, phi, n, seed);
}

PerformanceMatrix generate(const GroundTruth& gt, Eigen::MatrixXd& latent) {
    const Eigen::Index p = gt.loadings.rows();
    const Eigen::Index k = gt.loadings.cols();
    if (gt.n < 1) throw UsageError("generate: n must be positive");
    if ((gt.uniquenesses.array() <= 0.0).any()) throw UsageError("generate: uniquenesses must be positive");

    // Symmetric square root tolerates singular (PSD) phi.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gt.phi);
    if (es.eigenvalues().minCoeff() < -1e-10) throw UsageError("generate: phi is not PSD");
    const Eigen::MatrixXd root =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();
    const Eigen::VectorXd sd = gt.uniquenesses.cwiseSqrt();

    std::mt19937_64 rng(gt.seed);
    std::normal_distribution<double> normal;
    PerformanceMatrix m;
    m.scores.resize(gt.n, p);
    m.present = BoolMatrix::Constant(gt.n, p, true);
    latent.resize(gt.n, k);
    Eigen::VectorXd u(k);
    for (int i = 0; i < gt.n; ++i) {
        for (Eigen::Index f = 0; f < k; ++f) u(f) = normal(rng);
        const Eigen::VectorXd eta = root * u;
        latent.row(i) = eta.transpose();
        const Eigen::VectorXd common = gt.loadings * eta;
        for (Eigen::Index j = 0; j < p; ++j) m.scores(i, j) = common(j) + sd(j) * normal(rng);
    }
    char buf[32];
    for (Eigen::Index j = 0; j < p; ++j) {
        std::snprintf(buf, sizeof buf, "t%02d", static_cast<int>(j + 1));
        m.tasks.emplace_back(buf);
    }
    for (int i = 0; i < gt.n; ++i) {
        std::snprintf(buf, sizeof buf, "s%04d", i + 1);
        m.systems.emplace_back(buf);
    }
    return m;
}

PerformanceMatrix generate(const GroundTruth& gt) {
    Eigen::MatrixXd latent;
    return generate(gt, latent);
}

PerformanceMatrix mask_uniform(const PerformanceMatrix& m, double rate, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution drop(rate);
    PerformanceMatrix out = m;
    for (Eigen::Index i = 0; i < m.n_systems(); ++i)
        for (Eigen::Index j = 0; j < m.n_tasks(); ++j)
            if (drop(rng)) {
                out.present(i, j) = false;
                out.scores(i, j) = 0.0;
            }
    return out;
}

double tucker_congruence(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("tucker_congruence: length mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) throw UsageError("tucker_congruence: zero vector");
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double tucker_congruence(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return tucker_congruence(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                             std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
}

}  // namespace capfa
