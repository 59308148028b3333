#pragma once

#include "capfa/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>

namespace capfa {

// Population factor model used to generate recovery datasets.
struct GroundTruth {
    Eigen::MatrixXd loadings;      // p x k
    Eigen::MatrixXd phi;           // k x k
    Eigen::VectorXd uniquenesses;  // p
    int n = 0;
    std::uint64_t seed = 0;

    // Lambda Phi Lambda^T + diag(Psi)
    Eigen::MatrixXd implied_covariance() const;
};

// Sets uniquenesses to 1 - communality so the implied covariance has unit diagonal.
GroundTruth make_ground_truth(Eigen::MatrixXd loadings, Eigen::MatrixXd phi, int n, std::uint64_t seed);

// p = blocks * per_block tasks, each loading `loading` on its own block factor.
GroundTruth block_ground_truth(int blocks, int per_block, double loading, const Eigen::MatrixXd& phi,
                               int n, std::uint64_t seed);

// Three blocks of nine tasks, loadings 0.7, factor correlations 0.43 / 0.51 / 0.22.
GroundTruth default_three_block(int n, std::uint64_t seed);

// z = Lambda eta + eps with eta ~ N(0, Phi) and eps ~ N(0, Psi). Task ids
// are t01, t02, ...; systems s0001, ...
PerformanceMatrix generate(const GroundTruth& gt);

// Same draws, also returning the latent factor values (n x k).
PerformanceMatrix generate(const GroundTruth& gt, Eigen::MatrixXd& latent);

// Marks each cell absent with probability `rate`, independently.
PerformanceMatrix mask_uniform(const PerformanceMatrix& m, double rate, std::uint64_t seed);

double tucker_congruence(std::span<const double> a, std::span<const double> b);
double tucker_congruence(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace capfa
