#pragma once

#include "capfa/efa.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace capfa {

enum class RotationMethod { Oblimin, Varimax };

std::string to_string(RotationMethod m);

struct RotationOptions {
    double gamma = 0.0;        // 0 = quartimin
    int restarts = 10;         // random orthonormal starts, in addition to the identity
    std::uint64_t seed = 42;
    double tolerance = 1e-6;   // projected-gradient Frobenius norm
    int max_iterations = 1000;
};

struct RotatedSolution {
    std::vector<std::string> labels;
    Eigen::MatrixXd pattern;       // p x k
    Eigen::MatrixXd structure;     // pattern * phi
    Eigen::MatrixXd phi;           // k x k factor correlations
    Eigen::VectorXd uniquenesses;
    RotationMethod method = RotationMethod::Oblimin;
    double criterion = 0.0;
    int converged_starts = 0;

    Eigen::MatrixXd fitted() const;  // pattern phi pattern^T + diag(Psi)
};

// Gradient-projection criteria, exposed for tests.
double oblimin_criterion(const Eigen::MatrixXd& loadings, double gamma = 0.0);
double varimax_criterion(const Eigen::MatrixXd& loadings);

RotatedSolution rotate_oblimin(const UnrotatedSolution& s, const RotationOptions& opt = {});
RotatedSolution rotate_varimax(const UnrotatedSolution& s, const RotationOptions& opt = {});

// Re-applies canonical order (explained variance, descending) and sign (largest
// |pattern| entry positive) after a caller has modified a solution.
void canonicalize(RotatedSolution& rs);

struct Alignment {
    std::vector<int> permutation;   // column of b matched to column j of a
    std::vector<int> signs;         // +1 / -1 applied to that column of b
    Eigen::VectorXd congruence;     // Tucker congruence after sign flip
};

// Greedy maximum-|congruence| matching of the columns of b to those of a.
Alignment align_solutions(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Columns of b reordered and sign-flipped per the alignment.
Eigen::MatrixXd apply_alignment(const Eigen::MatrixXd& b, const Alignment& al);

// Reorders/flips a whole rotated solution (pattern, structure, phi) into
// the column order of a target loading matrix.
RotatedSolution align_to(const RotatedSolution& rs, const Eigen::MatrixXd& target, Alignment* out = nullptr);

}  // namespace capfa
