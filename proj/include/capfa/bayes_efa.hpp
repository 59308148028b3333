#pragma once

#include "capfa/dataset.hpp"
#include "capfa/rotation.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace capfa {

// Dedicated-structure Bayesian factor model: every task loads on at most one
// factor slot (slot 0 = no factor). Factors covary through Omega.
struct BayesConfig {
    int k_max = 8;
    int iterations = 20000;
    int burn_in = 5000;
    int chains = 4;
    int thin = 5;
    std::uint64_t seed = 42;
    double prior_loading_variance = 1.0;
    double uniqueness_shape = 2.0;     // inverse-gamma
    double uniqueness_scale = 0.5;
    double assignment_concentration = 1.0;  // symmetric Dirichlet, including the null slot
    double omega_extra_dof = 6.0;      // Omega ~ IW(k_max + extra, (extra - 1) I), prior mean I
    double assignment_threshold = 0.5;
    double credible_level = 0.95;
    double rhat_limit = 1.2;
    // Pins every task to the given slot (0 = none, 1..k_max); used for
    // calibration runs where only loadings and variances are sampled.
    std::optional<std::vector<int>> fixed_assignment;

    void validate() const;
};

struct TaskPosterior {
    std::vector<double> distribution;  // index 0 = no active factor, 1..k_max canonical labels
    int modal_factor = 0;              // 0 = unassigned
    double modal_mass = 0.0;
    double loading_mean = 0.0;         // standardized loading on the modal factor
    double loading_lo = 0.0;
    double loading_hi = 0.0;
};

struct BayesDiagnostics {
    std::vector<double> acceptance_rates;   // per chain, reassignment moves
    std::map<std::string, double> split_rhat;
    bool non_mixing = false;
};

struct BayesPosterior {
    std::vector<std::string> labels;
    std::vector<double> k_distribution;     // index = number of active factors, 0..k_max
    int modal_k = 0;
    std::vector<TaskPosterior> tasks;
    BayesDiagnostics diagnostics;
    int draws = 0;

    // p x max(modal_factor) matrix with each task's mean loading in its modal column.
    Eigen::MatrixXd loading_matrix() const;
};

BayesPosterior bayes_efa(const PerformanceMatrix& m, const BayesConfig& cfg = {});

// Gelman-Rubin potential scale reduction on chains split in half.
double split_rhat(const std::vector<std::vector<double>>& chains);

struct TaskDisagreement {
    std::string task;
    int bayes_factor = 0;        // frequentist column index + 1 after matching; 0 = unassigned
    int frequentist_factor = 0;  // 0 = below threshold
};

struct AgreementReport {
    double agreement = 0.0;
    std::vector<int> bayes_to_frequentist;  // Bayesian label l (1-based) -> frequentist column + 1 (0 = none)
    std::vector<TaskDisagreement> disagreements;
};

// Frequentist assignment = column of the largest |pattern| loading, or none
// when that loading is below `threshold`.
AgreementReport compare_with_frequentist(const BayesPosterior& bp, const RotatedSolution& rs,
                                         double threshold = 0.3);

}  // namespace capfa
