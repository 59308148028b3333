#pragma once

#include "capfa/correlation.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace capfa {

struct EfaOptions {
    double psi_floor = 0.005;   // Heywood guard
    double ridge = 1e-4;        // added to C when it is (near) singular or n <= p
    double tolerance = 1e-8;    // projected-gradient infinity norm on log(psi)
    int max_iterations = 500;
    bool bartlett = true;       // Bartlett-corrected chi-square multiplier
};

// Maximum-likelihood factor solution in correlation metric, before rotation.
struct UnrotatedSolution {
    std::vector<std::string> labels;
    Eigen::MatrixXd loadings;       // p x k
    Eigen::VectorXd uniquenesses;   // p
    double discrepancy = 0.0;       // F_ml at the solution
    double baseline_discrepancy = 0.0;  // F_ml of the independence model (-log|C|)
    int n = 0;
    int p = 0;
    int k = 0;
    int iterations = 0;
    bool ridge_applied = false;
    bool bartlett = true;
    std::vector<bool> heywood;      // uniqueness sits on the floor

    Eigen::MatrixXd fitted() const;  // Lambda Lambda^T + diag(Psi)
};

struct FitIndices {
    double chi2 = 0.0;
    int df = 0;
    double chi2_baseline = 0.0;
    int df_baseline = 0;
    double cfi = 1.0;
    double tli = 1.0;
    double rmsea = 0.0;
    bool small_sample = false;  // n <= p
};

struct VarianceTable {
    Eigen::VectorXd proportion;
    Eigen::VectorXd cumulative;
};

// ((p - k)^2 - (p + k)) / 2
int model_df(int p, int k);

// Largest k with model_df(p, k) >= 1.
int max_identified_factors(int p);

// Descending eigenvalues of a symmetric matrix.
Eigen::VectorXd eigenvalues(const CorrelationMatrix& c);

UnrotatedSolution ml_efa(const CorrelationMatrix& c, int k, int n, const EfaOptions& opt = {});

// Zero-factor model: Lambda empty, Psi = 1.
UnrotatedSolution independence_model(const CorrelationMatrix& c, int n, const EfaOptions& opt = {});

FitIndices fit_indices(const UnrotatedSolution& s);

// Per-factor share of total variance: column j contributes
// sum_i pattern_ij * (pattern Phi)_ij, divided by p.
VarianceTable variance_explained(const Eigen::MatrixXd& loadings, const Eigen::MatrixXd& phi);

// ML discrepancy log|S| + tr(C S^-1) - log|C| - p.
double ml_discrepancy(const Eigen::MatrixXd& c, const Eigen::MatrixXd& sigma);

}  // namespace capfa
