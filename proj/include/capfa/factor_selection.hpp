#pragma once

#include "capfa/efa.hpp"

#include <Eigen/Dense>

#include <vector>

namespace capfa {

struct HullCandidate {
    int k = 0;
    double f = 0.0;      // 1 - RMSEA
    int df = 0;
    double rmsea = 0.0;
};

struct HullResult {
    std::vector<HullCandidate> candidates;  // k = 0 .. k_max
    std::vector<bool> hull_members;
    std::vector<double> st_values;          // NaN where st is undefined (non-member or endpoint)
    int selected_k = 0;
    bool fallback_to_scree = false;
};

// Number of eigenvalues strictly greater than `cutoff`.
int scree_count(const Eigen::VectorXd& eigs, double cutoff = 1.0);

// Default k_max: largest identified k, capped at 8.
int default_hull_k_max(int p);

// Hull selection from precomputed candidates (k ascending, k = 0 first).
HullResult hull_select(std::vector<HullCandidate> candidates, int scree_fallback);

HullResult hull_method(const CorrelationMatrix& c, int n, int k_max, const EfaOptions& opt = {});

}  // namespace capfa
