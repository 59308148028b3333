#pragma once

#include "capfa/dataset.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace capfa {

// Pairwise-deletion task correlation matrix. n_pairs(i, j) counts systems
// observed on both tasks; the diagonal holds per-task present counts.
struct CorrelationMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXd r;
    Eigen::MatrixXi n_pairs;
    bool psd_repaired = false;

    Eigen::Index size() const { return r.rows(); }
};

struct CorrelationSummary {
    double mean_r = 0.0;
    double median_r = 0.0;
};

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;
};

// Sample Pearson r over pairs where both entries are finite (NaN marks missing).
double pearson(std::span<const double> x, std::span<const double> y);

// Fisher z interval: tanh(atanh(r) -/+ z_crit / sqrt(n - 3)).
ConfidenceInterval fisher_ci(double r, int n, double level = 0.95);

CorrelationMatrix correlation_matrix(const PerformanceMatrix& m, int min_pairs = 3);

// Mean and median of the strictly-upper-triangle entries.
CorrelationSummary summarize(const CorrelationMatrix& c);

// Eigenvalue clipping followed by unit-diagonal renormalization, applied only
// when the smallest eigenvalue is below -tol.
CorrelationMatrix nearest_psd(const CorrelationMatrix& c, double tol = 1e-8);

// Labels as header row and first column.
void write_correlation_csv(const std::filesystem::path& path, const CorrelationMatrix& c);

// Reads the format above; pair counts are not stored and come back as zero.
CorrelationMatrix load_correlation_csv(const std::filesystem::path& path);

}  // namespace capfa
