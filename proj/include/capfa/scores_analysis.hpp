#pragma once

#include "capfa/correlation.hpp"
#include "capfa/dataset.hpp"
#include "capfa/rotation.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace capfa {

enum class ScoreMethod { Regression };

std::string to_string(ScoreMethod m);

struct FactorScores {
    std::vector<std::string> systems;
    Eigen::MatrixXd scores;  // n x k
    ScoreMethod method = ScoreMethod::Regression;
    double ridge = 0.0;
};

// Thurstone regression scores F = Z (R + ridge I)^-1 S, with R the task
// correlation matrix of z and S the structure matrix of rs.
FactorScores factor_scores(const RotatedSolution& rs, const PerformanceMatrix& z, double ridge = 1e-4);

enum class Characteristic { LogSize, InstructionTuned, TotalTokens };

std::string to_string(Characteristic c);

struct CharacteristicCorrelation {
    Characteristic characteristic = Characteristic::LogSize;
    int factor = 0;   // 0-based score column
    double r = 0.0;
    ConfidenceInterval ci;
    int n = 0;        // systems used
    int dropped = 0;  // systems with an unknown value
};

// Pearson r (point-biserial for instruction tuning) with a Fisher interval for
// every (characteristic, factor) pair. Unknown values are dropped per characteristic.
std::vector<CharacteristicCorrelation> correlate_with_characteristics(const FactorScores& fs,
                                                                      const std::vector<SystemMetadata>& meta,
                                                                      double level = 0.95);

// Least-squares line y = intercept + slope x with a pointwise confidence band
// for the mean response.
struct LinearFit {
    double intercept = 0.0;
    double slope = 0.0;
    double residual_sd = 0.0;
    double x_mean = 0.0;
    double sxx = 0.0;
    int n = 0;

    double predict(double x) const;
    ConfidenceInterval band(double x, double level = 0.95) const;
};

LinearFit fit_line(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

}  // namespace capfa
