#pragma once

#include "capfa/bayes_efa.hpp"
#include "capfa/correlation.hpp"
#include "capfa/dataset.hpp"
#include "capfa/efa.hpp"
#include "capfa/factor_selection.hpp"
#include "capfa/rotation.hpp"
#include "capfa/scores_analysis.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace capfa::report {

// Round half-even to `decimals` places on the shortest decimal form of v;
// "-0.00" is printed as "0.00". Non-finite values print as "NA".
std::string format_fixed(double v, int decimals = 2);

// "0.43 [0.09, 0.68]"
std::string format_ci_cell(double r, const ConfidenceInterval& ci, int decimals = 2);

// Fixed diverging ramp: -1 darkest red, 0 neutral, +1 darkest green (clamped).
std::string loading_color(double v);

inline constexpr const char* kNeutralColor = "#f7f7f7";
inline constexpr const char* kPositiveColor = "#1b7837";
inline constexpr const char* kNegativeColor = "#b2182b";

// Per-factor names from the most common annotation among the tasks whose
// largest |pattern| loading falls in that column ("Factor j" if none).
std::vector<std::string> factor_names(const RotatedSolution& rs, const std::vector<TaskSpec>& specs);

// Variance table: header "", F1..Fk; rows for proportion and cumulative variance.
std::vector<std::vector<std::string>> variance_table(const VarianceTable& v, const std::vector<std::string>& names);

// Correlation table: factor intercorrelations (lower triangle, Fisher CI on n
// systems) followed by one row per characteristic.
std::vector<std::vector<std::string>> correlation_table(const Eigen::MatrixXd& phi, int n_systems,
                                                        const std::vector<CharacteristicCorrelation>& corrs,
                                                        const std::vector<std::string>& names, double level = 0.95);

std::string characteristic_label(Characteristic c);

void write_table(const std::filesystem::path& path, const std::vector<std::vector<std::string>>& rows);

// Tables 2 and 3 plus per-characteristic counts under dir/tables.
void render_tables(const std::filesystem::path& dir, const VarianceTable& variance, const Eigen::MatrixXd& phi,
                   int n_systems, const std::vector<CharacteristicCorrelation>& corrs,
                   const std::vector<std::string>& names, double level = 0.95);

// Loading table CSV (full precision, round-trips) and the side-by-side heatmap.
// Bayesian columns come first, in the frequentist column order after matching.
void render_loading_heatmap(const std::filesystem::path& dir, const BayesPosterior& bayes, const RotatedSolution& freq,
                            const std::vector<TaskSpec>& specs, const std::vector<std::string>& names);

// Reads back the frequentist block of the loading CSV written above.
Eigen::MatrixXd read_frequentist_loadings(const std::filesystem::path& csv_path);

void render_correlation_heatmap(const std::filesystem::path& dir, const CorrelationMatrix& c);
void render_scree(const std::filesystem::path& dir, const Eigen::VectorXd& eigs);
void render_hull(const std::filesystem::path& dir, const HullResult& h);
void render_k_posterior(const std::filesystem::path& dir, const BayesPosterior& bp);

// Systems sorted by descending score on `sort_factor`.
void render_scores(const std::filesystem::path& dir, const FactorScores& fs, const std::vector<std::string>& names,
                   int sort_factor);

// Log size vs each factor score with the least-squares line and confidence band.
void render_size_scatter(const std::filesystem::path& dir, const FactorScores& fs,
                         const std::vector<SystemMetadata>& meta, const std::vector<std::string>& names,
                         double level = 0.95);

}  // namespace capfa::report
