#pragma once

#include "capfa/dataset.hpp"
#include "capfa/efa.hpp"
#include "capfa/rotation.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace capfa::test {

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("capfa_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::filesystem::path write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    return path;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline PerformanceMatrix make_matrix(const Eigen::MatrixXd& scores) {
    PerformanceMatrix m;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) m.systems.push_back("s" + std::to_string(i));
    for (Eigen::Index j = 0; j < scores.cols(); ++j) m.tasks.push_back("t" + std::to_string(j));
    m.scores = scores;
    m.present = BoolMatrix::Constant(scores.rows(), scores.cols(), true);
    return m;
}

inline CorrelationMatrix make_correlation(const Eigen::MatrixXd& r) {
    CorrelationMatrix c;
    for (Eigen::Index j = 0; j < r.rows(); ++j) c.labels.push_back("t" + std::to_string(j));
    c.r = r;
    c.n_pairs = Eigen::MatrixXi::Zero(r.rows(), r.cols());
    return c;
}

inline Eigen::MatrixXd random_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
    return m;
}

inline Eigen::MatrixXd random_orthonormal(Eigen::Index k, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_normal(k, k, rng));
    return qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
}

// Unrotated solution with random loadings scaled so every communality is
// below 0.9; uniquenesses complete the unit diagonal.
inline UnrotatedSolution random_solution(int p, int k, std::mt19937_64& rng) {
    UnrotatedSolution s;
    s.p = p;
    s.k = k;
    s.n = 100;
    Eigen::MatrixXd l = random_normal(p, k, rng);
    std::uniform_real_distribution<double> comm(0.2, 0.9);
    for (int i = 0; i < p; ++i) l.row(i) *= std::sqrt(comm(rng)) / l.row(i).norm();
    s.loadings = l;
    s.uniquenesses = (1.0 - l.rowwise().squaredNorm().array()).matrix();
    for (int i = 0; i < p; ++i) s.labels.push_back("t" + std::to_string(i));
    s.heywood.assign(static_cast<std::size_t>(p), false);
    return s;
}

// diag(pattern phi pattern^T) + psi
inline Eigen::VectorXd unit_diagonal(const Eigen::MatrixXd& pattern, const Eigen::MatrixXd& phi,
                                     const Eigen::VectorXd& psi) {
    return (pattern * phi * pattern.transpose()).diagonal() + psi;
}

}  // namespace capfa::test
