#include "capfa/correlation.hpp"

#include "capfa/csv.hpp"
#include "capfa/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace capfa {

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw UsageError("pearson: length mismatch");
    std::size_t n = 0;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        mx += x[i];
        my += y[i];
        ++n;
    }
    if (n < 3) throw DataError("pearson: fewer than 3 complete pairs");
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw DataError("pearson: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

ConfidenceInterval fisher_ci(double r, int n, double level) {
    if (!(std::abs(r) < 1.0)) throw UsageError("fisher_ci: |r| must be < 1");
    if (n < 4) throw UsageError("fisher_ci: n must be >= 4");
    if (!(level > 0.0 && level < 1.0)) throw UsageError("fisher_ci: level must lie in (0, 1)");
    const boost::math::normal_distribution<double> unit;
    const double zcrit = boost::math::quantile(unit, 0.5 + level / 2.0);
    const double z = std::atanh(r);
    const double half = zcrit / std::sqrt(static_cast<double>(n - 3));
    return {std::tanh(z - half), std::tanh(z + half)};
}

CorrelationMatrix correlation_matrix(const PerformanceMatrix& m, int min_pairs) {
    const Eigen::Index p = m.n_tasks();
    const Eigen::Index n = m.n_systems();
    CorrelationMatrix c;
    c.labels = m.tasks;
    c.r = Eigen::MatrixXd::Identity(p, p);
    c.n_pairs = Eigen::MatrixXi::Zero(p, p);

    Eigen::MatrixXd masked(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            masked(i, j) = m.present(i, j) ? m.scores(i, j) : std::nan("");

    for (Eigen::Index a = 0; a < p; ++a) {
        c.n_pairs(a, a) = static_cast<int>(m.present.col(a).count());
        for (Eigen::Index b = a + 1; b < p; ++b) {
            const int count = static_cast<int>((m.present.col(a).array() && m.present.col(b).array()).count());
            if (count < min_pairs)
                throw DataError("correlation_matrix: tasks '" + m.tasks[static_cast<std::size_t>(a)] + "' and '" +
                                m.tasks[static_cast<std::size_t>(b)] + "' share only " + std::to_string(count) +
                                " systems");
            double r = 0.0;
            try {
                r = pearson({masked.col(a).data(), static_cast<std::size_t>(n)},
                            {masked.col(b).data(), static_cast<std::size_t>(n)});
            } catch (const DataError& e) {
                throw DataError("correlation_matrix: tasks '" + m.tasks[static_cast<std::size_t>(a)] + "' and '" +
                                m.tasks[static_cast<std::size_t>(b)] + "': " + e.what());
            }
            c.r(a, b) = c.r(b, a) = r;
            c.n_pairs(a, b) = c.n_pairs(b, a) = count;
        }
    }
    return c;
}

CorrelationSummary summarize(const CorrelationMatrix& c) {
    const Eigen::Index p = c.size();
    if (p < 2) throw UsageError("summarize: need at least 2 tasks");
    std::vector<double> upper;
    upper.reserve(static_cast<std::size_t>(p * (p - 1) / 2));
    for (Eigen::Index a = 0; a < p; ++a)
        for (Eigen::Index b = a + 1; b < p; ++b) upper.push_back(c.r(a, b));
    CorrelationSummary s;
    double total = 0.0;
    for (double v : upper) total += v;
    s.mean_r = total / static_cast<double>(upper.size());
    std::sort(upper.begin(), upper.end());
    const std::size_t mid = upper.size() / 2;
    s.median_r = upper.size() % 2 ? upper[mid] : 0.5 * (upper[mid - 1] + upper[mid]);
    return s;
}

CorrelationMatrix nearest_psd(const CorrelationMatrix& c, double tol) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.r);
    if (es.info() != Eigen::Success) throw NumericalError("nearest_psd: eigendecomposition failed");
    if (es.eigenvalues().minCoeff() >= -tol) return c;

    const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd a = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd inv_sd = a.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    a = inv_sd.asDiagonal() * a * inv_sd.asDiagonal();
    a = 0.5 * (a + a.transpose());
    a.diagonal().setOnes();

    CorrelationMatrix out = c;
    out.r = a;
    out.psd_repaired = true;
    return out;
}

void write_correlation_csv(const std::filesystem::path& path, const CorrelationMatrix& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    csv::Row header{""};
    header.insert(header.end(), c.labels.begin(), c.labels.end());
    out << csv::join(header) << '\n';
    for (Eigen::Index i = 0; i < c.size(); ++i) {
        csv::Row row{c.labels[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < c.size(); ++j) row.push_back(csv::format_double(c.r(i, j)));
        out << csv::join(row) << '\n';
    }
}

CorrelationMatrix load_correlation_csv(const std::filesystem::path& path) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw DataError("correlation: empty file " + path.string());
    CorrelationMatrix c;
    c.labels.assign(rows[0].begin() + 1, rows[0].end());
    const auto p = static_cast<Eigen::Index>(c.labels.size());
    if (static_cast<Eigen::Index>(rows.size()) != p + 1) throw DataError("correlation: matrix is not square in " + path.string());
    c.r.resize(p, p);
    c.n_pairs = Eigen::MatrixXi::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        const auto& row = rows[static_cast<std::size_t>(i + 1)];
        if (static_cast<Eigen::Index>(row.size()) != p + 1 || row[0] != c.labels[static_cast<std::size_t>(i)])
            throw DataError("correlation: row " + std::to_string(i + 1) + " does not match the header");
        for (Eigen::Index j = 0; j < p; ++j) {
            bool ok = false;
            c.r(i, j) = csv::parse_double(row[static_cast<std::size_t>(j + 1)], ok);
            if (!ok) throw DataError("correlation: non-numeric entry in row " + std::to_string(i + 1));
        }
    }
    if (!c.r.isApprox(c.r.transpose(), 1e-12)) throw DataError("correlation: matrix is not symmetric");
    return c;
}

}  // namespace capfa
