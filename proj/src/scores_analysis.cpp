#include "capfa/scores_analysis.hpp"

#include "capfa/error.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

namespace capfa {

std::string to_string(ScoreMethod) { return "regression"; }

std::string to_string(Characteristic c) {
    switch (c) {
        case Characteristic::LogSize: return "log_size";
        case Characteristic::InstructionTuned: return "instruction_tuned";
        case Characteristic::TotalTokens: return "total_tokens";
    }
    return "unknown";
}

FactorScores factor_scores(const RotatedSolution& rs, const PerformanceMatrix& z, double ridge) {
    if (!z.complete()) throw DataError("factor_scores: matrix has missing cells (impute first)");
    if (z.tasks != rs.labels) throw UsageError("factor_scores: task columns do not match the solution");
    if (z.n_systems() < 2) throw DataError("factor_scores: need at least 2 systems");
    if (!(ridge >= 0.0)) throw UsageError("factor_scores: ridge must be non-negative");

    const Eigen::Index n = z.n_systems();
    const Eigen::MatrixXd centered = z.scores.rowwise() - z.scores.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    const Eigen::VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
    if (!inv_sd.allFinite()) throw DataError("factor_scores: constant task column");
    Eigen::MatrixXd r = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
    r.diagonal().array() += ridge;

    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success)
        throw NumericalError("factor_scores: task correlation matrix is not invertible with ridge " + std::to_string(ridge));

    FactorScores fs;
    fs.systems = z.systems;
    fs.ridge = ridge;
    fs.scores = centered * llt.solve(rs.structure);
    return fs;
}

std::vector<CharacteristicCorrelation> correlate_with_characteristics(const FactorScores& fs,
                                                                      const std::vector<SystemMetadata>& meta,
                                                                      double level) {
    std::map<std::string, const SystemMetadata*> by_name;
    for (const auto& m : meta) by_name[m.name] = &m;
    std::vector<const SystemMetadata*> rows;
    for (const auto& s : fs.systems) {
        const auto it = by_name.find(s);
        if (it == by_name.end()) throw DataError("metadata missing for system '" + s + "'");
        rows.push_back(it->second);
    }

    auto value = [](const SystemMetadata& m, Characteristic c) -> std::optional<double> {
        switch (c) {
            case Characteristic::LogSize: return std::log(m.size_b);
            case Characteristic::InstructionTuned:
                if (!m.instruction_tuned) return std::nullopt;
                return *m.instruction_tuned ? 1.0 : 0.0;
            case Characteristic::TotalTokens: return m.total_tokens;
        }
        return std::nullopt;
    };

    std::vector<CharacteristicCorrelation> out;
    for (Characteristic c : {Characteristic::LogSize, Characteristic::InstructionTuned, Characteristic::TotalTokens}) {
        std::vector<double> x;
        std::vector<Eigen::Index> keep;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (const auto v = value(*rows[i], c)) {
                x.push_back(*v);
                keep.push_back(static_cast<Eigen::Index>(i));
            }
        if (x.size() < 4) throw DataError("characteristic " + to_string(c) + ": fewer than 4 known values");
        const bool constant = std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
        if (constant) throw DataError("characteristic " + to_string(c) + " is constant");
        for (Eigen::Index f = 0; f < fs.scores.cols(); ++f) {
            std::vector<double> y;
            for (auto i : keep) y.push_back(fs.scores(i, f));
            CharacteristicCorrelation cc;
            cc.characteristic = c;
            cc.factor = static_cast<int>(f);
            cc.r = pearson(x, y);
            cc.n = static_cast<int>(x.size());
            cc.dropped = static_cast<int>(rows.size() - x.size());
            cc.ci = fisher_ci(cc.r, cc.n, level);
            out.push_back(cc);
        }
    }
    return out;
}

double LinearFit::predict(double x) const { return intercept + slope * x; }

ConfidenceInterval LinearFit::band(double x, double level) const {
    if (n < 3) throw UsageError("fit_line: band needs at least 3 points");
    const boost::math::students_t t(n - 2);
    const double q = boost::math::quantile(t, 0.5 + level / 2.0);
    const double half = q * residual_sd * std::sqrt(1.0 / n + (x - x_mean) * (x - x_mean) / sxx);
    const double y = predict(x);
    return {y - half, y + half};
}

LinearFit fit_line(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    if (x.size() != y.size() || x.size() < 3) throw UsageError("fit_line: need at least 3 paired points");
    LinearFit fit;
    fit.n = static_cast<int>(x.size());
    fit.x_mean = x.mean();
    const double y_mean = y.mean();
    const Eigen::VectorXd dx = x.array() - fit.x_mean;
    fit.sxx = dx.squaredNorm();
    if (!(fit.sxx > 0.0)) throw DataError("fit_line: x is constant");
    fit.slope = dx.dot((y.array() - y_mean).matrix()) / fit.sxx;
    fit.intercept = y_mean - fit.slope * fit.x_mean;
    const Eigen::VectorXd resid = (y.array() - fit.intercept - fit.slope * x.array()).matrix();
    fit.residual_sd = std::sqrt(resid.squaredNorm() / (fit.n - 2));
    return fit;
}

}  // namespace capfa
