#include "capfa/factor_selection.hpp"

#include "capfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace capfa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

// Ratio of the fit gain per lost df before and after point `mid`.
double scree_test(const HullCandidate& prev, const HullCandidate& mid, const HullCandidate& next) {
    const double gain_before = (mid.f - prev.f) / static_cast<double>(prev.df - mid.df);
    const double gain_after = (next.f - mid.f) / static_cast<double>(mid.df - next.df);
    if (gain_before <= 0.0) return 0.0;
    if (gain_after <= 0.0) return kInf;
    return gain_before / gain_after;
}

}  // namespace

int scree_count(const Eigen::VectorXd& eigs, double cutoff) {
    return static_cast<int>((eigs.array() > cutoff).count());
}

int default_hull_k_max(int p) {
    return std::min(max_identified_factors(p), 8);
}

HullResult hull_select(std::vector<HullCandidate> candidates, int scree_fallback) {
    HullResult res;
    res.candidates = std::move(candidates);
    const std::size_t m = res.candidates.size();
    for (std::size_t i = 1; i < m; ++i)
        if (res.candidates[i].k <= res.candidates[i - 1].k || res.candidates[i].df >= res.candidates[i - 1].df)
            throw UsageError("hull_select: candidates must have increasing k and decreasing df");

    // A solution that does not fit strictly better than a simpler one is never
    // on the hull; this also collapses the RMSEA = 0 plateau to its first point.
    std::vector<std::size_t> members;
    double best_f = -kInf;
    for (std::size_t i = 0; i < m; ++i) {
        if (res.candidates[i].f > best_f) {
            members.push_back(i);
            best_f = res.candidates[i].f;
        }
    }
    // Drop interior points on or below the segment joining their neighbours.
    bool changed = true;
    while (changed && members.size() >= 3) {
        changed = false;
        for (std::size_t j = 1; j + 1 < members.size(); ++j) {
            const auto& a = res.candidates[members[j - 1]];
            const auto& b = res.candidates[members[j]];
            const auto& c = res.candidates[members[j + 1]];
            const double t = static_cast<double>(a.df - b.df) / static_cast<double>(a.df - c.df);
            const double on_line = a.f + t * (c.f - a.f);
            if (b.f <= on_line + 1e-12) {
                members.erase(members.begin() + static_cast<std::ptrdiff_t>(j));
                changed = true;
                break;
            }
        }
    }

    res.hull_members.assign(m, false);
    for (auto i : members) res.hull_members[i] = true;
    res.st_values.assign(m, kNaN);
    if (members.size() < 3) {
        res.selected_k = scree_fallback;
        res.fallback_to_scree = true;
        return res;
    }
    double best_st = -kInf;
    for (std::size_t j = 1; j + 1 < members.size(); ++j) {
        const double st = scree_test(res.candidates[members[j - 1]], res.candidates[members[j]],
                                     res.candidates[members[j + 1]]);
        res.st_values[members[j]] = st;
        // strict > breaks ties toward the smaller k
        if (st > best_st) {
            best_st = st;
            res.selected_k = res.candidates[members[j]].k;
        }
    }
    return res;
}

HullResult hull_method(const CorrelationMatrix& c, int n, int k_max, const EfaOptions& opt) {
    const int p = static_cast<int>(c.size());
    if (k_max < 1 || k_max >= p || model_df(p, k_max) < 1)
        throw UsageError("hull_method: k_max=" + std::to_string(k_max) + " is not identified for " +
                         std::to_string(p) + " tasks");
    std::vector<HullCandidate> cands;
    for (int k = 0; k <= k_max; ++k) {
        const UnrotatedSolution s = k == 0 ? independence_model(c, n, opt) : ml_efa(c, k, n, opt);
        const FitIndices fi = fit_indices(s);
        cands.push_back({k, 1.0 - fi.rmsea, fi.df, fi.rmsea});
    }
    return hull_select(std::move(cands), scree_count(eigenvalues(c)));
}

}  // namespace capfa
