#include "capfa/efa.hpp"

#include "capfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace capfa {

namespace {

double log_det_spd(const Eigen::MatrixXd& a) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("matrix is not positive definite");
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Concentrated ML objective over x = log(psi). For fixed psi the optimal
// loadings come from the top-k eigenpairs of Psi^-1/2 C Psi^-1/2.
class ConcentratedObjective {
public:
    ConcentratedObjective(const Eigen::MatrixXd& c, int k) : c_(c), k_(k) {}

    double value(const Eigen::VectorXd& x) {
        evaluate(x);
        return f_;
    }
    const Eigen::VectorXd& gradient() const { return grad_; }
    const Eigen::MatrixXd& loadings() const { return loadings_; }

    void evaluate(const Eigen::VectorXd& x) {
        const Eigen::Index p = c_.rows();
        const Eigen::VectorXd psi = x.array().exp();
        const Eigen::VectorXd inv_sqrt = psi.array().rsqrt();
        const Eigen::MatrixXd scaled = inv_sqrt.asDiagonal() * c_ * inv_sqrt.asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(scaled);
        if (es.info() != Eigen::Success) throw NumericalError("ml_efa: eigendecomposition failed");
        const Eigen::VectorXd& theta = es.eigenvalues();  // ascending

        f_ = 0.0;
        for (Eigen::Index j = 0; j < p - k_; ++j) {
            if (!(theta(j) > 0.0)) {
                f_ = std::numeric_limits<double>::infinity();
                break;
            }
            f_ += theta(j) - std::log(theta(j)) - 1.0;
        }

        loadings_.resize(p, k_);
        for (int f = 0; f < k_; ++f) {
            const Eigen::Index idx = p - 1 - f;
            const double scale = std::sqrt(std::max(theta(idx) - 1.0, 0.0));
            loadings_.col(f) = psi.array().sqrt() * es.eigenvectors().col(idx).array() * scale;
        }
        // d f / d log(psi_i) = (Sigma_hat - C)_ii / psi_i
        const Eigen::VectorXd communality = loadings_.rowwise().squaredNorm();
        grad_ = ((communality + psi - c_.diagonal()).array() / psi.array()).matrix();
    }

private:
    const Eigen::MatrixXd& c_;
    int k_;
    double f_ = 0.0;
    Eigen::VectorXd grad_;
    Eigen::MatrixXd loadings_;
};

struct BfgsResult {
    Eigen::VectorXd x;
    int iterations = 0;
    bool converged = false;
};

// Projected BFGS on a box. Variables pinned at a bound with the gradient
// pointing outward are held fixed for the step.
BfgsResult minimize_box(ConcentratedObjective& obj, Eigen::VectorXd x, double lo, double hi,
                        double tol, int max_iter) {
    const Eigen::Index n = x.size();
    auto project = [&](Eigen::VectorXd v) { return v.cwiseMax(lo).cwiseMin(hi); };
    x = project(x);
    double f = obj.value(x);
    if (!std::isfinite(f)) throw NumericalError("ml_efa: objective not finite at start values");
    Eigen::VectorXd g = obj.gradient();
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
    constexpr double kBoundEps = 1e-12;
    int stalled = 0;

    BfgsResult res;
    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it;
        std::vector<bool> active(static_cast<std::size_t>(n));
        Eigen::VectorXd pg = g;
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool at_lo = x(i) <= lo + kBoundEps && g(i) > 0.0;
            const bool at_hi = x(i) >= hi - kBoundEps && g(i) < 0.0;
            active[static_cast<std::size_t>(i)] = at_lo || at_hi;
            if (at_lo || at_hi) pg(i) = 0.0;
        }
        if (pg.lpNorm<Eigen::Infinity>() < tol) {
            res.converged = true;
            break;
        }

        Eigen::VectorXd d = -(h * pg);
        for (Eigen::Index i = 0; i < n; ++i)
            if (active[static_cast<std::size_t>(i)]) d(i) = 0.0;
        if (d.dot(pg) >= 0.0) {
            h.setIdentity();
            d = -pg;
        }

        double t = 1.0;
        Eigen::VectorXd x_new;
        double f_new = f;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = project(x + t * d);
            f_new = obj.value(x_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            if (!h.isIdentity()) {
                h.setIdentity();
                obj.evaluate(x);
                continue;
            }
            // No representable descent left: accept when the gradient is
            // already at the level of numerical noise.
            obj.evaluate(x);
            res.converged = pg.lpNorm<Eigen::Infinity>() < std::max(1e3 * tol, 1e-6);
            break;
        }
        const Eigen::VectorXd g_new = obj.gradient();
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
            h = (eye - rho * s * y.transpose()) * h * (eye - rho * y * s.transpose()) +
                rho * s * s.transpose();
        }
        const double decrease = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        res.iterations = it + 1;
        // Stalled at the floating-point resolution of the objective.
        if (decrease <= 1e-14 * (1.0 + std::abs(f))) {
            if (++stalled >= 3 && pg.lpNorm<Eigen::Infinity>() < std::max(1e3 * tol, 1e-5)) {
                res.converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }
    obj.evaluate(x);
    res.x = x;
    return res;
}

// Sort columns by sum of squares (descending) and make the largest-|.|
// entry of each column positive.
void canonical_orientation(Eigen::MatrixXd& loadings) {
    const Eigen::Index k = loadings.cols();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    const Eigen::VectorXd ss = loadings.colwise().squaredNorm().transpose();
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return ss(a) > ss(b); });
    Eigen::MatrixXd out(loadings.rows(), k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd col = loadings.col(order[static_cast<std::size_t>(j)]);
        Eigen::Index arg = 0;
        col.cwiseAbs().maxCoeff(&arg);
        if (col(arg) < 0.0) col = -col;
        out.col(j) = col;
    }
    loadings = out;
}

Eigen::MatrixXd prepare_matrix(const CorrelationMatrix& c, int n, const EfaOptions& opt, bool& ridged) {
    const Eigen::MatrixXd& r = c.r;
    if (!r.isApprox(r.transpose(), 1e-12)) throw UsageError("ml_efa: correlation matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-8) throw UsageError("ml_efa: correlation matrix is not PSD (repair it first)");
    ridged = n <= r.rows() || min_eig < opt.ridge;
    if (!ridged) return r;
    Eigen::MatrixXd out = r;
    out.diagonal().array() += opt.ridge;
    return out / (1.0 + opt.ridge);
}

}  // namespace

Eigen::MatrixXd UnrotatedSolution::fitted() const {
    Eigen::MatrixXd s = loadings * loadings.transpose();
    s.diagonal() += uniquenesses;
    return s;
}

int model_df(int p, int k) {
    return ((p - k) * (p - k) - (p + k)) / 2;
}

int max_identified_factors(int p) {
    int k = 0;
    while (k + 1 < p && model_df(p, k + 1) >= 1) ++k;
    return k;
}

Eigen::VectorXd eigenvalues(const CorrelationMatrix& c) {
    if (!c.r.isApprox(c.r.transpose(), 1e-12)) throw UsageError("eigenvalues: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.r, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("eigenvalues: decomposition failed");
    return es.eigenvalues().reverse();
}

double ml_discrepancy(const Eigen::MatrixXd& c, const Eigen::MatrixXd& sigma) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("ml_discrepancy: fitted matrix not positive definite");
    const double trace = llt.solve(c).trace();
    const double f = log_det_spd(sigma) + trace - log_det_spd(c) - static_cast<double>(c.rows());
    return std::max(f, 0.0);
}

UnrotatedSolution ml_efa(const CorrelationMatrix& c, int k, int n, const EfaOptions& opt) {
    const int p = static_cast<int>(c.size());
    if (k < 1 || k >= p) throw UsageError("ml_efa: need 1 <= k < p");
    if (model_df(p, k) < 1)
        throw UsageError("ml_efa: " + std::to_string(k) + " factors leave no degrees of freedom for " +
                         std::to_string(p) + " tasks");

    UnrotatedSolution s;
    s.labels = c.labels;
    s.n = n;
    s.p = p;
    s.k = k;
    s.bartlett = opt.bartlett;
    const Eigen::MatrixXd cm = prepare_matrix(c, n, opt, s.ridge_applied);

    // 1 - squared multiple correlation, with a ridge-regularized inverse
    Eigen::MatrixXd reg = cm;
    reg.diagonal().array() += opt.ridge;
    const Eigen::VectorXd inv_diag = reg.llt().solve(Eigen::MatrixXd::Identity(p, p)).diagonal();
    Eigen::VectorXd psi0 = inv_diag.cwiseInverse().cwiseMax(opt.psi_floor).cwiseMin(1.0);

    ConcentratedObjective obj(cm, k);
    const double lo = std::log(opt.psi_floor);
    const BfgsResult res = minimize_box(obj, psi0.array().log().matrix(), lo, 0.0, opt.tolerance,
                                        opt.max_iterations);
    if (!res.converged)
        throw NumericalError("ml_efa: no convergence for k=" + std::to_string(k) + " after " +
                             std::to_string(res.iterations) + " iterations");
    s.iterations = res.iterations;
    s.uniquenesses = res.x.array().exp();
    s.loadings = obj.loadings();

    // Enforce communality + uniqueness = 1 exactly; only rows pinned at a
    // bound move by more than the optimizer tolerance.
    s.heywood.assign(static_cast<std::size_t>(p), false);
    for (int i = 0; i < p; ++i) {
        const double target = 1.0 - s.uniquenesses(i);
        const double h2 = s.loadings.row(i).squaredNorm();
        if (h2 > 0.0) s.loadings.row(i) *= std::sqrt(target / h2);
        s.heywood[static_cast<std::size_t>(i)] = res.x(i) <= lo + 1e-9;
    }
    canonical_orientation(s.loadings);

    s.discrepancy = ml_discrepancy(cm, s.fitted());
    s.baseline_discrepancy = std::max(-log_det_spd(cm), 0.0);
    return s;
}

UnrotatedSolution independence_model(const CorrelationMatrix& c, int n, const EfaOptions& opt) {
    UnrotatedSolution s;
    s.labels = c.labels;
    s.p = static_cast<int>(c.size());
    s.n = n;
    s.k = 0;
    s.bartlett = opt.bartlett;
    const Eigen::MatrixXd cm = prepare_matrix(c, n, opt, s.ridge_applied);
    s.loadings = Eigen::MatrixXd::Zero(s.p, 0);
    s.uniquenesses = Eigen::VectorXd::Ones(s.p);
    s.heywood.assign(static_cast<std::size_t>(s.p), false);
    s.baseline_discrepancy = std::max(-log_det_spd(cm), 0.0);
    s.discrepancy = s.baseline_discrepancy;
    return s;
}

FitIndices fit_indices(const UnrotatedSolution& s) {
    const double p = s.p;
    const double n = s.n;
    FitIndices fi;
    fi.small_sample = s.n <= s.p;
    fi.df = model_df(s.p, s.k);
    fi.df_baseline = model_df(s.p, 0);
    if (fi.df_baseline <= 0) throw UsageError("fit_indices: baseline model has no degrees of freedom");
    if (fi.df < 1) throw UsageError("fit_indices: model has no degrees of freedom");

    const double base_mult = s.bartlett ? n - 1.0 - (2.0 * p + 5.0) / 6.0 : n - 1.0;
    const double mult = s.bartlett ? base_mult - 2.0 * s.k / 3.0 : base_mult;
    fi.chi2 = std::max(mult * s.discrepancy, 0.0);
    fi.chi2_baseline = std::max(base_mult * s.baseline_discrepancy, 0.0);

    const double df = fi.df;
    const double df_b = fi.df_baseline;
    const double excess = std::max(fi.chi2 - df, 0.0);
    const double excess_b = std::max(fi.chi2_baseline - df_b, 0.0);
    fi.rmsea = n > 1.0 ? std::sqrt(excess / (df * (n - 1.0))) : 0.0;
    const double denom = std::max(excess_b, excess);
    fi.cfi = denom > 0.0 ? 1.0 - excess / denom : 1.0;
    const double ratio_b = fi.chi2_baseline / df_b;
    fi.tli = ratio_b != 1.0 ? (ratio_b - fi.chi2 / df) / (ratio_b - 1.0) : 1.0;
    return fi;
}

VarianceTable variance_explained(const Eigen::MatrixXd& loadings, const Eigen::MatrixXd& phi) {
    if (phi.rows() != loadings.cols() || phi.cols() != loadings.cols())
        throw UsageError("variance_explained: dimension mismatch");
    const double p = static_cast<double>(loadings.rows());
    const Eigen::MatrixXd structure = loadings * phi;
    VarianceTable t;
    t.proportion = (loadings.array() * structure.array()).colwise().sum().transpose() / p;
    t.cumulative.resize(t.proportion.size());
    double acc = 0.0;
    for (Eigen::Index j = 0; j < t.proportion.size(); ++j) {
        acc += t.proportion(j);
        t.cumulative(j) = acc;
    }
    return t;
}

}  // namespace capfa
