#include "capfa/rotation.hpp"

#include "capfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace capfa {

namespace {

struct CriterionValue {
    double f = 0.0;
    Eigen::MatrixXd gradient;  // d f / d L
};

CriterionValue oblimin_vgq(const Eigen::MatrixXd& l, double gamma) {
    const Eigen::Index p = l.rows();
    const Eigen::Index k = l.cols();
    const Eigen::MatrixXd l2 = l.array().square();
    Eigen::MatrixXd off = Eigen::MatrixXd::Ones(k, k) - Eigen::MatrixXd::Identity(k, k);
    Eigen::MatrixXd x = l2 * off;
    if (gamma != 0.0) {
        const Eigen::MatrixXd centering =
            Eigen::MatrixXd::Identity(p, p) - Eigen::MatrixXd::Constant(p, p, gamma / static_cast<double>(p));
        x = centering * x;
    }
    return {(l2.array() * x.array()).sum() / 4.0, (l.array() * x.array()).matrix()};
}

CriterionValue varimax_vgq(const Eigen::MatrixXd& l) {
    Eigen::MatrixXd ql = l.array().square();
    const Eigen::RowVectorXd means = ql.colwise().mean();
    ql.rowwise() -= means;
    return {-ql.squaredNorm() / 4.0, (-(l.array() * ql.array())).matrix()};
}

struct GpaResult {
    Eigen::MatrixXd loadings;
    Eigen::MatrixXd t;
    double f = 0.0;
    bool converged = false;
};

// Oblique gradient projection: L = A (T^-1)^T with unit-length columns of T.
GpaResult gpa_oblique(const Eigen::MatrixXd& a, Eigen::MatrixXd t, double gamma, double eps, int max_iter) {
    double alpha = 1.0;
    Eigen::MatrixXd t_inv = t.inverse();
    Eigen::MatrixXd l = a * t_inv.transpose();
    CriterionValue v = oblimin_vgq(l, gamma);
    Eigen::MatrixXd g = -(l.transpose() * v.gradient * t_inv).transpose();

    GpaResult res;
    for (int it = 0; it <= max_iter; ++it) {
        const Eigen::RowVectorXd tg = (t.array() * g.array()).colwise().sum();
        const Eigen::MatrixXd gp = g - t * tg.asDiagonal();
        const double s = gp.norm();
        if (s < eps) {
            res.converged = true;
            break;
        }
        alpha *= 2.0;
        Eigen::MatrixXd t_new;
        CriterionValue v_new;
        Eigen::MatrixXd l_new;
        Eigen::MatrixXd t_new_inv;
        for (int i = 0; i <= 10; ++i) {
            Eigen::MatrixXd x = t - alpha * gp;
            const Eigen::RowVectorXd norms = x.colwise().norm();
            t_new = x * norms.cwiseInverse().asDiagonal();
            t_new_inv = t_new.inverse();
            l_new = a * t_new_inv.transpose();
            v_new = oblimin_vgq(l_new, gamma);
            if (v.f - v_new.f > 0.5 * s * s * alpha) break;
            alpha /= 2.0;
        }
        t = t_new;
        t_inv = t_new_inv;
        l = l_new;
        v = v_new;
        g = -(l.transpose() * v.gradient * t_inv).transpose();
    }
    res.loadings = l;
    res.t = t;
    res.f = v.f;
    return res;
}

// Orthogonal gradient projection: L = A T with T orthonormal.
GpaResult gpa_orthogonal(const Eigen::MatrixXd& a, Eigen::MatrixXd t, double eps, int max_iter) {
    double alpha = 1.0;
    Eigen::MatrixXd l = a * t;
    CriterionValue v = varimax_vgq(l);
    Eigen::MatrixXd g = a.transpose() * v.gradient;

    GpaResult res;
    for (int it = 0; it <= max_iter; ++it) {
        const Eigen::MatrixXd m = t.transpose() * g;
        const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
        const Eigen::MatrixXd gp = g - t * sym;
        const double s = gp.norm();
        if (s < eps) {
            res.converged = true;
            break;
        }
        alpha *= 2.0;
        Eigen::MatrixXd t_new;
        CriterionValue v_new;
        Eigen::MatrixXd l_new;
        for (int i = 0; i <= 10; ++i) {
            const Eigen::MatrixXd x = t - alpha * gp;
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeFullU | Eigen::ComputeFullV);
            t_new = svd.matrixU() * svd.matrixV().transpose();
            l_new = a * t_new;
            v_new = varimax_vgq(l_new);
            if (v.f - v_new.f > 0.5 * s * s * alpha) break;
            alpha /= 2.0;
        }
        t = t_new;
        l = l_new;
        v = v_new;
        g = a.transpose() * v.gradient;
    }
    res.loadings = l;
    res.t = t;
    res.f = v.f;
    return res;
}

Eigen::MatrixXd random_orthonormal(Eigen::Index k, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) m(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return qr.householderQ() * Eigen::MatrixXd::Identity(k, k);
}

template <class Run>
RotatedSolution best_of_starts(const UnrotatedSolution& s, const RotationOptions& opt, Run run) {
    const Eigen::Index k = s.loadings.cols();
    std::mt19937_64 rng(opt.seed);
    GpaResult best;
    double best_f = std::numeric_limits<double>::infinity();
    int converged = 0;
    for (int start = 0; start <= opt.restarts; ++start) {
        const Eigen::MatrixXd t0 =
            start == 0 ? Eigen::MatrixXd::Identity(k, k) : random_orthonormal(k, rng);
        GpaResult r = run(t0);
        if (!r.converged) continue;
        ++converged;
        // strict < keeps the earliest start on ties
        if (r.f < best_f) {
            best_f = r.f;
            best = std::move(r);
        }
    }
    if (converged == 0) throw NumericalError("rotation: no start converged");

    RotatedSolution rs;
    rs.labels = s.labels;
    rs.uniquenesses = s.uniquenesses;
    rs.pattern = best.loadings;
    rs.criterion = best.f;
    rs.converged_starts = converged;
    rs.phi = best.t.transpose() * best.t;
    return rs;
}

}  // namespace

std::string to_string(RotationMethod m) {
    return m == RotationMethod::Oblimin ? "oblimin" : "varimax";
}

Eigen::MatrixXd RotatedSolution::fitted() const {
    Eigen::MatrixXd s = pattern * phi * pattern.transpose();
    s.diagonal() += uniquenesses;
    return s;
}

double oblimin_criterion(const Eigen::MatrixXd& loadings, double gamma) {
    return oblimin_vgq(loadings, gamma).f;
}

double varimax_criterion(const Eigen::MatrixXd& loadings) {
    return varimax_vgq(loadings).f;
}

void canonicalize(RotatedSolution& rs) {
    const Eigen::Index k = rs.pattern.cols();
    const Eigen::VectorXd contribution =
        (rs.pattern.array() * (rs.pattern * rs.phi).array()).colwise().sum().transpose();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return contribution(a) > contribution(b);
    });
    Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(k, k);  // new column j <- old order[j], signed
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        Eigen::Index arg = 0;
        rs.pattern.col(src).cwiseAbs().maxCoeff(&arg);
        perm(src, j) = rs.pattern(arg, src) < 0.0 ? -1.0 : 1.0;
    }
    rs.pattern = rs.pattern * perm;
    rs.phi = perm.transpose() * rs.phi * perm;
    rs.phi = 0.5 * (rs.phi + rs.phi.transpose());
    rs.structure = rs.pattern * rs.phi;
}

RotatedSolution rotate_oblimin(const UnrotatedSolution& s, const RotationOptions& opt) {
    if (s.loadings.cols() < 2) throw UsageError("rotate_oblimin: need at least 2 factors");
    RotatedSolution rs = best_of_starts(s, opt, [&](const Eigen::MatrixXd& t0) {
        return gpa_oblique(s.loadings, t0, opt.gamma, opt.tolerance, opt.max_iterations);
    });
    rs.method = RotationMethod::Oblimin;
    rs.phi.diagonal().setOnes();
    canonicalize(rs);
    return rs;
}

RotatedSolution rotate_varimax(const UnrotatedSolution& s, const RotationOptions& opt) {
    if (s.loadings.cols() < 2) throw UsageError("rotate_varimax: need at least 2 factors");
    RotatedSolution rs = best_of_starts(s, opt, [&](const Eigen::MatrixXd& t0) {
        return gpa_orthogonal(s.loadings, t0, opt.tolerance, opt.max_iterations);
    });
    rs.method = RotationMethod::Varimax;
    rs.phi = Eigen::MatrixXd::Identity(rs.pattern.cols(), rs.pattern.cols());
    canonicalize(rs);
    return rs;
}

Alignment align_solutions(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw UsageError("align_solutions: shape mismatch");
    const Eigen::Index k = a.cols();
    Eigen::MatrixXd cong(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
            const double na = a.col(i).norm();
            const double nb = b.col(j).norm();
            cong(i, j) = na > 0.0 && nb > 0.0 ? a.col(i).dot(b.col(j)) / (na * nb) : 0.0;
        }

    Alignment al;
    al.permutation.assign(static_cast<std::size_t>(k), -1);
    al.signs.assign(static_cast<std::size_t>(k), 1);
    al.congruence = Eigen::VectorXd::Zero(k);
    std::vector<bool> used_a(static_cast<std::size_t>(k), false), used_b(static_cast<std::size_t>(k), false);
    for (Eigen::Index step = 0; step < k; ++step) {
        double best = -1.0;
        Eigen::Index bi = 0, bj = 0;
        for (Eigen::Index i = 0; i < k; ++i) {
            if (used_a[static_cast<std::size_t>(i)]) continue;
            for (Eigen::Index j = 0; j < k; ++j) {
                if (used_b[static_cast<std::size_t>(j)]) continue;
                if (std::abs(cong(i, j)) > best) {
                    best = std::abs(cong(i, j));
                    bi = i;
                    bj = j;
                }
            }
        }
        used_a[static_cast<std::size_t>(bi)] = used_b[static_cast<std::size_t>(bj)] = true;
        al.permutation[static_cast<std::size_t>(bi)] = static_cast<int>(bj);
        al.signs[static_cast<std::size_t>(bi)] = cong(bi, bj) < 0.0 ? -1 : 1;
        al.congruence(bi) = std::abs(cong(bi, bj));
    }
    return al;
}

Eigen::MatrixXd apply_alignment(const Eigen::MatrixXd& b, const Alignment& al) {
    Eigen::MatrixXd out(b.rows(), b.cols());
    for (Eigen::Index j = 0; j < b.cols(); ++j)
        out.col(j) = al.signs[static_cast<std::size_t>(j)] * b.col(al.permutation[static_cast<std::size_t>(j)]);
    return out;
}

RotatedSolution align_to(const RotatedSolution& rs, const Eigen::MatrixXd& target, Alignment* out) {
    const Alignment al = align_solutions(target, rs.pattern);
    const Eigen::Index k = rs.pattern.cols();
    Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j)
        perm(al.permutation[static_cast<std::size_t>(j)], j) = al.signs[static_cast<std::size_t>(j)];
    RotatedSolution res = rs;
    res.pattern = rs.pattern * perm;
    res.phi = perm.transpose() * rs.phi * perm;
    res.structure = res.pattern * res.phi;
    if (out) *out = al;
    return res;
}

}  // namespace capfa
