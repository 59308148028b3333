#include "capfa/bayes_efa.hpp"

#include "capfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace capfa {

namespace {

struct ChainTrace {
    std::vector<double> k;
    std::vector<double> mean_uniqueness;
    Eigen::MatrixXd assignment_counts;                  // p x (K + 1)
    std::vector<std::vector<std::pair<int, double>>> loadings;  // per task: (label, standardized loading)
    long long proposals = 0;
    long long accepted = 0;
};

class Chain {
public:
    Chain(const Eigen::MatrixXd& z, const BayesConfig& cfg, int index)
        : z_(z), cfg_(cfg), n_(static_cast<int>(z.rows())), p_(static_cast<int>(z.cols())), k_(cfg.k_max) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu),
                          static_cast<std::uint32_t>(cfg.seed >> 32), static_cast<std::uint32_t>(index),
                          0x9e3779b9u};
        rng_.seed(seq);
        s_ = z_.transpose() * z_;
        col_sq_ = s_.diagonal();
        omega_dof_ = k_ + cfg_.omega_extra_dof;
    }

    ChainTrace run() {
        initialize();
        ChainTrace trace;
        trace.assignment_counts = Eigen::MatrixXd::Zero(p_, k_ + 1);
        trace.loadings.resize(static_cast<std::size_t>(p_));
        for (int it = 0; it < cfg_.iterations; ++it) {
            sweep(trace);
            if (it >= cfg_.burn_in && (it - cfg_.burn_in) % cfg_.thin == 0) record(trace);
        }
        return trace;
    }

private:
    double normal() { return normal_(rng_); }
    double uniform() { return uniform_(rng_); }

    // Seeded k-means++ on rows of the task correlation matrix gives each chain
    // a different over-split starting partition.
    void initialize() {
        const Eigen::MatrixXd r = (z_.transpose() * z_) / static_cast<double>(n_ - 1);
        const Eigen::VectorXd sd = r.diagonal().cwiseSqrt();
        const Eigen::MatrixXd corr = sd.cwiseInverse().asDiagonal() * r * sd.cwiseInverse().asDiagonal();

        assign_.assign(static_cast<std::size_t>(p_), 0);
        if (cfg_.fixed_assignment) {
            assign_ = *cfg_.fixed_assignment;
        } else {
            const int clusters = std::min(k_, p_);
            std::vector<int> centers;
            std::uniform_int_distribution<int> pick(0, p_ - 1);
            centers.push_back(pick(rng_));
            Eigen::VectorXd dist(p_);
            while (static_cast<int>(centers.size()) < clusters) {
                for (int j = 0; j < p_; ++j) {
                    double best = std::numeric_limits<double>::infinity();
                    for (int c : centers) best = std::min(best, (corr.row(j) - corr.row(c)).squaredNorm());
                    dist(j) = best;
                }
                const double total = dist.sum();
                if (!(total > 0.0)) break;
                double u = uniform() * total;
                int chosen = p_ - 1;
                for (int j = 0; j < p_; ++j) {
                    u -= dist(j);
                    if (u <= 0.0) {
                        chosen = j;
                        break;
                    }
                }
                centers.push_back(chosen);
            }
            Eigen::MatrixXd mu(static_cast<Eigen::Index>(centers.size()), p_);
            for (std::size_t c = 0; c < centers.size(); ++c) mu.row(static_cast<Eigen::Index>(c)) = corr.row(centers[c]);
            for (int iter = 0; iter < 25; ++iter) {
                for (int j = 0; j < p_; ++j) {
                    Eigen::Index best = 0;
                    (mu.rowwise() - corr.row(j)).rowwise().squaredNorm().minCoeff(&best);
                    assign_[static_cast<std::size_t>(j)] = static_cast<int>(best) + 1;
                }
                mu.setZero();
                Eigen::VectorXd cnt = Eigen::VectorXd::Zero(mu.rows());
                for (int j = 0; j < p_; ++j) {
                    mu.row(assign_[static_cast<std::size_t>(j)] - 1) += corr.row(j);
                    cnt(assign_[static_cast<std::size_t>(j)] - 1) += 1.0;
                }
                for (Eigen::Index c = 0; c < mu.rows(); ++c)
                    if (cnt(c) > 0) mu.row(c) /= cnt(c);
            }
        }
        counts_.assign(static_cast<std::size_t>(k_ + 1), 0);
        for (int g : assign_) ++counts_[static_cast<std::size_t>(g)];

        // Latent start: mean standardized score of each slot's tasks.
        eta_ = Eigen::MatrixXd::Zero(n_, k_);
        for (int g = 1; g <= k_; ++g) {
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_);
            int members = 0;
            for (int j = 0; j < p_; ++j)
                if (assign_[static_cast<std::size_t>(j)] == g) {
                    acc += z_.col(j) / std::sqrt(col_sq_(j) / std::max(n_ - 1, 1));
                    ++members;
                }
            if (members > 0 && acc.squaredNorm() > 0.0) {
                acc *= std::sqrt(static_cast<double>(n_ - 1) / acc.squaredNorm());
                eta_.col(g - 1) = acc;
            } else {
                for (int i = 0; i < n_; ++i) eta_(i, g - 1) = normal();
            }
        }
        omega_ = Eigen::MatrixXd::Identity(k_, k_);
        omega_inv_ = omega_;
        lambda_ = Eigen::VectorXd::Zero(p_);
        psi_ = Eigen::VectorXd::Constant(p_, 0.5);
        eta_sq_ = eta_.colwise().squaredNorm().transpose();
        for (int j = 0; j < p_; ++j) draw_loading(j);
        for (int j = 0; j < p_; ++j) draw_uniqueness(j);
    }

    // Caches for the move step: W = Psi^-1 B (one nonzero per row), A = S W,
    // d = diag(B^T Psi^-1 B). S = Z^T Z is fixed.
    void refresh_caches() {
        w_.setZero(p_, k_);
        d_.setZero(k_);
        for (int j = 0; j < p_; ++j) {
            const int g = assign_[static_cast<std::size_t>(j)];
            if (g == 0) continue;
            w_(j, g - 1) = lambda_(j) / psi_(j);
            d_(g - 1) += lambda_(j) * lambda_(j) / psi_(j);
        }
        a_ = s_ * w_;
    }

    void set_row(int j, int g, double lambda) {
        const int old = assign_[static_cast<std::size_t>(j)];
        if (old > 0) {
            const double c = w_(j, old - 1);
            a_.col(old - 1) -= c * s_.col(j);
            d_(old - 1) -= lambda_(j) * lambda_(j) / psi_(j);
            w_(j, old - 1) = 0.0;
        }
        assign_[static_cast<std::size_t>(j)] = g;
        lambda_(j) = lambda;
        if (g > 0) {
            const double c = lambda / psi_(j);
            w_(j, g - 1) = c;
            a_.col(g - 1) += c * s_.col(j);
            d_(g - 1) += lambda * lambda / psi_(j);
        }
    }

    // log|M| and tr(M^-1 Q) for M = M0 + s e_g e_g^T, Q = Q0 + c (e_g a^T + a e_g^T) + c^2 S_jj e_g e_g^T.
    double collapsed_term(const Eigen::MatrixXd& m0, const Eigen::MatrixXd& q0, const Eigen::VectorXd& a, int j,
                          int g, double lambda) const {
        Eigen::MatrixXd m = m0;
        Eigen::MatrixXd q = q0;
        if (g > 0) {
            const double c = lambda / psi_(j);
            m(g - 1, g - 1) += lambda * lambda / psi_(j);
            q.row(g - 1) += c * a.transpose();
            q.col(g - 1) += c * a;
            q(g - 1, g - 1) += c * c * s_(j, j);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() != Eigen::Success) throw NumericalError("bayes_efa: collapsed precision not positive definite");
        const Eigen::MatrixXd l = llt.matrixL();
        const double logdet = 2.0 * l.diagonal().array().log().sum();
        return -0.5 * n_ * logdet + 0.5 * llt.solve(q).trace();
    }

    struct LoadingProposal {
        double mean = 0.0;
        double sd = 1.0;
        double log_density(double x) const {
            const double u = (x - mean) / sd;
            return -0.5 * u * u - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
        }
    };

    // Moves task j to another slot with a fresh loading, the latent scores
    // integrated out. The loading proposal regresses z_j on the posterior mean
    // of the slot's scores given the other tasks; MH corrects the approximation.
    void reassign(int j, ChainTrace& trace) {
        const int g = assign_[static_cast<std::size_t>(j)];
        const double lambda = lambda_(j);
        set_row(j, 0, 0.0);
        --counts_[static_cast<std::size_t>(g)];

        const Eigen::VectorXd a = a_.row(j).transpose();
        Eigen::MatrixXd q0 = Eigen::MatrixXd::Zero(k_, k_);
        for (int i = 0; i < p_; ++i) {
            const int h = assign_[static_cast<std::size_t>(i)];
            if (h > 0) q0.row(h - 1) += w_(i, h - 1) * a_.row(i);
        }
        Eigen::MatrixXd m0 = omega_inv_;
        m0.diagonal() += d_;
        Eigen::LLT<Eigen::MatrixXd> llt0(m0);
        if (llt0.info() != Eigen::Success) throw NumericalError("bayes_efa: collapsed precision not positive definite");
        const Eigen::MatrixXd m0_inv = llt0.solve(Eigen::MatrixXd::Identity(k_, k_));
        const Eigen::VectorXd hz = m0_inv * a;                  // h_g . z_j
        const Eigen::MatrixXd hh = m0_inv * q0 * m0_inv;        // h_g . h_g on the diagonal

        const double tau2 = cfg_.prior_loading_variance;
        const double psi = psi_(j);
        auto proposal = [&](int slot) {
            const int c = slot - 1;
            const double precision = 1.0 / tau2 + (hh(c, c) + n_ * m0_inv(c, c)) / psi;
            return LoadingProposal{hz(c) / psi / precision, 1.0 / std::sqrt(precision)};
        };
        auto log_target = [&](int slot, double lam) {
            double v = std::log(counts_[static_cast<std::size_t>(slot)] + cfg_.assignment_concentration) +
                       collapsed_term(m0, q0, a, j, slot, lam);
            if (slot > 0) v += -0.5 * lam * lam / tau2 - 0.5 * std::log(2.0 * std::numbers::pi * tau2);
            return v;
        };

        std::uniform_int_distribution<int> pick(0, k_ - 1);
        int next = pick(rng_);
        if (next >= g) ++next;
        double next_lambda = 0.0;
        double log_ratio = 0.0;
        if (next > 0) {
            const LoadingProposal q = proposal(next);
            next_lambda = q.mean + q.sd * normal();
            log_ratio -= q.log_density(next_lambda);
        }
        if (g > 0) log_ratio += proposal(g).log_density(lambda);
        log_ratio += log_target(next, next_lambda) - log_target(g, lambda);

        ++trace.proposals;
        if (std::log(uniform()) < log_ratio) {
            ++trace.accepted;
        } else {
            next = g;
            next_lambda = lambda;
        }
        set_row(j, next, next_lambda);
        ++counts_[static_cast<std::size_t>(next)];
    }

    // Collapsed log posterior of a whole configuration given Psi and Omega, up
    // to terms that do not depend on (assignment, loadings).
    double configuration_log_target(const std::vector<int>& assign, const Eigen::VectorXd& lambda) const {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(p_, k_);
        Eigen::MatrixXd m = omega_inv_;
        std::vector<int> counts(static_cast<std::size_t>(k_ + 1), 0);
        double v = 0.0;
        for (int j = 0; j < p_; ++j) {
            const int g = assign[static_cast<std::size_t>(j)];
            ++counts[static_cast<std::size_t>(g)];
            if (g == 0) continue;
            w(j, g - 1) = lambda(j) / psi_(j);
            m(g - 1, g - 1) += lambda(j) * lambda(j) / psi_(j);
            v += -0.5 * lambda(j) * lambda(j) / cfg_.prior_loading_variance;
        }
        for (int c : counts) v += std::lgamma(c + cfg_.assignment_concentration);
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() != Eigen::Success) throw NumericalError("bayes_efa: collapsed precision not positive definite");
        const Eigen::MatrixXd l = llt.matrixL();
        const Eigen::MatrixXd q = w.transpose() * s_ * w;
        return v - n_ * l.diagonal().array().log().sum() + 0.5 * llt.solve(q).trace();
    }

    struct SlotCensus {
        std::vector<int> nonempty, splittable, empty;
    };

    SlotCensus census(const std::vector<int>& counts) const {
        SlotCensus c;
        for (int g = 1; g <= k_; ++g) {
            const int n = counts[static_cast<std::size_t>(g)];
            if (n == 0) c.empty.push_back(g);
            else c.nonempty.push_back(g);
            if (n >= 2) c.splittable.push_back(g);
        }
        return c;
    }

    // log q(split of slot a into empty slot b with a specific subset), given
    // the census of the pre-split state; a holds n tasks before the split.
    static double log_split_probability(const SlotCensus& c, int n) {
        return std::log(0.5) - std::log(static_cast<double>(c.splittable.size())) -
               std::log(static_cast<double>(c.empty.size())) - std::log(std::ldexp(1.0, n) - 2.0);
    }

    static double log_merge_probability(const SlotCensus& c) {
        const double m = static_cast<double>(c.nonempty.size());
        return std::log(0.5) - std::log(m * (m - 1.0));
    }

    // Merges two occupied slots or splits one into an empty slot. Loadings of
    // the moved tasks are rescaled so their standardized value is unchanged.
    void split_merge() {
        const SlotCensus now = census(counts_);
        const bool merge = uniform() < 0.5;
        std::vector<int> assign = assign_;
        Eigen::VectorXd lambda = lambda_;
        double log_ratio = 0.0;
        if (merge) {
            if (now.nonempty.size() < 2) return;
            std::uniform_int_distribution<std::size_t> pick(0, now.nonempty.size() - 1);
            const int a = now.nonempty[pick(rng_)];
            int b = a;
            while (b == a) b = now.nonempty[pick(rng_)];
            const double scale = std::sqrt(omega_(b - 1, b - 1) / omega_(a - 1, a - 1));
            int moved = 0;
            for (int j = 0; j < p_; ++j)
                if (assign[static_cast<std::size_t>(j)] == b) {
                    assign[static_cast<std::size_t>(j)] = a;
                    lambda(j) *= scale;
                    ++moved;
                }
            std::vector<int> counts = counts_;
            counts[static_cast<std::size_t>(a)] += moved;
            counts[static_cast<std::size_t>(b)] = 0;
            log_ratio += log_split_probability(census(counts), counts[static_cast<std::size_t>(a)]) -
                         log_merge_probability(now) + moved * std::log(scale);
        } else {
            if (now.splittable.empty() || now.empty.empty()) return;
            std::uniform_int_distribution<std::size_t> pick_a(0, now.splittable.size() - 1);
            std::uniform_int_distribution<std::size_t> pick_b(0, now.empty.size() - 1);
            const int a = now.splittable[pick_a(rng_)];
            const int b = now.empty[pick_b(rng_)];
            const double scale = std::sqrt(omega_(b - 1, b - 1) / omega_(a - 1, a - 1));
            const int n = counts_[static_cast<std::size_t>(a)];
            std::vector<int> members;
            for (int j = 0; j < p_; ++j)
                if (assign[static_cast<std::size_t>(j)] == a) members.push_back(j);
            std::vector<bool> move(members.size());
            int moved = 0;
            do {
                moved = 0;
                for (std::size_t i = 0; i < members.size(); ++i) {
                    move[i] = uniform() < 0.5;
                    moved += move[i] ? 1 : 0;
                }
            } while (moved == 0 || moved == n);
            for (std::size_t i = 0; i < members.size(); ++i)
                if (move[i]) {
                    assign[static_cast<std::size_t>(members[i])] = b;
                    lambda(members[i]) /= scale;
                }
            std::vector<int> counts = counts_;
            counts[static_cast<std::size_t>(a)] -= moved;
            counts[static_cast<std::size_t>(b)] = moved;
            log_ratio += log_merge_probability(census(counts)) - log_split_probability(now, n) -
                         moved * std::log(scale);
        }
        log_ratio += configuration_log_target(assign, lambda) - configuration_log_target(assign_, lambda_);
        if (std::log(uniform()) < log_ratio) {
            assign_ = std::move(assign);
            lambda_ = lambda;
            counts_.assign(static_cast<std::size_t>(k_ + 1), 0);
            for (int g : assign_) ++counts_[static_cast<std::size_t>(g)];
        }
    }

    void draw_loading(int j) {
        const int g = assign_[static_cast<std::size_t>(j)];
        if (g == 0) {
            lambda_(j) = 0.0;
            return;
        }
        const double psi = psi_(j);
        const double precision = 1.0 / cfg_.prior_loading_variance + eta_sq_(g - 1) / psi;
        const double mean = eta_.col(g - 1).dot(z_.col(j)) / psi / precision;
        lambda_(j) = mean + normal() / std::sqrt(precision);
    }

    void draw_uniqueness(int j) {
        const int g = assign_[static_cast<std::size_t>(j)];
        double rss = col_sq_(j);
        if (g > 0) {
            const double l = lambda_(j);
            rss += -2.0 * l * eta_.col(g - 1).dot(z_.col(j)) + l * l * eta_sq_(g - 1);
        }
        rss = std::max(rss, 0.0);
        std::gamma_distribution<double> gamma(cfg_.uniqueness_shape + 0.5 * n_,
                                              1.0 / (cfg_.uniqueness_scale + 0.5 * rss));
        psi_(j) = 1.0 / gamma(rng_);
    }

    void draw_latent() {
        Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(p_, k_);
        Eigen::MatrixXd precision = omega_inv_;
        for (int j = 0; j < p_; ++j) {
            const int g = assign_[static_cast<std::size_t>(j)];
            if (g == 0) continue;
            weights(j, g - 1) = lambda_(j) / psi_(j);
            precision(g - 1, g - 1) += lambda_(j) * lambda_(j) / psi_(j);
        }
        precision = 0.5 * (precision + precision.transpose());
        Eigen::LLT<Eigen::MatrixXd> llt(precision);
        if (llt.info() != Eigen::Success) throw NumericalError("bayes_efa: latent precision not positive definite");
        const Eigen::MatrixXd h = z_ * weights;                  // n x K
        const Eigen::MatrixXd mean = llt.solve(h.transpose());   // K x n
        Eigen::MatrixXd u(k_, n_);
        for (int i = 0; i < n_; ++i)
            for (int g = 0; g < k_; ++g) u(g, i) = normal();
        const Eigen::MatrixXd noise = llt.matrixU().solve(u);   // L^-T u
        eta_ = (mean + noise).transpose();
        eta_sq_ = eta_.colwise().squaredNorm().transpose();
    }

    void draw_omega() {
        Eigen::MatrixXd scale = (cfg_.omega_extra_dof - 1.0) * Eigen::MatrixXd::Identity(k_, k_) + eta_.transpose() * eta_;
        scale = 0.5 * (scale + scale.transpose());
        const double dof = omega_dof_ + n_;
        // Omega^-1 ~ Wishart(dof, scale^-1), Bartlett decomposition.
        const Eigen::MatrixXd scale_inv = scale.inverse();
        Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (scale_inv + scale_inv.transpose()));
        if (llt.info() != Eigen::Success) throw NumericalError("bayes_efa: Wishart scale not positive definite");
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k_, k_);
        for (int i = 0; i < k_; ++i) {
            std::gamma_distribution<double> chi2_half(0.5 * (dof - i), 1.0);
            a(i, i) = std::sqrt(2.0 * chi2_half(rng_));
            for (int c = 0; c < i; ++c) a(i, c) = normal();
        }
        const Eigen::MatrixXd la = llt.matrixL() * a;
        omega_inv_ = la * la.transpose();
        omega_ = omega_inv_.inverse();
        omega_ = 0.5 * (omega_ + omega_.transpose());
    }

    void sweep(ChainTrace& trace) {
        if (!cfg_.fixed_assignment) {
            split_merge();
            refresh_caches();
            for (int j = 0; j < p_; ++j) reassign(j, trace);
        }
        draw_latent();
        for (int j = 0; j < p_; ++j) {
            draw_loading(j);
            draw_uniqueness(j);
        }
        draw_omega();
    }

    void record(ChainTrace& trace) {
        // Canonical labels: active slots (>= 2 tasks) ordered by their smallest task index.
        std::vector<int> label(static_cast<std::size_t>(k_ + 1), 0);
        int next_label = 0;
        for (int j = 0; j < p_; ++j) {
            const int g = assign_[static_cast<std::size_t>(j)];
            if (g == 0 || counts_[static_cast<std::size_t>(g)] < 2 || label[static_cast<std::size_t>(g)] != 0) continue;
            label[static_cast<std::size_t>(g)] = ++next_label;
        }
        std::vector<double> sign(static_cast<std::size_t>(k_ + 1), 0.0);
        for (int j = 0; j < p_; ++j) sign[static_cast<std::size_t>(assign_[static_cast<std::size_t>(j)])] += lambda_(j);

        trace.k.push_back(next_label);
        trace.mean_uniqueness.push_back(psi_.mean());
        for (int j = 0; j < p_; ++j) {
            const int g = assign_[static_cast<std::size_t>(j)];
            const int l = label[static_cast<std::size_t>(g)];
            trace.assignment_counts(j, l) += 1.0;
            if (l == 0) continue;
            const double s = sign[static_cast<std::size_t>(g)] < 0.0 ? -1.0 : 1.0;
            // correlation metric: lambda sqrt(omega) / sqrt(lambda^2 omega + psi)
            const double common = lambda_(j) * lambda_(j) * omega_(g - 1, g - 1);
            trace.loadings[static_cast<std::size_t>(j)].emplace_back(
                l, s * lambda_(j) * std::sqrt(omega_(g - 1, g - 1)) / std::sqrt(common + psi_(j)));
        }
    }

    const Eigen::MatrixXd& z_;
    const BayesConfig& cfg_;
    int n_, p_, k_;
    double omega_dof_ = 0.0;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    Eigen::VectorXd col_sq_;
    std::vector<int> assign_;
    std::vector<int> counts_;
    Eigen::VectorXd lambda_, psi_, eta_sq_, d_;
    Eigen::MatrixXd eta_, omega_, omega_inv_, s_, w_, a_;
};

double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

void BayesConfig::validate() const {
    if (k_max < 1) throw UsageError("bayes: k_max must be >= 1");
    if (chains < 1) throw UsageError("bayes: chains must be >= 1");
    if (thin < 1) throw UsageError("bayes: thin must be >= 1");
    if (burn_in < 0 || burn_in >= iterations) throw UsageError("bayes: need 0 <= burn_in < iterations");
    if (!(prior_loading_variance > 0.0) || !(uniqueness_shape > 0.0) || !(uniqueness_scale > 0.0) ||
        !(assignment_concentration > 0.0))
        throw UsageError("bayes: prior parameters must be positive");
    if (!(omega_extra_dof > 1.0)) throw UsageError("bayes: omega_extra_dof must exceed 1");
    if (!(credible_level > 0.0 && credible_level < 1.0)) throw UsageError("bayes: credible_level must lie in (0, 1)");
}

Eigen::MatrixXd BayesPosterior::loading_matrix() const {
    int k = 0;
    for (const auto& t : tasks) k = std::max(k, t.modal_factor);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tasks.size()), k);
    for (std::size_t j = 0; j < tasks.size(); ++j)
        if (tasks[j].modal_factor > 0) out(static_cast<Eigen::Index>(j), tasks[j].modal_factor - 1) = tasks[j].loading_mean;
    return out;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
    std::vector<std::vector<double>> halves;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        if (half < 2) continue;
        halves.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        halves.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    if (halves.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double n = static_cast<double>(halves.front().size());
    const double m = static_cast<double>(halves.size());
    std::vector<double> means;
    double w = 0.0;
    for (const auto& h : halves) {
        const double mean = std::accumulate(h.begin(), h.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : h) ss += (v - mean) * (v - mean);
        means.push_back(mean);
        w += ss / (n - 1.0);
    }
    w /= m;
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    b *= n / (m - 1.0);
    if (w == 0.0) return b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    const double var_plus = (n - 1.0) / n * w + b / n;
    return std::sqrt(var_plus / w);
}

BayesPosterior bayes_efa(const PerformanceMatrix& m, const BayesConfig& cfg) {
    cfg.validate();
    if (!m.complete()) throw DataError("bayes_efa: matrix has missing cells (impute first)");
    if (m.n_systems() < 5) throw DataError("bayes_efa: need at least 5 systems");
    const int p = static_cast<int>(m.n_tasks());
    const int k = cfg.k_max;
    if (cfg.fixed_assignment) {
        if (static_cast<int>(cfg.fixed_assignment->size()) != p)
            throw UsageError("bayes_efa: fixed_assignment length must equal the task count");
        for (int g : *cfg.fixed_assignment)
            if (g < 0 || g > k) throw UsageError("bayes_efa: fixed_assignment slot out of range");
    }

    std::vector<ChainTrace> traces(static_cast<std::size_t>(cfg.chains));
    {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.chains));
        for (int c = 0; c < cfg.chains; ++c)
            workers.emplace_back([&, c] {
                try {
                    traces[static_cast<std::size_t>(c)] = Chain(m.scores, cfg, c).run();
                } catch (...) {
                    errors[static_cast<std::size_t>(c)] = std::current_exception();
                }
            });
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    BayesPosterior bp;
    bp.labels = m.tasks;
    bp.k_distribution.assign(static_cast<std::size_t>(k + 1), 0.0);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(p, k + 1);
    std::vector<std::vector<double>> k_chains, psi_chains;
    for (const auto& t : traces) {
        for (double v : t.k) bp.k_distribution[static_cast<std::size_t>(v)] += 1.0;
        counts += t.assignment_counts;
        bp.draws += static_cast<int>(t.k.size());
        k_chains.push_back(t.k);
        psi_chains.push_back(t.mean_uniqueness);
        bp.diagnostics.acceptance_rates.push_back(
            t.proposals > 0 ? static_cast<double>(t.accepted) / static_cast<double>(t.proposals) : 0.0);
    }
    if (bp.draws == 0) throw UsageError("bayes_efa: no draws retained after burn-in");
    for (auto& v : bp.k_distribution) v /= bp.draws;
    bp.modal_k = static_cast<int>(std::max_element(bp.k_distribution.begin(), bp.k_distribution.end()) -
                                  bp.k_distribution.begin());

    const double tail = (1.0 - cfg.credible_level) / 2.0;
    for (int j = 0; j < p; ++j) {
        TaskPosterior tp;
        tp.distribution.resize(static_cast<std::size_t>(k + 1));
        for (int l = 0; l <= k; ++l) tp.distribution[static_cast<std::size_t>(l)] = counts(j, l) / bp.draws;
        int best = 0;
        for (int l = 1; l <= k; ++l)
            if (best == 0 || tp.distribution[static_cast<std::size_t>(l)] > tp.distribution[static_cast<std::size_t>(best)])
                best = l;
        tp.modal_mass = tp.distribution[static_cast<std::size_t>(best)];
        tp.modal_factor = tp.modal_mass >= cfg.assignment_threshold ? best : 0;

        std::vector<double> draws;
        for (const auto& t : traces)
            for (const auto& [l, v] : t.loadings[static_cast<std::size_t>(j)])
                if (l == best) draws.push_back(v);
        if (!draws.empty()) {
            tp.loading_mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
            std::sort(draws.begin(), draws.end());
            tp.loading_lo = quantile_sorted(draws, tail);
            tp.loading_hi = quantile_sorted(draws, 1.0 - tail);
        }
        bp.tasks.push_back(std::move(tp));
    }

    const double rhat_k = split_rhat(k_chains);
    bp.diagnostics.split_rhat["k"] = rhat_k;
    bp.diagnostics.split_rhat["mean_uniqueness"] = split_rhat(psi_chains);
    bp.diagnostics.non_mixing = std::isfinite(rhat_k) ? rhat_k > cfg.rhat_limit : std::isinf(rhat_k);
    return bp;
}

AgreementReport compare_with_frequentist(const BayesPosterior& bp, const RotatedSolution& rs, double threshold) {
    if (bp.labels != rs.labels) throw UsageError("compare_with_frequentist: task sets differ");
    const Eigen::MatrixXd bayes = bp.loading_matrix();
    const Eigen::MatrixXd& freq = rs.pattern;
    const Eigen::Index kb = bayes.cols();
    const Eigen::Index kf = freq.cols();

    AgreementReport rep;
    rep.bayes_to_frequentist.assign(static_cast<std::size_t>(kb), 0);
    std::vector<bool> used_b(static_cast<std::size_t>(kb), false), used_f(static_cast<std::size_t>(kf), false);
    for (Eigen::Index step = 0; step < std::min(kb, kf); ++step) {
        double best = -1.0;
        Eigen::Index bi = -1, fi = -1;
        for (Eigen::Index b = 0; b < kb; ++b) {
            if (used_b[static_cast<std::size_t>(b)] || bayes.col(b).norm() == 0.0) continue;
            for (Eigen::Index f = 0; f < kf; ++f) {
                if (used_f[static_cast<std::size_t>(f)]) continue;
                const double c = std::abs(bayes.col(b).dot(freq.col(f))) / (bayes.col(b).norm() * freq.col(f).norm());
                if (c > best) {
                    best = c;
                    bi = b;
                    fi = f;
                }
            }
        }
        if (bi < 0) break;
        used_b[static_cast<std::size_t>(bi)] = used_f[static_cast<std::size_t>(fi)] = true;
        rep.bayes_to_frequentist[static_cast<std::size_t>(bi)] = static_cast<int>(fi) + 1;
    }

    int agree = 0;
    for (std::size_t j = 0; j < bp.tasks.size(); ++j) {
        Eigen::Index arg = 0;
        const double top = freq.row(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff(&arg);
        const int freq_factor = top >= threshold ? static_cast<int>(arg) + 1 : 0;
        const int label = bp.tasks[j].modal_factor;
        const int mapped = label > 0 ? rep.bayes_to_frequentist[static_cast<std::size_t>(label - 1)] : 0;
        if (mapped == freq_factor) {
            ++agree;
        } else {
            rep.disagreements.push_back({bp.labels[j], mapped, freq_factor});
        }
    }
    rep.agreement = bp.tasks.empty() ? 1.0 : static_cast<double>(agree) / static_cast<double>(bp.tasks.size());
    return rep;
}

}  // namespace capfa
