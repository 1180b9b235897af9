#include "drdid/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drdid/errors.hpp"
#include "drdid/rng.hpp"

namespace drdid {

namespace {

double log1pexp(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

Eigen::VectorXd clamp_probs(Eigen::VectorXd p) {
    for (Eigen::Index i = 0; i < p.size(); ++i)
        p[i] = std::min(1.0 - kProbClamp, std::max(kProbClamp, p[i]));
    return p;
}

void check_full_rank(const Eigen::MatrixXd& X) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols())
        throw SingularInformation("design matrix is rank deficient");
}

/// Weighted least-squares Newton step: solves (X'WX) delta = X' r.
/// The normal equations are equilibrated (scaled by the inverse square roots
/// of the diagonal) before factorization so the rank test is insensitive to
/// column scale — raw covariates can differ by many orders of magnitude.
/// Throws SingularInformation on rank deficiency.
Eigen::VectorXd wls_step(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                         const Eigen::VectorXd& r) {
    Eigen::MatrixXd WX = w.cwiseMax(1e-10).asDiagonal() * X;
    Eigen::MatrixXd A(X.cols(), X.cols());
    A.noalias() = X.transpose() * WX;
    const Eigen::VectorXd s = A.diagonal().cwiseMax(0.0).cwiseSqrt();
    if ((s.array() <= 0.0).any())
        throw SingularInformation("weighted information matrix is rank deficient");
    const Eigen::VectorXd si = s.cwiseInverse();
    Eigen::MatrixXd As = si.asDiagonal() * A * si.asDiagonal();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(As);
    lu.setThreshold(1e-10);
    if (lu.rank() < X.cols())
        throw SingularInformation("weighted information matrix is rank deficient");
    return si.asDiagonal() * lu.solve(si.asDiagonal() * (X.transpose() * r));
}

} // namespace

bool& glm_record_trace() {
    static bool enabled = false;
    return enabled;
}

double digamma(double x) {
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double x1 = 1.0 / x, x2 = x1 * x1;
    result += std::log(x) - 0.5 * x1 -
              x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 / 252.0));
    return result;
}

namespace {

double trigamma(double x) {
    double result = 0.0;
    while (x < 6.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double x1 = 1.0 / x, x2 = x1 * x1;
    result += x1 * (1.0 + x1 * (0.5 + x1 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 / 42.0))));
    return result;
}

} // namespace

Eigen::VectorXd LogisticFit::predict(const Eigen::MatrixXd& design) const {
    Eigen::VectorXd eta = design * coefficients;
    Eigen::VectorXd p(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        p[i] = 1.0 / (1.0 + std::exp(-eta[i]));
    return clamp_probs(std::move(p));
}

Eigen::VectorXd NegBinFit::predict_mean(const Eigen::MatrixXd& design) const {
    return (design * coefficients).array().exp().matrix();
}

double logistic_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                       const Eigen::VectorXd& coef) {
    Eigen::ArrayXd eta = (design * coef).array();
    // label*eta - log(1+exp(eta)) = label*eta - max(eta,0) - log1p(exp(-|eta|))
    return (labels.array() * eta - eta.max(0.0) -
            (-eta.abs()).exp().log1p())
        .sum();
}

Eigen::VectorXd logistic_score(const Eigen::MatrixXd& design,
                               const Eigen::VectorXd& labels,
                               const Eigen::VectorXd& coef) {
    Eigen::VectorXd eta = design * coef;
    Eigen::VectorXd p(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        p[i] = 1.0 / (1.0 + std::exp(-eta[i]));
    return design.transpose() * (labels - p);
}

double negbin_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                     const Eigen::VectorXd& coef, double dispersion) {
    Eigen::VectorXd eta = design * coef;
    const double phi = dispersion;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double y = counts[i];
        const double m = std::exp(eta[i]);
        ll += std::lgamma(y + phi) - std::lgamma(phi) - std::lgamma(y + 1.0) +
              y * eta[i] + phi * std::log(phi) - (y + phi) * std::log(m + phi);
    }
    return ll;
}

Eigen::VectorXd negbin_score(const Eigen::MatrixXd& design,
                             const Eigen::VectorXd& counts,
                             const Eigen::VectorXd& coef, double dispersion) {
    Eigen::VectorXd eta = design * coef;
    const double phi = dispersion;
    Eigen::VectorXd resid(eta.size());
    double s_phi = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double y = counts[i];
        const double m = std::exp(eta[i]);
        resid[i] = (y - m) * phi / (m + phi);
        s_phi += digamma(y + phi) - digamma(phi) + std::log(phi / (m + phi)) + 1.0 -
                 (y + phi) / (m + phi);
    }
    Eigen::VectorXd score(design.cols() + 1);
    score.head(design.cols()) = design.transpose() * resid;
    score[design.cols()] = s_phi;
    return score;
}

double poisson_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                      const Eigen::VectorXd& coef) {
    Eigen::VectorXd eta = design * coef;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        ll += counts[i] * eta[i] - std::exp(eta[i]) - std::lgamma(counts[i] + 1.0);
    return ll;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                         double tol, int max_iter, const Eigen::VectorXd* start) {
    const Eigen::Index n = design.rows(), q = design.cols();
    if (labels.size() != n)
        throw DimensionMismatch("label length does not match design rows");
    if (q >= n)
        throw SingularInformation("more parameters than observations");
    const double n_ones = labels.sum();
    if (n_ones == 0.0 || n_ones == static_cast<double>(n))
        throw DegenerateDesign("labels contain a single class");

    LogisticFit fit;
    fit.coefficients = start ? *start : Eigen::VectorXd::Zero(q);

    double ll = logistic_loglik(design, labels, fit.coefficients);
    if (glm_record_trace()) fit.loglik_trace.push_back(ll);
    int steps = 0;
    for (int iter = 1; iter <= max_iter; ++iter) {
        fit.iterations = iter;
        Eigen::ArrayXd eta = (design * fit.coefficients).array();
        Eigen::VectorXd p = (1.0 / (1.0 + (-eta).exp())).matrix();
        Eigen::VectorXd w = (p.array() * (1.0 - p.array())).matrix();
        Eigen::VectorXd score = design.transpose() * (labels - p);
        if (score.norm() < tol) {
            if (steps == 0) check_full_rank(design);
            // a saturated likelihood has a vanishing score too; do not call
            // that convergence
            const bool pinned = p.minCoeff() < kProbClamp ||
                                p.maxCoeff() > 1.0 - kProbClamp;
            if (pinned && fit.coefficients.cwiseAbs().maxCoeff() > 10.0) {
                fit.separation_detected = true;
                break;
            }
            fit.converged = true;
            break;
        }
        ++steps;
        Eigen::VectorXd delta = wls_step(design, w, labels - p);

        // step-halving keeps the log-likelihood monotone
        double step = 1.0;
        Eigen::VectorXd cand;
        double ll_new;
        while (true) {
            cand = fit.coefficients + step * delta;
            ll_new = logistic_loglik(design, labels, cand);
            if (ll_new >= ll - 1e-12 * (1.0 + std::abs(ll)) || step < 1e-10)
                break;
            step *= 0.5;
        }
        fit.coefficients = cand;
        ll = ll_new;
        if (glm_record_trace()) fit.loglik_trace.push_back(ll);
    }
    fit.log_likelihood = ll;

    if (!fit.converged) {
        // diverging coefficients with fitted values pinned at the clamp
        Eigen::VectorXd p = fit.predict(design);
        const bool pinned = (p.array() <= kProbClamp * 2).any() ||
                            (p.array() >= 1.0 - kProbClamp * 2).any();
        if (pinned && fit.coefficients.cwiseAbs().maxCoeff() > 10.0)
            fit.separation_detected = true;
    }
    return fit;
}

NegBinFit fit_poisson(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                      double tol, int max_iter, const Eigen::VectorXd* start) {
    const Eigen::Index n = design.rows(), q = design.cols();
    if (counts.size() != n)
        throw DimensionMismatch("count length does not match design rows");

    NegBinFit fit;
    fit.family = CountFamily::poisson;
    fit.dispersion = std::numeric_limits<double>::infinity();
    if (start) {
        fit.coefficients = *start;
    } else {
        // start at the intercept-only solution when an intercept column exists
        fit.coefficients = Eigen::VectorXd::Zero(q);
        const double ybar = counts.mean();
        if (ybar > 0.0) {
            for (Eigen::Index j = 0; j < q; ++j) {
                if ((design.col(j).array() == 1.0).all()) {
                    fit.coefficients[j] = std::log(ybar);
                    break;
                }
            }
        }
    }

    double ll = poisson_loglik(design, counts, fit.coefficients);
    int steps = 0;
    for (int iter = 1; iter <= max_iter; ++iter) {
        fit.iterations = iter;
        Eigen::VectorXd m = (design * fit.coefficients).array().exp().matrix();
        Eigen::VectorXd score = design.transpose() * (counts - m);
        if (score.norm() < tol) {
            if (steps == 0) check_full_rank(design);
            fit.converged = true;
            break;
        }
        ++steps;
        Eigen::VectorXd delta = wls_step(design, m, counts - m);
        double step = 1.0;
        Eigen::VectorXd cand;
        double ll_new;
        while (true) {
            cand = fit.coefficients + step * delta;
            ll_new = poisson_loglik(design, counts, cand);
            if (ll_new >= ll - 1e-12 * (1.0 + std::abs(ll)) || step < 1e-10)
                break;
            step *= 0.5;
        }
        fit.coefficients = cand;
        ll = ll_new;
        if (glm_record_trace()) fit.loglik_trace.push_back(ll);
    }
    fit.log_likelihood = ll;
    return fit;
}

namespace {

/// Multiplicities of the distinct count values. Counts are small integers, so
/// the digamma/lgamma sums collapse to a handful of evaluations.
struct CountGroups {
    std::vector<std::pair<double, double>> value_mult;  // (y, multiplicity)
    double n = 0.0;

    explicit CountGroups(const Eigen::VectorXd& counts) {
        std::vector<double> sorted(counts.data(), counts.data() + counts.size());
        std::sort(sorted.begin(), sorted.end());
        for (double y : sorted) {
            if (!value_mult.empty() && value_mult.back().first == y)
                value_mult.back().second += 1.0;
            else
                value_mult.emplace_back(y, 1.0);
        }
        n = static_cast<double>(counts.size());
    }

    double sum_digamma(double phi) const {
        double s = 0.0;
        for (const auto& [y, mult] : value_mult) s += mult * digamma(y + phi);
        return s - n * digamma(phi);
    }

    double sum_trigamma(double phi) const {
        double s = 0.0;
        for (const auto& [y, mult] : value_mult) s += mult * trigamma(y + phi);
        return s - n * trigamma(phi);
    }

    /// sum of lgamma(y+phi) - lgamma(phi) - lgamma(y+1) over units.
    double sum_lgamma(double phi) const {
        double s = 0.0;
        for (const auto& [y, mult] : value_mult)
            s += mult * (std::lgamma(y + phi) - std::lgamma(y + 1.0));
        return s - n * std::lgamma(phi);
    }
};

/// Profile score in phi at fixed coefficients.
double dispersion_score(const CountGroups& groups, const Eigen::VectorXd& counts,
                        const Eigen::VectorXd& mean, double phi) {
    Eigen::ArrayXd mp = mean.array() + phi;
    return groups.sum_digamma(phi) + groups.n * (std::log(phi) + 1.0) -
           (mp.log() + (counts.array() + phi) / mp).sum();
}

double dispersion_score_deriv(const CountGroups& groups, const Eigen::VectorXd& counts,
                              const Eigen::VectorXd& mean, double phi) {
    double d = groups.sum_trigamma(phi) + groups.n / phi;
    for (Eigen::Index i = 0; i < counts.size(); ++i) {
        const double mp = mean[i] + phi;
        d += -2.0 / mp + (counts[i] + phi) / (mp * mp);
    }
    return d;
}

constexpr double kPhiMin = 1e-6;

/// Maximizes the profile likelihood over phi. Returns the maximizer, or +inf
/// when the score stays positive up to kPoissonDispersion (Poisson limit).
double update_dispersion(const CountGroups& groups, const Eigen::VectorXd& counts,
                         const Eigen::VectorXd& mean, double phi, double tol,
                         int max_iter) {
    // Safeguarded Newton in log(phi) from the warm start; the bracket tightens
    // as signs are observed and a step outside it falls back to geometric
    // bisection. Score > 0 means the maximizer lies above x.
    double lo = kPhiMin, hi = kPoissonDispersion;
    double x = std::clamp(phi, kPhiMin, kPoissonDispersion);
    bool probed_hi = false, probed_lo = false;
    for (int it = 0; it < max_iter; ++it) {
        const double s = dispersion_score(groups, counts, mean, x);
        if (std::abs(s) < tol) return x;
        if (s > 0.0) {
            lo = x;
            if (x >= kPoissonDispersion) return std::numeric_limits<double>::infinity();
            if (hi >= kPoissonDispersion && !probed_hi) {
                probed_hi = true;
                if (dispersion_score(groups, counts, mean, kPoissonDispersion) >= 0.0)
                    return std::numeric_limits<double>::infinity();
            }
        } else {
            hi = x;
            if (x <= kPhiMin) return kPhiMin;
            if (lo <= kPhiMin && !probed_lo) {
                probed_lo = true;
                if (dispersion_score(groups, counts, mean, kPhiMin) <= 0.0)
                    return kPhiMin;
            }
        }
        const double d = dispersion_score_deriv(groups, counts, mean, x);
        // Newton on theta = log(phi): g = s*phi, g' = (d*phi + s)*phi
        const double g = s * x;
        const double gp = (d * x + s) * x;
        double x_new = gp < 0.0 ? x * std::exp(-g / gp) : 0.0;
        if (!(x_new > lo && x_new < hi)) x_new = std::sqrt(lo * hi);
        x = x_new;
    }
    return x;
}

/// negbin log-likelihood minus its phi-only terms; cheap enough for the
/// step-halving loop (no lgamma calls).
double profile_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                      const Eigen::VectorXd& coef, double phi) {
    Eigen::ArrayXd eta = (design * coef).array();
    return (counts.array() * eta -
            (counts.array() + phi) * (eta.exp() + phi).log())
        .sum();
}

bool is_count_vector(const Eigen::VectorXd& counts) {
    for (Eigen::Index i = 0; i < counts.size(); ++i) {
        if (counts[i] < 0.0) return false;
        if (std::abs(counts[i] - std::round(counts[i])) > 1e-8) return false;
    }
    return true;
}

} // namespace

NegBinFit fit_negbin(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                     double tol, int max_iter, const NegBinFit* start,
                     std::optional<double> fixed_dispersion) {
    const Eigen::Index n = design.rows(), q = design.cols();
    if (counts.size() != n)
        throw DimensionMismatch("count length does not match design rows");
    if (!is_count_vector(counts))
        throw SchemaViolation("negative binomial response must be non-negative integers");
    if (q >= n)
        throw SingularInformation("more parameters than observations");

    // initial coefficients and dispersion
    Eigen::VectorXd coef;
    double phi;
    if (start && start->coefficients.size() == q) {
        coef = start->coefficients;
        phi = std::isfinite(start->dispersion) ? start->dispersion : kPoissonDispersion;
    } else {
        NegBinFit pois = fit_poisson(design, counts, std::max(tol, 1e-6), max_iter);
        coef = pois.coefficients;
        Eigen::VectorXd m = pois.predict_mean(design);
        const double num = m.squaredNorm();
        const double den = ((counts - m).array().square() - m.array()).sum();
        phi = den > 0.0 ? std::clamp(num / den, 1e-2, 1e7) : kPoissonDispersion;
    }
    if (fixed_dispersion) phi = *fixed_dispersion;

    NegBinFit fit;
    fit.coefficients = coef;
    int total_iter = 0;
    int steps = 0;
    bool poisson_limit = false;
    const CountGroups groups(counts);

    for (int outer = 0; outer < max_iter; ++outer) {
        // Newton on coefficients at the current dispersion; the observed
        // information weight phi*m*(y+phi)/(m+phi)^2 is positive, so the step
        // is always a descent direction and convergence is quadratic
        Eigen::ArrayXd eta = (design * fit.coefficients).array();
        Eigen::ArrayXd mean = eta.exp();
        double ll =
            (counts.array() * eta - (counts.array() + phi) * (mean + phi).log()).sum();
        for (int inner = 0; inner < 25; ++inner) {
            ++total_iter;
            Eigen::ArrayXd mp = mean + phi;
            Eigen::VectorXd resid = ((counts.array() - mean) * phi / mp).matrix();
            Eigen::VectorXd w =
                (phi * mean * (counts.array() + phi) / (mp * mp)).matrix();
            Eigen::VectorXd score = design.transpose() * resid;
            if (score.norm() < tol) {
                if (steps == 0) check_full_rank(design);
                break;
            }
            ++steps;
            Eigen::VectorXd delta = wls_step(design, w, resid);
            double step = 1.0;
            Eigen::VectorXd cand;
            double ll_new;
            while (true) {
                cand = fit.coefficients + step * delta;
                eta = (design * cand).array();
                mean = eta.exp();
                ll_new = (counts.array() * eta -
                          (counts.array() + phi) * (mean + phi).log())
                             .sum();
                if (ll_new >= ll - 1e-12 * (1.0 + std::abs(ll)) || step < 1e-10)
                break;
                step *= 0.5;
            }
            fit.coefficients = cand;
            ll = ll_new;
            if (glm_record_trace())
                fit.loglik_trace.push_back(
                    negbin_loglik(design, counts, fit.coefficients, phi));
        }

        Eigen::VectorXd m = mean.matrix();
        if (!fixed_dispersion) {
            const double phi_new = update_dispersion(groups, counts, m, phi, tol, 100);
            // dispersions this large are numerically indistinguishable from
            // the Poisson limit
            if (std::isinf(phi_new) || phi_new > 1e7) {
                poisson_limit = true;
                break;
            }
            phi = phi_new;
            if (glm_record_trace())
                fit.loglik_trace.push_back(
                    negbin_loglik(design, counts, fit.coefficients, phi));
        }

        Eigen::VectorXd resid =
            ((counts.array() - m.array()) * phi / (m.array() + phi)).matrix();
        const double coef_norm = (design.transpose() * resid).norm();
        const double phi_norm =
            fixed_dispersion ? 0.0
                             : std::abs(dispersion_score(groups, counts, m, phi));
        if (coef_norm < tol && phi_norm < tol) {
            fit.converged = true;
            break;
        }
    }

    if (poisson_limit) {
        // no overdispersion relative to Poisson; refit in the limit
        NegBinFit pois =
            fit_poisson(design, counts, tol, max_iter, &fit.coefficients);
        pois.iterations = total_iter + pois.iterations;
        return pois;
    }

    fit.iterations = total_iter;
    fit.dispersion = phi;
    fit.family = phi >= kPoissonDispersion ? CountFamily::poisson : CountFamily::negbin;
    fit.log_likelihood = groups.sum_lgamma(phi) + groups.n * phi * std::log(phi) +
                         profile_loglik(design, counts, fit.coefficients, phi);
    return fit;
}

std::vector<double> power_order_cv_mse(const PanelDataset& data,
                                       const FeatureSpec& base_spec,
                                       const std::vector<int>& orders,
                                       const CvConfig& cv) {
    const int n = data.n();
    const Eigen::VectorXd labels = data.treated();

    // fold assignment
    std::vector<int> fold(static_cast<std::size_t>(n));
    int n_folds;
    if (cv.method == CrossValidation::loocv) {
        n_folds = n;
        std::iota(fold.begin(), fold.end(), 0);
    } else {
        n_folds = std::min(cv.k, n);
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        auto rng = substream(cv.seed, {fnv1a("cv-folds")});
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < n; ++i)
            fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i % n_folds;
    }

    std::vector<double> mse;
    for (int order : orders) {
        if (order < 1 || order > 5)
            throw SchemaViolation("candidate power order must lie in [1,5]");
        FeatureSpec spec = base_spec;
        for (auto& [name, l] : spec.power_orders) l = order;
        DesignMatrix design = expand_features(data, spec);
        const Eigen::Index q = design.values.cols();

        double sse = 0.0;
        bool eligible = true;
        Eigen::VectorXd warm;
        try {
            warm = fit_logistic(design.values, labels).coefficients;
        } catch (const SingularInformation&) {
            eligible = false;
        }

        Eigen::MatrixXd Xtr(n, q);
        Eigen::VectorXd ytr(n);
        for (int f = 0; f < n_folds && eligible; ++f) {
            int ntr = 0;
            for (int i = 0; i < n; ++i) {
                if (fold[static_cast<std::size_t>(i)] == f) continue;
                Xtr.row(ntr) = design.values.row(i);
                ytr[ntr] = labels[i];
                ++ntr;
            }
            try {
                LogisticFit lf = fit_logistic(Xtr.topRows(ntr), ytr.head(ntr),
                                              1e-8, 100,
                                              warm.size() == q ? &warm : nullptr);
                if (lf.separation_detected) {
                    eligible = false;
                    break;
                }
                for (int i = 0; i < n; ++i) {
                    if (fold[static_cast<std::size_t>(i)] != f) continue;
                    Eigen::VectorXd p = lf.predict(design.values.row(i));
                    const double err = p[0] - labels[i];
                    sse += err * err;
                }
            } catch (const Error&) {
                eligible = false;
            }
        }
        mse.push_back(eligible ? sse / n : std::numeric_limits<double>::quiet_NaN());
    }
    return mse;
}

FeatureSpec select_power_order(const PanelDataset& data, const FeatureSpec& base_spec,
                               const std::vector<int>& orders, const CvConfig& cv) {
    if (orders.empty()) throw SchemaViolation("no candidate orders given");
    std::vector<double> mse = power_order_cv_mse(data, base_spec, orders, cv);

    int best = -1;
    for (std::size_t j = 0; j < orders.size(); ++j) {
        if (std::isnan(mse[j])) continue;
        if (best < 0 || mse[j] < mse[static_cast<std::size_t>(best)] ||
            (mse[j] == mse[static_cast<std::size_t>(best)] &&
             orders[j] < orders[static_cast<std::size_t>(best)]))
            best = static_cast<int>(j);
    }
    if (best < 0) throw Error("every candidate order was ineligible");

    FeatureSpec spec = base_spec;
    for (auto& [name, l] : spec.power_orders) l = orders[static_cast<std::size_t>(best)];
    return spec;
}

} // namespace drdid
