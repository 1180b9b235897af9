#include "drdid/diagnostics.hpp"

#include <cmath>

#include "drdid/errors.hpp"

namespace drdid {

BalanceReport compute_balance(const PanelDataset& data, const DesignMatrix& design,
                              const Eigen::VectorXd& weights) {
    const int n = data.n();
    if (design.values.rows() != n || weights.size() != n)
        throw DimensionMismatch("design/weights must have one row per unit");
    if ((weights.array() <= 0.0).any())
        throw SchemaViolation("balance weights must be positive");

    const int n1 = data.n_treated(), n0 = data.n_control();
    BalanceReport report;

    for (int j = 0; j < design.cols(); ++j) {
        const auto x = design.values.col(j);

        double m1 = 0.0, m0 = 0.0;
        for (int i = 0; i < n; ++i)
            (data.unit(i).treated ? m1 : m0) += x[i];
        m1 /= n1;
        m0 /= n0;

        // unweighted group variances; shared denominator for both statistics
        double s1 = 0.0, s0 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = x[i] - (data.unit(i).treated ? m1 : m0);
            (data.unit(i).treated ? s1 : s0) += d * d;
        }
        s1 = n1 > 1 ? s1 / (n1 - 1) : 0.0;
        s0 = n0 > 1 ? s0 / (n0 - 1) : 0.0;
        const double denom = std::sqrt(s1 / n1 + s0 / n0);

        double wm1_num = 0.0, wm1_den = 0.0, wm0_num = 0.0, wm0_den = 0.0;
        for (int i = 0; i < n; ++i) {
            if (data.unit(i).treated) {
                wm1_num += x[i] * weights[i];
                wm1_den += weights[i];
            } else {
                wm0_num += x[i] * weights[i];
                wm0_den += weights[i];
            }
        }

        FeatureBalance fb;
        fb.name = design.column_names[static_cast<std::size_t>(j)];
        if (denom == 0.0) {
            fb.zero_variance = true;
        } else {
            fb.asd_unweighted = std::abs(m1 - m0) / denom;
            fb.asd_weighted = std::abs(wm1_num / wm1_den - wm0_num / wm0_den) / denom;
        }
        report.max_unweighted = std::max(report.max_unweighted, fb.asd_unweighted);
        report.max_weighted = std::max(report.max_weighted, fb.asd_weighted);
        report.per_feature.push_back(std::move(fb));
    }
    return report;
}

OverlapReport compute_overlap(const PanelDataset& data,
                              const Eigen::VectorXd& propensity_scores, int bins) {
    if (propensity_scores.size() != data.n())
        throw DimensionMismatch("propensity vector must have length N");
    if (bins < 1) throw SchemaViolation("bins must be >= 1");

    OverlapReport report;
    report.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b)
        report.bin_edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / bins;
    report.histogram_treated.assign(static_cast<std::size_t>(bins), 0);
    report.histogram_control.assign(static_cast<std::size_t>(bins), 0);

    for (int i = 0; i < data.n(); ++i) {
        if (!data.unit(i).treated)
            report.control_ps_max = std::max(report.control_ps_max,
                                             propensity_scores[i]);
    }
    for (int i = 0; i < data.n(); ++i) {
        const double e = propensity_scores[i];
        int b = static_cast<int>(e * bins);
        b = std::min(std::max(b, 0), bins - 1);
        if (data.unit(i).treated) {
            ++report.histogram_treated[static_cast<std::size_t>(b)];
            if (e > report.control_ps_max) ++report.treated_beyond_control_max;
        } else {
            ++report.histogram_control[static_cast<std::size_t>(b)];
        }
    }
    return report;
}

PlaceboResult placebo_evaluation(const PanelDataset& pre_data,
                                 const std::vector<Estimator>& estimators,
                                 const NuisanceSpecs& specs,
                                 const BootstrapConfig& config) {
    PlaceboResult out;
    out.estimators = estimators;
    out.pass = true;
    for (Estimator est : estimators) {
        BootstrapResult res = bootstrap_ci(pre_data, est, specs, config);
        const bool cfd_null = res.ci_cfd.first <= 0.0 && 0.0 <= res.ci_cfd.second;
        const bool cmf_null = !res.cmf_ci_defined ||
                              (res.ci_cmf.first <= 1.0 && 1.0 <= res.ci_cmf.second);
        if (!(cfd_null && cmf_null)) out.pass = false;
        out.results.push_back(std::move(res));
    }
    return out;
}

InfluenceDiagnostics influence_variance_comparison(const PanelDataset& data,
                                                   const Eigen::VectorXd& true_propensity,
                                                   const Eigen::VectorXd& true_mu,
                                                   const Eigen::VectorXd& true_nu,
                                                   double tau_cfd) {
    const int n = data.n();
    if (true_propensity.size() != n || true_mu.size() != n || true_nu.size() != n)
        throw DimensionMismatch("oracle nuisance vectors must have length N");

    const double pi = data.treated_fraction();
    Eigen::VectorXd k(n), dy(n), reg_trend(n);
    for (int i = 0; i < n; ++i) {
        const auto& u = data.unit(i);
        k[i] = (u.treated - true_propensity[i]) / (1.0 - true_propensity[i]);
        dy[i] = u.y_after - u.y_before;
        reg_trend[i] = true_nu[i] - true_mu[i];
    }
    if (std::isnan(tau_cfd)) tau_cfd = k.cwiseProduct(dy).mean() / pi;

    Eigen::VectorXd phi_wt = (k.cwiseProduct(dy) / pi).array() - tau_cfd;
    Eigen::VectorXd phi_dr = (k.cwiseProduct(dy - reg_trend) / pi).array() - tau_cfd;

    auto sample_var = [n](const Eigen::VectorXd& v) {
        const double m = v.mean();
        return (v.array() - m).square().sum() / (n - 1);
    };

    InfluenceDiagnostics diag;
    diag.var_wt = sample_var(phi_wt);
    diag.var_dr = sample_var(phi_dr);
    diag.var_difference = diag.var_wt - diag.var_dr;
    diag.scaled_difference = diag.var_difference / n;

    const Eigen::ArrayXd k2 = k.array().square();
    diag.closed_form_difference =
        (2.0 / (pi * pi)) * (k2 * dy.array() * reg_trend.array()).mean() -
        (1.0 / (pi * pi)) * (k2 * reg_trend.array().square()).mean();
    return diag;
}

} // namespace drdid
