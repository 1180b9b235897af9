#include "drdid/estimators.hpp"

#include <cmath>
#include <limits>

#include "drdid/errors.hpp"

namespace drdid {

const char* estimator_name(Estimator e) {
    switch (e) {
        case Estimator::direct: return "direct";
        case Estimator::regression: return "regression";
        case Estimator::weighting: return "weighting";
        case Estimator::double_robust: return "double_robust";
    }
    return "?";
}

Estimator estimator_from_name(const std::string& name) {
    if (name == "direct") return Estimator::direct;
    if (name == "regression" || name == "reg") return Estimator::regression;
    if (name == "weighting" || name == "wt") return Estimator::weighting;
    if (name == "double_robust" || name == "dr") return Estimator::double_robust;
    throw SchemaViolation("unknown estimator: " + name);
}

NuisanceRequirements nuisance_requirements(Estimator est) {
    switch (est) {
        case Estimator::direct: return {false, false};
        case Estimator::regression: return {false, true};
        case Estimator::weighting: return {true, false};
        case Estimator::double_robust: return {true, true};
    }
    return {};
}

namespace {

Eigen::VectorXd att_weights(const PanelDataset& data, const Eigen::VectorXd& e) {
    Eigen::VectorXd w(data.n());
    for (int i = 0; i < data.n(); ++i)
        w[i] = data.unit(i).treated ? 1.0 : e[i] / (1.0 - e[i]);
    return w;
}

} // namespace

NuisanceBundle fit_nuisance(const PanelDataset& data, const NuisanceSpecs& specs,
                            NuisanceRequirements need, const NuisanceBundle* warm) {
    NuisanceBundle bundle;
    bundle.weights = Eigen::VectorXd::Ones(data.n());

    if (need.propensity) {
        DesignMatrix design = expand_features(data, specs.propensity);
        const Eigen::VectorXd* start = nullptr;
        Eigen::VectorXd warm_coef;
        if (warm && warm->propensity &&
            warm->propensity->coefficients.size() == design.values.cols()) {
            warm_coef = warm->propensity->coefficients;
            start = &warm_coef;
        }
        LogisticFit fit = fit_logistic(design.values, data.treated(), 1e-8, 100, start);
        fit.feature_spec = specs.propensity;
        if (fit.separation_detected)
            bundle.warnings.push_back("SeparationDetected: propensity fit shows "
                                      "signs of complete separation");
        else if (!fit.converged)
            bundle.warnings.push_back("NonConvergence: propensity fit did not converge");
        bundle.propensity_scores = fit.predict(design.values);
        bundle.weights = att_weights(data, bundle.propensity_scores);
        bundle.propensity = std::move(fit);
    }

    if (need.outcome) {
        DesignMatrix design = expand_features(data, specs.outcome);
        const int n0 = data.n_control();
        Eigen::MatrixXd Xc(n0, design.values.cols());
        Eigen::VectorXd yb(n0), ya(n0);
        int k = 0;
        for (int i = 0; i < data.n(); ++i) {
            if (data.unit(i).treated) continue;
            Xc.row(k) = design.values.row(i);
            yb[k] = data.unit(i).y_before;
            ya[k] = data.unit(i).y_after;
            ++k;
        }
        auto fit_one = [&](const Eigen::VectorXd& y, const NegBinFit* w) {
            NegBinFit fit = fit_negbin(Xc, y, 1e-8, 100, w);
            fit.feature_spec = specs.outcome;
            if (!fit.converged)
                bundle.warnings.push_back("NonConvergence: outcome fit did not converge");
            return fit;
        };
        const NegBinFit* warm_before = warm && warm->outcome_before &&
            warm->outcome_before->coefficients.size() == design.values.cols()
                ? &*warm->outcome_before : nullptr;
        const NegBinFit* warm_after = warm && warm->outcome_after &&
            warm->outcome_after->coefficients.size() == design.values.cols()
                ? &*warm->outcome_after : nullptr;
        NegBinFit before = fit_one(yb, warm_before);
        NegBinFit after = fit_one(ya, warm_after);
        bundle.mu_hat = before.predict_mean(design.values);
        bundle.nu_hat = after.predict_mean(design.values);
        bundle.outcome_before = std::move(before);
        bundle.outcome_after = std::move(after);
    }
    return bundle;
}

NuisanceBundle oracle_nuisance(const PanelDataset& data,
                               const Eigen::VectorXd& propensity_scores,
                               const Eigen::VectorXd& mu, const Eigen::VectorXd& nu) {
    if (propensity_scores.size() != data.n() || mu.size() != data.n() ||
        nu.size() != data.n())
        throw DimensionMismatch("oracle nuisance vectors must have length N");
    NuisanceBundle bundle;
    bundle.propensity_scores = propensity_scores;
    bundle.mu_hat = mu;
    bundle.nu_hat = nu;
    bundle.weights = att_weights(data, propensity_scores);
    return bundle;
}

double estimate_theta1(const PanelDataset& data) {
    double num = 0.0;
    for (const auto& u : data.units())
        if (u.treated) num += u.y_after;
    return num / data.n_treated();
}

double estimate_theta0_direct(const PanelDataset& data) {
    double treated_before = 0.0, control_trend = 0.0;
    for (const auto& u : data.units()) {
        if (u.treated)
            treated_before += u.y_before;
        else
            control_trend += u.y_after - u.y_before;
    }
    return treated_before / data.n_treated() + control_trend / data.n_control();
}

double estimate_theta0_regression(const PanelDataset& data,
                                  const NuisanceBundle& nuisance) {
    if (!nuisance.has_outcome())
        throw MissingNuisance("regression estimator requires fitted outcome models");
    double treated_before = 0.0, trend = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        if (!data.unit(i).treated) continue;
        treated_before += data.unit(i).y_before;
        trend += nuisance.nu_hat[i] - nuisance.mu_hat[i];
    }
    return (treated_before + trend) / data.n_treated();
}

double estimate_theta0_weighting(const PanelDataset& data, const NuisanceBundle& nuisance,
                                 std::vector<std::string>* warnings,
                                 double extreme_weight_threshold) {
    if (!nuisance.has_propensity())
        throw MissingNuisance("weighting estimator requires a fitted propensity model");
    double num = 0.0;
    double max_control_weight = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        const auto& u = data.unit(i);
        const double w = nuisance.weights[i];
        if (u.treated) {
            num += u.y_before * w;
        } else {
            num += (u.y_after - u.y_before) * w;
            max_control_weight = std::max(max_control_weight, w);
        }
    }
    if (warnings && max_control_weight > extreme_weight_threshold)
        warnings->push_back("ExtremeWeights: max control ATT weight " +
                            std::to_string(max_control_weight));
    return num / data.n_treated();
}

double estimate_theta0_dr(const PanelDataset& data, const NuisanceBundle& nuisance,
                          DrForm form, std::vector<std::string>* warnings) {
    if (!nuisance.has_propensity() || !nuisance.has_outcome())
        throw MissingNuisance("double-robust estimator requires propensity and "
                              "outcome models");
    double theta0;
    if (form == DrForm::weighting_augmented) {
        double aug = 0.0;
        for (int i = 0; i < data.n(); ++i) {
            const double e = nuisance.propensity_scores[i];
            const double g = data.unit(i).treated;
            aug += (g - e) * (nuisance.nu_hat[i] - nuisance.mu_hat[i]) / (1.0 - e);
        }
        theta0 = estimate_theta0_weighting(data, nuisance, warnings) +
                 aug / data.n_treated();
    } else {
        double aug = 0.0;
        for (int i = 0; i < data.n(); ++i) {
            const auto& u = data.unit(i);
            if (u.treated) continue;
            const double r_after = u.y_after - nuisance.nu_hat[i];
            const double r_before = u.y_before - nuisance.mu_hat[i];
            aug += (r_after - r_before) * nuisance.weights[i];
        }
        theta0 = estimate_theta0_regression(data, nuisance) + aug / data.n_treated();
    }
    if (warnings && theta0 <= 0.0)
        warnings->push_back("NegativeTheta0: theta0 estimate " + std::to_string(theta0) +
                            " <= 0; CMF undefined");
    return theta0;
}

EffectEstimate estimate_effect(const PanelDataset& data, Estimator est,
                               const NuisanceBundle& nuisance) {
    EffectEstimate result;
    result.estimator = est;
    result.theta1 = estimate_theta1(data);
    switch (est) {
        case Estimator::direct:
            result.theta0 = estimate_theta0_direct(data);
            break;
        case Estimator::regression:
            result.theta0 = estimate_theta0_regression(data, nuisance);
            break;
        case Estimator::weighting:
            result.theta0 = estimate_theta0_weighting(data, nuisance, &result.warnings);
            break;
        case Estimator::double_robust:
#ifndef NDEBUG
            {
                const double alt = estimate_theta0_dr(data, nuisance,
                                                      DrForm::regression_augmented);
                result.theta0 = estimate_theta0_dr(data, nuisance,
                                                   DrForm::weighting_augmented,
                                                   &result.warnings);
                if (std::abs(result.theta0 - alt) >
                    1e-8 * (1.0 + std::abs(result.theta0)))
                    result.warnings.push_back("DR forms disagree: " +
                                              std::to_string(result.theta0) + " vs " +
                                              std::to_string(alt));
            }
#else
            result.theta0 = estimate_theta0_dr(data, nuisance,
                                               DrForm::weighting_augmented,
                                               &result.warnings);
#endif
            break;
    }
    result.cfd = result.theta1 - result.theta0;
    if (result.theta0 > 0.0) {
        result.cmf = result.theta1 / result.theta0;
        result.cmf_defined = true;
    } else {
        result.cmf = std::numeric_limits<double>::quiet_NaN();
        result.cmf_defined = false;
    }
    return result;
}

double treated_beyond_control_share(const PanelDataset& data,
                                    const Eigen::VectorXd& propensity_scores) {
    if (propensity_scores.size() != data.n())
        throw DimensionMismatch("propensity vector must have length N");
    double control_max = 0.0;
    for (int i = 0; i < data.n(); ++i)
        if (!data.unit(i).treated)
            control_max = std::max(control_max, propensity_scores[i]);
    int beyond = 0;
    for (int i = 0; i < data.n(); ++i)
        if (data.unit(i).treated && propensity_scores[i] > control_max) ++beyond;
    return static_cast<double>(beyond) / data.n_treated();
}

} // namespace drdid
