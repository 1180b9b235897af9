#ifndef DRDID_ESTIMATORS_HPP
#define DRDID_ESTIMATORS_HPP

#include <optional>
#include <string>
#include <vector>

#include "drdid/glm.hpp"
#include "drdid/panel_data.hpp"

namespace drdid {

enum class Estimator { direct, regression, weighting, double_robust };

const char* estimator_name(Estimator e);
Estimator estimator_from_name(const std::string& name);

/// Fitted nuisance models plus their per-unit evaluations on a dataset.
/// weights are the ATT weights: 1 for treated, e/(1-e) for controls.
struct NuisanceBundle {
    std::optional<LogisticFit> propensity;
    std::optional<NegBinFit> outcome_before;  // mu model, fitted on controls
    std::optional<NegBinFit> outcome_after;   // nu model, fitted on controls
    Eigen::VectorXd propensity_scores;        // e_i; empty when no propensity
    Eigen::VectorXd mu_hat;                   // empty when no outcome models
    Eigen::VectorXd nu_hat;
    Eigen::VectorXd weights;                  // always length N
    std::vector<std::string> warnings;

    bool has_propensity() const { return propensity_scores.size() > 0; }
    bool has_outcome() const { return mu_hat.size() > 0 && nu_hat.size() > 0; }
};

struct NuisanceSpecs {
    FeatureSpec propensity;
    FeatureSpec outcome;
    double extreme_weight_threshold = 50.0;
};

struct NuisanceRequirements {
    bool propensity = false;
    bool outcome = false;
};

NuisanceRequirements nuisance_requirements(Estimator est);

/// Fits the models an estimator needs: logistic propensity on all units,
/// NB2 outcome models on control units only, evaluated at every unit.
/// warm, when given, seeds the optimizers (bootstrap refits).
NuisanceBundle fit_nuisance(const PanelDataset& data, const NuisanceSpecs& specs,
                            NuisanceRequirements need,
                            const NuisanceBundle* warm = nullptr);

/// Bundle built from externally supplied nuisance values (oracle use).
NuisanceBundle oracle_nuisance(const PanelDataset& data,
                               const Eigen::VectorXd& propensity_scores,
                               const Eigen::VectorXd& mu, const Eigen::VectorXd& nu);

struct EffectEstimate {
    Estimator estimator = Estimator::direct;
    double theta1 = 0.0;
    double theta0 = 0.0;
    double cfd = 0.0;
    double cmf = 0.0;  // NaN when undefined
    bool cmf_defined = false;
    std::optional<std::pair<double, double>> ci_cfd;
    std::optional<std::pair<double, double>> ci_cmf;
    std::vector<std::string> warnings;
};

enum class DrForm { weighting_augmented, regression_augmented };

double estimate_theta1(const PanelDataset& data);
double estimate_theta0_direct(const PanelDataset& data);
double estimate_theta0_regression(const PanelDataset& data, const NuisanceBundle& nuisance);
double estimate_theta0_weighting(const PanelDataset& data, const NuisanceBundle& nuisance,
                                 std::vector<std::string>* warnings = nullptr,
                                 double extreme_weight_threshold = 50.0);
double estimate_theta0_dr(const PanelDataset& data, const NuisanceBundle& nuisance,
                          DrForm form = DrForm::weighting_augmented,
                          std::vector<std::string>* warnings = nullptr);

EffectEstimate estimate_effect(const PanelDataset& data, Estimator est,
                               const NuisanceBundle& nuisance);

/// Share of treated units whose propensity score exceeds the control maximum
/// (extrapolation proxy for the outcome-model predictions).
double treated_beyond_control_share(const PanelDataset& data,
                                    const Eigen::VectorXd& propensity_scores);

} // namespace drdid

#endif
