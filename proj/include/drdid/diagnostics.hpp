#ifndef DRDID_DIAGNOSTICS_HPP
#define DRDID_DIAGNOSTICS_HPP

#include <string>
#include <vector>

#include "drdid/bootstrap.hpp"
#include "drdid/estimators.hpp"

namespace drdid {

struct FeatureBalance {
    std::string name;
    double asd_unweighted = 0.0;
    double asd_weighted = 0.0;
    bool zero_variance = false;  // feature constant within both groups
};

struct BalanceReport {
    std::vector<FeatureBalance> per_feature;
    double max_unweighted = 0.0;
    double max_weighted = 0.0;
};

/// Absolute standardized difference of each design column, unweighted and
/// under the supplied ATT weights. The denominator uses the unweighted group
/// variances in both cases.
BalanceReport compute_balance(const PanelDataset& data, const DesignMatrix& design,
                              const Eigen::VectorXd& weights);

struct OverlapReport {
    std::vector<double> bin_edges;     // bins+1 edges over [0,1]
    std::vector<int> histogram_treated;
    std::vector<int> histogram_control;
    double control_ps_max = 0.0;
    int treated_beyond_control_max = 0;
};

OverlapReport compute_overlap(const PanelDataset& data,
                              const Eigen::VectorXd& propensity_scores, int bins = 30);

struct PlaceboResult {
    std::vector<Estimator> estimators;
    std::vector<BootstrapResult> results;  // same order
    bool pass = false;  // every CFD CI covers 0 and every defined CMF CI covers 1
};

/// "No treatment" evaluation: runs the full pipeline on a dataset whose
/// before/after columns are two pre-treatment periods.
PlaceboResult placebo_evaluation(const PanelDataset& pre_data,
                                 const std::vector<Estimator>& estimators,
                                 const NuisanceSpecs& specs,
                                 const BootstrapConfig& config);

struct InfluenceDiagnostics {
    double var_wt = 0.0;
    double var_dr = 0.0;
    double var_difference = 0.0;      // var_wt - var_dr
    double scaled_difference = 0.0;   // (var_wt - var_dr) / N
    double closed_form_difference = 0.0;  // two-term moment expression, same sample
};

/// Influence-function variance comparison with known (oracle) nuisances.
/// tau_cfd defaults to the sample weighting estimate when NaN is passed.
InfluenceDiagnostics influence_variance_comparison(const PanelDataset& data,
                                                   const Eigen::VectorXd& true_propensity,
                                                   const Eigen::VectorXd& true_mu,
                                                   const Eigen::VectorXd& true_nu,
                                                   double tau_cfd = std::nan(""));

} // namespace drdid

#endif
