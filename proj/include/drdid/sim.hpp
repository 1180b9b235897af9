#ifndef DRDID_SIM_HPP
#define DRDID_SIM_HPP

#include <random>
#include <string>
#include <vector>

#include "drdid/bootstrap.hpp"
#include "drdid/estimators.hpp"

namespace drdid {

/// Data-generating process for the two-period two-group crash panel:
/// binary X1, conditionally normal X2, quadratic-logit treatment assignment,
/// NB2 counts with group- and period-specific log-quadratic means.
struct DgpParams {
    double x1_prob = 0.25;
    double x2_mean_base = 2.0;
    double x2_mean_x1 = 6.0;
    double x2_sd = 2.0;
    // coefficients on (1, X1, X2, X2^2)
    Eigen::Vector4d ps_coefs{-2.0, 1.0, -0.2, 0.04};
    Eigen::Vector4d mu00_coefs{-2.0, 0.4, 0.43, -0.022};
    Eigen::Vector4d mu01_coefs{-3.0, 0.3, 0.43, -0.022};
    Eigen::Vector4d nu00_coefs{-1.9, 0.5, 0.43, -0.022};
    Eigen::Vector4d nu11_coefs{-2.5, 0.1, 0.43, -0.022};
    double dispersion = 2.5;
    double true_cfd = -0.078;
    double true_cmf = 0.862;

    double propensity(double x1, double x2) const;
    double mean(const Eigen::Vector4d& coefs, double x1, double x2) const;
};

/// Per-unit true nuisance values carried beside a simulated dataset.
struct OracleValues {
    Eigen::VectorXd propensity;  // e(X)
    Eigen::VectorXd mu00;        // control before-period mean
    Eigen::VectorXd nu00;        // control after-period mean
};

struct ReplicateDraw {
    PanelDataset data;
    OracleValues oracle;
    int retries = 0;
};

/// Draws one dataset of n units; covariate columns are "x1", "x2".
/// Single-group draws are retried (up to 100 times, then DegenerateDesign).
ReplicateDraw generate_replicate(const DgpParams& params, int n, std::mt19937_64& rng);

/// Monte Carlo evaluation of the population (cfd, cmf) implied by the DGP.
std::pair<double, double> derive_true_effects(const DgpParams& params,
                                              std::int64_t n_draws,
                                              std::uint64_t seed);

/// Correct nuisance specification for the DGP: intercept, x1, x2, x2^2.
FeatureSpec dgp_correct_spec();

/// Misspecification used in the study: drops columns without a power-series
/// entry and truncates every power series to linear.
FeatureSpec misspecify(const FeatureSpec& spec);

struct SimulationScenario {
    std::string label;
    Estimator estimator = Estimator::direct;
    bool ps_misspecified = false;
    bool outcome_misspecified = false;
    int n_units = 2000;
    int replicates = 500;
    int bootstrap_replicates = 500;
    double alpha = 0.05;
};

/// The nine study rows: Direct, REG, REG-mis, WT, WT-mis, DR, DR-po, DR-ps,
/// DR-mis.
std::vector<SimulationScenario> standard_scenarios(int replicates,
                                                   int bootstrap_replicates,
                                                   int n_units = 2000);

struct MetricRow {
    std::string label;
    double abs_bias_cfd = 0.0;
    double rmse_cfd = 0.0;
    double coverage_cfd = 0.0;      // percent
    double abs_bias_log_cmf = 0.0;
    double rmse_log_cmf = 0.0;
    double coverage_log_cmf = 0.0;  // percent
    int n_effective_replicates = 0;
    int n_cmf_undefined = 0;
};

struct StudyConfig {
    std::uint64_t seed = 0;
    int n_threads = 1;
    double max_drop_fraction = 0.05;
    bool self_check_truth = true;        // re-derive (cfd, cmf) from the DGP
    std::int64_t self_check_draws = 10'000'000;
};

std::vector<MetricRow> run_study(const std::vector<SimulationScenario>& scenarios,
                                 const DgpParams& params, const StudyConfig& config);

} // namespace drdid

#endif
