#ifndef DRDID_BOOTSTRAP_HPP
#define DRDID_BOOTSTRAP_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "drdid/estimators.hpp"

namespace drdid {

enum class FailurePolicy { drop_and_report, abort_at_threshold };

struct BootstrapConfig {
    int replicates = 500;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    FailurePolicy failure_policy = FailurePolicy::drop_and_report;
    double abort_fraction = 0.10;  // used by abort_at_threshold
    int n_threads = 1;

    void validate() const;
};

struct BootstrapResult {
    EffectEstimate point;
    std::pair<double, double> ci_cfd{0.0, 0.0};
    std::pair<double, double> ci_cmf{0.0, 0.0};
    bool cmf_ci_defined = false;
    /// (cfd, cmf) per successful replicate, in replicate order; cmf is NaN
    /// where theta0 <= 0.
    std::vector<std::pair<double, double>> replicate_estimates;
    int n_failed = 0;
    int n_cmf_undefined = 0;
};

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" rule). Input need not be sorted.
double quantile_type7(std::vector<double> values, double p);

/// Unit-level nonparametric bootstrap with full nuisance refits per replicate.
/// Replicate b draws from an independent substream of (config.seed, b).
BootstrapResult bootstrap_ci(const PanelDataset& data, Estimator est,
                             const NuisanceSpecs& specs, const BootstrapConfig& config);

} // namespace drdid

#endif
