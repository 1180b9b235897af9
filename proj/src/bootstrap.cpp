#include "drdid/bootstrap.hpp"

#include <algorithm>
#include <cmath>

#include "drdid/errors.hpp"
#include "drdid/parallel.hpp"
#include "drdid/rng.hpp"

namespace drdid {

void BootstrapConfig::validate() const {
    if (replicates < 1)
        throw SchemaViolation("bootstrap replicates must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw SchemaViolation("alpha must lie in (0,1)");
}

double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) throw DimensionMismatch("quantile of empty vector");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

BootstrapResult bootstrap_ci(const PanelDataset& data, Estimator est,
                             const NuisanceSpecs& specs, const BootstrapConfig& config) {
    config.validate();
    const NuisanceRequirements need = nuisance_requirements(est);

    BootstrapResult result;
    NuisanceBundle point_bundle = fit_nuisance(data, specs, need);
    result.point = estimate_effect(data, est, point_bundle);

    const int B = config.replicates;
    const int n = data.n();
    struct Replicate {
        double cfd = 0.0, cmf = 0.0;
        bool ok = false;
    };
    std::vector<Replicate> reps(static_cast<std::size_t>(B));

    parallel_for(B, config.n_threads, [&](int b) {
        auto rng = substream(config.seed, {static_cast<std::uint64_t>(b) + 1});
        std::uniform_int_distribution<int> pick(0, n - 1);
        std::vector<int> indices(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = pick(rng);
        try {
            PanelDataset resampled = data.resample(indices);
            NuisanceBundle bundle = fit_nuisance(resampled, specs, need, &point_bundle);
            EffectEstimate eff = estimate_effect(resampled, est, bundle);
            auto& r = reps[static_cast<std::size_t>(b)];
            r.cfd = eff.cfd;
            r.cmf = eff.cmf_defined ? eff.cmf : std::nan("");
            r.ok = true;
        } catch (const DegenerateDesign&) {
        } catch (const SingularInformation&) {
        }
    });

    std::vector<double> cfds, cmfs;
    for (int b = 0; b < B; ++b) {
        const auto& r = reps[static_cast<std::size_t>(b)];
        if (!r.ok) {
            ++result.n_failed;
            continue;
        }
        result.replicate_estimates.emplace_back(r.cfd, r.cmf);
        cfds.push_back(r.cfd);
        if (std::isnan(r.cmf))
            ++result.n_cmf_undefined;
        else
            cmfs.push_back(r.cmf);
    }

    const double fail_fraction = static_cast<double>(result.n_failed) / B;
    if (config.failure_policy == FailurePolicy::abort_at_threshold &&
        fail_fraction > config.abort_fraction)
        throw TooManyFailures("bootstrap failure fraction " +
                              std::to_string(fail_fraction) + " exceeds threshold");
    if (cfds.empty())
        throw TooManyFailures("every bootstrap replicate failed");

    const double a2 = config.alpha / 2.0;
    result.ci_cfd = {quantile_type7(cfds, a2), quantile_type7(cfds, 1.0 - a2)};
    result.point.ci_cfd = result.ci_cfd;
    if (!cmfs.empty()) {
        result.ci_cmf = {quantile_type7(cmfs, a2), quantile_type7(cmfs, 1.0 - a2)};
        result.cmf_ci_defined = true;
        result.point.ci_cmf = result.ci_cmf;
    }
    return result;
}

} // namespace drdid
