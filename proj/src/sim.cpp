#include "drdid/sim.hpp"

#include <atomic>
#include <cmath>

#include "drdid/errors.hpp"
#include "drdid/parallel.hpp"
#include "drdid/rng.hpp"

namespace drdid {

double DgpParams::propensity(double x1, double x2) const {
    const double logit =
        ps_coefs[0] + ps_coefs[1] * x1 + ps_coefs[2] * x2 + ps_coefs[3] * x2 * x2;
    return 1.0 / (1.0 + std::exp(-logit));
}

double DgpParams::mean(const Eigen::Vector4d& coefs, double x1, double x2) const {
    return std::exp(coefs[0] + coefs[1] * x1 + coefs[2] * x2 + coefs[3] * x2 * x2);
}

namespace {

/// NB(m, phi) with variance m + m^2/phi, as a gamma-Poisson mixture.
double draw_negbin(double m, double phi, std::mt19937_64& rng) {
    std::gamma_distribution<double> gamma(phi, m / phi);
    const double rate = gamma(rng);
    if (rate <= 0.0) return 0.0;
    std::poisson_distribution<long> pois(rate);
    return static_cast<double>(pois(rng));
}

} // namespace

ReplicateDraw generate_replicate(const DgpParams& params, int n, std::mt19937_64& rng) {
    std::bernoulli_distribution draw_x1(params.x1_prob);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<PanelUnit> units;
        units.reserve(static_cast<std::size_t>(n));
        OracleValues oracle;
        oracle.propensity.resize(n);
        oracle.mu00.resize(n);
        oracle.nu00.resize(n);
        int n_treated = 0;

        for (int i = 0; i < n; ++i) {
            const double x1 = draw_x1(rng) ? 1.0 : 0.0;
            const double x2 =
                params.x2_mean_base + params.x2_mean_x1 * x1 + params.x2_sd * normal(rng);
            const double e = params.propensity(x1, x2);
            const int g = unif(rng) < e ? 1 : 0;
            n_treated += g;

            PanelUnit u;
            u.id = std::to_string(i + 1);
            u.treated = g;
            u.covariates = {x1, x2};
            const double mean_before =
                params.mean(g ? params.mu01_coefs : params.mu00_coefs, x1, x2);
            const double mean_after =
                params.mean(g ? params.nu11_coefs : params.nu00_coefs, x1, x2);
            u.y_before = draw_negbin(mean_before, params.dispersion, rng);
            u.y_after = draw_negbin(mean_after, params.dispersion, rng);
            units.push_back(std::move(u));

            oracle.propensity[i] = e;
            oracle.mu00[i] = params.mean(params.mu00_coefs, x1, x2);
            oracle.nu00[i] = params.mean(params.nu00_coefs, x1, x2);
        }
        if (n_treated == 0 || n_treated == n) continue;
        return ReplicateDraw{PanelDataset(std::move(units), {"x1", "x2"}),
                             std::move(oracle), attempt};
    }
    throw DegenerateDesign("could not draw a two-group sample in 100 attempts");
}

std::pair<double, double> derive_true_effects(const DgpParams& params,
                                              std::int64_t n_draws,
                                              std::uint64_t seed) {
    auto rng = substream(seed, {fnv1a("dgp-truth")});
    std::bernoulli_distribution draw_x1(params.x1_prob);
    std::normal_distribution<double> normal(0.0, 1.0);

    double sum_e = 0.0, sum_e_nu11 = 0.0, sum_e_nu01 = 0.0;
    for (std::int64_t i = 0; i < n_draws; ++i) {
        const double x1 = draw_x1(rng) ? 1.0 : 0.0;
        const double x2 =
            params.x2_mean_base + params.x2_mean_x1 * x1 + params.x2_sd * normal(rng);
        const double e = params.propensity(x1, x2);
        const double nu11 = params.mean(params.nu11_coefs, x1, x2);
        // parallel trend pins the treated counterfactual mean
        const double nu01 = params.mean(params.nu00_coefs, x1, x2) +
                            params.mean(params.mu01_coefs, x1, x2) -
                            params.mean(params.mu00_coefs, x1, x2);
        sum_e += e;
        sum_e_nu11 += e * nu11;
        sum_e_nu01 += e * nu01;
    }
    const double theta1 = sum_e_nu11 / sum_e;
    const double theta0 = sum_e_nu01 / sum_e;
    return {theta1 - theta0, theta1 / theta0};
}

FeatureSpec dgp_correct_spec() {
    FeatureSpec spec;
    spec.base_columns = {"x1", "x2"};
    spec.power_orders = {{"x2", 2}};
    return spec;
}

FeatureSpec misspecify(const FeatureSpec& spec) {
    FeatureSpec out = spec;
    out.base_columns.clear();
    for (const auto& name : spec.base_columns)
        if (spec.power_orders.count(name)) out.base_columns.push_back(name);
    for (auto& [name, order] : out.power_orders) order = 1;
    return out;
}

std::vector<SimulationScenario> standard_scenarios(int replicates,
                                                   int bootstrap_replicates,
                                                   int n_units) {
    auto make = [&](const std::string& label, Estimator est, bool ps_mis,
                    bool out_mis) {
        SimulationScenario s;
        s.label = label;
        s.estimator = est;
        s.ps_misspecified = ps_mis;
        s.outcome_misspecified = out_mis;
        s.n_units = n_units;
        s.replicates = replicates;
        s.bootstrap_replicates = bootstrap_replicates;
        return s;
    };
    return {
        make("Direct", Estimator::direct, false, false),
        make("REG", Estimator::regression, false, false),
        make("REG-mis", Estimator::regression, false, true),
        make("WT", Estimator::weighting, false, false),
        make("WT-mis", Estimator::weighting, true, false),
        make("DR", Estimator::double_robust, false, false),
        make("DR-po", Estimator::double_robust, true, false),
        make("DR-ps", Estimator::double_robust, false, true),
        make("DR-mis", Estimator::double_robust, true, true),
    };
}

std::vector<MetricRow> run_study(const std::vector<SimulationScenario>& scenarios,
                                 const DgpParams& params, const StudyConfig& config) {
    if (config.self_check_truth) {
        auto [cfd, cmf] =
            derive_true_effects(params, config.self_check_draws, config.seed);
        if (std::abs(cfd - params.true_cfd) > 3e-3 ||
            std::abs(cmf - params.true_cmf) > 1e-2)
            throw Error("DGP self-check failed: derived (cfd, cmf) = (" +
                        std::to_string(cfd) + ", " + std::to_string(cmf) +
                        ") vs declared (" + std::to_string(params.true_cfd) + ", " +
                        std::to_string(params.true_cmf) + ")");
    }

    const double log_cmf_truth = std::log(params.true_cmf);
    std::vector<MetricRow> rows;

    for (const auto& scenario : scenarios) {
        // substreams keyed by scenario label, so reordering scenarios only
        // reorders the output rows
        const std::uint64_t scenario_key = fnv1a(scenario.label);

        NuisanceSpecs specs;
        specs.propensity = scenario.ps_misspecified ? misspecify(dgp_correct_spec())
                                                    : dgp_correct_spec();
        specs.outcome = scenario.outcome_misspecified ? misspecify(dgp_correct_spec())
                                                      : dgp_correct_spec();

        struct RepResult {
            double cfd = 0.0, log_cmf = 0.0;
            bool ok = false, cmf_ok = false;
            bool cover_cfd = false, cover_log_cmf = false;
        };
        const int R = scenario.replicates;
        std::vector<RepResult> reps(static_cast<std::size_t>(R));

        parallel_for(R, config.n_threads, [&](int r) {
            auto rng = substream(config.seed,
                                 {scenario_key, static_cast<std::uint64_t>(r)});
            try {
                ReplicateDraw draw =
                    generate_replicate(params, scenario.n_units, rng);

                BootstrapConfig bcfg;
                bcfg.replicates = scenario.bootstrap_replicates;
                bcfg.alpha = scenario.alpha;
                bcfg.seed = derive_seed(config.seed,
                                        {scenario_key, static_cast<std::uint64_t>(r),
                                         fnv1a("bootstrap")});
                BootstrapResult res =
                    bootstrap_ci(draw.data, scenario.estimator, specs, bcfg);

                auto& out = reps[static_cast<std::size_t>(r)];
                out.ok = true;
                out.cfd = res.point.cfd;
                out.cover_cfd = res.ci_cfd.first <= params.true_cfd &&
                                params.true_cfd <= res.ci_cfd.second;
                if (res.point.cmf_defined && res.point.cmf > 0.0) {
                    out.cmf_ok = true;
                    out.log_cmf = std::log(res.point.cmf);
                    out.cover_log_cmf = res.cmf_ci_defined &&
                                        res.ci_cmf.first <= params.true_cmf &&
                                        params.true_cmf <= res.ci_cmf.second;
                }
            } catch (const Error&) {
                // dropped; accounted below
            }
        });

        MetricRow row;
        row.label = scenario.label;
        double sum_cfd = 0.0, sse_cfd = 0.0;
        double sum_lcmf = 0.0, sse_lcmf = 0.0;
        int n_ok = 0, n_cmf = 0, n_cover_cfd = 0, n_cover_lcmf = 0;
        for (const auto& rep : reps) {
            if (!rep.ok) continue;
            ++n_ok;
            sum_cfd += rep.cfd;
            sse_cfd += (rep.cfd - params.true_cfd) * (rep.cfd - params.true_cfd);
            if (rep.cover_cfd) ++n_cover_cfd;
            if (rep.cmf_ok) {
                ++n_cmf;
                sum_lcmf += rep.log_cmf;
                sse_lcmf += (rep.log_cmf - log_cmf_truth) * (rep.log_cmf - log_cmf_truth);
                if (rep.cover_log_cmf) ++n_cover_lcmf;
            }
        }
        const double dropped = static_cast<double>(R - n_ok) / R;
        if (dropped > config.max_drop_fraction)
            throw TooManyFailures("scenario " + scenario.label + " dropped " +
                                  std::to_string(R - n_ok) + " of " +
                                  std::to_string(R) + " replicates");

        row.n_effective_replicates = n_ok;
        row.n_cmf_undefined = n_ok - n_cmf;
        row.abs_bias_cfd = std::abs(sum_cfd / n_ok - params.true_cfd);
        row.rmse_cfd = std::sqrt(sse_cfd / n_ok);
        row.coverage_cfd = 100.0 * n_cover_cfd / n_ok;
        if (n_cmf > 0) {
            row.abs_bias_log_cmf = std::abs(sum_lcmf / n_cmf - log_cmf_truth);
            row.rmse_log_cmf = std::sqrt(sse_lcmf / n_cmf);
            row.coverage_log_cmf = 100.0 * n_cover_lcmf / n_cmf;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace drdid
