#include <doctest.h>

#include <cmath>

#include "drdid/rng.hpp"
#include "drdid/sim.hpp"

using namespace drdid;

TEST_CASE("the dgp treats about a fifth of the units") {
    DgpParams params;
    auto rng = substream(43, {fnv1a("treated-share")});
    double total = 0.0;
    const int reps = 30, n = 1000;
    for (int r = 0; r < reps; ++r)
        total += generate_replicate(params, n, rng).data.treated_fraction();
    CHECK(total / reps == doctest::Approx(0.214).epsilon(0.1));
}

TEST_CASE("replicates carry oracle values consistent with the draws") {
    DgpParams params;
    auto rng = substream(47, {fnv1a("oracle-consistency")});
    ReplicateDraw draw = generate_replicate(params, 8000, rng);
    CHECK(draw.data.covariate_names() == std::vector<std::string>{"x1", "x2"});

    // control first-period outcomes average to the oracle mu00 over controls
    double y_sum = 0.0, mu_sum = 0.0;
    int n0 = 0;
    for (int i = 0; i < draw.data.n(); ++i) {
        if (draw.data.unit(i).treated) continue;
        y_sum += draw.data.unit(i).y_before;
        mu_sum += draw.oracle.mu00[i];
        ++n0;
    }
    CHECK(y_sum / n0 == doctest::Approx(mu_sum / n0).epsilon(0.05));

    // oracle propensity matches the declared assignment model
    for (int i = 0; i < 50; ++i) {
        const auto& u = draw.data.unit(i);
        CHECK(draw.oracle.propensity[i] ==
              doctest::Approx(params.propensity(u.covariates[0], u.covariates[1])));
    }
}

TEST_CASE("derived truths match the declared effects") {
    DgpParams params;
    auto [cfd, cmf] = derive_true_effects(params, 2'000'000, 51);
    CHECK(cfd == doctest::Approx(params.true_cfd).epsilon(0.03));
    CHECK(cmf == doctest::Approx(params.true_cmf).epsilon(0.01));
}

TEST_CASE("misspecification keeps only the linear power-series columns") {
    FeatureSpec spec = dgp_correct_spec();
    FeatureSpec mis = misspecify(spec);
    CHECK(mis.base_columns == std::vector<std::string>{"x2"});
    REQUIRE(mis.power_orders.count("x2") == 1);
    CHECK(mis.power_orders.at("x2") == 1);
    CHECK(mis.include_intercept);

    // idempotent: misspecifying twice changes nothing further
    FeatureSpec mis2 = misspecify(mis);
    CHECK(mis2.base_columns == mis.base_columns);
    CHECK(mis2.power_orders == mis.power_orders);
}

TEST_CASE("the standard study has nine labelled rows") {
    auto scenarios = standard_scenarios(10, 20, 500);
    REQUIRE(scenarios.size() == 9);
    CHECK(scenarios[0].label == "Direct");
    CHECK(scenarios[5].label == "DR");
    CHECK(scenarios[8].label == "DR-mis");
    for (const auto& s : scenarios) {
        CHECK(s.replicates == 10);
        CHECK(s.bootstrap_replicates == 20);
        CHECK(s.n_units == 500);
    }
    CHECK(scenarios[2].outcome_misspecified);
    CHECK_FALSE(scenarios[2].ps_misspecified);
    CHECK(scenarios[4].ps_misspecified);
    CHECK(scenarios[8].ps_misspecified);
    CHECK(scenarios[8].outcome_misspecified);
}

TEST_CASE("run_study aggregates and is invariant to scenario order") {
    DgpParams params;
    StudyConfig config;
    config.seed = 57;
    config.self_check_truth = false;

    auto all = standard_scenarios(12, 40, 400);
    std::vector<SimulationScenario> fwd = {all[0], all[5]};  // Direct, DR
    std::vector<SimulationScenario> rev = {all[5], all[0]};

    auto rows_fwd = run_study(fwd, params, config);
    auto rows_rev = run_study(rev, params, config);
    REQUIRE(rows_fwd.size() == 2);
    REQUIRE(rows_rev.size() == 2);
    CHECK(rows_fwd[0].label == "Direct");
    CHECK(rows_rev[1].label == "Direct");
    CHECK(rows_fwd[0].abs_bias_cfd == rows_rev[1].abs_bias_cfd);
    CHECK(rows_fwd[0].coverage_cfd == rows_rev[1].coverage_cfd);
    CHECK(rows_fwd[1].rmse_log_cmf == rows_rev[0].rmse_log_cmf);

    for (const auto& row : rows_fwd) {
        CHECK(row.n_effective_replicates == 12);
        CHECK(row.rmse_cfd >= row.abs_bias_cfd);
        CHECK(row.rmse_log_cmf >= row.abs_bias_log_cmf);
        CHECK(row.coverage_cfd >= 0.0);
        CHECK(row.coverage_cfd <= 100.0);
    }
    // the direct estimator ignores the confounding and should sit further
    // from the truth than the double-robust fit
    CHECK(rows_fwd[0].abs_bias_cfd > rows_fwd[1].abs_bias_cfd);
}

TEST_CASE("run_study is invariant to the thread count") {
    DgpParams params;
    StudyConfig config;
    config.seed = 61;
    config.self_check_truth = false;

    auto scenarios = standard_scenarios(8, 25, 300);
    scenarios.erase(scenarios.begin() + 1, scenarios.end());  // Direct only

    auto rows_1 = run_study(scenarios, params, config);
    config.n_threads = 4;
    auto rows_4 = run_study(scenarios, params, config);
    CHECK(rows_1[0].abs_bias_cfd == rows_4[0].abs_bias_cfd);
    CHECK(rows_1[0].rmse_cfd == rows_4[0].rmse_cfd);
    CHECK(rows_1[0].coverage_cfd == rows_4[0].coverage_cfd);
}

TEST_CASE("the dgp self-check rejects a wrong declared truth") {
    DgpParams params;
    params.true_cfd = 0.5;
    StudyConfig config;
    config.seed = 63;
    config.self_check_draws = 200'000;
    auto scenarios = standard_scenarios(2, 5, 200);
    scenarios.resize(1);
    CHECK_THROWS_AS(run_study(scenarios, params, config), Error);
}

TEST_CASE("a single-replicate study degenerates gracefully") {
    DgpParams params;
    StudyConfig config;
    config.seed = 67;
    config.self_check_truth = false;
    auto scenarios = standard_scenarios(1, 20, 300);
    scenarios.resize(1);
    auto rows = run_study(scenarios, params, config);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n_effective_replicates == 1);
    CHECK(rows[0].rmse_cfd == doctest::Approx(rows[0].abs_bias_cfd));
}
