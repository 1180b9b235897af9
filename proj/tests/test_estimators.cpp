#include <doctest.h>

#include <cmath>

#include "drdid/estimators.hpp"
#include "drdid/rng.hpp"
#include "drdid/sim.hpp"

using namespace drdid;

namespace {

PanelUnit unit(const std::string& id, double yb, double ya, int g) {
    return {id, yb, ya, g, {}};
}

Eigen::VectorXd constant(int n, double v) {
    return Eigen::VectorXd::Constant(n, v);
}

} // namespace

TEST_CASE("theta1 and direct theta0 by hand") {
    // treated after: (3 + 5)/2 = 4; treated before: (1 + 2)/2 = 1.5
    // control trend: ((2-0) + (4-2))/2 = 2
    PanelDataset data({unit("t1", 1, 3, 1), unit("t2", 2, 5, 1),
                       unit("c1", 0, 2, 0), unit("c2", 2, 4, 0)},
                      {});
    CHECK(estimate_theta1(data) == doctest::Approx(4.0));
    CHECK(estimate_theta0_direct(data) == doctest::Approx(3.5));
}

TEST_CASE("weighting theta0 by hand") {
    PanelDataset data({unit("t1", 1, 0, 1), unit("t2", 2, 0, 1),
                       unit("c1", 0, 2, 0), unit("c2", 1, 2, 0)},
                      {});
    // e = 1/2 gives control weight 1, e = 2/3 gives weight 2
    Eigen::VectorXd e(4);
    e << 0.3, 0.3, 0.5, 2.0 / 3.0;
    NuisanceBundle nuis = oracle_nuisance(data, e, constant(4, 1.0), constant(4, 1.0));
    CHECK(nuis.weights[0] == 1.0);
    CHECK(nuis.weights[2] == doctest::Approx(1.0));
    CHECK(nuis.weights[3] == doctest::Approx(2.0));
    // (1 + 2 + 1*2 + 2*1) / 2 = 3.5
    CHECK(estimate_theta0_weighting(data, nuis) == doctest::Approx(3.5));
}

TEST_CASE("regression theta0 by hand") {
    PanelDataset data({unit("t1", 1, 0, 1), unit("t2", 3, 0, 1),
                       unit("c1", 0, 1, 0)},
                      {});
    Eigen::VectorXd mu(3), nu(3);
    mu << 1.0, 2.0, 0.5;
    nu << 1.5, 3.0, 0.5;
    NuisanceBundle nuis = oracle_nuisance(data, constant(3, 0.5), mu, nu);
    // (1 + 3)/2 + ((1.5-1) + (3-2))/2 = 2 + 0.75
    CHECK(estimate_theta0_regression(data, nuis) == doctest::Approx(2.75));
}

TEST_CASE("the two double-robust forms are algebraically identical") {
    DgpParams params;
    auto rng = substream(19, {fnv1a("dr-identity")});
    std::uniform_real_distribution<double> unif(0.05, 0.9);
    std::uniform_real_distribution<double> pos(0.1, 3.0);
    for (int rep = 0; rep < 20; ++rep) {
        ReplicateDraw draw = generate_replicate(params, 150, rng);
        const int n = draw.data.n();
        Eigen::VectorXd e(n), mu(n), nu(n);
        for (int i = 0; i < n; ++i) {
            e[i] = unif(rng);
            mu[i] = pos(rng);
            nu[i] = pos(rng);
        }
        NuisanceBundle nuis = oracle_nuisance(draw.data, e, mu, nu);
        const double a = estimate_theta0_dr(draw.data, nuis, DrForm::weighting_augmented);
        const double b = estimate_theta0_dr(draw.data, nuis, DrForm::regression_augmented);
        CHECK(a == doctest::Approx(b).epsilon(1e-10));
    }
}

TEST_CASE("dr collapses to weighting when the outcome models predict no trend") {
    PanelDataset data({unit("t1", 2, 1, 1), unit("t2", 0, 3, 1),
                       unit("c1", 1, 4, 0), unit("c2", 3, 2, 0)},
                      {});
    Eigen::VectorXd e(4);
    e << 0.4, 0.6, 0.3, 0.55;
    NuisanceBundle nuis = oracle_nuisance(data, e, constant(4, 1.3), constant(4, 1.3));
    CHECK(estimate_theta0_dr(data, nuis) ==
          doctest::Approx(estimate_theta0_weighting(data, nuis)).epsilon(1e-12));
}

TEST_CASE("dr collapses to regression when the outcome models fit the controls") {
    PanelDataset data({unit("t1", 2, 1, 1), unit("t2", 0, 3, 1),
                       unit("c1", 1, 4, 0), unit("c2", 3, 2, 0)},
                      {});
    Eigen::VectorXd e(4), mu(4), nu(4);
    e << 0.4, 0.6, 0.3, 0.55;
    mu << 0.7, 1.1, 1.0, 3.0;  // matches controls exactly, arbitrary on treated
    nu << 2.2, 0.4, 4.0, 2.0;
    NuisanceBundle nuis = oracle_nuisance(data, e, mu, nu);
    CHECK(estimate_theta0_dr(data, nuis) ==
          doctest::Approx(estimate_theta0_regression(data, nuis)).epsilon(1e-12));
}

TEST_CASE("propensity equal to the treated share collapses weighting to direct") {
    PanelDataset data({unit("t1", 2, 1, 1), unit("t2", 0, 3, 1),
                       unit("c1", 1, 4, 0), unit("c2", 3, 2, 0),
                       unit("c3", 0, 1, 0), unit("c4", 2, 2, 0)},
                      {});
    // e = pi means each control weight is pi/(1-pi) = N1/N0
    NuisanceBundle nuis = oracle_nuisance(data, constant(6, data.treated_fraction()),
                                          constant(6, 1.0), constant(6, 1.0));
    CHECK(estimate_theta0_weighting(data, nuis) ==
          doctest::Approx(estimate_theta0_direct(data)).epsilon(1e-12));
}

TEST_CASE("cfd is invariant to shifting every outcome") {
    std::vector<PanelUnit> base = {unit("t1", 2, 1, 1), unit("t2", 0, 3, 1),
                                   unit("c1", 1, 4, 0), unit("c2", 3, 2, 0)};
    std::vector<PanelUnit> shifted = base;
    for (auto& u : shifted) {
        u.y_before += 5.0;
        u.y_after += 5.0;
    }
    PanelDataset a(base, {}), b(shifted, {});
    Eigen::VectorXd e(4);
    e << 0.4, 0.6, 0.3, 0.55;
    NuisanceBundle na = oracle_nuisance(a, e, constant(4, 1.0), constant(4, 1.0));
    NuisanceBundle nb = oracle_nuisance(b, e, constant(4, 1.0), constant(4, 1.0));

    CHECK(estimate_theta1(a) - estimate_theta0_direct(a) ==
          doctest::Approx(estimate_theta1(b) - estimate_theta0_direct(b)));
    CHECK(estimate_theta1(a) - estimate_theta0_weighting(a, na) ==
          doctest::Approx(estimate_theta1(b) - estimate_theta0_weighting(b, nb)));
}

TEST_CASE("cmf is undefined when theta0 is non-positive") {
    // control trend -3 drags theta0 to 1 - 3 = -2
    PanelDataset data({unit("t1", 1, 2, 1), unit("c1", 4, 1, 0)}, {});
    NuisanceBundle none;
    EffectEstimate est = estimate_effect(data, Estimator::direct, none);
    CHECK(est.theta0 == doctest::Approx(-2.0));
    CHECK_FALSE(est.cmf_defined);
    CHECK(std::isnan(est.cmf));
    CHECK(est.cfd == doctest::Approx(4.0));
}

TEST_CASE("a null effect gives cfd zero and cmf one") {
    PanelDataset data({unit("t1", 2, 2, 1), unit("t2", 1, 1, 1),
                       unit("c1", 3, 3, 0), unit("c2", 0, 0, 0)},
                      {});
    NuisanceBundle none;
    EffectEstimate est = estimate_effect(data, Estimator::direct, none);
    CHECK(est.cfd == doctest::Approx(0.0));
    CHECK(est.cmf == doctest::Approx(1.0));
}

TEST_CASE("estimator names and nuisance requirements") {
    for (Estimator e : {Estimator::direct, Estimator::regression,
                        Estimator::weighting, Estimator::double_robust})
        CHECK(estimator_from_name(estimator_name(e)) == e);
    CHECK(estimator_from_name("dr") == Estimator::double_robust);
    CHECK(estimator_from_name("wt") == Estimator::weighting);
    CHECK_THROWS_AS(estimator_from_name("ols"), SchemaViolation);

    CHECK_FALSE(nuisance_requirements(Estimator::direct).propensity);
    CHECK_FALSE(nuisance_requirements(Estimator::direct).outcome);
    CHECK(nuisance_requirements(Estimator::regression).outcome);
    CHECK_FALSE(nuisance_requirements(Estimator::regression).propensity);
    CHECK(nuisance_requirements(Estimator::weighting).propensity);
    CHECK(nuisance_requirements(Estimator::double_robust).propensity);
    CHECK(nuisance_requirements(Estimator::double_robust).outcome);
}

TEST_CASE("missing nuisances throw") {
    PanelDataset data({unit("t1", 1, 2, 1), unit("c1", 1, 1, 0)}, {});
    NuisanceBundle none;
    CHECK_THROWS_AS(estimate_theta0_regression(data, none), MissingNuisance);
    CHECK_THROWS_AS(estimate_theta0_weighting(data, none), MissingNuisance);
    CHECK_THROWS_AS(estimate_theta0_dr(data, none), MissingNuisance);
}

TEST_CASE("fit_nuisance tracks the oracle on simulated data") {
    DgpParams params;
    auto rng = substream(5, {fnv1a("nuisance-fit")});
    ReplicateDraw draw = generate_replicate(params, 1500, rng);

    NuisanceSpecs specs;
    specs.propensity = dgp_correct_spec();
    specs.outcome = dgp_correct_spec();
    NuisanceBundle nuis = fit_nuisance(draw.data, specs, {true, true});

    REQUIRE(nuis.has_propensity());
    REQUIRE(nuis.has_outcome());
    const int n = draw.data.n();
    double err = 0.0;
    for (int i = 0; i < n; ++i) {
        CHECK(nuis.propensity_scores[i] > 0.0);
        CHECK(nuis.propensity_scores[i] < 1.0);
        CHECK(nuis.mu_hat[i] > 0.0);
        if (draw.data.unit(i).treated)
            CHECK(nuis.weights[i] == 1.0);
        else
            CHECK(nuis.weights[i] ==
                  doctest::Approx(nuis.propensity_scores[i] /
                                  (1.0 - nuis.propensity_scores[i])));
        err += std::abs(nuis.propensity_scores[i] - draw.oracle.propensity[i]);
    }
    CHECK(err / n < 0.03);
}

TEST_CASE("warm starts do not change the fit") {
    DgpParams params;
    auto rng = substream(5, {fnv1a("warm")});
    ReplicateDraw draw = generate_replicate(params, 600, rng);
    NuisanceSpecs specs;
    specs.propensity = dgp_correct_spec();
    specs.outcome = dgp_correct_spec();
    NuisanceBundle cold = fit_nuisance(draw.data, specs, {true, true});
    NuisanceBundle warm = fit_nuisance(draw.data, specs, {true, true}, &cold);
    CHECK((warm.propensity_scores - cold.propensity_scores).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((warm.mu_hat - cold.mu_hat).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(warm.propensity->iterations <= cold.propensity->iterations);
}

TEST_CASE("extreme control weights are flagged") {
    PanelDataset data({unit("t1", 1, 1, 1), unit("c1", 1, 1, 0)}, {});
    Eigen::VectorXd e(2);
    e << 0.5, 0.999;  // control weight 999
    NuisanceBundle nuis = oracle_nuisance(data, e, constant(2, 1.0), constant(2, 1.0));
    std::vector<std::string> warnings;
    estimate_theta0_weighting(data, nuis, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("ExtremeWeights") == 0);
}

TEST_CASE("treated_beyond_control_share counts extrapolating units") {
    PanelDataset data({unit("t1", 0, 0, 1), unit("t2", 0, 0, 1),
                       unit("t3", 0, 0, 1), unit("t4", 0, 0, 1),
                       unit("c1", 0, 0, 0), unit("c2", 0, 0, 0)},
                      {});
    Eigen::VectorXd e(6);
    e << 0.9, 0.7, 0.3, 0.65, 0.6, 0.2;  // control max 0.6; t1, t2, t4 exceed it
    CHECK(treated_beyond_control_share(data, e) == doctest::Approx(0.75));
}
