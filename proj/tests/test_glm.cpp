#include <doctest.h>

#include <cmath>

#include "drdid/glm.hpp"
#include "drdid/rng.hpp"
#include "drdid/sim.hpp"

using namespace drdid;

namespace {

// Plain Newton solver with analytic Hessian, independent of the IRLS path.
Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                int iters = 50) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd eta = X * beta;
        Eigen::VectorXd p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
        Eigen::VectorXd w = p.array() * (1.0 - p.array());
        Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
        beta += H.ldlt().solve(X.transpose() * (y - p));
    }
    return beta;
}

Eigen::MatrixXd quadratic_design(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
    Eigen::MatrixXd X(x1.size(), 4);
    X.col(0).setOnes();
    X.col(1) = x1;
    X.col(2) = x2;
    X.col(3) = x2.array().square();
    return X;
}

} // namespace

TEST_CASE("intercept-only logistic equals sample prevalence") {
    const int n1 = 331, n0 = 1655, n = n1 + n0;
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, 1);
    Eigen::VectorXd y(n);
    y.head(n1).setOnes();
    y.tail(n0).setZero();
    LogisticFit fit = fit_logistic(X, y);
    CHECK(fit.converged);
    Eigen::VectorXd p = fit.predict(X);
    CHECK(p[0] == doctest::Approx(331.0 / 1986.0).epsilon(1e-10));
    CHECK(p.minCoeff() == p.maxCoeff());
}

TEST_CASE("balanced labels on symmetric design give zero coefficients") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 1, 1, 1, 1, -1, 1, -1;
    Eigen::VectorXd y(4);
    y << 1, 0, 1, 0;
    LogisticFit fit = fit_logistic(X, y);
    CHECK(fit.converged);
    CHECK(fit.coefficients[0] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(fit.coefficients[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("logistic recovers the simulated propensity model") {
    DgpParams params;
    auto rng = substream(42, {fnv1a("ps-recovery")});
    ReplicateDraw draw = generate_replicate(params, 2000, rng);
    Eigen::VectorXd x1 = draw.data.covariate_column("x1");
    Eigen::VectorXd x2 = draw.data.covariate_column("x2");
    Eigen::MatrixXd X = quadratic_design(x1, x2);
    Eigen::VectorXd g = draw.data.treated();

    LogisticFit fit = fit_logistic(X, g);
    REQUIRE(fit.converged);

    // independent solver on the same sample
    Eigen::VectorXd oracle = newton_logistic(X, g);
    for (int j = 0; j < 4; ++j)
        CHECK(fit.coefficients[j] == doctest::Approx(oracle[j]).epsilon(1e-7));

    // within 3 standard errors of the generating coefficients
    Eigen::VectorXd p = fit.predict(X);
    Eigen::VectorXd w = p.array() * (1.0 - p.array());
    Eigen::MatrixXd cov = (X.transpose() * w.asDiagonal() * X).inverse();
    const Eigen::Vector4d truth{-2.0, 1.0, -0.2, 0.04};
    for (int j = 0; j < 4; ++j) {
        const double se = std::sqrt(cov(j, j));
        CHECK(std::abs(fit.coefficients[j] - truth[j]) < 3.0 * se);
    }

    // converged fit with intercept satisfies the score identity
    Eigen::VectorXd score = logistic_score(X, g, fit.coefficients);
    CHECK(score.norm() < 1e-8);
}

TEST_CASE("logistic flags separation without throwing") {
    Eigen::MatrixXd X(6, 2);
    X << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
    Eigen::VectorXd y(6);
    y << 0, 0, 0, 1, 1, 1;
    LogisticFit fit = fit_logistic(X, y);
    CHECK(!fit.converged);
    CHECK(fit.separation_detected);
}

TEST_CASE("logistic rejects one-class labels") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
    CHECK_THROWS_AS(fit_logistic(X, Eigen::VectorXd::Ones(5)), DegenerateDesign);
}

TEST_CASE("constant counts degrade to poisson with intercept ln(c)") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(50, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(50, 7.0);
    NegBinFit fit = fit_negbin(X, y);
    CHECK(fit.family == CountFamily::poisson);
    CHECK(std::isinf(fit.dispersion));
    CHECK(fit.coefficients[0] == doctest::Approx(std::log(7.0)).epsilon(1e-8));
}

TEST_CASE("negbin recovers the simulated dispersion") {
    DgpParams params;
    auto rng = substream(7, {fnv1a("nb-dispersion")});
    const int n = 2000;
    std::bernoulli_distribution bern(params.x1_prob);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd x1(n), x2(n), y(n);
    for (int i = 0; i < n; ++i) {
        x1[i] = bern(rng) ? 1.0 : 0.0;
        x2[i] = params.x2_mean_base + params.x2_mean_x1 * x1[i] + params.x2_sd * normal(rng);
        const double m = params.mean(params.mu00_coefs, x1[i], x2[i]);
        std::gamma_distribution<double> gamma(params.dispersion, m / params.dispersion);
        std::poisson_distribution<long> pois(std::max(gamma(rng), 1e-12));
        y[i] = static_cast<double>(pois(rng));
    }
    Eigen::MatrixXd X = quadratic_design(x1, x2);
    NegBinFit fit = fit_negbin(X, y);
    REQUIRE(fit.converged);
    CHECK(fit.family == CountFamily::negbin);

    // oracle: grid search of the log-likelihood over phi, coefficients refit
    // per grid point by damped Newton independent of the IRLS path
    double best_phi = 0.0, best_ll = -1e300;
    for (double phi = 1.2; phi < 5.0; phi *= 1.01) {
        Eigen::VectorXd beta = fit.coefficients;  // start anywhere; refit below
        beta.setZero();
        for (int it = 0; it < 200; ++it) {
            Eigen::VectorXd m = (X * beta).array().exp().matrix();
            Eigen::VectorXd r = (y - m).array() * phi / (m.array() + phi);
            Eigen::VectorXd w = m.array() * phi / (m.array() + phi);
            Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
            Eigen::VectorXd step = H.ldlt().solve(X.transpose() * r);
            if (step.norm() > 1.0) step *= 1.0 / step.norm();
            beta += step;
        }
        const double ll = negbin_loglik(X, y, beta, phi);
        if (ll > best_ll) {
            best_ll = ll;
            best_phi = phi;
        }
    }
    CHECK(fit.dispersion == doctest::Approx(best_phi).epsilon(0.02));
    // 3 Monte Carlo SEs around the generating value; with means this small the
    // dispersion is weakly identified (SE approx 0.57 at N=2000)
    CHECK(std::abs(fit.dispersion - 2.5) < 1.7);
}

TEST_CASE("duplicated column raises SingularInformation") {
    Eigen::MatrixXd X(20, 2);
    X.col(0).setOnes();
    X.col(1).setOnes();
    Eigen::VectorXd y(20);
    for (int i = 0; i < 20; ++i) y[i] = i % 3;
    CHECK_THROWS_AS(fit_negbin(X, y), SingularInformation);
}

TEST_CASE("negbin rejects non-integer responses") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 1.5);
    CHECK_THROWS_AS(fit_negbin(X, y), SchemaViolation);
}

TEST_CASE("analytic scores match finite differences") {
    auto rng = substream(3, {fnv1a("fd-check")});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int n = 60, q = 3;

    for (int rep = 0; rep < 5; ++rep) {
        Eigen::MatrixXd X(n, q);
        X.col(0).setOnes();
        for (int i = 0; i < n; ++i) {
            X(i, 1) = normal(rng);
            X(i, 2) = normal(rng);
        }
        Eigen::VectorXd ybin(n), ycount(n);
        for (int i = 0; i < n; ++i) {
            ybin[i] = unif(rng) < 0.5 ? 1.0 : 0.0;
            ycount[i] = std::floor(unif(rng) * 6.0);
        }
        Eigen::VectorXd beta(q);
        for (int j = 0; j < q; ++j) beta[j] = 0.4 * normal(rng);
        const double phi = 0.5 + 3.0 * unif(rng);

        const double h = 1e-6;
        // logistic
        Eigen::VectorXd score = logistic_score(X, ybin, beta);
        for (int j = 0; j < q; ++j) {
            Eigen::VectorXd bp = beta, bm = beta;
            bp[j] += h;
            bm[j] -= h;
            const double fd =
                (logistic_loglik(X, ybin, bp) - logistic_loglik(X, ybin, bm)) / (2 * h);
            CHECK(score[j] == doctest::Approx(fd).epsilon(1e-6));
        }
        // negative binomial, coefficients and dispersion
        Eigen::VectorXd nbscore = negbin_score(X, ycount, beta, phi);
        for (int j = 0; j < q; ++j) {
            Eigen::VectorXd bp = beta, bm = beta;
            bp[j] += h;
            bm[j] -= h;
            const double fd = (negbin_loglik(X, ycount, bp, phi) -
                               negbin_loglik(X, ycount, bm, phi)) / (2 * h);
            CHECK(nbscore[j] == doctest::Approx(fd).epsilon(1e-6));
        }
        const double fd_phi = (negbin_loglik(X, ycount, beta, phi + h) -
                               negbin_loglik(X, ycount, beta, phi - h)) / (2 * h);
        CHECK(nbscore[q] == doctest::Approx(fd_phi).epsilon(1e-6));
    }
}

TEST_CASE("log-likelihood trace is non-decreasing") {
    glm_record_trace() = true;
    DgpParams params;
    auto rng = substream(99, {fnv1a("trace")});
    ReplicateDraw draw = generate_replicate(params, 500, rng);
    Eigen::MatrixXd X = quadratic_design(draw.data.covariate_column("x1"),
                                         draw.data.covariate_column("x2"));

    LogisticFit lf = fit_logistic(X, draw.data.treated());
    for (std::size_t i = 1; i < lf.loglik_trace.size(); ++i)
        CHECK(lf.loglik_trace[i] >= lf.loglik_trace[i - 1] - 1e-8);

    NegBinFit nf = fit_negbin(X, draw.data.y_before());
    REQUIRE(nf.loglik_trace.size() > 1);
    for (std::size_t i = 1; i < nf.loglik_trace.size(); ++i)
        CHECK(nf.loglik_trace[i] >= nf.loglik_trace[i - 1] - 1e-8);
    glm_record_trace() = false;
}

TEST_CASE("negbin with huge fixed dispersion matches poisson") {
    DgpParams params;
    auto rng = substream(5, {fnv1a("nb-poisson")});
    ReplicateDraw draw = generate_replicate(params, 800, rng);
    Eigen::MatrixXd X = quadratic_design(draw.data.covariate_column("x1"),
                                         draw.data.covariate_column("x2"));
    Eigen::VectorXd y = draw.data.y_before();

    NegBinFit nb = fit_negbin(X, y, 1e-10, 200, nullptr, 1e8);
    NegBinFit pois = fit_poisson(X, y, 1e-10, 200);
    for (int j = 0; j < 4; ++j)
        CHECK(nb.coefficients[j] == doctest::Approx(pois.coefficients[j]).epsilon(1e-6));
}

TEST_CASE("singleton candidate order is returned unconditionally") {
    DgpParams params;
    auto rng = substream(21, {fnv1a("singleton")});
    ReplicateDraw draw = generate_replicate(params, 300, rng);
    FeatureSpec base = dgp_correct_spec();
    CvConfig cv;
    cv.method = CrossValidation::kfold;
    cv.k = 5;
    FeatureSpec chosen = select_power_order(draw.data, base, {3}, cv);
    CHECK(chosen.power_orders.at("x2") == 3);
}

TEST_CASE("cv order selection: linear logit picks order 1") {
    // treatment from a linear logit in x2; larger orders only add variance
    DgpParams params;
    params.ps_coefs = Eigen::Vector4d{-2.0, 1.0, 0.25, 0.0};
    auto rng = substream(1234, {fnv1a("linear-logit")});
    ReplicateDraw draw = generate_replicate(params, 2000, rng);
    CvConfig cv;
    cv.method = CrossValidation::kfold;
    cv.k = 10;
    cv.seed = 77;
    FeatureSpec chosen =
        select_power_order(draw.data, dgp_correct_spec(), {1, 2, 3}, cv);
    CHECK(chosen.power_orders.at("x2") == 1);
}

TEST_CASE("cv order selection: quadratic logit picks order 2") {
    DgpParams params;
    auto rng = substream(4321, {fnv1a("quadratic-logit")});
    ReplicateDraw draw = generate_replicate(params, 2000, rng);
    CvConfig cv;
    cv.method = CrossValidation::loocv;
    FeatureSpec chosen =
        select_power_order(draw.data, dgp_correct_spec(), {1, 2, 3}, cv);
    CHECK(chosen.power_orders.at("x2") == 2);
}
