#ifndef DRDID_GLM_HPP
#define DRDID_GLM_HPP

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "drdid/panel_data.hpp"

namespace drdid {

inline constexpr double kProbClamp = 1e-12;       // fitted probabilities kept in [eps, 1-eps]
inline constexpr double kPoissonDispersion = 1e8; // dispersion treated as "infinite"

/// When true, fits record the accepted log-likelihood after every iteration
/// in loglik_trace. Off by default (bootstrap refits are allocation-heavy).
bool& glm_record_trace();

struct LogisticFit {
    Eigen::VectorXd coefficients;
    bool converged = false;
    int iterations = 0;
    double log_likelihood = 0.0;
    bool separation_detected = false;
    FeatureSpec feature_spec;
    std::vector<double> loglik_trace;

    /// Fitted probabilities, clamped to [kProbClamp, 1-kProbClamp].
    Eigen::VectorXd predict(const Eigen::MatrixXd& design) const;
};

enum class CountFamily { negbin, poisson };

struct NegBinFit {
    Eigen::VectorXd coefficients;
    double dispersion = 0.0;  // phi in Var = mu + mu^2/phi; infinite for poisson
    bool converged = false;
    int iterations = 0;
    double log_likelihood = 0.0;
    CountFamily family = CountFamily::negbin;
    FeatureSpec feature_spec;
    std::vector<double> loglik_trace;

    /// Fitted means exp(design * coefficients).
    Eigen::VectorXd predict_mean(const Eigen::MatrixXd& design) const;
};

// Log-likelihoods and analytic scores, exposed for gradient checks.
double logistic_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                       const Eigen::VectorXd& coef);
Eigen::VectorXd logistic_score(const Eigen::MatrixXd& design,
                               const Eigen::VectorXd& labels,
                               const Eigen::VectorXd& coef);

double negbin_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                     const Eigen::VectorXd& coef, double dispersion);
/// Score of (coefficients, dispersion); length q+1, last entry d/d(phi).
Eigen::VectorXd negbin_score(const Eigen::MatrixXd& design,
                             const Eigen::VectorXd& counts,
                             const Eigen::VectorXd& coef, double dispersion);

double poisson_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                      const Eigen::VectorXd& coef);

double digamma(double x);

LogisticFit fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                         double tol = 1e-8, int max_iter = 100,
                         const Eigen::VectorXd* start = nullptr);

/// Joint MLE of coefficients and dispersion under NB2 with log link.
/// fixed_dispersion pins phi (no dispersion update); used for the Poisson limit.
NegBinFit fit_negbin(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                     double tol = 1e-8, int max_iter = 100,
                     const NegBinFit* start = nullptr,
                     std::optional<double> fixed_dispersion = std::nullopt);

NegBinFit fit_poisson(const Eigen::MatrixXd& design, const Eigen::VectorXd& counts,
                      double tol = 1e-8, int max_iter = 100,
                      const Eigen::VectorXd* start = nullptr);

enum class CrossValidation { loocv, kfold };

struct CvConfig {
    CrossValidation method = CrossValidation::loocv;
    int k = 10;              // folds when method == kfold
    std::uint64_t seed = 0;  // fold assignment shuffling
};

/// Picks the shared power-series order for the propensity model by
/// cross-validated squared error of the predicted treatment probability.
/// Candidate orders apply to every column named in base_spec.power_orders.
FeatureSpec select_power_order(const PanelDataset& data, const FeatureSpec& base_spec,
                               const std::vector<int>& orders, const CvConfig& cv);

/// CV mean squared errors per candidate order (NaN = ineligible); exposed for
/// inspection and tests.
std::vector<double> power_order_cv_mse(const PanelDataset& data,
                                       const FeatureSpec& base_spec,
                                       const std::vector<int>& orders,
                                       const CvConfig& cv);

} // namespace drdid

#endif
