#ifndef DRDID_PANEL_DATA_HPP
#define DRDID_PANEL_DATA_HPP

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "drdid/errors.hpp"

namespace drdid {

enum class OutcomeFamily { count, continuous };

/// One unit of a two-period two-group panel: outcomes in the before and
/// after period, group label, and pre-treatment covariates.
struct PanelUnit {
    std::string id;
    double y_before = 0.0;
    double y_after = 0.0;
    int treated = 0;
    std::vector<double> covariates;
};

class PanelDataset {
public:
    PanelDataset(std::vector<PanelUnit> units,
                 std::vector<std::string> covariate_names,
                 OutcomeFamily family = OutcomeFamily::count);

    int n() const { return static_cast<int>(units_.size()); }
    int n_treated() const { return n_treated_; }
    int n_control() const { return n() - n_treated_; }
    int n_covariates() const { return static_cast<int>(covariate_names_.size()); }
    double treated_fraction() const { return static_cast<double>(n_treated_) / n(); }

    const std::vector<PanelUnit>& units() const { return units_; }
    const PanelUnit& unit(int i) const { return units_[static_cast<std::size_t>(i)]; }
    const std::vector<std::string>& covariate_names() const { return covariate_names_; }
    OutcomeFamily outcome_family() const { return family_; }

    int covariate_index(const std::string& name) const;

    Eigen::VectorXd y_before() const;
    Eigen::VectorXd y_after() const;
    Eigen::VectorXd treated() const;
    Eigen::VectorXd covariate_column(const std::string& name) const;

    /// Dataset formed by the given unit indices (with repetition allowed;
    /// used by the bootstrap). Throws DegenerateDesign if a group vanishes.
    PanelDataset resample(const std::vector<int>& indices) const;

private:
    std::vector<PanelUnit> units_;
    std::vector<std::string> covariate_names_;
    OutcomeFamily family_;
    int n_treated_ = 0;
};

struct CsvSchema {
    std::string treatment_column;
    std::string before_column;
    std::string after_column;
    std::vector<std::string> covariate_columns;
    std::string id_column;  // optional; empty means row numbers
    bool lenient = false;   // drop rows with missing mapped values instead of failing
};

struct LoadResult {
    PanelDataset data;
    int n_dropped = 0;
};

LoadResult load_csv(const std::string& path, const CsvSchema& schema,
                    OutcomeFamily family = OutcomeFamily::count);

void write_csv(const PanelDataset& data, const CsvSchema& schema,
               const std::string& path);

/// Design recipe: which covariates enter, power-series order per continuous
/// column, log transforms, intercept.
struct FeatureSpec {
    std::vector<std::string> base_columns;
    std::map<std::string, int> power_orders;  // column -> l, 1 <= l <= 5
    std::set<std::string> log_transform;
    bool include_intercept = true;
    bool standardize = false;  // center/scale continuous columns before powering

    void validate() const;
};

struct DesignMatrix {
    Eigen::MatrixXd values;               // n x q, rows aligned with dataset units
    std::vector<std::string> column_names;

    int rows() const { return static_cast<int>(values.rows()); }
    int cols() const { return static_cast<int>(values.cols()); }
};

DesignMatrix expand_features(const PanelDataset& data, const FeatureSpec& spec);

} // namespace drdid

#endif
