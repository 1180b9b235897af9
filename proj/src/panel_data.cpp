#include "drdid/panel_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace drdid {

PanelDataset::PanelDataset(std::vector<PanelUnit> units,
                           std::vector<std::string> covariate_names,
                           OutcomeFamily family)
    : units_(std::move(units)),
      covariate_names_(std::move(covariate_names)),
      family_(family) {
    std::set<std::string> seen;
    for (const auto& name : covariate_names_) {
        if (!seen.insert(name).second)
            throw SchemaViolation("duplicate covariate name: " + name);
    }
    const std::size_t p = covariate_names_.size();
    for (const auto& u : units_) {
        if (u.treated != 0 && u.treated != 1)
            throw SchemaViolation("treatment indicator must be 0 or 1 (unit " +
                                  u.id + ")");
        if (u.covariates.size() != p)
            throw SchemaViolation("unit " + u.id + " has " +
                                  std::to_string(u.covariates.size()) +
                                  " covariates, expected " + std::to_string(p));
        if (family_ == OutcomeFamily::count &&
            (u.y_before < 0.0 || u.y_after < 0.0))
            throw SchemaViolation("negative count outcome (unit " + u.id + ")");
        if (!std::isfinite(u.y_before) || !std::isfinite(u.y_after))
            throw SchemaViolation("non-finite outcome (unit " + u.id + ")");
        n_treated_ += u.treated;
    }
    if (n_treated_ == 0 || n_treated_ == n())
        throw DegenerateDesign("both treated and control units are required "
                               "(N1=" + std::to_string(n_treated_) +
                               ", N=" + std::to_string(n()) + ")");
}

int PanelDataset::covariate_index(const std::string& name) const {
    auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end())
        throw SchemaViolation("unknown covariate: " + name);
    return static_cast<int>(it - covariate_names_.begin());
}

Eigen::VectorXd PanelDataset::y_before() const {
    Eigen::VectorXd v(n());
    for (int i = 0; i < n(); ++i) v[i] = units_[static_cast<std::size_t>(i)].y_before;
    return v;
}

Eigen::VectorXd PanelDataset::y_after() const {
    Eigen::VectorXd v(n());
    for (int i = 0; i < n(); ++i) v[i] = units_[static_cast<std::size_t>(i)].y_after;
    return v;
}

Eigen::VectorXd PanelDataset::treated() const {
    Eigen::VectorXd v(n());
    for (int i = 0; i < n(); ++i) v[i] = units_[static_cast<std::size_t>(i)].treated;
    return v;
}

Eigen::VectorXd PanelDataset::covariate_column(const std::string& name) const {
    const int j = covariate_index(name);
    Eigen::VectorXd v(n());
    for (int i = 0; i < n(); ++i)
        v[i] = units_[static_cast<std::size_t>(i)].covariates[static_cast<std::size_t>(j)];
    return v;
}

PanelDataset PanelDataset::resample(const std::vector<int>& indices) const {
    std::vector<PanelUnit> resampled;
    resampled.reserve(indices.size());
    for (int idx : indices) resampled.push_back(units_[static_cast<std::size_t>(idx)]);
    return PanelDataset(std::move(resampled), covariate_names_, family_);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

bool parse_double(const std::string& s, double* out) {
    if (s.empty()) return false;
    try {
        std::size_t pos = 0;
        *out = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        return pos == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

LoadResult load_csv(const std::string& path, const CsvSchema& schema,
                    OutcomeFamily family) {
    std::ifstream in(path);
    if (!in) throw MalformedFile("cannot open " + path);

    std::string header;
    if (!std::getline(in, header)) throw MalformedFile("empty file: " + path);
    auto columns = split_csv_line(header);
    for (auto& c : columns) c = trim(c);

    std::unordered_map<std::string, int> col_index;
    for (std::size_t j = 0; j < columns.size(); ++j)
        col_index[columns[j]] = static_cast<int>(j);

    auto require = [&](const std::string& name) {
        auto it = col_index.find(name);
        if (it == col_index.end())
            throw SchemaViolation("column not found: " + name);
        return it->second;
    };

    const int g_col = require(schema.treatment_column);
    const int yb_col = require(schema.before_column);
    const int ya_col = require(schema.after_column);
    std::vector<int> cov_cols;
    for (const auto& name : schema.covariate_columns) cov_cols.push_back(require(name));
    const int id_col = schema.id_column.empty() ? -1 : require(schema.id_column);

    std::vector<PanelUnit> units;
    int n_dropped = 0;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != columns.size())
            throw MalformedFile(path + ": row " + std::to_string(row) + " has " +
                                std::to_string(fields.size()) + " fields, expected " +
                                std::to_string(columns.size()));

        PanelUnit u;
        u.id = id_col >= 0 ? trim(fields[static_cast<std::size_t>(id_col)])
                           : std::to_string(row);

        bool missing = false;
        double g = 0.0;
        auto get = [&](int col, double* out) {
            if (!parse_double(trim(fields[static_cast<std::size_t>(col)]), out))
                missing = true;
        };
        get(g_col, &g);
        get(yb_col, &u.y_before);
        get(ya_col, &u.y_after);
        u.covariates.resize(cov_cols.size());
        for (std::size_t k = 0; k < cov_cols.size(); ++k)
            get(cov_cols[k], &u.covariates[k]);

        if (missing) {
            if (schema.lenient) {
                ++n_dropped;
                continue;
            }
            throw SchemaViolation(path + ": row " + std::to_string(row) +
                                  " has a missing or non-numeric mapped value");
        }
        if (g != 0.0 && g != 1.0)
            throw SchemaViolation(path + ": row " + std::to_string(row) +
                                  " has non-binary treatment value");
        u.treated = static_cast<int>(g);
        if (family == OutcomeFamily::count && (u.y_before < 0.0 || u.y_after < 0.0))
            throw SchemaViolation(path + ": row " + std::to_string(row) +
                                  " has a negative count outcome");
        units.push_back(std::move(u));
    }
    if (units.empty()) throw MalformedFile(path + ": no data rows");

    return LoadResult{PanelDataset(std::move(units), schema.covariate_columns, family),
                      n_dropped};
}

void write_csv(const PanelDataset& data, const CsvSchema& schema,
               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw MalformedFile("cannot write " + path);
    out << (schema.id_column.empty() ? std::string("id") : schema.id_column) << ','
        << schema.treatment_column << ',' << schema.before_column << ','
        << schema.after_column;
    for (const auto& name : data.covariate_names()) out << ',' << name;
    out << '\n';
    out.precision(17);
    for (const auto& u : data.units()) {
        out << u.id << ',' << u.treated << ',' << u.y_before << ',' << u.y_after;
        for (double x : u.covariates) out << ',' << x;
        out << '\n';
    }
}

void FeatureSpec::validate() const {
    for (const auto& [name, order] : power_orders) {
        if (order < 1 || order > 5)
            throw SchemaViolation("power order for " + name +
                                  " must lie in [1,5], got " + std::to_string(order));
    }
}

DesignMatrix expand_features(const PanelDataset& data, const FeatureSpec& spec) {
    spec.validate();
    const int n = data.n();

    struct Column {
        std::string name;
        Eigen::VectorXd values;
    };
    std::vector<Column> out;
    if (spec.include_intercept)
        out.push_back({"(intercept)", Eigen::VectorXd::Ones(n)});

    for (const auto& name : spec.base_columns) {
        Eigen::VectorXd v = data.covariate_column(name);
        std::string label = name;
        if (spec.log_transform.count(name)) {
            if ((v.array() <= 0.0).any())
                throw NonPositiveLog("log transform of non-positive values in " + name);
            v = v.array().log().matrix();
            label = "log(" + name + ")";
        }
        auto it = spec.power_orders.find(name);
        const int order = it == spec.power_orders.end() ? 1 : it->second;
        if (spec.standardize && order >= 1) {
            const double mean = v.mean();
            const double sd = n > 1 ? std::sqrt((v.array() - mean).square().sum() / (n - 1))
                                    : 0.0;
            if (sd > 0.0) v = ((v.array() - mean) / sd).matrix();
        }
        Eigen::VectorXd power = Eigen::VectorXd::Ones(n);
        for (int l = 1; l <= order; ++l) {
            power = power.cwiseProduct(v);
            std::string colname = label;
            if (l > 1) colname += "^" + std::to_string(l);
            out.push_back({colname, power});
        }
    }

    DesignMatrix design;
    design.values.resize(n, static_cast<Eigen::Index>(out.size()));
    design.column_names.reserve(out.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        design.values.col(static_cast<Eigen::Index>(j)) = out[j].values;
        design.column_names.push_back(out[j].name);
    }
    return design;
}

} // namespace drdid
