#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "drdid/bootstrap.hpp"
#include "drdid/diagnostics.hpp"
#include "drdid/parallel.hpp"
#include "drdid/rng.hpp"
#include "drdid/sim.hpp"

using json = nlohmann::ordered_json;
using namespace drdid;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr int kSchemaVersion = 1;

constexpr int kExitValidation = 2;
constexpr int kExitFitting = 3;

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct DataFlags {
    std::string data_path, treatment, before, after, id_column;
    std::string covariates, log_cols;
    std::string ps_power = "2";
    bool lenient = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", data_path, "panel CSV file")->required();
        cmd->add_option("--treatment", treatment, "0/1 group column")->required();
        cmd->add_option("--before", before, "before-period outcome column")->required();
        cmd->add_option("--after", after, "after-period outcome column")->required();
        cmd->add_option("--covariates", covariates, "comma-separated covariate columns")
            ->required();
        cmd->add_option("--id", id_column, "unit id column (default: row numbers)");
        cmd->add_option("--ps-power", ps_power,
                        "power-series order for continuous covariates, or 'auto'");
        cmd->add_option("--log-cols", log_cols, "covariates entering in logs");
        cmd->add_flag("--lenient", lenient, "drop rows with missing values");
    }
};

struct RunFlags {
    std::string estimators = "direct,regression,weighting,double_robust";
    int bootstrap = 500;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out_path, weights_path;
    std::string format = "json";

    void attach(CLI::App* cmd) {
        cmd->add_option("--estimators", estimators, "comma-separated estimator list");
        cmd->add_option("--bootstrap", bootstrap, "bootstrap replicates (0 = point only)");
        cmd->add_option("--alpha", alpha, "two-sided CI level");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--threads", threads, "worker threads (default: DRDID_THREADS)");
        cmd->add_option("--out", out_path, "output file (default: stdout)");
        cmd->add_option("--format", format, "json or csv")
            ->check(CLI::IsMember({"json", "csv"}));
        cmd->add_option("--dump-weights", weights_path,
                        "write per-unit propensity scores and ATT weights to this CSV");
    }
};

LoadResult load_data(const DataFlags& flags) {
    CsvSchema schema;
    schema.treatment_column = flags.treatment;
    schema.before_column = flags.before;
    schema.after_column = flags.after;
    schema.covariate_columns = split_list(flags.covariates);
    schema.id_column = flags.id_column;
    schema.lenient = flags.lenient;
    if (schema.covariate_columns.empty())
        throw SchemaViolation("--covariates must name at least one column");
    return load_csv(flags.data_path, schema);
}

bool is_binary_column(const Eigen::VectorXd& x) {
    std::set<double> seen;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        seen.insert(x[i]);
        if (seen.size() > 2) return false;
    }
    return true;
}

/// Applies the power series to continuous covariates only; binary indicators
/// stay linear, mirroring the usual quadratic-in-exposure specifications.
FeatureSpec base_feature_spec(const PanelDataset& data, const DataFlags& flags,
                              int order) {
    FeatureSpec spec;
    spec.base_columns = split_list(flags.covariates);
    for (const auto& name : split_list(flags.log_cols))
        spec.log_transform.insert(name);
    for (const auto& name : spec.base_columns)
        if (!is_binary_column(data.covariate_column(name)))
            spec.power_orders[name] = order;
    spec.validate();
    return spec;
}

NuisanceSpecs resolve_specs(const PanelDataset& data, const DataFlags& flags,
                            std::uint64_t seed, json* echo) {
    int order = 1;
    bool auto_order = false;
    if (flags.ps_power == "auto") {
        auto_order = true;
    } else {
        try {
            order = std::stoi(flags.ps_power);
        } catch (const std::exception&) {
            throw SchemaViolation("--ps-power must be an integer or 'auto'");
        }
    }

    NuisanceSpecs specs;
    if (auto_order) {
        CvConfig cv;
        cv.method = data.n() <= 200 ? CrossValidation::loocv : CrossValidation::kfold;
        cv.seed = seed;
        specs.propensity = select_power_order(data, base_feature_spec(data, flags, 1),
                                              {1, 2, 3, 4, 5}, cv);
        for (const auto& [name, l] : specs.propensity.power_orders) order = l;
    } else {
        specs.propensity = base_feature_spec(data, flags, order);
    }
    specs.outcome = specs.propensity;
    if (echo) (*echo)["ps_power_resolved"] = order;
    return specs;
}

json interval_json(const std::optional<std::pair<double, double>>& ci) {
    if (!ci) return nullptr;
    return json::array({ci->first, ci->second});
}

json estimate_json(const std::string& name, const EffectEstimate& est) {
    json j;
    j["estimator"] = name;
    j["theta1"] = est.theta1;
    j["theta0"] = est.theta0;
    j["cfd"] = est.cfd;
    j["cmf"] = est.cmf_defined ? json(est.cmf) : json(nullptr);
    j["cmf_defined"] = est.cmf_defined;
    j["ci_cfd"] = interval_json(est.ci_cfd);
    j["ci_cmf"] = interval_json(est.ci_cmf);
    j["warnings"] = est.warnings;
    return j;
}

json balance_json(const BalanceReport& report) {
    json features = json::array();
    for (const auto& fb : report.per_feature) {
        json f;
        f["name"] = fb.name;
        f["asd_unweighted"] = fb.asd_unweighted;
        f["asd_weighted"] = fb.asd_weighted;
        f["zero_variance"] = fb.zero_variance;
        features.push_back(std::move(f));
    }
    json j;
    j["per_feature"] = std::move(features);
    j["max_unweighted"] = report.max_unweighted;
    j["max_weighted"] = report.max_weighted;
    return j;
}

json overlap_json(const OverlapReport& report) {
    json j;
    j["bin_edges"] = report.bin_edges;
    j["histogram_treated"] = report.histogram_treated;
    j["histogram_control"] = report.histogram_control;
    j["control_ps_max"] = report.control_ps_max;
    j["treated_beyond_control_max"] = report.treated_beyond_control_max;
    return j;
}

void dump_weights(const PanelDataset& data, const NuisanceBundle& nuisance,
                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw MalformedFile("cannot open " + path + " for writing");
    out << "id,treated,propensity,att_weight\n";
    for (int i = 0; i < data.n(); ++i) {
        out << data.unit(i).id << ',' << data.unit(i).treated << ',';
        if (nuisance.has_propensity())
            out << nuisance.propensity_scores[i];
        out << ',' << nuisance.weights[i] << '\n';
    }
}

void write_output(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw MalformedFile("cannot open " + path + " for writing");
    out << text << '\n';
}

std::string estimates_csv(const json& estimates) {
    std::ostringstream out;
    out.precision(17);
    out << "estimator,theta1,theta0,cfd,cmf,ci_cfd_lo,ci_cfd_hi,ci_cmf_lo,ci_cmf_hi\n";
    auto cell = [&](const json& v) {
        if (v.is_null())
            out << "NA";
        else
            out << v.get<double>();
    };
    for (const auto& e : estimates) {
        out << e["estimator"].get<std::string>() << ',';
        cell(e["theta1"]);
        out << ',';
        cell(e["theta0"]);
        out << ',';
        cell(e["cfd"]);
        out << ',';
        cell(e["cmf"]);
        for (const char* key : {"ci_cfd", "ci_cmf"}) {
            const json& ci = e[key];
            if (ci.is_null()) {
                out << ",NA,NA";
            } else {
                out << ',';
                cell(ci[0]);
                out << ',';
                cell(ci[1]);
            }
        }
        out << '\n';
    }
    return out.str();
}

json run_pipeline(const DataFlags& data_flags, const RunFlags& run_flags,
                  bool placebo) {
    const auto started = std::chrono::steady_clock::now();
    auto [data, n_dropped] = load_data(data_flags);

    std::vector<Estimator> requested;
    for (const auto& name : split_list(run_flags.estimators))
        requested.push_back(estimator_from_name(name));
    if (requested.empty()) throw SchemaViolation("--estimators is empty");
    if (run_flags.bootstrap < 0)
        throw SchemaViolation("--bootstrap must be >= 0");
    if (placebo && run_flags.bootstrap == 0)
        throw SchemaViolation("placebo needs bootstrap intervals; use --bootstrap > 0");

    json report;
    report["tool"] = {{"name", "drdid"}, {"version", kToolVersion}};
    report["schema_version"] = kSchemaVersion;
    report["command"] = placebo ? "placebo" : "analyze";
    json config;
    config["data"] = data_flags.data_path;
    config["treatment"] = data_flags.treatment;
    config["before"] = data_flags.before;
    config["after"] = data_flags.after;
    config["covariates"] = split_list(data_flags.covariates);
    config["log_cols"] = split_list(data_flags.log_cols);
    config["ps_power"] = data_flags.ps_power;
    config["estimators"] = run_flags.estimators;
    config["bootstrap"] = run_flags.bootstrap;
    config["alpha"] = run_flags.alpha;
    config["seed"] = run_flags.seed;
    config["n_units"] = data.n();
    config["n_dropped_rows"] = n_dropped;

    NuisanceSpecs specs = resolve_specs(data, data_flags, run_flags.seed, &config);
    report["config"] = std::move(config);

    const int threads =
        run_flags.threads > 0 ? run_flags.threads : default_thread_count();
    std::vector<std::string> warnings;

    // diagnostics use the richest nuisance set any estimator needs
    NuisanceRequirements all_needs;
    for (Estimator est : requested) {
        const NuisanceRequirements need = nuisance_requirements(est);
        all_needs.propensity = all_needs.propensity || need.propensity;
        all_needs.outcome = all_needs.outcome || need.outcome;
    }
    NuisanceBundle diag_bundle = fit_nuisance(data, specs, all_needs);
    warnings.insert(warnings.end(), diag_bundle.warnings.begin(),
                    diag_bundle.warnings.end());

    json estimates = json::array();
    bool placebo_pass = true;
    for (Estimator est : requested) {
        EffectEstimate eff;
        if (run_flags.bootstrap == 0) {
            eff = estimate_effect(data, est, diag_bundle);
        } else {
            BootstrapConfig bcfg;
            bcfg.replicates = run_flags.bootstrap;
            bcfg.alpha = run_flags.alpha;
            bcfg.seed = derive_seed(run_flags.seed, {fnv1a(estimator_name(est))});
            bcfg.n_threads = threads;
            BootstrapResult res = bootstrap_ci(data, est, specs, bcfg);
            eff = res.point;
            if (res.n_failed > 0)
                eff.warnings.push_back("BootstrapFailures: " +
                                       std::to_string(res.n_failed) +
                                       " replicates dropped");
            const bool cfd_null =
                res.ci_cfd.first <= 0.0 && 0.0 <= res.ci_cfd.second;
            const bool cmf_null =
                !res.cmf_ci_defined ||
                (res.ci_cmf.first <= 1.0 && 1.0 <= res.ci_cmf.second);
            if (!(cfd_null && cmf_null)) placebo_pass = false;
        }
        warnings.insert(warnings.end(), eff.warnings.begin(), eff.warnings.end());
        estimates.push_back(estimate_json(estimator_name(est), eff));
    }
    report["estimates"] = std::move(estimates);

    if (diag_bundle.has_propensity()) {
        DesignMatrix design = expand_features(data, specs.propensity);
        report["balance"] =
            balance_json(compute_balance(data, design, diag_bundle.weights));
        report["overlap"] =
            overlap_json(compute_overlap(data, diag_bundle.propensity_scores));
    } else {
        report["balance"] = nullptr;
        report["overlap"] = nullptr;
    }

    if (placebo) {
        json p;
        p["advisory"] = placebo_pass ? "PASS" : "WARN";
        report["placebo"] = std::move(p);
        if (!placebo_pass)
            warnings.push_back("PlaceboTrendBreak: a pre-period interval excludes "
                               "the null");
    }

    if (!run_flags.weights_path.empty())
        dump_weights(data, diag_bundle, run_flags.weights_path);

    report["warnings"] = warnings;
    const auto elapsed = std::chrono::steady_clock::now() - started;
    report["timing"] = {
        {"total_seconds",
         std::chrono::duration<double>(elapsed).count()}};
    return report;
}

int cmd_analyze_or_placebo(const DataFlags& data_flags, const RunFlags& run_flags,
                           bool placebo) {
    json report = run_pipeline(data_flags, run_flags, placebo);
    if (run_flags.format == "csv")
        write_output(estimates_csv(report["estimates"]), run_flags.out_path);
    else
        write_output(report.dump(2), run_flags.out_path);
    return 0;
}

struct SimulateFlags {
    int replicates = 500;
    int bootstrap = 500;
    int n_units = 2000;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string scenarios = "all";
    std::string out_path;
    std::string format = "json";
    bool no_self_check = false;
};

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "scenario,abs_bias_cfd,rmse_cfd,coverage_cfd,"
           "abs_bias_log_cmf,rmse_log_cmf,coverage_log_cmf,"
           "n_effective_replicates,n_cmf_undefined\n";
    for (const auto& r : rows)
        out << r.label << ',' << r.abs_bias_cfd << ',' << r.rmse_cfd << ','
            << r.coverage_cfd << ',' << r.abs_bias_log_cmf << ',' << r.rmse_log_cmf
            << ',' << r.coverage_log_cmf << ',' << r.n_effective_replicates << ','
            << r.n_cmf_undefined << '\n';
    return out.str();
}

int cmd_simulate(const SimulateFlags& flags) {
    auto all = standard_scenarios(flags.replicates, flags.bootstrap, flags.n_units);
    std::vector<SimulationScenario> selected;
    if (flags.scenarios == "all") {
        selected = all;
    } else {
        for (const auto& label : split_list(flags.scenarios)) {
            bool found = false;
            for (const auto& s : all) {
                if (s.label == label) {
                    selected.push_back(s);
                    found = true;
                }
            }
            if (!found) throw SchemaViolation("unknown scenario: " + label);
        }
    }

    DgpParams params;
    StudyConfig config;
    config.seed = flags.seed;
    config.n_threads = flags.threads > 0 ? flags.threads : default_thread_count();
    config.self_check_truth = !flags.no_self_check;
    std::vector<MetricRow> rows = run_study(selected, params, config);

    if (flags.format == "csv") {
        write_output(metrics_csv(rows), flags.out_path);
        return 0;
    }
    json out;
    out["tool"] = {{"name", "drdid"}, {"version", kToolVersion}};
    out["schema_version"] = kSchemaVersion;
    out["command"] = "simulate";
    out["config"] = {{"replicates", flags.replicates},
                     {"bootstrap", flags.bootstrap},
                     {"n", flags.n_units},
                     {"seed", flags.seed},
                     {"scenarios", flags.scenarios}};
    json jrows = json::array();
    for (const auto& r : rows) {
        json j;
        j["scenario"] = r.label;
        j["abs_bias_cfd"] = r.abs_bias_cfd;
        j["rmse_cfd"] = r.rmse_cfd;
        j["coverage_cfd"] = r.coverage_cfd;
        j["abs_bias_log_cmf"] = r.abs_bias_log_cmf;
        j["rmse_log_cmf"] = r.rmse_log_cmf;
        j["coverage_log_cmf"] = r.coverage_log_cmf;
        j["n_effective_replicates"] = r.n_effective_replicates;
        j["n_cmf_undefined"] = r.n_cmf_undefined;
        jrows.push_back(std::move(j));
    }
    out["rows"] = std::move(jrows);
    write_output(out.dump(2), flags.out_path);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Double-robust difference-in-differences for count panels"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    DataFlags analyze_data, placebo_data;
    RunFlags analyze_run, placebo_run;
    CLI::App* analyze = app.add_subcommand("analyze", "estimate CFD and CMF");
    analyze_data.attach(analyze);
    analyze_run.attach(analyze);

    CLI::App* placebo = app.add_subcommand(
        "placebo", "parallel-trend check on two pre-treatment periods");
    placebo_data.attach(placebo);
    placebo_run.attach(placebo);

    SimulateFlags sim;
    CLI::App* simulate = app.add_subcommand("simulate", "run the scenario study");
    simulate->add_option("--replicates", sim.replicates, "simulation replicates");
    simulate->add_option("--bootstrap", sim.bootstrap, "bootstrap replicates");
    simulate->add_option("--n", sim.n_units, "units per replicate");
    simulate->add_option("--seed", sim.seed, "random seed");
    simulate->add_option("--threads", sim.threads, "worker threads");
    simulate->add_option("--scenarios", sim.scenarios,
                         "'all' or a comma-separated scenario list");
    simulate->add_option("--out", sim.out_path, "output file (default: stdout)");
    simulate->add_option("--format", sim.format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
    simulate->add_flag("--no-self-check", sim.no_self_check,
                       "skip the Monte Carlo check of the declared true effects");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (analyze->parsed())
            return cmd_analyze_or_placebo(analyze_data, analyze_run, false);
        if (placebo->parsed())
            return cmd_analyze_or_placebo(placebo_data, placebo_run, true);
        return cmd_simulate(sim);
    } catch (const SchemaViolation& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const MalformedFile& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const NonPositiveLog& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const DegenerateDesign& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const Error& e) {
        std::cerr << "fitting error: " << e.what() << '\n';
        return kExitFitting;
    } catch (const std::exception& e) {
        std::cerr << "fitting error: " << e.what() << '\n';
        return kExitFitting;
    }
}
