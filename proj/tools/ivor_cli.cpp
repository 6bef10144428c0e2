// Command-line surface: fit estimators on CSV data or 2x2x2 count tables,
// run the simulation harness, and dump estimating-equation curves.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivor/io.hpp"
#include "ivor/marginal.hpp"
#include "ivor/simulate.hpp"

using nlohmann::json;
using namespace ivor;

namespace {

struct CommonArgs {
    std::string format = "json";
    std::uint64_t seed = 0;
};

void emit(const json& j, const std::string& format, const std::string& text) {
    if (format == "json")
        std::cout << j.dump(2) << "\n";
    else
        std::cout << text;
}

Contrast parse_contrast(const std::string& s) {
    if (s.rfind("fixed:", 0) == 0) {
        double x0 = 0, x1 = 1;
        if (std::sscanf(s.c_str() + 6, "%lf,%lf", &x0, &x1) != 2)
            fail(ErrorCode::InvalidArgument, "contrast format: fixed:x0,x1");
        return Contrast::fixed_levels(x0, x1);
    }
    if (s == "plus1") return Contrast::plus_one();
    if (s.rfind("times", 0) == 0) {
        double f = 1.1;
        if (s.size() > 5 && std::sscanf(s.c_str() + 5, "%lf", &f) != 1)
            fail(ErrorCode::InvalidArgument, "contrast format: timesF (e.g. times1.1)");
        return Contrast::times(f);
    }
    fail(ErrorCode::InvalidArgument, "unknown contrast '" + s + "'");
}

std::vector<double> parse_grid(const std::string& s) {
    double lo, hi, step;
    if (std::sscanf(s.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0 ||
        hi < lo)
        fail(ErrorCode::InvalidArgument, "grid format: lo:hi:step");
    std::vector<double> grid;
    for (double p = lo; p <= hi + 0.5 * step; p += step) grid.push_back(p);
    return grid;
}

CountTable2x2x2 parse_counts(const std::string& s) {
    // order: x0z0y0,x0z0y1,x0z1y0,x0z1y1,x1z0y0,x1z0y1,x1z1y0,x1z1y1
    CountTable2x2x2 t;
    unsigned long long v[8];
    if (std::sscanf(s.c_str(), "%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu", &v[0],
                    &v[1], &v[2], &v[3], &v[4], &v[5], &v[6], &v[7]) != 8)
        fail(ErrorCode::InvalidArgument,
             "counts format: 8 nonnegative integers "
             "x0z0y0,x0z0y1,x0z1y0,x0z1y1,x1z0y0,x1z0y1,x1z1y0,x1z1y1");
    int k = 0;
    for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y) t.at(x, z, y) = v[k++];
    return t;
}

struct EstimateArgs {
    std::string estimator = "logistic-smm";
    std::string formula_assoc = "y ~ x + z";
    std::string formula_first = "x ~ z";
    std::string m_spec = "~ 1";
    std::string residual_terms = "~ r";
    std::string reduced_spec = "y ~ z";
    std::string first_stage_population = "all";
    std::string contrast = "fixed:0,1";
    std::string marginal_mode = "approximate";
    std::string smm_ci = "score";
    bool z_dummies = false;
    bool congeniality_override = false;
    bool with_curve = false;
    std::string grid = "-10:10:0.25";
};

json run_estimate(const Dataset& data, const EstimateArgs& args,
                  std::string* text_out) {
    ModelSpec assoc = parse_formula(args.formula_assoc, Link::Logit, args.z_dummies);
    ModelSpec first = parse_formula(args.formula_first, Link::Identity);
    ModelSpec m = args.m_spec == "~ 1" || args.m_spec == "~1"
                      ? m_spec_scalar()
                      : parse_formula(args.m_spec, Link::Identity);
    if (!m.response.empty() && args.m_spec.find('~') != std::string::npos)
        m.response = "";

    IvOptions iv_opts;
    if (args.first_stage_population == "controls")
        iv_opts.first_stage_population = IvOptions::FirstStagePopulation::ControlsOnly;
    else if (args.first_stage_population != "all")
        fail(ErrorCode::InvalidArgument, "--first-stage-population is all|controls");

    SmmOptions smm_opts;
    smm_opts.congeniality_override = args.congeniality_override;
    smm_opts.capture_curve = args.with_curve;
    if (args.smm_ci == "wald")
        smm_opts.ci_method = SmmOptions::CiMethod::Wald;
    else if (args.smm_ci != "score")
        fail(ErrorCode::InvalidArgument, "--smm-ci is score|wald");

    json out;
    if (args.estimator == "standard-iv") {
        CausalFit fit = standard_iv(data, first, m, iv_opts);
        out = causal_fit_json(fit);
        if (text_out) *text_out = causal_fit_text(fit);
    } else if (args.estimator == "adjusted-iv") {
        ModelSpec resid = parse_formula(args.residual_terms, Link::Identity);
        CausalFit fit = adjusted_iv(data, first, m, resid, iv_opts);
        out = causal_fit_json(fit);
        if (text_out) *text_out = causal_fit_text(fit);
    } else if (args.estimator == "logistic-smm") {
        CausalFit fit = logistic_smm(data, assoc, m, smm_opts);
        out = causal_fit_json(fit);
        if (text_out) *text_out = causal_fit_text(fit);
    } else if (args.estimator == "closed-form") {
        CountTable2x2x2 table = tabulate(data);
        CausalFit fit = closed_form_binary(table, assoc, smm_opts);
        out = causal_fit_json(fit);
        if (text_out) *text_out = causal_fit_text(fit);
    } else if (args.estimator == "probit-normal-smm") {
        ModelSpec passoc = parse_formula(args.formula_assoc, Link::Probit);
        ModelSpec preduced = parse_formula(args.reduced_spec, Link::Probit);
        CausalFit fit = probit_normal_smm(data, first, passoc, preduced);
        out = causal_fit_json(fit);
        if (text_out) *text_out = causal_fit_text(fit);
    } else if (args.estimator == "gmm-marginal") {
        ModelSpec gspec = parse_formula("y ~ x", Link::Logit);
        CausalFit fit = gmm_marginal(data, gspec);
        out = causal_fit_json(fit);
        if (text_out) *text_out = causal_fit_text(fit);
    } else if (args.estimator == "marginal") {
        Contrast contrast = parse_contrast(args.contrast);
        MarginalMode mode = args.marginal_mode == "exact" ? MarginalMode::Exact
                                                          : MarginalMode::Approximate;
        ExtendedOptions ext;
        ext.smm = smm_opts;
        std::vector<double> levels = contrast_levels(data, contrast, ext.shift_bins);
        if (contrast.kind != Contrast::Kind::FixedLevels)
            levels.push_back(0.0);
        ExtendedSMMFit fit = extended_smm(data, assoc, m, levels, mode, ext);
        MarginalEffect eff = marginal_contrast(fit, data, contrast);
        out = marginal_effect_json(eff);
        out["estimator"] = "marginal";
        out["mode"] = args.marginal_mode;
        json psis = json::object();
        for (const auto& [x, psi] : fit.psi_by_x) {
            char key[32];
            std::snprintf(key, sizeof(key), "%g", x);
            psis[key] = psi;
        }
        out["psi_by_x"] = psis;
        if (text_out) *text_out = marginal_effect_text(eff);
    } else {
        fail(ErrorCode::InvalidArgument, "unknown estimator '" + args.estimator + "'");
    }
    return out;
}

void add_estimate_flags(CLI::App* cmd, EstimateArgs& args) {
    cmd->add_option("--estimator", args.estimator,
                    "standard-iv | adjusted-iv | logistic-smm | closed-form | "
                    "probit-normal-smm | gmm-marginal | marginal");
    cmd->add_option("--formula-assoc", args.formula_assoc,
                    "association model formula");
    cmd->add_option("--formula-first", args.formula_first, "first-stage formula");
    cmd->add_option("--m-spec", args.m_spec, "m(C;psi) terms, e.g. '~ 1'");
    cmd->add_option("--residual-terms", args.residual_terms,
                    "control-function terms, e.g. '~ r'");
    cmd->add_option("--reduced-spec", args.reduced_spec,
                    "reduced-form model (probit estimator)");
    cmd->add_option("--first-stage-population", args.first_stage_population,
                    "all | controls");
    cmd->add_option("--contrast", args.contrast, "fixed:x0,x1 | plus1 | times1.1");
    cmd->add_option("--marginal-mode", args.marginal_mode, "approximate | exact");
    cmd->add_option("--smm-ci", args.smm_ci, "score | wald");
    cmd->add_flag("--z-dummies", args.z_dummies,
                  "dummy-code a categorical instrument in the association model");
    cmd->add_flag("--congeniality-override", args.congeniality_override,
                  "allow association models without intercept/instrument terms");
    cmd->add_flag("--with-curve", args.with_curve,
                  "attach the estimating-function curve to diagnostics");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional and marginal causal odds ratio estimation with "
                 "instrumental variables"};
    app.require_subcommand(1);
    app.fallthrough();  // --format/--seed may follow the subcommand

    CommonArgs common;
    app.add_option("--format", common.format, "json | text")->capture_default_str();
    app.add_option("--seed", common.seed, "random seed (simulate)");

    // fit: estimators on CSV data
    auto* fit_cmd = app.add_subcommand("fit", "fit an estimator on CSV data");
    std::string input_path;
    CsvColumnMap mapping;
    std::string cov_list;
    EstimateArgs fit_args;
    fit_cmd->add_option("--input", input_path, "CSV file with a header row")
        ->required();
    fit_cmd->add_option("--y", mapping.y, "outcome column")->capture_default_str();
    fit_cmd->add_option("--x", mapping.x, "exposure column")->capture_default_str();
    fit_cmd->add_option("--z", mapping.z, "instrument column")->capture_default_str();
    fit_cmd->add_option("--covariates", cov_list, "comma-separated covariate columns");
    add_estimate_flags(fit_cmd, fit_args);

    // table-fit: estimators on 2x2x2 counts
    auto* table_cmd = app.add_subcommand("table-fit", "fit on 2x2x2 counts");
    std::string fixture, counts_arg;
    EstimateArgs table_args;
    table_cmd->add_option("--fixture", fixture, "named fixture (brookhart)");
    table_cmd->add_option("--counts", counts_arg,
                          "x0z0y0,x0z0y1,x0z1y0,x0z1y1,x1z0y0,x1z0y1,x1z1y0,x1z1y1");
    add_estimate_flags(table_cmd, table_args);

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "run a simulation experiment");
    std::string experiment = "a", convention = "variance2", estimators_arg;
    double ey = 0.5, psi = 1.0, interaction = 1.0;
    int reps = 1000, gamma_offset = 1;
    std::size_t sim_n = 1000;
    std::string sim_smm_ci = "wald", iv_se = "sandwich";
    sim_cmd->add_option("--experiment", experiment, "a|b|c|d|e")->capture_default_str();
    sim_cmd->add_option("--ey", ey, "target outcome mean")->capture_default_str();
    sim_cmd->add_option("--psi", psi, "true conditional log odds ratio")
        ->capture_default_str();
    sim_cmd->add_option("--reps", reps, "replicates")->capture_default_str();
    sim_cmd->add_option("--n", sim_n, "sample size per replicate")
        ->capture_default_str();
    sim_cmd->add_option("--normal-convention", convention, "variance2 | sd2")
        ->capture_default_str();
    sim_cmd->add_option("--interaction-coeff", interaction,
                        "exposure-instrument interaction (experiment e)");
    sim_cmd->add_option("--gamma-offset", gamma_offset,
                        "gamma shape offset (experiment d)");
    sim_cmd->add_option("--estimators", estimators_arg,
                        "comma list: standard-iv,adjusted-iv,logistic-smm,"
                        "mlor1,mlor1-approx,mlor2,mlor2-approx,gmm-marginal");
    sim_cmd->add_option("--smm-ci", sim_smm_ci, "score | wald")->capture_default_str();
    sim_cmd->add_option("--iv-se", iv_se, "model | sandwich")->capture_default_str();

    // curve
    auto* curve_cmd = app.add_subcommand("curve", "estimating-equation curve");
    std::string curve_fixture, curve_counts, curve_input, curve_grid = "-6:2:0.05";
    std::string curve_assoc = "y ~ x + z";
    curve_cmd->add_option("--fixture", curve_fixture, "named fixture (brookhart)");
    curve_cmd->add_option("--counts", curve_counts, "inline 2x2x2 counts");
    curve_cmd->add_option("--input", curve_input, "CSV file");
    curve_cmd->add_option("--grid", curve_grid, "lo:hi:step")->capture_default_str();
    curve_cmd->add_option("--formula-assoc", curve_assoc, "association model formula");

    CLI11_PARSE(app, argc, argv);

    try {
        if (common.format != "json" && common.format != "text")
            fail(ErrorCode::InvalidArgument, "--format is json|text");

        if (fit_cmd->parsed()) {
            if (!cov_list.empty()) {
                std::size_t start = 0;
                while (start <= cov_list.size()) {
                    std::size_t pos = cov_list.find(',', start);
                    std::string name = cov_list.substr(
                        start, pos == std::string::npos ? pos : pos - start);
                    if (!name.empty()) mapping.covariates.push_back(name);
                    if (pos == std::string::npos) break;
                    start = pos + 1;
                }
            }
            IngestResult in = ingest_csv(input_path, mapping);
            std::string text;
            json result = run_estimate(in.data, fit_args, &text);
            json out{{"command", "fit"},
                     {"version", kVersion},
                     {"input",
                      {{"path", input_path},
                       {"hash", hash_hex(in.input_hash)},
                       {"rows_used", in.data.n},
                       {"rows_dropped", in.rows_dropped}}},
                     {"result", result}};
            char drop_note[96];
            std::snprintf(drop_note, sizeof(drop_note), "rows used %zu, dropped %zu\n",
                          in.data.n, in.rows_dropped);
            emit(out, common.format, std::string(drop_note) + text);
        } else if (table_cmd->parsed()) {
            CountTable2x2x2 table;
            json input;
            if (!fixture.empty()) {
                if (fixture != "brookhart")
                    fail(ErrorCode::InvalidArgument,
                         "unknown fixture '" + fixture + "'");
                table = brookhart_fixture();
                input = {{"fixture", fixture}};
            } else if (!counts_arg.empty()) {
                table = parse_counts(counts_arg);
                input = {{"counts", counts_arg}};
            } else {
                fail(ErrorCode::InvalidArgument,
                     "table-fit needs --fixture or --counts");
            }
            input["table"] = count_table_json(table);
            Dataset data = expand_table(table);
            std::string text;
            json result = run_estimate(data, table_args, &text);
            json out{{"command", "table-fit"},
                     {"version", kVersion},
                     {"input", input},
                     {"result", result}};
            emit(out, common.format, text);
        } else if (sim_cmd->parsed()) {
            DGPConfig config = DGPConfig::for_experiment(
                experiment_from_name(experiment), ey, psi, sim_n, common.seed);
            config.convention =
                convention == "sd2" ? NormalConvention::Sd2 : NormalConvention::Variance2;
            config.interaction_coeff = interaction;
            config.gamma_shape_offset = gamma_offset;
            RunOptions run_opts;
            run_opts.smm_ci = sim_smm_ci == "score" ? SmmOptions::CiMethod::ScoreInversion
                                                    : SmmOptions::CiMethod::Wald;
            run_opts.iv_ci = iv_se == "model" ? IvOptions::CiSe::ModelBased
                                              : IvOptions::CiSe::Sandwich;
            if (!estimators_arg.empty()) {
                run_opts.estimators.clear();
                std::size_t start = 0;
                while (start <= estimators_arg.size()) {
                    std::size_t pos = estimators_arg.find(',', start);
                    std::string name = estimators_arg.substr(
                        start, pos == std::string::npos ? pos : pos - start);
                    if (!name.empty()) {
                        bool found = false;
                        for (SimEstimator cand :
                             {SimEstimator::StandardIV, SimEstimator::AdjustedIV,
                              SimEstimator::LogisticSMM, SimEstimator::Mlor1Approx,
                              SimEstimator::Mlor1Exact, SimEstimator::Mlor2Approx,
                              SimEstimator::Mlor2Exact, SimEstimator::GMMMarginal}) {
                            if (name == sim_estimator_name(cand)) {
                                run_opts.estimators.push_back(cand);
                                found = true;
                            }
                        }
                        if (!found)
                            fail(ErrorCode::InvalidArgument,
                                 "unknown estimator '" + name + "'");
                    }
                    if (pos == std::string::npos) break;
                    start = pos + 1;
                }
            }
            SimulationReport report = run_experiment(config, reps, run_opts);
            emit(simulation_report_json(report), common.format,
                 simulation_report_text(report));
        } else if (curve_cmd->parsed()) {
            Dataset data = [&]() {
                if (!curve_fixture.empty()) {
                    if (curve_fixture != "brookhart")
                        fail(ErrorCode::InvalidArgument,
                             "unknown fixture '" + curve_fixture + "'");
                    return expand_table(brookhart_fixture());
                }
                if (!curve_counts.empty()) return expand_table(parse_counts(curve_counts));
                if (!curve_input.empty()) return ingest_csv(curve_input, {}).data;
                fail(ErrorCode::InvalidArgument,
                     "curve needs --fixture, --counts or --input");
            }();
            ModelSpec assoc = parse_formula(curve_assoc, Link::Logit);
            FitResult afit = fit_glm(data, assoc);
            std::vector<double> grid = parse_grid(curve_grid);
            auto curve = estimating_curve(data, afit, assoc, m_spec_scalar(), grid);
            json out{{"command", "curve"},
                     {"version", kVersion},
                     {"formula_assoc", curve_assoc},
                     {"curve", curve_json(curve)}};
            std::string text = "psi lhs rhs\n";
            for (const auto& p : curve) {
                char buf[96];
                std::snprintf(buf, sizeof(buf), "%.6g %.10g %.10g\n", p.psi, p.lhs,
                              p.rhs);
                text += buf;
            }
            emit(out, common.format, text);
        }
    } catch (const Error& err) {
        std::cout << error_json(err).dump(2) << "\n";
        return error_exit_code(err);
    } catch (const std::exception& ex) {
        std::cout << json{{"error", {{"code", "Internal"}, {"message", ex.what()}}}}
                         .dump(2)
                  << "\n";
        return 5;
    }
    return 0;
}
