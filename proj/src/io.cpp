#include "ivor/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ivor/special.hpp"

namespace ivor {

using nlohmann::json;

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

bool parse_double(const std::string& s, double& out) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return false;
    std::size_t e = s.find_last_not_of(" \t");
    const char* first = s.data() + b;
    const char* last = s.data() + e + 1;
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingColumn, "cannot open file '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

std::string hash_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

IngestResult ingest_csv(const std::string& path, const CsvColumnMap& mapping) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingColumn, "cannot open file '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
        fail(ErrorCode::EmptyAfterFiltering, "file has no header row");
    auto header = split_csv_line(line);

    auto column_index = [&](const std::string& name) {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        fail(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
    };
    std::size_t iy = column_index(mapping.y);
    std::size_t ix = column_index(mapping.x);
    std::size_t iz = column_index(mapping.z);
    std::vector<std::size_t> icov;
    for (const auto& c : mapping.covariates) icov.push_back(column_index(c));

    Vec y, x, z;
    std::vector<Vec> covs(icov.size());
    std::size_t dropped = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        double vy, vx, vz;
        bool ok = iy < fields.size() && ix < fields.size() && iz < fields.size() &&
                  parse_double(fields[iy], vy) && parse_double(fields[ix], vx) &&
                  parse_double(fields[iz], vz);
        std::vector<double> vc(icov.size());
        for (std::size_t k = 0; ok && k < icov.size(); ++k)
            ok = icov[k] < fields.size() && parse_double(fields[icov[k]], vc[k]);
        if (!ok) {
            ++dropped;
            continue;
        }
        if (vy != 0.0 && vy != 1.0)
            fail(ErrorCode::NonBinaryOutcome,
                 "outcome column contains values other than 0/1");
        y.push_back(vy);
        x.push_back(vx);
        z.push_back(vz);
        for (std::size_t k = 0; k < icov.size(); ++k) covs[k].push_back(vc[k]);
    }
    if (y.empty())
        fail(ErrorCode::EmptyAfterFiltering, "no usable rows after filtering");

    IngestResult out{Dataset::make(std::move(y), std::move(x), std::move(z),
                                   std::move(covs), mapping.covariates),
                     dropped, hash_file(path)};
    return out;
}

json causal_fit_json(const CausalFit& fit) {
    json diag;
    switch (fit.diagnostics.multiplicity) {
        case RootDiagnostics::Multiplicity::Unique: diag["root_multiplicity"] = "unique"; break;
        case RootDiagnostics::Multiplicity::Two: diag["root_multiplicity"] = "two"; break;
        case RootDiagnostics::Multiplicity::None: diag["root_multiplicity"] = "none"; break;
    }
    diag["roots"] = fit.diagnostics.roots;
    diag["implied_ey0"] = fit.diagnostics.implied_ey0;
    diag["bracket"] = {fit.diagnostics.bracket_lo, fit.diagnostics.bracket_hi};
    if (!fit.diagnostics.curve.empty()) {
        json curve = json::array();
        for (const auto& p : fit.diagnostics.curve)
            curve.push_back({{"psi", p.psi}, {"lhs", p.lhs}, {"rhs", p.rhs}});
        diag["curve"] = curve;
    }

    json j{{"estimator", estimator_name(fit.estimator)},
           {"psi", fit.psi},
           {"exp_psi", std::exp(fit.psi)},
           {"se", fit.se},
           {"ci", {finite_or_null(fit.ci_low), finite_or_null(fit.ci_high)}},
           {"exp_ci",
            {finite_or_null(std::exp(fit.ci_low)),
             finite_or_null(std::exp(fit.ci_high))}},
           {"ci_method", fit.ci_method},
           {"p_value", fit.p_value},
           {"diagnostics", diag}};
    if (fit.estimator == EstimatorKind::StandardIV ||
        fit.estimator == EstimatorKind::AdjustedIV)
        j["se_model"] = fit.se_model;
    if (fit.estimator == EstimatorKind::ProbitNormalSMM) {
        j["phi_probit"] = fit.phi_probit;
        if (fit.outcome_mean_out_of_range)
            j["warnings"] = {"outcome mean outside 10%-90%; the probit-to-logit "
                             "conversion is unreliable"};
    }
    if (fit.psi_vec.size() > 1) j["psi_vec"] = fit.psi_vec;
    return j;
}

json marginal_effect_json(const MarginalEffect& effect) {
    json j{{"log_or", effect.log_or},
           {"marginal_or", std::exp(effect.log_or)},
           {"risk_diff", effect.risk_diff},
           {"rel_risk", effect.rel_risk},
           {"mu_low", effect.mu_low},
           {"mu_high", effect.mu_high},
           {"se_log_or", effect.se_log_or},
           {"se_risk_diff", effect.se_risk_diff},
           {"se_rel_risk", effect.se_rel_risk},
           {"ci", {finite_or_null(effect.ci_low), finite_or_null(effect.ci_high)}},
           {"exp_ci",
            {finite_or_null(std::exp(effect.ci_low)),
             finite_or_null(std::exp(effect.ci_high))}}};
    switch (effect.contrast.kind) {
        case Contrast::Kind::FixedLevels:
            j["contrast"] = {{"kind", "fixed"},
                             {"x0", effect.contrast.x0},
                             {"x1", effect.contrast.x1}};
            break;
        case Contrast::Kind::AdditiveShift:
            j["contrast"] = {{"kind", "plus1"}};
            break;
        case Contrast::Kind::MultiplicativeShift:
            j["contrast"] = {{"kind", "times"}, {"factor", effect.contrast.factor}};
            break;
    }
    if (effect.has_inversion_ci) {
        j["inversion_ci"] = {effect.inv_ci_low, effect.inv_ci_high};
        j["exp_inversion_ci"] = {std::exp(effect.inv_ci_low),
                                 std::exp(effect.inv_ci_high)};
    }
    return j;
}

json count_table_json(const CountTable2x2x2& table) {
    json j = json::array();
    for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y)
                j.push_back({{"x", x}, {"z", z}, {"y", y}, {"n", table.at(x, z, y)}});
    return j;
}

json simulation_report_json(const SimulationReport& report) {
    const DGPConfig& c = report.config;
    json cells = json::array();
    for (const SimCell& cell : report.cells) {
        cells.push_back({{"estimator", sim_estimator_name(cell.estimator)},
                         {"truth", cell.truth},
                         {"bias", cell.bias},
                         {"ese", cell.ese},
                         {"sse", cell.sse},
                         {"coverage", cell.coverage},
                         {"mc_se_bias", cell.mc_se_bias},
                         {"n_fail", cell.n_fail},
                         {"n_used", cell.n_used}});
    }
    return json{
        {"command", "simulate"},
        {"version", kVersion},
        {"config",
         {{"experiment", experiment_name(c.experiment)},
          {"n", c.n},
          {"psi_true", c.psi_true},
          {"target_ey", c.target_ey},
          {"beta_z", c.beta_z},
          {"allele_freq", c.allele_freq},
          {"normal_convention",
           c.convention == NormalConvention::Variance2 ? "variance2" : "sd2"},
          {"interaction_coeff", c.interaction_coeff},
          {"gamma_shape_offset", c.gamma_shape_offset},
          {"seed", c.seed}}},
        {"params",
         {{"beta0", report.params.beta0},
          {"beta_x", report.params.beta_x},
          {"max_discrepancy", report.params.max_discrepancy},
          {"no_exact_solution", report.params.no_exact_solution},
          {"achieved_ey", report.params.achieved_ey}}},
        {"reps", report.reps},
        {"cells", cells}};
}

json curve_json(const std::vector<CurvePoint>& curve) {
    json arr = json::array();
    for (const auto& p : curve)
        arr.push_back({{"psi", p.psi}, {"lhs", p.lhs}, {"rhs", p.rhs}});
    return arr;
}

namespace {

std::string fmt3(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace

std::string causal_fit_text(const CausalFit& fit) {
    std::ostringstream out;
    out << estimator_name(fit.estimator) << ": psi = " << fmt3(fit.psi)
        << "  exp(psi) = " << fmt3(std::exp(fit.psi)) << "  se = " << fmt3(fit.se)
        << "\n  95% CI (" << fit.ci_method << "): exp scale ["
        << fmt3(std::exp(fit.ci_low)) << ", " << fmt3(std::exp(fit.ci_high))
        << "]  p = " << fmt3(fit.p_value) << "\n";
    if (fit.diagnostics.roots.size() > 1) {
        out << "  roots:";
        for (std::size_t i = 0; i < fit.diagnostics.roots.size(); ++i)
            out << " " << fmt3(fit.diagnostics.roots[i]) << " (E[Y(0)]~"
                << fmt3(fit.diagnostics.implied_ey0[i]) << ")";
        out << "\n";
    }
    return out.str();
}

std::string marginal_effect_text(const MarginalEffect& effect) {
    std::ostringstream out;
    out << "marginal: OR = " << fmt3(std::exp(effect.log_or)) << "  95% CI ["
        << fmt3(std::exp(effect.ci_low)) << ", " << fmt3(std::exp(effect.ci_high))
        << "]\n  RD = " << fmt3(effect.risk_diff) << " (se " << fmt3(effect.se_risk_diff)
        << ")  RR = " << fmt3(effect.rel_risk) << " (se " << fmt3(effect.se_rel_risk)
        << ")\n";
    if (effect.has_inversion_ci)
        out << "  inversion CI (exp scale): [" << fmt3(std::exp(effect.inv_ci_low))
            << ", " << fmt3(std::exp(effect.inv_ci_high)) << "]\n";
    return out.str();
}

std::string simulation_report_text(const SimulationReport& report) {
    std::ostringstream out;
    const DGPConfig& c = report.config;
    out << "experiment " << experiment_name(c.experiment) << "  E(Y)=" << c.target_ey
        << "  psi=" << c.psi_true << "  n=" << c.n << "  reps=" << report.reps
        << "  seed=" << c.seed << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-14s %9s %8s %8s %8s %7s %7s\n", "estimator",
                  "bias*100", "ese*100", "sse*100", "cov%", "fail", "used");
    out << line;
    for (const SimCell& cell : report.cells) {
        std::snprintf(line, sizeof(line), "%-14s %9.2f %8.2f %8.2f %8.1f %7d %7d\n",
                      sim_estimator_name(cell.estimator), 100.0 * cell.bias,
                      100.0 * cell.ese, 100.0 * cell.sse, 100.0 * cell.coverage,
                      cell.n_fail, cell.n_used);
        out << line;
    }
    if (report.params.no_exact_solution) {
        std::snprintf(line, sizeof(line),
                      "note: counterfactual-mean spread across z is %.2e (no exact "
                      "beta_x)\n",
                      report.params.max_discrepancy);
        out << line;
    }
    return out.str();
}

json error_json(const Error& err) {
    return json{{"error", {{"code", err.code_name()}, {"message", err.what()}}}};
}

int error_exit_code(const Error& err) {
    switch (err.code()) {
        case ErrorCode::MissingColumn:
        case ErrorCode::EmptyAfterFiltering:
        case ErrorCode::NonBinaryOutcome:
        case ErrorCode::InvalidArgument:
            return 2;  // request/data shape problems
        case ErrorCode::NoRoot:
        case ErrorCode::MultipleRootsAmbiguous:
        case ErrorCode::NegativeDiscriminant:
        case ErrorCode::Nonconvergence:
        case ErrorCode::BracketFailure:
        case ErrorCode::NoExactSolution:
            return 4;  // estimation failed with diagnostics
        default:
            return 3;  // statistical/numeric contract violations
    }
}

}  // namespace ivor
