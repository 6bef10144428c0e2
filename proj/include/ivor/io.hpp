#pragma once

#include <string>

#include <json.hpp>

#include "ivor/dataset.hpp"
#include "ivor/estimators.hpp"
#include "ivor/marginal.hpp"
#include "ivor/simulate.hpp"

namespace ivor {

inline constexpr const char* kVersion = "0.1.0";

struct CsvColumnMap {
    std::string y = "y", x = "x", z = "z";
    std::vector<std::string> covariates;
};

struct IngestResult {
    Dataset data;
    std::size_t rows_dropped = 0;
    std::uint64_t input_hash = 0;
};

// RFC-4180-style CSV with a header row; mapped rows with missing or
// unparseable fields are dropped and counted.
IngestResult ingest_csv(const std::string& path, const CsvColumnMap& mapping);

std::uint64_t hash_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

nlohmann::json causal_fit_json(const CausalFit& fit);
nlohmann::json marginal_effect_json(const MarginalEffect& effect);
nlohmann::json simulation_report_json(const SimulationReport& report);
nlohmann::json curve_json(const std::vector<CurvePoint>& curve);
nlohmann::json count_table_json(const CountTable2x2x2& table);

std::string causal_fit_text(const CausalFit& fit);
std::string marginal_effect_text(const MarginalEffect& effect);

// Aligned columns, bias/ESE/SSE scaled by 100 and coverage in percent.
std::string simulation_report_text(const SimulationReport& report);

// Machine-readable error payload and the process exit code for an error.
nlohmann::json error_json(const Error& err);
int error_exit_code(const Error& err);

}  // namespace ivor
