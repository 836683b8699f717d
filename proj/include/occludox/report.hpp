#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "occludox/tensor.hpp"

namespace occludox {

struct EvaluationRow {
  std::string defense;
  std::string attack;
  std::string param;  // name of the strength axis, e.g. "iterations"
  Real value = 0.0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;  // logged, never serialised
};

struct EvaluationReport {
  std::vector<EvaluationRow> rows;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version;
};

inline constexpr std::string_view kReportHeader = "defense,attack,param,value,accuracy";

/// Shortest decimal text that parses back to `v`.
std::string format_value(Real v);

/// Header plus one line per row in report order; accuracy with 4 decimals.
std::string report_csv(const EvaluationReport& report);
/// ContractError on an empty report, IoError on write failure.
void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path);
/// Sidecar JSON with seed, config hash, version and row count.
void write_report_meta(const EvaluationReport& report, const std::filesystem::path& path);

/// Parses report CSV text. FormatError names the 1-based line of the problem.
std::vector<EvaluationRow> parse_report_csv(std::string_view text);

/// Accuracy-vs-strength line chart, one polyline per defense in order of
/// first appearance. ContractError when there are no rows.
std::string render_svg(const std::vector<EvaluationRow>& rows);

}  // namespace occludox
