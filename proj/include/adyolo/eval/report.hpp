#pragma once

// Report persistence: one JSON object per line, text tables, PR point dumps.

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adyolo/eval/metrics.hpp"

namespace adyolo::eval {

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

void write_reports(const std::string& path, std::span<const EvalReport> reports);
std::vector<EvalReport> read_reports(const std::string& path);

// All cells with per-class AP, then a person-AP pivot (models x cells).
std::string render_tables(std::span<const EvalReport> reports);

// One CSV per cell (class, score, recall, precision); returns the written paths.
std::vector<std::string> write_pr_points(const std::string& dir, std::span<const EvalReport> reports);

}  // namespace adyolo::eval
