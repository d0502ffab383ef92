#pragma once

// JSON Lines trace files: one object per tick followed by a terminal summary.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pathseek/reasoner.hpp"

namespace pathseek {

nlohmann::json to_json(const BudgetReport& b);
BudgetReport budget_from_json(const nlohmann::json& j);

std::string trace_jsonl(const Trajectory& t);
void write_trace(const Trajectory& t, const std::filesystem::path& path);

// Restores the recorded fields (s_out snapshots and selections are not stored).
Trajectory read_trace(const std::filesystem::path& path);
Trajectory parse_trace(std::istream& in);

}  // namespace pathseek
