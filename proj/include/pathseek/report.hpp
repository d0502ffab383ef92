#pragma once

// CSV tables, JSON summaries and static SVG plots.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "pathseek/bench.hpp"

namespace pathseek {

// RFC 4180 field quoting.
std::string csv_field(const std::string& s);
std::string csv_number(double v);

nlohmann::json to_json(const BenchReport& r);
BenchReport bench_report_from_json(const nlohmann::json& j);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string methods_csv(const std::vector<MethodSummary>& methods);
std::string histogram_csv(const std::vector<StopHistogram>& histograms);

std::string confidence_curves_svg(const std::vector<std::vector<double>>& curves, double delta);
std::string sweep_heatmap_svg(const std::vector<SweepRow>& rows);
std::string stopping_bars_svg(const std::vector<StopHistogram>& histograms);
// Confidence and per-class probability curves of one trajectory, with
// scale boundaries marked.
std::string trajectory_svg(const Trajectory& t, double delta);

void write_text(const std::filesystem::path& path, const std::string& text);

// Writes methods.csv, sweep.csv, histogram.csv, summary.json and the SVG
// plots under `dir`.  Returns the written paths.
std::vector<std::filesystem::path> emit_report(const BenchReport& report, const std::filesystem::path& dir,
                                               double delta = 0.9);

}  // namespace pathseek
