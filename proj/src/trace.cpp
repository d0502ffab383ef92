#include "pathseek/trace.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pathseek {

using nlohmann::json;

json to_json(const BudgetReport& b) {
  return json{{"encoder_calls", b.encoder_calls},
              {"ticks", b.ticks},
              {"regions_touched", b.regions_touched},
              {"total_encoder_calls", b.total_encoder_calls()},
              {"total_ticks", b.total_ticks()},
              {"simulated_time", b.simulated_time()},
              {"cost", {{"tile", b.cost.tile}, {"encode", b.cost.encode}, {"tick", b.cost.tick}}}};
}

BudgetReport budget_from_json(const json& j) {
  BudgetReport b;
  b.encoder_calls = j.at("encoder_calls").get<std::vector<std::uint64_t>>();
  b.ticks = j.at("ticks").get<std::vector<std::uint64_t>>();
  b.regions_touched = j.at("regions_touched").get<std::uint64_t>();
  const auto& c = j.at("cost");
  b.cost = CostModel{c.at("tile").get<double>(), c.at("encode").get<double>(), c.at("tick").get<double>()};
  return b;
}

std::string trace_jsonl(const Trajectory& t) {
  std::ostringstream os;
  for (const auto& r : t.records) {
    json line{{"tick", r.tick},           {"scale", r.scale},           {"probs", r.probs},
              {"confidence", r.confidence}, {"candidates", r.candidates}, {"scores", r.scores}};
    os << line.dump() << '\n';
  }
  json end{{"stop", to_string(t.stop)},
           {"t_star_per_scale", t.t_star_per_scale},
           {"final_probs", t.final_probs},
           {"final_label", t.final_label},
           {"budget", to_json(t.budget)}};
  if (t.stop == StopReason::threshold_met) end["stop_at"] = {{"tick", t.stop_tick}, {"scale", t.stop_scale}};
  os << end.dump() << '\n';
  return os.str();
}

void write_trace(const Trajectory& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace " + path.string());
  out << trace_jsonl(t);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Trajectory parse_trace(std::istream& in) {
  Trajectory t;
  std::string line;
  bool terminal = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (terminal) throw std::runtime_error("trace: data after terminal record");
    const json j = json::parse(line);
    if (j.contains("stop")) {
      const auto stop = j.at("stop").get<std::string>();
      if (stop == "threshold_met") {
        t.stop = StopReason::threshold_met;
      } else if (stop == "budget_exhausted") {
        t.stop = StopReason::budget_exhausted;
      } else {
        throw std::runtime_error("trace: unknown stop reason " + stop);
      }
      t.t_star_per_scale = j.at("t_star_per_scale").get<std::vector<int>>();
      t.final_probs = j.at("final_probs").get<std::vector<double>>();
      t.final_label = j.at("final_label").get<int>();
      t.budget = budget_from_json(j.at("budget"));
      if (j.contains("stop_at")) {
        t.stop_tick = j["stop_at"].at("tick").get<int>();
        t.stop_scale = j["stop_at"].at("scale").get<int>();
      } else if (!t.records.empty()) {
        t.stop_tick = t.records.back().tick;
        t.stop_scale = t.records.back().scale;
      }
      terminal = true;
      continue;
    }
    TickRecord r;
    r.tick = j.at("tick").get<int>();
    r.scale = j.at("scale").get<int>();
    r.probs = j.at("probs").get<std::vector<double>>();
    r.confidence = j.at("confidence").get<double>();
    r.candidates = j.at("candidates").get<std::vector<RegionId>>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.s_out_snapshot = static_cast<int>(t.records.size());
    t.records.push_back(std::move(r));
  }
  if (!terminal) throw std::runtime_error("trace: missing terminal record");
  return t;
}

Trajectory read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace " + path.string());
  return parse_trace(in);
}

}  // namespace pathseek
