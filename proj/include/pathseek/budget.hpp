#pragma once

#include <cstdint>
#include <vector>

namespace pathseek {

// Unit costs in arbitrary time units.
struct CostModel {
  double tile = 1.0;
  double encode = 10.0;
  double tick = 1.0;

  bool operator==(const CostModel&) const = default;
};

struct BudgetReport {
  std::vector<std::uint64_t> encoder_calls;  // per scale
  std::vector<std::uint64_t> ticks;          // per scale
  std::uint64_t regions_touched = 0;
  CostModel cost;

  std::uint64_t total_encoder_calls() const {
    std::uint64_t t = 0;
    for (auto c : encoder_calls) t += c;
    return t;
  }
  std::uint64_t total_ticks() const {
    std::uint64_t t = 0;
    for (auto c : ticks) t += c;
    return t;
  }
  double simulated_time() const {
    return cost.tile * static_cast<double>(regions_touched) +
           cost.encode * static_cast<double>(total_encoder_calls()) +
           cost.tick * static_cast<double>(total_ticks());
  }

  BudgetReport& operator+=(const BudgetReport& other) {
    auto add = [](std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
      if (b.size() > a.size()) a.resize(b.size(), 0);
      for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
    };
    add(encoder_calls, other.encoder_calls);
    add(ticks, other.ticks);
    regions_touched += other.regions_touched;
    return *this;
  }

  bool operator==(const BudgetReport&) const = default;
};

}  // namespace pathseek
