#pragma once

// Self-contained verification suites shared by the CLI and the acceptance run.

#include <nlohmann/json.hpp>

#include <cstdint>

#include "pathseek/theory.hpp"
#include "pathseek/training.hpp"

namespace pathseek {

// D = 8, M = 3, 4 sync pairs, two scales, three ticks per scale, four coarse
// regions, parameters drawn uniformly in [-0.6, 0.6].
struct TinySetup {
  PyramidConfig pyramid;
  ModelConfig model;
  ReasonerConfig reasoner;
  std::uint64_t instance_seed = 7;
  std::uint64_t param_seed = 5;
  double amplitude = 0.6;
};

TinySetup tiny_setup();

struct GradientSuiteResult {
  GradientCheckReport report;
  double epsilon = 1e-5;
  double seconds = 0.0;
};

GradientSuiteResult run_gradient_suite(const TinySetup& setup = tiny_setup(), double epsilon = 1e-5);

struct FanoCase {
  int n = 0;
  double h_bits = 0.0;
  double bound = 0.0;
  double exact = 0.0;
};

struct FanoSuiteResult {
  std::vector<FanoCase> cases;
  std::size_t dpi_trials = 0;
  std::size_t dpi_failures = 0;
  std::vector<FanoReport> empirical;
};

// Bounds on a grid that includes (N = 4, H = 2) and the binary boundaries,
// plus the data-processing check on random joints.
FanoSuiteResult run_fano_suite(std::uint64_t seed, std::size_t dpi_trials = 500);

// Random joint p(Y, Z) with |Y| = ny, |Z| = nz and a random decision rule.
std::pair<Eigen::MatrixXd, std::vector<int>> random_joint(int ny, int nz, std::mt19937_64& rng);

nlohmann::json to_json(const GradientCheckReport& r);
nlohmann::json to_json(const InfluenceReport& r);
nlohmann::json to_json(const FanoReport& r);
nlohmann::json to_json(const FanoSuiteResult& r);

}  // namespace pathseek
