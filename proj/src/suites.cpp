#include "pathseek/suites.hpp"

#include <chrono>
#include <cmath>
#include <random>

namespace pathseek {

TinySetup tiny_setup() {
  TinySetup s;
  s.pyramid.num_scales = 2;
  s.pyramid.coarse_grid = 2;
  s.pyramid.feature_dim = 4;
  s.pyramid.lesion_fraction = 0.25;
  s.pyramid.seed = 3;
  s.model.latent_dim = 8;
  s.model.input_dim = 4;
  s.model.history_len = 3;
  s.model.memory_hidden = 4;
  s.model.synapse_depth = 3;
  s.model.sync_out = 4;
  s.model.sync_action = 4;
  s.model.heads = 2;
  s.model.head_dim = 2;
  s.model.fusion_hidden = 6;
  s.model.fusion_depth = 2;
  s.model.seed = 11;
  s.reasoner.ticks_per_scale = 3;
  s.reasoner.num_scales = 2;
  s.reasoner.top_k = 2;
  return s;
}

GradientSuiteResult run_gradient_suite(const TinySetup& setup, double epsilon) {
  const auto start = std::chrono::steady_clock::now();
  const auto instance = plant_instance(setup.pyramid, setup.instance_seed);
  const EncoderStub stub(setup.pyramid);
  auto params = init_params<double>(setup.model);
  randomize_params(params, setup.param_seed, setup.amplitude);
  GradientSuiteResult r;
  r.epsilon = epsilon;
  r.report = gradient_check(params, instance, setup.reasoner, stub, epsilon);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::pair<Eigen::MatrixXd, std::vector<int>> random_joint(int ny, int nz, std::mt19937_64& rng) {
  std::exponential_distribution<double> mass(1.0);
  std::bernoulli_distribution sparse(0.2);
  Eigen::MatrixXd joint(ny, nz);
  for (Eigen::Index k = 0; k < joint.size(); ++k) joint(k) = sparse(rng) ? 0.0 : mass(rng);
  if (joint.sum() <= 0) joint(0, 0) = 1.0;
  joint /= joint.sum();
  std::uniform_int_distribution<int> label(0, ny - 1);
  std::vector<int> f(static_cast<std::size_t>(nz));
  for (auto& v : f) v = label(rng);
  return {joint, f};
}

FanoSuiteResult run_fano_suite(std::uint64_t seed, std::size_t dpi_trials) {
  FanoSuiteResult r;
  const std::vector<std::pair<int, double>> grid = {{2, 0.0}, {2, 0.5}, {2, 1.0}, {3, 0.0}, {3, 1.0}, {3, 1.5},
                                                     {4, 0.0}, {4, 1.0}, {4, 1.5}, {4, 2.0}, {8, 2.5}, {8, 3.0}};
  for (const auto& [n, h] : grid) r.cases.push_back({n, h, fano_bound(h, n), fano_bound_exact(h, n)});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ny(2, 6), nz(1, 12);
  for (std::size_t t = 0; t < dpi_trials; ++t) {
    auto [joint, f] = random_joint(ny(rng), nz(rng), rng);
    ++r.dpi_trials;
    if (!dpi_check(joint, f)) ++r.dpi_failures;
  }
  return r;
}

nlohmann::json to_json(const GradientCheckReport& r) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : r.tensors)
    tensors.push_back({{"name", t.name},
                       {"analytic_norm", t.analytic_norm},
                       {"numeric_norm", t.numeric_norm},
                       {"relative_error", t.relative_error},
                       {"max_abs_error", t.max_abs_error}});
  return {{"loss", r.loss},
          {"max_relative_error", r.max_relative_error},
          {"max_abs_error", r.max_abs_error},
          {"tensors", tensors}};
}

nlohmann::json to_json(const InfluenceReport& r) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : r.candidates)
    cands.push_back({{"id", c.id},
                     {"tick", c.tick},
                     {"scale", c.scale},
                     {"attention", c.attention},
                     {"delta_loss", c.delta_loss},
                     {"estimate", c.estimate},
                     {"bound", c.bound},
                     {"h_norm", c.h_norm},
                     {"taylor_ratios", c.taylor_ratios},
                     {"taylor_checked", c.taylor_checked},
                     {"taylor_ok", c.taylor_ok},
                     {"bound_ok", c.bound_ok}});
  return {{"snapshots", r.snapshots},
          {"mask_scales", r.mask_scales},
          {"max_taylor_residual", r.max_taylor_residual},
          {"spearman_rho", r.spearman_rho},
          {"empirical_cg", r.empirical_cg},
          {"empirical_ch", r.empirical_ch},
          {"taylor_checked", r.taylor_checked},
          {"taylor_skipped", r.taylor_skipped},
          {"cauchy_schwarz_ok", r.cauchy_schwarz_ok},
          {"taylor_ok", r.taylor_ok},
          {"candidates", cands}};
}

nlohmann::json to_json(const FanoReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"delta", r.delta},
          {"count", r.count},
          {"num_classes", r.num_classes},
          {"mean_predictive_entropy_bits", num(r.mean_predictive_entropy_bits)},
          {"conditional_entropy_bits", num(r.conditional_entropy_bits)},
          {"bound", num(r.bound)},
          {"empirical_error", num(r.empirical_error)},
          {"bound_satisfied", r.bound_satisfied},
          {"identity_ok", r.identity_ok},
          {"note", r.note}};
}

nlohmann::json to_json(const FanoSuiteResult& r) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) cases.push_back({{"n", c.n}, {"h_bits", c.h_bits}, {"bound", c.bound}, {"exact", c.exact}});
  nlohmann::json empirical = nlohmann::json::array();
  for (const auto& f : r.empirical) empirical.push_back(to_json(f));
  return {{"cases", cases},
          {"dpi", {{"trials", r.dpi_trials}, {"failures", r.dpi_failures}}},
          {"reports", empirical}};
}

}  // namespace pathseek
