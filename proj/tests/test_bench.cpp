#include <doctest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pathseek/bench.hpp"
#include "pathseek/metrics.hpp"
#include "pathseek/report.hpp"
#include "pathseek/suites.hpp"

using namespace pathseek;
namespace fs = std::filesystem;

namespace {

struct BenchFixture {
  TinySetup setup = tiny_setup();
  std::vector<PyramidInstance> instances;
  ModelParams<double> params;
  EncoderStub stub;

  BenchFixture() : params(init_params<double>(setup.model)), stub(setup.pyramid) {
    for (std::uint64_t s = 1; s <= 12; ++s) instances.push_back(plant_instance(setup.pyramid, s));
  }
};

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

}  // namespace

TEST_CASE("binary AUC") {
  CHECK(binary_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(binary_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(binary_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(binary_auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  CHECK_THROWS_AS(binary_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("macro AUC") {
  const std::vector<std::vector<double>> s = {{0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.1, 0.2, 0.7}, {0.6, 0.3, 0.1}};
  const auto r = compute_auc(s, {0, 1, 2, 0});
  CHECK(r.macro == doctest::Approx(1.0));
  REQUIRE(r.per_class.size() == 3);
  const auto skip = compute_auc({{0.6, 0.3, 0.1}, {0.3, 0.6, 0.1}, {0.5, 0.4, 0.1}}, {0, 1, 0});
  CHECK(skip.notes.size() == 1);
  CHECK(std::isnan(skip.per_class[2]));
  CHECK(skip.macro == doctest::Approx(1.0));
  CHECK_THROWS_AS(compute_auc({{0.6, 0.4}, {0.3, 0.7}}, {0, 0}), std::invalid_argument);
}

TEST_CASE("stopping histogram") {
  std::vector<Trajectory> t(5);
  t[0].stop = StopReason::threshold_met;
  t[0].stop_scale = 0;
  t[1].stop = StopReason::threshold_met;
  t[1].stop_scale = 1;
  t[2].stop = StopReason::threshold_met;
  t[2].stop_scale = 1;
  const auto h = scale_histogram(t, 2, 0.5);
  CHECK(h.counts == std::vector<std::size_t>{1, 2, 2});
  CHECK(h.total() == 5);
  CHECK(h.finest_fraction() == doctest::Approx(0.8));
  CHECK(h.fractions()[0] == doctest::Approx(0.2));
  t[0].stop_scale = 5;
  CHECK_THROWS_AS(scale_histogram(t, 2), std::out_of_range);
}

TEST_CASE("zero threshold stops every instance at the first tick") {
  BenchFixture f;
  auto rc = f.setup.reasoner;
  rc.confidence_threshold = 0.0;
  const auto t = infer_dataset(f.instances, f.params, rc, f.stub);
  const auto row = sweep_row(f.instances, t, rc.top_k, 0.0, rc.num_scales);
  const double r2 = f.setup.pyramid.coarse_grid * f.setup.pyramid.coarse_grid;
  CHECK(row.mean_patches == r2);
  CHECK(row.mean_ticks == 1.0);
  CHECK(row.stop_fractions.front() == 1.0);
  CHECK(std::isnan(row.pruning_recall));
}

TEST_CASE("sweep is monotone in the threshold and additive in budget") {
  BenchFixture f;
  const std::vector<double> grid = {0.0, 0.05, 0.1, 0.2, 0.4, 1.5};
  const auto rows = sweep(f.instances, f.params, f.setup.reasoner, f.stub, {1, 2}, grid);
  REQUIRE(rows.size() == 12);
  for (int k : {1, 2}) {
    double prev = 0;
    for (const auto& r : rows) {
      if (r.top_k != k) continue;
      CHECK(r.mean_patches >= prev);
      prev = r.mean_patches;
    }
  }

  auto rc = f.setup.reasoner;
  rc.confidence_threshold = 0.1;
  const auto t = infer_dataset(f.instances, f.params, rc, f.stub);
  std::uint64_t calls = 0, ticks = 0;
  double time = 0;
  for (const auto& tr : t) {
    calls += tr.budget.total_encoder_calls();
    ticks += tr.budget.total_ticks();
    time += tr.budget.simulated_time();
    CHECK(tr.budget.total_ticks() == tr.records.size());
  }
  const auto m = summarize("adaptive", f.instances, t);
  const double n = static_cast<double>(f.instances.size());
  CHECK(m.mean_patches == doctest::Approx(calls / n));
  CHECK(m.mean_ticks == doctest::Approx(ticks / n));
  CHECK(m.mean_time == doctest::Approx(time / n));

  BudgetReport a, b;
  a.encoder_calls = {4, 8};
  a.ticks = {3, 1};
  a.regions_touched = 12;
  b.encoder_calls = {4};
  b.ticks = {2};
  b.regions_touched = 4;
  a += b;
  CHECK(a.encoder_calls == std::vector<std::uint64_t>{8, 8});
  CHECK(a.total_ticks() == 6);
  CHECK(a.simulated_time() == doctest::Approx(16 * 1.0 + 16 * 10.0 + 6 * 1.0));
}

TEST_CASE("workers do not change results") {
  BenchFixture f;
  auto rc = f.setup.reasoner;
  rc.confidence_threshold = 0.2;
  const auto one = infer_dataset(f.instances, f.params, rc, f.stub, 1);
  const auto four = infer_dataset(f.instances, f.params, rc, f.stub, 4);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].final_probs == four[i].final_probs);
    CHECK(one[i].budget == four[i].budget);
  }
}

TEST_CASE("baseline encodes every finest region") {
  BenchFixture f;
  BaselineConfig bc;
  bc.epochs = 2;
  bc.hidden = 8;
  bc.attention_dim = 4;
  bc.warmup_steps = 0;
  const auto model = baseline_mil_train(f.instances, {}, bc, f.stub);
  CHECK(model.metrics.size() == 2);
  const auto p = baseline_mil_predict(model, f.instances[0], f.stub);
  const auto finest = f.instances[0].regions_at(f.setup.pyramid.num_scales - 1).size();
  CHECK(p.budget.total_encoder_calls() == finest);
  CHECK(p.attention.size() == static_cast<Eigen::Index>(finest));
  CHECK(p.attention.sum() == doctest::Approx(1.0).epsilon(1e-12));
  double s = 0;
  for (double q : p.probs) s += q;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<BaselinePrediction> preds;
  for (const auto& i : f.instances) preds.push_back(baseline_mil_predict(model, i, f.stub));
  const auto m = summarize_baseline(f.instances, preds);
  CHECK(m.method == "baseline_mil");
  CHECK(m.mean_patches == static_cast<double>(finest));
}

TEST_CASE("bench report round trip and artifacts") {
  BenchFixture f;
  BaselineConfig bc;
  bc.epochs = 1;
  bc.hidden = 8;
  bc.attention_dim = 4;
  bc.warmup_steps = 0;
  const auto baseline = baseline_mil_train(f.instances, {}, bc, f.stub);
  const std::vector<double> grid = {0.1, 0.5, 0.9};
  const auto report = run_bench(f.instances, f.params, baseline, f.setup.reasoner, f.stub, grid, 2, 3);
  CHECK(report.methods.size() == 3);
  CHECK(report.sweep.size() == grid.size());
  CHECK(report.histograms.size() == grid.size());
  CHECK(report.confidence_curves.size() == 3);

  const auto back = bench_report_from_json(nlohmann::json::parse(to_json(report).dump()));
  CHECK(back == report);

  const fs::path dir = fs::temp_directory_path() / "pathseek_bench_test";
  fs::remove_all(dir);
  const auto files = emit_report(report, dir, 0.5);
  CHECK(files.size() == 7);
  CHECK(line_count(dir / "sweep.csv") == 1 + grid.size());
  CHECK(line_count(dir / "methods.csv") == 1 + report.methods.size());
  for (const auto& p : files) {
    if (p.extension() != ".svg") continue;
    boost::property_tree::ptree tree;
    CHECK_NOTHROW(boost::property_tree::read_xml(p.string(), tree));
    CHECK(tree.count("svg") == 1);
  }
  fs::remove_all(dir);
}

TEST_CASE("csv quoting") {
  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
}
