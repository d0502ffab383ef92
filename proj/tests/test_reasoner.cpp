#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pathseek/reasoner.hpp"

using namespace pathseek;
using M = Eigen::MatrixXd;
using Vd = Eigen::VectorXd;

namespace {

ModelConfig small_model(int d_in = 8, int classes = 3) {
  ModelConfig c;
  c.latent_dim = 8;
  c.input_dim = d_in;
  c.history_len = 3;
  c.memory_hidden = 4;
  c.synapse_depth = 2;
  c.sync_out = 5;
  c.sync_action = 4;
  c.heads = 2;
  c.head_dim = 2;
  c.num_classes = classes;
  c.fusion_hidden = 6;
  c.seed = 2;
  return c;
}

PyramidConfig small_pyramid(int z = 3) {
  PyramidConfig p;
  p.num_scales = z;
  p.coarse_grid = 2;
  p.feature_dim = 8;
  p.lesion_fraction = 0.25;
  p.seed = 4;
  return p;
}

// Binary probabilities with the requested confidence, found by bisection.
M logits_with_confidence(double c) {
  double lo = 0.5, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (confidence({mid, 1 - mid}) < c ? lo : hi) = mid;
  }
  const double p = 0.5 * (lo + hi);
  M l(2, 1);
  l << std::log(p), std::log(1 - p);
  return l;
}

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double q : p)
    if (q > 0) h -= q * std::log(q);
  return h;
}

}  // namespace

TEST_CASE("confidence") {
  for (int n : {2, 3, 7}) {
    CHECK(confidence(std::vector<double>(static_cast<std::size_t>(n), 1.0 / n)) == doctest::Approx(0.0).epsilon(1e-12));
    std::vector<double> one(static_cast<std::size_t>(n), 0.0);
    one[1] = 1.0;
    CHECK(confidence(one) == 1.0);
  }
  const double h = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  CHECK(h == doctest::Approx(0.80182).epsilon(1e-5));
  CHECK(confidence({0.7, 0.2, 0.1}) == doctest::Approx(1 - h / std::log(3.0)).epsilon(1e-14));
  CHECK(confidence({0.7, 0.2, 0.1}) == doctest::Approx(0.2702).epsilon(1e-3));
  CHECK_THROWS_AS(confidence({1.0}), std::invalid_argument);
  CHECK_THROWS_AS(confidence({0.5, 0.6}), std::invalid_argument);
}

TEST_CASE("stopping predicate") {
  CHECK(should_stop(0.9, 0.9));
  CHECK_FALSE(should_stop(0.89, 0.9));
  CHECK(should_stop(0.0, 0.0));
  CHECK_FALSE(should_stop(1.0, 1.0 + 1e-9));
}

TEST_CASE("confidence threshold agrees with the entropy form") {
  std::mt19937_64 rng(8);
  std::exponential_distribution<double> ex(1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int t = 0; t < 10000; ++t) {
    const int n = 2 + t % 6;
    std::vector<double> p(static_cast<std::size_t>(n));
    double s = 0;
    for (auto& v : p) s += (v = ex(rng));
    for (auto& v : p) v /= s;
    const double delta = u(rng);
    mismatches += should_stop(confidence(p), delta) != (entropy(p) <= (1 - delta) * std::log(static_cast<double>(n)));
  }
  CHECK(mismatches == 0);
}

TEST_CASE("top-k examples") {
  CHECK(topk_select({0.1, 0.4, 0.05, 0.3, 0.15}, 2) == std::vector<std::size_t>{1, 3});
  CHECK(topk_select({0.2, 0.2, 0.2, 0.2, 0.2}, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(topk_select({0.1, 0.2, 0.3, 0.4}, 10) == std::vector<std::size_t>{3, 2, 1, 0});
  CHECK(topk_select({0.5, 0.5}, 1, {9, 4}) == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(topk_select({}, 1), std::invalid_argument);
  CHECK_THROWS_AS(topk_select({0.1}, 0), std::invalid_argument);
}

TEST_CASE("top-k equals a full-sort oracle") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(1, 40), coarse(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int failures = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = size(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (auto& v : s) v = t % 2 ? coarse(rng) / 5.0 : u(rng);
    std::vector<RegionId> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = static_cast<RegionId>(100 + (i * 7919) % 997);
    const int k = 1 + t % 12;
    std::vector<std::size_t> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
    std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
      return s[a] > s[b] || (s[a] == s[b] && ids[a] < ids[b]);
    });
    all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(k)));
    failures += topk_select(s, k, ids) != all;
  }
  CHECK(failures == 0);
}

TEST_CASE("linear prediction head") {
  auto c = small_model();
  auto p = init_params<double>(c);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss;
  M s(5, 1);
  for (Eigen::Index i = 0; i < 5; ++i) s(i) = gauss(rng);
  {
    auto z = p;
    z.w.output_w.setZero();
    ModelGraph<double> g(z);
    CHECK(predict_head(g, g.constant(s)).value() == z.w.output_b);
  }
  {
    auto c3 = c;
    c3.sync_out = 3;
    auto id = init_params<double>(c3);
    id.w.output_w = M::Identity(3, 3);
    id.w.output_b.setZero();
    ModelGraph<double> g(id);
    CHECK(predict_head(g, g.constant(M(s.topRows(3)))).value() == s.topRows(3));
  }
  {
    for (Eigen::Index k = 0; k < p.w.output_w.size(); ++k) p.w.output_w(k) = gauss(rng);
    ModelGraph<double> g(p);
    const M y = predict_head(g, g.constant(s)).value();
    for (int i = 0; i < 3; ++i) {
      double acc = p.w.output_b(i, 0);
      for (int j = 0; j < 5; ++j) acc += p.w.output_w(i, j) * s(j, 0);
      CHECK(y(i, 0) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("fusion head") {
  auto c = small_model();
  auto p = init_params<double>(c);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  M a(5, 1), b(5, 1);
  for (Eigen::Index i = 0; i < 5; ++i) {
    a(i) = gauss(rng);
    b(i) = gauss(rng);
  }
  {
    auto z = p;
    for (auto& w : z.w.fusion_w) w.setZero();
    ModelGraph<double> g(z);
    CHECK(fuse_predict(g, g.constant(a), g.constant(b)).value() == z.w.fusion_b.back());
  }
  {
    ModelGraph<double> g(p);
    const M ab = fuse_predict(g, g.constant(a), g.constant(b)).value();
    const M ba = fuse_predict(g, g.constant(b), g.constant(a)).value();
    CHECK((ab - ba).norm() > 1e-6);
    ad::Var<double> none;
    CHECK_THROWS_AS(fuse_predict(g, g.constant(a), none), std::logic_error);
  }
  {
    auto c2 = c;
    c2.sync_out = 2;
    c2.num_classes = 2;
    c2.fusion_depth = 1;
    auto q = init_params<double>(c2);
    q.w.fusion_w[0] << 1.0, -2.0, 0.5, 0.25, 3.0, 1.5, -1.0, 0.75;
    q.w.fusion_b[0] << 0.1, -0.1;
    ModelGraph<double> g(q);
    M f(2, 1), k(2, 1);
    f << 0.3, -0.6;
    k << 1.2, 0.4;
    const M y = fuse_predict(g, g.constant(f), g.constant(k)).value();
    CHECK(y(0, 0) == doctest::Approx(1.0 * 0.3 - 2.0 * -0.6 + 0.5 * 1.2 + 0.25 * 0.4 + 0.1).epsilon(1e-14));
    CHECK(y(1, 0) == doctest::Approx(3.0 * 0.3 + 1.5 * -0.6 - 1.0 * 1.2 + 0.75 * 0.4 - 0.1).epsilon(1e-14));
  }
}

TEST_CASE("run_scale tick counts and scripted stopping") {
  auto c = small_model(8, 2);
  auto p = init_params<double>(c);
  ModelGraph<double> g(p);
  const auto inst = plant_instance(small_pyramid(), 1);
  EncoderStub stub(small_pyramid());
  FeatureCache cache(3);
  const auto ids = inst.regions_at(0);
  auto cands = project_candidates(g, ids, gather_features<double>(inst, 0, ids, cache, stub));
  TickHead<double> learned = [&](const ad::Var<double>& s) { return predict_head(g, s); };

  auto st = init_state(g);
  auto one = run_scale(g, st, cands, 1, learned, StopRule{true, 2.0});
  CHECK(one.records.size() == 1);
  CHECK(one.t_star == 0);

  auto st2 = init_state(g);
  auto full = run_scale(g, st2, cands, 4, learned, StopRule{false, 0.0});
  CHECK(full.records.size() == 4);
  CHECK_FALSE(full.stopped);

  const std::vector<double> seq = {0.2, 0.95, 0.4};
  int calls = 0;
  TickHead<double> scripted = [&](const ad::Var<double>&) {
    return g.constant(logits_with_confidence(seq[static_cast<std::size_t>(calls++)]));
  };
  auto st3 = init_state(g);
  auto run = run_scale(g, st3, cands, 3, scripted, StopRule{true, 0.9});
  CHECK(run.records.size() == 2);
  CHECK(run.stopped);
  CHECK(run.records.back().tick == 2);
  CHECK(run.t_star == 1);
  CHECK(run.records[0].confidence == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("t* is the earliest argmax") {
  std::vector<TickRecord> r(4);
  r[0].confidence = 0.3;
  r[1].confidence = 0.7;
  r[2].confidence = 0.7;
  r[3].confidence = 0.1;
  CHECK(argmax_confidence(r) == 1);
}

TEST_CASE("budget arithmetic") {
  auto pc = small_pyramid(3);
  auto mc = small_model();
  auto params = init_params<double>(mc);
  EncoderStub stub(pc);
  const auto inst = plant_instance(pc, 11);
  ReasonerConfig rc;
  rc.num_scales = 3;
  rc.ticks_per_scale = 2;
  rc.top_k = 2;

  SUBCASE("unreachable threshold encodes 20 of 84 regions") {
    rc.confidence_threshold = 1.0 + 1e-9;
    FeatureCache cache(3);
    const auto t = infer(inst, params, rc, cache, stub);
    CHECK(t.stop == StopReason::budget_exhausted);
    CHECK(t.budget.total_encoder_calls() == 20);
    CHECK(t.budget.encoder_calls == std::vector<std::uint64_t>{4, 8, 8});
    CHECK(pc.total_regions() == 84);
    CHECK(t.budget.total_ticks() == 6);
    CHECK(t.selected.size() == 2);
    CHECK(t.t_star_per_scale.size() == 3);
    const auto best = argmax_confidence(t.records);
    CHECK(t.final_probs == t.records[best].probs);
  }
  SUBCASE("zero threshold stops at the first tick") {
    rc.confidence_threshold = 0.0;
    FeatureCache cache(3);
    const auto t = infer(inst, params, rc, cache, stub);
    CHECK(t.stop == StopReason::threshold_met);
    CHECK(t.budget.total_encoder_calls() == 4);
    CHECK(t.budget.total_ticks() == 1);
    CHECK(t.stop_tick == 1);
    CHECK(t.stop_scale == 0);
  }
  SUBCASE("one scale never prunes") {
    rc.num_scales = 1;
    rc.confidence_threshold = 2.0;
    FeatureCache cache(3);
    const auto t = infer(inst, params, rc, cache, stub);
    CHECK(t.selected.empty());
    CHECK(t.records.size() == 2);
    CHECK(t.budget.total_encoder_calls() == 4);
  }
  SUBCASE("stopping soundness") {
    rc.ticks_per_scale = 4;
    for (double d : {0.05, 0.1, 0.2, 0.3}) {
      rc.confidence_threshold = d;
      FeatureCache cache(3);
      const auto t = infer(inst, params, rc, cache, stub);
      std::size_t first = t.records.size();
      for (std::size_t i = 0; i < t.records.size(); ++i)
        if (t.records[i].confidence >= d) {
          first = i;
          break;
        }
      if (t.stop == StopReason::threshold_met) {
        CHECK(first + 1 == t.records.size());
      } else {
        CHECK(first == t.records.size());
      }
    }
  }
}

TEST_CASE("scripted rollout visits children of the selected regions") {
  auto pc = small_pyramid(3);
  auto params = init_params<double>(small_model());
  EncoderStub stub(pc);
  const auto inst = plant_instance(pc, 12);
  ReasonerConfig rc;
  rc.num_scales = 3;
  rc.ticks_per_scale = 2;
  rc.top_k = 2;
  rc.stopping_enabled = false;
  ModelGraph<double> g(params);
  FeatureCache cache(3);
  auto r = rollout(g, inst, cache, stub, rc);
  const auto& t = r.trajectory;
  REQUIRE(t.selected.size() == 2);
  for (const auto& rec : t.records) {
    if (rec.scale == 0) continue;
    for (auto id : rec.candidates) {
      const auto parent = *inst.region(id).parent;
      const auto& chosen = t.selected[static_cast<std::size_t>(rec.scale - 1)];
      CHECK(std::find(chosen.begin(), chosen.end(), parent) != chosen.end());
    }
  }
  REQUIRE(r.transition_history.size() == 2);
  CHECK(r.transition_history[0].first == r.transition_history[0].second);
}

TEST_CASE("config validation") {
  ReasonerConfig rc;
  rc.top_k = 0;
  CHECK_THROWS_WITH_AS(rc.validate(), doctest::Contains("top_k"), std::invalid_argument);
  rc = ReasonerConfig{};
  rc.confidence_threshold = -0.1;
  CHECK_THROWS_WITH_AS(rc.validate(), doctest::Contains("confidence_threshold"), std::invalid_argument);
}
