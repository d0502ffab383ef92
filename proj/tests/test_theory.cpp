#include <doctest.h>

#include <cmath>
#include <random>

#include "pathseek/suites.hpp"
#include "pathseek/theory.hpp"

using namespace pathseek;
using M = Eigen::MatrixXd;
using Vd = Eigen::VectorXd;

namespace {

struct Fixture {
  TinySetup setup = tiny_setup();
  ModelParams<double> params;
  PyramidInstance instance;
  std::vector<TickSnapshot<double>> snapshots;

  Fixture() : params(init_params<double>(setup.model)), instance(plant_instance(setup.pyramid, setup.instance_seed)) {
    randomize_params(params, setup.param_seed, 0.3);
    const EncoderStub stub(setup.pyramid);
    FeatureCache cache(setup.pyramid.num_scales);
    ModelGraph<double> g(params);
    RolloutOptions<double> ro;
    ro.capture_snapshots = true;
    auto rc = setup.reasoner;
    rc.stopping_enabled = false;
    snapshots = rollout(g, instance, cache, stub, rc, ro).snapshots;
  }
};

Trajectory stopped(std::vector<double> probs, bool threshold = true) {
  Trajectory t;
  t.stop = threshold ? StopReason::threshold_met : StopReason::budget_exhausted;
  t.final_label = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  t.final_probs = std::move(probs);
  return t;
}

}  // namespace

TEST_CASE("binary entropy") {
  CHECK(binary_entropy_bits(0.0) == 0.0);
  CHECK(binary_entropy_bits(1.0) == 0.0);
  CHECK(binary_entropy_bits(0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(binary_entropy_bits(0.11) == doctest::Approx(-(0.11 * std::log2(0.11) + 0.89 * std::log2(0.89))).epsilon(1e-14));
}

TEST_CASE("Fano bounds") {
  CHECK(fano_bound(2.0, 4) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK(fano_bound(2.0, 4) == doctest::Approx(0.6309).epsilon(1e-4));
  CHECK(fano_bound(0.5, 4) == 0.0);
  CHECK(fano_bound(1.0, 2) == 0.5);
  CHECK(fano_bound(1.0 - 1e-12, 2) == doctest::Approx(0.5 - std::sqrt(1e-12 * std::log(2.0) / 2)).epsilon(1e-4));
  CHECK(fano_bound(0.0, 2) == doctest::Approx(0.0).epsilon(1e-12));
  const double p = fano_bound(0.5, 2);
  CHECK(binary_entropy_bits(p) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(p < 0.5);
  CHECK(fano_bound_exact(2.0, 4) == doctest::Approx(0.75).epsilon(1e-6));
  for (double h : {0.3, 1.2, 1.9, 2.5}) CHECK(fano_bound(h, 8) <= fano_bound_exact(h, 8) + 1e-12);
  CHECK_THROWS_AS(fano_bound(-0.1, 3), std::invalid_argument);
  CHECK_THROWS_AS(fano_bound(1.0, 1), std::invalid_argument);
}

TEST_CASE("conditional entropy and data processing") {
  M identity = M::Identity(3, 3) / 3.0;
  CHECK(conditional_entropy_bits(identity) == 0.0);
  CHECK(dpi_check(identity, {0, 1, 2}));
  M independent = Vd::Constant(4, 0.25) * Vd::Constant(3, 1.0 / 3.0).transpose();
  CHECK(conditional_entropy_bits(independent) == doctest::Approx(2.0).epsilon(1e-12));
  const auto r = dpi_evaluate(independent, {0, 0, 3});
  CHECK(r.h_given_z == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.h_given_yhat == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.holds);
  const M pushed = push_forward(identity, {0, 0, 2});
  CHECK(pushed(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(pushed(1, 0) == doctest::Approx(1.0 / 3));
  CHECK(pushed.col(1).sum() == 0.0);
  CHECK(conditional_entropy_bits(pushed) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(map_error(identity) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(map_error(independent) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(push_forward(identity, {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(dpi_check(M::Constant(2, 2, 0.3), {0, 1}), std::invalid_argument);

  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> ny(2, 6), nz(1, 12);
  int failures = 0, fano_failures = 0;
  for (int t = 0; t < 500; ++t) {
    auto [joint, f] = random_joint(ny(rng), nz(rng), rng);
    failures += !dpi_check(joint, f);
    const M yhat = push_forward(joint, f);
    double err = 0;
    for (Eigen::Index y = 0; y < yhat.rows(); ++y) err += yhat.col(y).sum() - yhat(y, y);
    fano_failures += err + 1e-12 < fano_bound(conditional_entropy_bits(yhat), static_cast<int>(joint.rows()));
  }
  CHECK(failures == 0);
  CHECK(fano_failures == 0);
}

TEST_CASE("Fano suite") {
  const auto r = run_fano_suite(3, 100);
  CHECK(r.dpi_trials == 100);
  CHECK(r.dpi_failures == 0);
  bool found = false;
  for (const auto& c : r.cases)
    if (c.n == 4 && c.h_bits == 2.0) {
      found = true;
      CHECK(c.bound == doctest::Approx(0.6309).epsilon(1e-4));
    }
  CHECK(found);
  const auto j = to_json(r);
  CHECK(j.at("dpi").at("failures") == 0);
}

TEST_CASE("Fano report buckets") {
  PyramidConfig pc;
  pc.num_scales = 2;
  pc.coarse_grid = 2;
  pc.feature_dim = 4;
  pc.lesion_fraction = 0.25;
  std::vector<PyramidInstance> inst;
  for (std::uint64_t s = 1; s <= 6; ++s) inst.push_back(plant_instance(pc, s));

  SUBCASE("correct one-hot predictions") {
    std::vector<Trajectory> t;
    for (const auto& i : inst) {
      std::vector<double> p(3, 0.0);
      p[static_cast<std::size_t>(i.label)] = 1.0;
      t.push_back(stopped(p));
    }
    const auto r = fano_report(inst, t, 0.5, 3);
    CHECK(r.count == 6);
    CHECK(r.empirical_error == 0.0);
    CHECK(r.conditional_entropy_bits == 0.0);
    CHECK(r.mean_predictive_entropy_bits == 0.0);
    CHECK(r.bound == 0.0);
    CHECK(r.bound_satisfied);
  }
  SUBCASE("only threshold stops enter the bucket") {
    std::vector<Trajectory> t;
    for (std::size_t i = 0; i < inst.size(); ++i) t.push_back(stopped({0.2, 0.3, 0.5}, i % 2 == 0));
    const auto r = fano_report(inst, t, 0.1, 3);
    CHECK(r.count == 3);
    CHECK(r.mean_predictive_entropy_bits ==
          doctest::Approx(-(0.2 * std::log2(0.2) + 0.3 * std::log2(0.3) + 0.5 * std::log2(0.5))).epsilon(1e-12));
    CHECK(r.bound_satisfied);
  }
  SUBCASE("empty bucket") {
    std::vector<Trajectory> t(inst.size(), stopped({0.5, 0.25, 0.25}, false));
    const auto r = fano_report(inst, t, 0.9, 3);
    CHECK(r.count == 0);
    CHECK_FALSE(r.note.empty());
  }
  CHECK_THROWS_AS(fano_report(inst, {}, 0.5, 3), std::invalid_argument);
}

TEST_CASE("Fano verification at zero threshold") {
  const auto s = tiny_setup();
  const EncoderStub stub(s.pyramid);
  std::vector<PyramidInstance> inst;
  for (std::uint64_t k = 1; k <= 12; ++k) inst.push_back(plant_instance(s.pyramid, k));
  const auto params = init_params<double>(s.model);
  const auto reps = verify_fano(params, inst, s.reasoner, stub, {0.0, 1.5});
  REQUIRE(reps.size() == 2);
  CHECK(reps[0].count == inst.size());
  CHECK(reps[0].bound_satisfied);
  CHECK(reps[0].identity_ok);
  CHECK(reps[1].count == 0);
}

TEST_CASE("influence decomposition reproduces the context") {
  Fixture f;
  REQUIRE(f.snapshots.size() == 6);
  for (const auto& t : f.snapshots) {
    const auto snap = decompose(f.params, t, f.instance.label);
    CHECK(snap.attention.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((aggregate(snap) - t.context.col(0)).norm() < 1e-12);
  }
}

TEST_CASE("masking oracle") {
  Fixture f;
  auto snap = decompose(f.params, f.snapshots.front(), f.instance.label);
  const Vd z = aggregate(snap);
  CHECK(mask_influence_oracle(f.params, snap, 0, 0.0) == 0.0);
  const double full = mask_influence_oracle(f.params, snap, 1);
  CHECK(full == doctest::Approx(path_loss(f.params, snap, z - snap.attention(1) * snap.h.col(1)) -
                                path_loss(f.params, snap, z))
                     .epsilon(1e-14));
  auto zero = snap;
  zero.attention(2) = 0.0;
  CHECK(mask_influence_oracle(f.params, zero, 2) == 0.0);
  CHECK_THROWS_AS(mask_influence_oracle(f.params, snap, 99), std::out_of_range);

  auto single = snap;
  single.attention = Vd::Ones(1);
  single.h = snap.h.leftCols(1);
  single.tick.candidates.resize(1);
  CHECK(mask_influence_oracle(f.params, single, 0) ==
        doctest::Approx(path_loss(f.params, single, single.bias) - path_loss(f.params, single, aggregate(single)))
            .epsilon(1e-14));
}

TEST_CASE("path gradient matches central differences") {
  Fixture f;
  const auto snap = decompose(f.params, f.snapshots.back(), f.instance.label);
  const Vd z = aggregate(snap);
  const auto [l, g] = path_loss_gradient(f.params, snap, z);
  CHECK(l == doctest::Approx(path_loss(f.params, snap, z)).epsilon(1e-14));
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Vd zp = z, zm = z;
    zp(i) += 1e-6;
    zm(i) -= 1e-6;
    const double num = (path_loss(f.params, snap, zp) - path_loss(f.params, snap, zm)) / 2e-6;
    CHECK(g(i) == doctest::Approx(num).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("Cauchy-Schwarz bound") {
  Vd h(2), g(2);
  h << 1.0, 0.0;
  g << 0.0, 2.0;
  CHECK(first_order_estimate(0.3, g.dot(h)) == 0.0);
  CHECK(influence_bound(0.3, h, g) == doctest::Approx(0.6).epsilon(1e-15));
  h << 1.0, 2.0;
  g << 2.0, 4.0;
  CHECK(std::abs(first_order_estimate(0.3, g.dot(h))) == doctest::Approx(influence_bound(0.3, h, g)).epsilon(1e-14));
}

TEST_CASE("influence analysis on ten random candidates") {
  Fixture f;
  auto snap = decompose(f.params, f.snapshots.front(), f.instance.label);
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> ex(1.0);
  std::normal_distribution<double> gauss;
  snap.attention.resize(10);
  for (Eigen::Index i = 0; i < 10; ++i) snap.attention(i) = ex(rng);
  snap.attention /= snap.attention.sum();
  snap.h.resize(snap.h.rows(), 10);
  for (Eigen::Index k = 0; k < snap.h.size(); ++k) snap.h(k) = gauss(rng);
  snap.tick.candidates.resize(10);
  double gn = 0;
  const auto cands = analyze_snapshot(f.params, snap, {1e-2, 1e-3, 1e-4}, &gn);
  REQUIRE(cands.size() == 10);
  CHECK(gn > 0);
  int checked = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto& c = cands[i];
    CHECK(c.bound_ok);
    CHECK(std::abs(c.estimate) <= c.bound * (1 + 1e-12));
    CHECK(c.delta_loss == doctest::Approx(mask_influence_oracle(f.params, snap, i)).epsilon(1e-12));
    if (c.taylor_checked) {
      ++checked;
      CHECK(c.taylor_ok);
    }
  }
  CHECK(checked >= 5);
}

TEST_CASE("influence report on instances") {
  const auto s = tiny_setup();
  const EncoderStub stub(s.pyramid);
  auto params = init_params<double>(s.model);
  randomize_params(params, s.param_seed, 0.3);
  std::vector<PyramidInstance> inst = {plant_instance(s.pyramid, 1), plant_instance(s.pyramid, 2)};
  auto rc = s.reasoner;
  rc.stopping_enabled = false;
  const auto r = verify_influence(params, inst, rc, stub);
  CHECK(r.snapshots == 4);
  CHECK(r.cauchy_schwarz_ok);
  CHECK(r.taylor_ok);
  CHECK(r.candidates.size() == 2 * (4 + 8));
  CHECK(std::abs(r.spearman_rho) <= 1.0);
}

TEST_CASE("rank correlation") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 2, 3}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(spearman({1}, {1}), std::invalid_argument);
}
