#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pathseek/suites.hpp"
#include "pathseek/training.hpp"

using namespace pathseek;
using M = Eigen::MatrixXd;

namespace {

double max_param_diff(const ModelParams<double>& a, const ModelParams<double>& b) {
  const auto ta = AdamW<double>::tensors_of(a);
  const auto tb = AdamW<double>::tensors_of(b);
  double d = 0;
  for (std::size_t i = 0; i < ta.size(); ++i) d = std::max(d, (*ta[i] - *tb[i]).cwiseAbs().maxCoeff());
  return d;
}

TinySetup quiet_setup() {
  auto s = tiny_setup();
  s.model.dropout = 0.0;
  return s;
}

}  // namespace

TEST_CASE("per-tick loss") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
  CHECK(per_tick_loss(z, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  Eigen::VectorXd l(3);
  l << 2.0, 1.0, 0.1;
  const double oracle = -std::log(std::exp(1.0) / (std::exp(2.0) + std::exp(1.0) + std::exp(0.1)));
  CHECK(per_tick_loss(l, 1) == doctest::Approx(oracle).epsilon(1e-14));
  Eigen::VectorXd big(2);
  big << 1000.0, 0.0;
  CHECK(per_tick_loss(big, 1) == doctest::Approx(1000.0).epsilon(1e-12));
  CHECK(per_tick_loss(big, 0) < 1e-300);
  CHECK_THROWS_AS(per_tick_loss(l, 3), std::out_of_range);
}

TEST_CASE("checkpoint selection") {
  auto [a, b] = select_checkpoints({0.9, 0.4, 0.6}, {0.1, 0.3, 0.8});
  CHECK(a == 1);
  CHECK(b == 2);
  std::tie(a, b) = select_checkpoints({0.5, 0.5, 0.7}, {0.2, 0.6, 0.6});
  CHECK(a == 0);
  CHECK(b == 1);
  std::tie(a, b) = select_checkpoints({1.2}, {0.4});
  CHECK(a == 0);
  CHECK(b == 0);
  CHECK_THROWS_AS(select_checkpoints({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(select_checkpoints({1.0}, {0.1, 0.2}), std::invalid_argument);
}

TEST_CASE("composite loss") {
  auto s0 = make_scale_record({0.9, 0.4, 0.6}, {0.1, 0.3, 0.8});
  CHECK(s0.contribution == doctest::Approx(0.5).epsilon(1e-15));
  auto s1 = make_scale_record({0.3, 0.2}, {0.9, 0.5});
  CHECK(s1.contribution == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(composite_loss({s0, s1}, 2) == doctest::Approx(0.375).epsilon(1e-15));
  CHECK_THROWS_AS(composite_loss({s0}, 2), std::invalid_argument);

  ad::Tape<double> tape;
  std::vector<std::vector<ad::Var<double>>> logits(2);
  M a(3, 1), b(3, 1), c(3, 1);
  a << 0.1, 0.2, 0.3;
  b << 2.0, -1.0, 0.0;
  c << 0.0, 0.0, 3.0;
  logits[0] = {tape.leaf(a), tape.leaf(b)};
  logits[1] = {tape.leaf(c)};
  auto cl = composite_loss(logits, 0, 2);
  double expect = 0;
  for (const auto& s : cl.scales) expect += s.contribution;
  CHECK(cl.loss.scalar() == doctest::Approx(expect / 2).epsilon(1e-14));
  CHECK(cl.scales[1].t1 == 0);
  CHECK(cl.scales[1].t2 == 0);
  CHECK(cl.scales[0].t1 == 1);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.warmup_steps = 100;
  c.schedule = Schedule::cosine;
  CHECK(learning_rate_at(c, 0, 1000) == 0.0);
  CHECK(learning_rate_at(c, 50, 1000) == doctest::Approx(5e-4).epsilon(1e-14));
  CHECK(learning_rate_at(c, 100, 1000) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(learning_rate_at(c, 550, 1000) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(learning_rate_at(c, 1000, 1000) == doctest::Approx(0.0).epsilon(1e-12));
  c.schedule = Schedule::constant;
  CHECK(learning_rate_at(c, 900, 1000) == 1e-3);
  c.schedule = Schedule::multistep;
  c.multistep_interval = 200;
  c.multistep_gamma = 0.1;
  CHECK(learning_rate_at(c, 350, 1000) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(parse_schedule("cosine") == Schedule::cosine);
  CHECK(std::string(to_string(Schedule::multistep)) == "multistep");
  CHECK_THROWS_AS(parse_schedule("linear"), std::invalid_argument);
}

TEST_CASE("AdamW single step") {
  M p(1, 2), g(1, 2);
  p << 1.0, -2.0;
  g << 0.5, -0.25;
  AdamW<double> opt({&p}, 0.0);
  opt.step({&p}, {&g}, 0.1);
  CHECK(p(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p(0, 1) == doctest::Approx(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-12));
  M q(1, 1), z(1, 1);
  q << 2.0;
  z << 0.0;
  AdamW<double> decay({&q}, 0.5);
  decay.step({&q}, {&z}, 0.1);
  CHECK(q(0, 0) == doctest::Approx(2.0 * 0.95).epsilon(1e-14));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto s = quiet_setup();
  const EncoderStub stub(s.pyramid);
  std::vector<PyramidInstance> data = {plant_instance(s.pyramid, 1), plant_instance(s.pyramid, 2)};
  const auto init = init_params<double>(s.model);
  TrainConfig tc;
  tc.epochs = 2;
  tc.learning_rate = 0.0;
  tc.warmup_steps = 0;
  auto r = train(data, {}, init, tc, s.reasoner, stub);
  CHECK(max_param_diff(r.params, init) == 0.0);
  REQUIRE(r.metrics.size() == 2);
  CHECK(r.metrics[1].step == 4);
  CHECK(std::isnan(r.metrics[1].val_auc));
}

TEST_CASE("training overfits a single instance") {
  auto s = quiet_setup();
  const EncoderStub stub(s.pyramid);
  const auto inst = plant_instance(s.pyramid, 9);
  const auto init = init_params<double>(s.model);
  const double before = loss_and_gradient(init, inst, s.reasoner, stub, GraphOptions{false, false, 0}).loss;
  TrainConfig tc;
  tc.epochs = 60;
  tc.learning_rate = 1e-2;
  tc.warmup_steps = 0;
  tc.schedule = Schedule::constant;
  auto r = train({inst}, {}, init, tc, s.reasoner, stub);
  const double after = loss_and_gradient(r.params, inst, s.reasoner, stub, GraphOptions{false, false, 0}).loss;
  CHECK(after < 0.05);
  CHECK(after < 0.1 * before);
}

TEST_CASE("analytic gradients match central differences") {
  const auto r = run_gradient_suite();
  CHECK(r.report.max_relative_error < 1e-4);
  CHECK(r.report.tensors.size() > 10);
  for (const auto& t : r.report.tensors) CHECK(std::isfinite(t.analytic_norm));
}

TEST_CASE("central-difference truncation shrinks quadratically") {
  const auto s = tiny_setup();
  const auto inst = plant_instance(s.pyramid, s.instance_seed);
  const EncoderStub stub(s.pyramid);
  auto params = init_params<double>(s.model);
  randomize_params(params, s.param_seed, s.amplitude);
  auto samples = richardson_check(params, inst, s.reasoner, stub, 1e-3, 1e-9, 24);
  REQUIRE(samples.size() >= 5);
  std::vector<double> ratios;
  for (const auto& x : samples) ratios.push_back(x.ratio);
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[ratios.size() / 2];
  CHECK(median > 3.5);
  CHECK(median < 4.5);
}

TEST_CASE("gradients do not flow through discrete choices") {
  const auto s = tiny_setup();
  const auto inst = plant_instance(s.pyramid, s.instance_seed);
  const EncoderStub stub(s.pyramid);
  auto params = init_params<double>(s.model);
  randomize_params(params, s.param_seed, s.amplitude);
  auto free = loss_and_gradient(params, inst, s.reasoner, stub, GraphOptions{true, false, 0});
  auto frozen = loss_and_gradient(params, inst, s.reasoner, stub, GraphOptions{true, false, 0}, &free.decisions,
                                  &free.checkpoints);
  CHECK(frozen.loss == free.loss);
  CHECK(max_param_diff(*frozen.grads, *free.grads) == 0.0);

}
