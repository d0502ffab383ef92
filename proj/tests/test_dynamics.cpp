#include <doctest.h>

#include <cmath>
#include <random>

#include "pathseek/dynamics.hpp"

using namespace pathseek;
using M = Eigen::MatrixXd;
using Vd = Eigen::VectorXd;

namespace {

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Vd layer_norm_ref(const Vd& x, const Vd& g, const Vd& b) {
  const double mean = x.mean();
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vd out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = (x(i) - mean) / std::sqrt(var + 1e-5) * g(i) + b(i);
  return out;
}

Vd matvec(const M& w, const Vd& x) {
  Vd out = Vd::Zero(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) out(i) += w(i, j) * x(j);
  return out;
}

ModelConfig tiny(int D, int d_in, int depth) {
  ModelConfig c;
  c.latent_dim = D;
  c.input_dim = d_in;
  c.history_len = 3;
  c.memory_hidden = 2;
  c.synapse_depth = depth;
  c.sync_out = 2;
  c.sync_action = 2;
  c.heads = 1;
  c.head_dim = 2;
  c.seed = 11;
  return c;
}

Vd random_vec(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("initial state") {
  auto params = init_params<double>(tiny(4, 3, 2));
  ModelGraph<double> g1(params), g2(params);
  auto a = init_state(g1), b = init_state(g2);
  CHECK(a.e.value() == b.e.value());
  CHECK(a.e.value() == params.w.start_e);
  CHECK(a.history.value() == M::Zero(4, 3));
  params.w.start_e.setConstant(0.25);
  ModelGraph<double> g3(params);
  CHECK(init_state(g3).e.value() == M::Constant(4, 1, 0.25));
}

TEST_CASE("synapse with zero weights is zero") {
  auto params = init_params<double>(tiny(4, 3, 3));
  for (auto& w : params.w.synapse_w) w.setZero();
  for (auto& b : params.w.synapse_b) b.setZero();
  ModelGraph<double> g(params);
  std::mt19937_64 rng(1);
  auto h = synapse_step(g, g.constant(random_vec(4, rng)), g.constant(random_vec(3, rng)));
  CHECK(h.value().norm() == 0.0);
}

TEST_CASE("single identity layer returns the latent slice") {
  auto params = init_params<double>(tiny(4, 3, 1));
  params.w.synapse_w[0] = M::Identity(4, 7);
  params.w.synapse_b[0].setZero();
  ModelGraph<double> g(params);
  std::mt19937_64 rng(2);
  const Vd e = random_vec(4, rng);
  auto h = synapse_step(g, g.constant(e), g.constant(random_vec(3, rng)));
  CHECK((h.value().col(0) - e).norm() == 0.0);
}

TEST_CASE("synapse matches a straight-line re-evaluation") {
  for (int depth : {1, 2, 3, 4}) {
    auto params = init_params<double>(tiny(4, 3, depth));
    std::mt19937_64 rng(11);
    for (auto& gain : params.w.synapse_ln_gain) gain = random_vec(4, rng);
    for (auto& bias : params.w.synapse_ln_bias) bias = random_vec(4, rng);
    const Vd e = random_vec(4, rng), b = random_vec(3, rng);
    Vd cat(7);
    cat << e, b;
    std::vector<Vd> xs{matvec(params.w.synapse_w[0], cat) + params.w.synapse_b[0].col(0)};
    for (int l = 1; l < depth; ++l) {
      Vd u = layer_norm_ref(xs.back(), params.w.synapse_ln_gain[l - 1], params.w.synapse_ln_bias[l - 1]);
      for (auto& v : u) v = gelu_ref(v);
      Vd x = matvec(params.w.synapse_w[l], u) + params.w.synapse_b[l].col(0);
      if (l % 2 == 0) x += xs[l - 2];
      xs.push_back(x);
    }
    ModelGraph<double> g(params);
    auto h = synapse_step(g, g.constant(e), g.constant(b));
    CHECK((h.value().col(0) - xs.back()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("FIFO history") {
  auto c = tiny(3, 2, 1);
  c.history_len = 7;
  auto params = init_params<double>(c);
  ModelGraph<double> g(params);
  auto st = init_state(g);
  std::mt19937_64 rng(3);
  std::vector<Vd> pushed;
  pushed.push_back(random_vec(3, rng));
  push_history(g, st, g.constant(pushed.back()));
  CHECK(st.history.value().leftCols(6).norm() == 0.0);
  CHECK(st.history.value().col(6) == pushed.back());
  for (int i = 1; i < 50; ++i) {
    pushed.push_back(random_vec(3, rng));
    push_history(g, st, g.constant(pushed.back()));
    const int have = static_cast<int>(pushed.size());
    for (int k = 0; k < 7; ++k) {
      const int src = have - 7 + k;
      if (src < 0)
        CHECK(st.history.value().col(k).norm() == 0.0);
      else
        CHECK(st.history.value().col(k) == pushed[static_cast<std::size_t>(src)]);
    }
  }
  CHECK(st.pushes == 50);

  c.history_len = 3;
  auto p3 = init_params<double>(c);
  ModelGraph<double> g3(p3);
  auto s3 = init_state(g3);
  for (int i = 0; i < 4; ++i) push_history(g3, s3, g3.constant(Vd::Constant(3, i + 1.0)));
  M expected(3, 3);
  expected << 2, 3, 4, 2, 3, 4, 2, 3, 4;
  CHECK(s3.history.value() == expected);
}

TEST_CASE("neuron models") {
  SUBCASE("zero weights give the output bias") {
    auto params = init_params<double>(tiny(4, 3, 1));
    params.w.memory_w1.setZero();
    params.w.memory_b1.setZero();
    params.w.memory_w2.setZero();
    ModelGraph<double> g(params);
    auto st = init_state(g);
    std::mt19937_64 rng(4);
    push_history(g, st, g.constant(random_vec(4, rng)));
    CHECK(neuron_update(g, st).value() == params.w.memory_b2);
  }
  SUBCASE("hand computation for one neuron") {
    auto c = tiny(2, 1, 1);
    c.history_len = 2;
    c.memory_hidden = 2;
    c.sync_out = 1;
    c.sync_action = 1;
    auto params = init_params<double>(c);
    params.w.memory_w1 << 0.5, -1.0, 2.0, 0.25, 0.1, 0.2, 0.3, 0.4;
    params.w.memory_b1 << 0.1, -0.2, 0.0, 0.0;
    params.w.memory_w2 << 1.5, -0.5, 0.0, 0.0;
    params.w.memory_b2 << 0.3, 0.0;
    ModelGraph<double> g(params);
    auto st = init_state(g);
    M hist(2, 2);
    hist << 0.7, -1.2, 0.0, 0.0;
    st.history = g.constant(hist);
    const double p0 = 0.5 * 0.7 + -1.0 * -1.2 + 0.1;
    const double p1 = 2.0 * 0.7 + 0.25 * -1.2 - 0.2;
    const double expected = 1.5 * gelu_ref(p0) - 0.5 * gelu_ref(p1) + 0.3;
    CHECK(neuron_update(g, st).value()(0, 0) == doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("permuting neurons permutes the output") {
    auto c = tiny(4, 3, 1);
    auto params = init_params<double>(c);
    std::mt19937_64 rng(5);
    M hist(4, 3);
    for (Eigen::Index k = 0; k < hist.size(); ++k) hist(k) = std::normal_distribution<double>()(rng);
    ModelGraph<double> g(params);
    auto st = init_state(g);
    st.history = g.constant(hist);
    const M base = neuron_update(g, st).value();

    const std::vector<int> perm = {2, 0, 3, 1};
    auto pp = params;
    const int H = c.memory_hidden;
    M hp(4, 3);
    for (int d = 0; d < 4; ++d) {
      const int s = perm[static_cast<std::size_t>(d)];
      pp.w.memory_w1.middleRows(d * H, H) = params.w.memory_w1.middleRows(s * H, H);
      pp.w.memory_b1.row(d) = params.w.memory_b1.row(s);
      pp.w.memory_w2.row(d) = params.w.memory_w2.row(s);
      pp.w.memory_b2.row(d) = params.w.memory_b2.row(s);
      hp.row(d) = hist.row(s);
    }
    ModelGraph<double> gp(pp);
    auto sp = init_state(gp);
    sp.history = gp.constant(hp);
    const M permuted = neuron_update(gp, sp).value();
    for (int d = 0; d < 4; ++d) CHECK(permuted(d, 0) == base(perm[static_cast<std::size_t>(d)], 0));
  }
}

TEST_CASE("synchronisation recurrence") {
  auto c = tiny(5, 2, 1);
  c.sync_out = 4;
  c.sync_action = 3;
  SUBCASE("first tick is the pair product") {
    auto params = init_params<double>(c);
    ModelGraph<double> g(params);
    auto st = init_state(g);
    std::mt19937_64 rng(6);
    const Vd e = random_vec(5, rng);
    auto s = sync_update(g, st, g.constant(e));
    for (std::size_t p = 0; p < params.pairs_out.size(); ++p)
      CHECK(s.s_out.value()(static_cast<Eigen::Index>(p), 0) ==
            doctest::Approx(e(params.pairs_out[p].first) * e(params.pairs_out[p].second)).epsilon(1e-15));
  }
  SUBCASE("no decay and constant products grow as sqrt(t)") {
    auto params = init_params<double>(c);
    params.w.decay_out.setZero();
    ModelGraph<double> g(params);
    auto st = init_state(g);
    const Vd e = Vd::Constant(5, 1.5);
    ad::Var<double> s;
    for (int t = 1; t <= 9; ++t) {
      s = sync_update(g, st, g.constant(e)).s_out;
      CHECK((s.value().array() - 2.25 * std::sqrt(static_cast<double>(t))).abs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("recurrence equals the decayed sum over 100 random ticks") {
    auto params = init_params<double>(c);
    std::mt19937_64 rng(7);
    params.w.decay_out = random_vec(4, rng) * 0.7;
    params.w.decay_action = random_vec(3, rng) * 0.7;
    ModelGraph<double> g(params);
    auto st = init_state(g);
    std::vector<Vd> es;
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
      es.push_back(random_vec(5, rng));
      auto s = sync_update(g, st, g.constant(es.back()));
      auto check = [&](const std::vector<Pair>& pairs, const M& raw, const M& got) {
        for (std::size_t p = 0; p < pairs.size(); ++p) {
          const double r = raw(static_cast<Eigen::Index>(p), 0) * raw(static_cast<Eigen::Index>(p), 0);
          double num = 0, den = 0;
          for (std::size_t tau = 0; tau < es.size(); ++tau) {
            const double w = std::exp(-r * static_cast<double>(es.size() - 1 - tau));
            num += w * es[tau](pairs[p].first) * es[tau](pairs[p].second);
            den += w;
          }
          worst = std::max(worst, std::abs(num / std::sqrt(den) - got(static_cast<Eigen::Index>(p), 0)));
        }
      };
      check(params.pairs_out, params.w.decay_out, s.s_out.value());
      check(params.pairs_action, params.w.decay_action, s.s_action.value());
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("dynamics are deterministic and reject bad input") {
  auto params = init_params<double>(tiny(4, 3, 2));
  auto run = [&]() {
    ModelGraph<double> g(params);
    auto st = init_state(g);
    for (int t = 0; t < 5; ++t) {
      auto h = synapse_step(g, st.e, g.constant(Vd::Constant(3, 0.1 * t)));
      push_history(g, st, h);
      st.e = neuron_update(g, st);
      sync_update(g, st, st.e);
    }
    return M(st.e.value());
  };
  CHECK(run() == run());
  ModelGraph<double> g(params);
  CHECK_THROWS_AS(synapse_step(g, g.constant(Vd::Zero(3)), g.constant(Vd::Zero(3))), std::invalid_argument);
  Vd bad = Vd::Zero(3);
  bad(0) = std::nan("");
  CHECK_THROWS_AS(synapse_step(g, g.constant(Vd::Zero(4)), g.constant(bad)), std::domain_error);
}
