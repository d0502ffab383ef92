#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "pathseek/ad.hpp"

using namespace pathseek;
using M = Eigen::MatrixXd;
using V = ad::Var<double>;

namespace {

M random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  M m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m(k) = u(rng);
  return m;
}

// Checks the tape gradient of sum(weights .* f(inputs)) against central differences.
double check_op(std::vector<M> inputs, const std::function<V(ad::Tape<double>&, std::vector<V>&)>& f,
                std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  M weights;
  auto loss = [&](const std::vector<M>& xs, std::vector<M>* grads) {
    ad::Tape<double> tape;
    std::vector<V> vs;
    for (const auto& x : xs) vs.push_back(tape.leaf(x));
    V out = f(tape, vs);
    if (weights.size() == 0) weights = random_matrix(out.rows(), out.cols(), rng);
    V l = ad::sum(ad::hadamard(out, tape.constant(weights)));
    if (grads) {
      tape.backward(l);
      for (const auto& v : vs) grads->push_back(tape.grad(v));
    }
    return l.scalar();
  };
  std::vector<M> analytic;
  loss(inputs, &analytic);
  double worst = 0.0;
  const double eps = 1e-6;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (Eigen::Index k = 0; k < inputs[t].size(); ++k) {
      auto plus = inputs, minus = inputs;
      plus[t](k) += eps;
      minus[t](k) -= eps;
      const double numeric = (loss(plus, nullptr) - loss(minus, nullptr)) / (2 * eps);
      worst = std::max(worst, std::abs(numeric - analytic[t](k)) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("linear ops differentiate correctly") {
  std::mt19937_64 rng(3);
  CHECK(check_op({random_matrix(3, 4, rng), random_matrix(4, 2, rng)},
                 [](auto&, auto& v) { return ad::matmul(v[0], v[1]); }) < 1e-8);
  CHECK(check_op({random_matrix(3, 4, rng), random_matrix(4, 1, rng), random_matrix(3, 1, rng)},
                 [](auto&, auto& v) { return ad::affine(v[0], v[1], v[2]); }) < 1e-8);
  CHECK(check_op({random_matrix(5, 4, rng), random_matrix(3, 4, rng), random_matrix(3, 1, rng)},
                 [](auto&, auto& v) { return ad::affine_rows(v[0], v[1], v[2]); }) < 1e-8);
  CHECK(check_op({random_matrix(3, 2, rng), random_matrix(3, 2, rng)},
                 [](auto&, auto& v) { return ad::sub(ad::add(v[0], v[1]), ad::hadamard(v[0], v[1])); }) < 1e-8);
  CHECK(check_op({random_matrix(3, 2, rng)}, [](auto&, auto& v) { return ad::add_constant(ad::scale(v[0], 2.5), 1.0); }) <
        1e-8);
}

TEST_CASE("elementwise ops differentiate correctly") {
  std::mt19937_64 rng(4);
  const M x = random_matrix(4, 3, rng, -2.0, 2.0);
  CHECK(check_op({x}, [](auto&, auto& v) { return ad::exp(v[0]); }) < 1e-7);
  CHECK(check_op({x}, [](auto&, auto& v) { return ad::square(v[0]); }) < 1e-8);
  CHECK(check_op({x}, [](auto&, auto& v) { return ad::tanh(v[0]); }) < 1e-8);
  CHECK(check_op({x}, [](auto&, auto& v) { return ad::sigmoid(v[0]); }) < 1e-8);
  CHECK(check_op({x}, [](auto&, auto& v) { return ad::gelu(v[0]); }) < 1e-8);
  CHECK(check_op({random_matrix(4, 1, rng, 0.5, 3.0)}, [](auto&, auto& v) { return ad::rsqrt(v[0]); }) < 1e-7);
}

TEST_CASE("shape ops differentiate correctly") {
  std::mt19937_64 rng(5);
  CHECK(check_op({random_matrix(3, 4, rng)}, [](auto&, auto& v) { return ad::transpose(v[0]); }) < 1e-8);
  CHECK(check_op({random_matrix(3, 2, rng), random_matrix(2, 2, rng)},
                 [](auto&, auto& v) { return ad::concat_rows(v[0], v[1]); }) < 1e-8);
  CHECK(check_op({random_matrix(6, 3, rng)}, [](auto&, auto& v) { return ad::slice_rows(v[0], 2, 3); }) < 1e-8);
  CHECK(check_op({random_matrix(3, 6, rng)}, [](auto&, auto& v) { return ad::slice_cols(v[0], 1, 4); }) < 1e-8);
  CHECK(check_op({random_matrix(5, 1, rng)}, [](auto&, auto& v) { return ad::gather(v[0], {4, 0, 0, 2}); }) < 1e-8);
  CHECK(check_op({random_matrix(4, 5, rng), random_matrix(4, 1, rng)},
                 [](auto&, auto& v) { return ad::fifo_push(v[0], v[1]); }) < 1e-8);
}

TEST_CASE("softmax, cross entropy and layer norm differentiate correctly") {
  std::mt19937_64 rng(6);
  CHECK(check_op({random_matrix(5, 1, rng, -3, 3)}, [](auto&, auto& v) { return ad::softmax(v[0]); }) < 1e-8);
  CHECK(check_op({random_matrix(4, 1, rng, -3, 3)}, [](auto&, auto& v) { return ad::cross_entropy(v[0], 2); }) < 1e-8);
  CHECK(check_op({random_matrix(6, 1, rng, -2, 2), random_matrix(6, 1, rng), random_matrix(6, 1, rng)},
                 [](auto&, auto& v) { return ad::layer_norm(v[0], v[1], v[2]); }) < 1e-6);
}

TEST_CASE("cross entropy values") {
  ad::Tape<double> tape;
  CHECK(ad::cross_entropy(tape.constant(M::Zero(4, 1)), 1).scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  M strong = M::Zero(3, 1);
  strong(0) = 20.0;
  CHECK(ad::cross_entropy(tape.constant(strong), 0).scalar() < 1e-8);
  M l(3, 1);
  l << 1.0, 2.0, 0.5;
  const double oracle = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5)) - 1.0;
  CHECK(ad::cross_entropy(tape.constant(l), 0).scalar() == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(1.4644).epsilon(1e-4));
}

TEST_CASE("fifo push drops the oldest column") {
  ad::Tape<double> tape;
  M w(2, 3);
  w << 1, 2, 3, 4, 5, 6;
  M h(2, 1);
  h << 7, 8;
  M expected(2, 3);
  expected << 2, 3, 7, 5, 6, 8;
  CHECK(ad::fifo_push(tape.constant(w), tape.constant(h)).value() == expected);
}

TEST_CASE("constants and disabled recording produce no gradient") {
  ad::Tape<double> tape;
  auto x = tape.leaf(M::Ones(2, 1));
  auto c = tape.constant(M::Ones(2, 1));
  auto l = ad::sum(ad::hadamard(x, c));
  tape.backward(l);
  CHECK(tape.grad(x) == M::Ones(2, 1));
  CHECK(tape.grad(c) == M::Zero(2, 1));

  ad::Tape<double> off;
  off.set_recording(false);
  auto y = off.leaf(M::Ones(2, 1));
  auto ly = ad::sum(ad::square(y));
  off.backward(ly);
  CHECK(off.grad(y) == M::Zero(2, 1));
}

TEST_CASE("backward rejects non-scalar roots and foreign variables") {
  ad::Tape<double> a, b;
  auto x = a.leaf(M::Ones(2, 1));
  CHECK_THROWS_AS(a.backward(x), std::invalid_argument);
  auto y = b.leaf(M::Ones(2, 1));
  CHECK_THROWS_AS(ad::add(x, y), std::logic_error);
}
