#pragma once

// Recurrent latent core: synapse transition, FIFO pre-activation history,
// per-neuron history models and decayed pairwise synchronisation.

#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "pathseek/ad.hpp"
#include "pathseek/params.hpp"

namespace pathseek {

struct GraphOptions {
  bool record_gradients = false;
  bool dropout = false;
  std::uint64_t dropout_seed = 0;
};

// Binds a parameter set onto a fresh tape for one rollout.
template <typename Scalar>
class ModelGraph {
 public:
  using Var = ad::Var<Scalar>;

  explicit ModelGraph(const ModelParams<Scalar>& params, GraphOptions options = {})
      : params_(&params), tape_(std::make_unique<ad::Tape<Scalar>>()), options_(options),
        rng_(options.dropout_seed) {
    tape_->set_recording(options.record_gradients);
    vars_ = params.w.template map<Var>([this](const std::string&, const Mat<Scalar>& m) { return tape_->leaf(m); });
    for (const auto& [i, j] : params.pairs_out) {
      out_left_.push_back(i);
      out_right_.push_back(j);
    }
    for (const auto& [i, j] : params.pairs_action) {
      action_left_.push_back(i);
      action_right_.push_back(j);
    }
  }
  ModelGraph(const ModelGraph&) = delete;
  ModelGraph& operator=(const ModelGraph&) = delete;

  ad::Tape<Scalar>& tape() { return *tape_; }
  const ModelParams<Scalar>& params() const { return *params_; }
  const ModelConfig& config() const { return params_->config; }
  const Tensors<Var>& vars() const { return vars_; }
  bool training() const { return options_.dropout && params_->config.dropout > 0.0; }

  Var constant(Mat<Scalar> m) { return tape_->constant(std::move(m)); }

  // Inverted-dropout mask, or all ones outside training.
  Mat<Scalar> dropout_mask(Eigen::Index rows) {
    Mat<Scalar> m = Mat<Scalar>::Ones(rows, 1);
    if (!training()) return m;
    const double p = params_->config.dropout;
    std::bernoulli_distribution keep(1.0 - p);
    for (Eigen::Index i = 0; i < rows; ++i) m(i) = keep(rng_) ? static_cast<Scalar>(1.0 / (1.0 - p)) : Scalar(0);
    return m;
  }

  // exp(-r) per pair, r = raw^2; built once per graph.
  const Var& decay_out() {
    if (!decay_out_.valid()) decay_out_ = ad::exp(ad::scale(ad::square(vars_.decay_out), Scalar(-1)));
    return decay_out_;
  }
  const Var& decay_action() {
    if (!decay_action_.valid()) decay_action_ = ad::exp(ad::scale(ad::square(vars_.decay_action), Scalar(-1)));
    return decay_action_;
  }

  const std::vector<int>& out_left() const { return out_left_; }
  const std::vector<int>& out_right() const { return out_right_; }
  const std::vector<int>& action_left() const { return action_left_; }
  const std::vector<int>& action_right() const { return action_right_; }

  // Parameter gradients after tape().backward().
  ModelParams<Scalar> gradients() const {
    ModelParams<Scalar> g = *params_;
    std::vector<const Var*> vs;
    vars_.visit([&](const std::string&, const Var& v) { vs.push_back(&v); });
    std::size_t i = 0;
    g.w.visit([&](const std::string&, Mat<Scalar>& m) { m = tape_->grad(*vs[i++]); });
    return g;
  }

 private:
  const ModelParams<Scalar>* params_;
  std::unique_ptr<ad::Tape<Scalar>> tape_;
  GraphOptions options_;
  std::mt19937_64 rng_;
  Tensors<Var> vars_;
  Var decay_out_, decay_action_;
  std::vector<int> out_left_, out_right_, action_left_, action_right_;
};

template <typename Scalar>
struct LatentState {
  ad::Var<Scalar> e;        // post-activation, D x 1
  ad::Var<Scalar> history;  // pre-activation window, D x M, newest column last
  ad::Var<Scalar> out_alpha, out_beta;
  ad::Var<Scalar> action_alpha, action_beta;
  ad::Var<Scalar> s_action;  // latest action synchronisation, zero before the first update
  int tick = 0;
  int scale = 0;
  int pushes = 0;
};

template <typename Scalar>
struct SyncRepresentation {
  ad::Var<Scalar> s_out;
  ad::Var<Scalar> s_action;
};

namespace detail {
template <typename Scalar>
void require_finite(const Mat<Scalar>& m, const char* what) {
  if (!m.allFinite()) throw std::domain_error(std::string(what) + ": non-finite input");
}
template <typename Scalar>
void require_shape(const ad::Var<Scalar>& v, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (v.rows() != rows || v.cols() != cols)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

template <typename Scalar>
LatentState<Scalar> init_state(ModelGraph<Scalar>& g) {
  const auto& c = g.config();
  LatentState<Scalar> s;
  s.e = g.vars().start_e;
  s.history = g.constant(Mat<Scalar>::Zero(c.latent_dim, c.history_len));
  s.out_alpha = g.constant(Mat<Scalar>::Zero(c.sync_out, 1));
  s.out_beta = g.constant(Mat<Scalar>::Zero(c.sync_out, 1));
  s.action_alpha = g.constant(Mat<Scalar>::Zero(c.sync_action, 1));
  s.action_beta = g.constant(Mat<Scalar>::Zero(c.sync_action, 1));
  s.s_action = g.constant(Mat<Scalar>::Zero(c.sync_action, 1));
  return s;
}

// h = f_syn([e; b]): a depth-L MLP.  Layer 0 is affine on the concatenation;
// each later layer is affine(GELU(LayerNorm(x))), with a residual from two
// layers back on every even layer.  Depth 1 is a single affine map.
template <typename Scalar>
ad::Var<Scalar> synapse_step(ModelGraph<Scalar>& g, const ad::Var<Scalar>& e, const ad::Var<Scalar>& b) {
  const auto& c = g.config();
  const auto& w = g.vars();
  detail::require_shape(e, c.latent_dim, 1, "synapse_step(e)");
  detail::require_shape(b, c.input_dim, 1, "synapse_step(b)");
  detail::require_finite<Scalar>(e.value(), "synapse_step(e)");
  detail::require_finite<Scalar>(b.value(), "synapse_step(b)");
  std::vector<ad::Var<Scalar>> xs;
  xs.push_back(ad::affine(w.synapse_w[0], ad::concat_rows(e, b), w.synapse_b[0]));
  for (std::size_t l = 1; l < w.synapse_w.size(); ++l) {
    auto u = ad::gelu(ad::layer_norm(xs.back(), w.synapse_ln_gain[l - 1], w.synapse_ln_bias[l - 1]));
    if (g.training()) u = ad::mask(u, g.dropout_mask(u.rows()));
    auto x = ad::affine(w.synapse_w[l], u, w.synapse_b[l]);
    if (l % 2 == 0) x = ad::add(x, xs[l - 2]);
    xs.push_back(x);
  }
  return xs.back();
}

template <typename Scalar>
void push_history(ModelGraph<Scalar>& g, LatentState<Scalar>& state, const ad::Var<Scalar>& h) {
  detail::require_shape(h, g.config().latent_dim, 1, "push_history");
  state.history = ad::fifo_push(state.history, h);
  ++state.pushes;
}

namespace ad {

// Private per-neuron MLPs over history rows: out_d = w2_d . GELU(W1_d H_d + b1_d) + b2_d.
template <typename S>
Var<S> neuron_mlps(const Var<S>& history, const Var<S>& w1, const Var<S>& b1, const Var<S>& w2, const Var<S>& b2) {
  const Eigen::Index D = history.rows(), M = history.cols(), H = b1.cols();
  detail::require(w1.rows() == D * H && w1.cols() == M && b1.rows() == D && w2.rows() == D && w2.cols() == H &&
                      b2.rows() == D,
                  "neuron_mlps");
  const auto& X = history.value();
  const auto& W1 = w1.value();
  Mat<S> pre(D, H);
  Mat<S> out(D, 1);
  for (Eigen::Index d = 0; d < D; ++d) {
    pre.row(d) = (W1.middleRows(d * H, H) * X.row(d).transpose()).transpose() + b1.value().row(d);
    S acc = b2.value()(d, 0);
    for (Eigen::Index k = 0; k < H; ++k) acc += w2.value()(d, k) * gelu_value(pre(d, k));
    out(d, 0) = acc;
  }
  const int ih = history.index, iw1 = w1.index, ib1 = b1.index, iw2 = w2.index, ib2 = b2.index;
  return history.tape->record(
      std::move(out), {history, w1, b1, w2, b2},
      [ih, iw1, ib1, iw2, ib2, pre = std::move(pre), D, M, H](Tape<S>& t, int self) {
        const auto& g = t.adjoint(self);
        const auto& X = t.value(ih);
        const auto& W1 = t.value(iw1);
        const auto& W2 = t.value(iw2);
        Mat<S> dX = Mat<S>::Zero(D, M), dW1 = Mat<S>::Zero(D * H, M), db1(D, H), dW2(D, H);
        for (Eigen::Index d = 0; d < D; ++d) {
          const S gd = g(d, 0);
          Eigen::Matrix<S, 1, Eigen::Dynamic> dpre(H);
          for (Eigen::Index k = 0; k < H; ++k) {
            dW2(d, k) = gd * gelu_value(pre(d, k));
            dpre(k) = gd * W2(d, k) * gelu_derivative(pre(d, k));
          }
          db1.row(d) = dpre;
          dW1.middleRows(d * H, H) = dpre.transpose() * X.row(d);
          dX.row(d) = dpre * W1.middleRows(d * H, H);
        }
        t.accumulate(ih, dX);
        t.accumulate(iw1, dW1);
        t.accumulate(ib1, db1);
        t.accumulate(iw2, dW2);
        t.accumulate(ib2, g);
      });
}

}  // namespace ad

template <typename Scalar>
ad::Var<Scalar> neuron_update(ModelGraph<Scalar>& g, const LatentState<Scalar>& state) {
  const auto& w = g.vars();
  detail::require_shape(state.history, g.config().latent_dim, g.config().history_len, "neuron_update");
  return ad::neuron_mlps(state.history, w.memory_w1, w.memory_b1, w.memory_w2, w.memory_b2);
}

// alpha <- alpha exp(-r) + e_i e_j,  beta <- beta exp(-r) + 1,  S = alpha / sqrt(beta).
template <typename Scalar>
SyncRepresentation<Scalar> sync_update(ModelGraph<Scalar>& g, LatentState<Scalar>& state, const ad::Var<Scalar>& e) {
  detail::require_shape(e, g.config().latent_dim, 1, "sync_update");
  auto step = [&](ad::Var<Scalar>& alpha, ad::Var<Scalar>& beta, const ad::Var<Scalar>& decay,
                  const std::vector<int>& left, const std::vector<int>& right) {
    auto product = ad::hadamard(ad::gather(e, left), ad::gather(e, right));
    alpha = ad::add(ad::hadamard(alpha, decay), product);
    beta = ad::add_constant(ad::hadamard(beta, decay), Scalar(1));
    return ad::hadamard(alpha, ad::rsqrt(beta));
  };
  SyncRepresentation<Scalar> s;
  s.s_out = step(state.out_alpha, state.out_beta, g.decay_out(), g.out_left(), g.out_right());
  s.s_action = step(state.action_alpha, state.action_beta, g.decay_action(), g.action_left(), g.action_right());
  state.s_action = s.s_action;
  return s;
}

}  // namespace pathseek
