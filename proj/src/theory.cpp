#include "pathseek/theory.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <numbers>
#include <stdexcept>

#include "pathseek/bench.hpp"

namespace pathseek {

InfluenceSnapshot decompose(const ModelParams<double>& params, const TickSnapshot<double>& tick, int label) {
  const auto& c = params.config;
  const Eigen::Index n = tick.weights.cols();
  if (n == 0) throw std::invalid_argument("influence: snapshot has no candidates");
  if (tick.weights.rows() != c.heads || static_cast<int>(tick.values.size()) != c.heads)
    throw std::invalid_argument("influence: snapshot does not match the model");
  InfluenceSnapshot s;
  s.tick = tick;
  s.label = label;
  s.bias = params.w.attn_out_b.col(0);
  s.attention = tick.weights.colwise().mean().transpose();
  s.h = Eigen::MatrixXd::Zero(c.input_dim, n);
  const auto& w_out = params.w.attn_out_w;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd contrib = Eigen::VectorXd::Zero(c.input_dim);
    for (int h = 0; h < c.heads; ++h)
      contrib += tick.weights(h, j) * w_out.middleCols(h * c.head_dim, c.head_dim) *
                 tick.values[static_cast<std::size_t>(h)].row(j).transpose();
    s.h.col(j) = s.attention(j) > 0 ? Eigen::VectorXd(contrib / s.attention(j)) : contrib;
  }
  return s;
}

Eigen::VectorXd aggregate(const InfluenceSnapshot& snap) { return snap.bias + snap.h * snap.attention; }

namespace {

template <typename Scalar>
struct PathEval {
  Scalar loss = 0;
  Vec<Scalar> grad;
};

template <typename Scalar>
PathEval<Scalar> evaluate_path(const ModelParams<Scalar>& params, const InfluenceSnapshot& snap,
                               const Vec<Scalar>& context, bool gradient) {
  ModelGraph<Scalar> g(params, GraphOptions{gradient, false, 0});
  const auto& t = snap.tick;
  auto c = [&](const Eigen::MatrixXd& m) { return g.constant(Mat<Scalar>(m.cast<Scalar>())); };
  LatentState<Scalar> st;
  st.e = c(t.e);
  st.history = c(t.history);
  st.out_alpha = c(t.out_alpha);
  st.out_beta = c(t.out_beta);
  st.action_alpha = c(t.action_alpha);
  st.action_beta = c(t.action_beta);
  st.s_action = g.constant(Mat<Scalar>::Zero(params.config.sync_action, 1));
  st.scale = t.scale;
  auto z = gradient ? g.tape().leaf(Mat<Scalar>(context)) : g.constant(Mat<Scalar>(context));
  auto h = synapse_step(g, st.e, z);
  push_history(g, st, h);
  st.e = neuron_update(g, st);
  auto sync = sync_update(g, st, st.e);
  ad::Var<Scalar> logits;
  if (t.scale == 0) {
    logits = predict_head(g, sync.s_out);
  } else {
    if (!t.coarse_s_out) throw std::logic_error("influence: fine-scale snapshot without coarse operand");
    logits = fuse_predict(g, sync.s_out, c(*t.coarse_s_out));
  }
  auto loss = ad::cross_entropy(logits, snap.label);
  PathEval<Scalar> out;
  out.loss = loss.scalar();
  if (gradient) {
    g.tape().backward(loss);
    out.grad = g.tape().grad(z).col(0);
  }
  return out;
}

}  // namespace

double path_loss(const ModelParams<double>& params, const InfluenceSnapshot& snap, const Eigen::VectorXd& context) {
  return evaluate_path<double>(params, snap, context, false).loss;
}

std::pair<double, Eigen::VectorXd> path_loss_gradient(const ModelParams<double>& params, const InfluenceSnapshot& snap,
                                                      const Eigen::VectorXd& context) {
  auto r = evaluate_path<double>(params, snap, context, true);
  return {r.loss, r.grad};
}

double mask_influence_oracle(const ModelParams<double>& params, const InfluenceSnapshot& snap, std::size_t i,
                             double s) {
  if (i >= static_cast<std::size_t>(snap.attention.size()))
    throw std::out_of_range("mask_influence_oracle: candidate out of range");
  const Eigen::VectorXd z = aggregate(snap);
  const auto k = static_cast<Eigen::Index>(i);
  const Eigen::VectorXd masked = z - s * snap.attention(k) * snap.h.col(k);
  return path_loss(params, snap, masked) - path_loss(params, snap, z);
}

std::vector<CandidateInfluence> analyze_snapshot(const ModelParams<double>& params, const InfluenceSnapshot& snap,
                                                 const std::vector<double>& mask_scales, double* grad_norm) {
  const Eigen::VectorXd z = aggregate(snap);
  const auto [l0, gz] = path_loss_gradient(params, snap, z);
  if (grad_norm) *grad_norm = gz.norm();
  const ModelParams<long double> pl = params.cast<long double>();
  const Vec<long double> zl = z.cast<long double>();
  const auto ref = evaluate_path<long double>(pl, snap, zl, true);
  const long double ll = ref.loss;
  const Vec<long double> gl = ref.grad;
  const long double floor = 64.0L * std::numeric_limits<long double>::epsilon() * std::max(1.0L, std::abs(ll));
  std::vector<CandidateInfluence> out;
  for (Eigen::Index i = 0; i < snap.attention.size(); ++i) {
    CandidateInfluence c;
    c.id = snap.tick.candidates[static_cast<std::size_t>(i)];
    c.tick = snap.tick.tick;
    c.scale = snap.tick.scale;
    c.attention = snap.attention(i);
    const Eigen::VectorXd hi = snap.h.col(i);
    c.h_norm = hi.norm();
    c.estimate = first_order_estimate(c.attention, gz.dot(hi));
    c.bound = influence_bound(c.attention, hi, gz);
    c.bound_ok = std::abs(c.estimate) <= c.bound * (1.0 + 1e-12) + std::numeric_limits<double>::min();
    c.delta_loss = path_loss(params, snap, z - c.attention * hi) - l0;
    bool measurable = !mask_scales.empty();
    const Vec<long double> hl = hi.cast<long double>();
    const long double a = c.attention;
    const long double est = -a * gl.dot(hl);
    for (double sd : mask_scales) {
      const long double s = sd;
      const Vec<long double> masked = zl - s * a * hl;
      const long double residual = evaluate_path<long double>(pl, snap, masked, false).loss - ll - s * est;
      if (std::abs(residual) < 10.0L * floor) measurable = false;
      c.taylor_ratios.push_back(static_cast<double>(residual / (s * s)));
    }
    c.taylor_checked = measurable;
    if (measurable) {
      double lo = std::numeric_limits<double>::infinity(), hi_r = 0.0;
      bool same_sign = true;
      for (double q : c.taylor_ratios) {
        lo = std::min(lo, std::abs(q));
        hi_r = std::max(hi_r, std::abs(q));
        same_sign = same_sign && (q > 0) == (c.taylor_ratios.front() > 0);
      }
      c.taylor_ok = same_sign && hi_r <= 4.0 * lo;
    }
    out.push_back(std::move(c));
  }
  return out;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size();) {
      std::size_t j = i;
      while (j + 1 < v.size() && v[order[j + 1]] == v[order[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const Eigen::Map<const Eigen::VectorXd> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const Eigen::VectorXd> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double denom = da.norm() * db.norm();
  return denom > 0 ? da.dot(db) / denom : 0.0;
}

InfluenceReport verify_influence(const ModelParams<double>& params, const std::vector<PyramidInstance>& instances,
                             const ReasonerConfig& config, const EncoderStub& stub, TickSelector selector,
                             std::vector<double> mask_scales) {
  InfluenceReport report;
  report.mask_scales = mask_scales;
  for (const auto& inst : instances) {
    ModelGraph<double> g(params);
    FeatureCache cache(inst.config.num_scales);
    RolloutOptions<double> ro;
    ro.capture_snapshots = true;
    auto r = rollout(g, inst, cache, stub, config, ro);
    for (const auto& snap : r.snapshots) {
      const auto& ts = r.trajectory.t_star_per_scale;
      if (selector == TickSelector::best_per_scale && std::find(ts.begin(), ts.end(), snap.tick) == ts.end()) continue;
      const auto s = decompose(params, snap, inst.label);
      double gnorm = 0.0;
      auto cands = analyze_snapshot(params, s, mask_scales, &gnorm);
      report.empirical_cg = std::max(report.empirical_cg, gnorm);
      ++report.snapshots;
      for (auto& c : cands) {
        report.empirical_ch = std::max(report.empirical_ch, c.h_norm);
        report.max_taylor_residual = std::max(report.max_taylor_residual, std::abs(c.delta_loss - c.estimate));
        report.cauchy_schwarz_ok = report.cauchy_schwarz_ok && c.bound_ok;
        if (c.taylor_checked) {
          ++report.taylor_checked;
          report.taylor_ok = report.taylor_ok && c.taylor_ok;
        } else {
          ++report.taylor_skipped;
        }
        report.candidates.push_back(std::move(c));
      }
    }
  }
  if (report.candidates.size() >= 2) {
    std::vector<double> a, d;
    for (const auto& c : report.candidates) {
      a.push_back(c.attention);
      d.push_back(std::abs(c.delta_loss));
    }
    report.spearman_rho = spearman(a, d);
  }
  return report;
}

// ---- Fano ------------------------------------------------------------------

double binary_entropy_bits(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1 - p) * std::log2(1 - p);
}

namespace {

void check_entropy(double h, int n) {
  if (n < 2) throw std::invalid_argument("fano: N must be >= 2");
  if (!(h >= 0.0) || h > std::log2(static_cast<double>(n)) + 1e-12)
    throw std::invalid_argument("fano: conditional entropy must lie in [0, log2 N]");
}

// Largest double below the smallest x in [lo, hi] with f(x) >= target, for
// increasing f; never above the exact root.
template <typename F>
double bisect(F f, double target, double lo, double hi) {
  if (f(lo) >= target) return lo;
  if (f(hi) < target) return hi;
  for (;;) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) return lo;
    (f(mid) >= target ? hi : lo) = mid;
  }
}

}  // namespace

double fano_bound(double h_bits, int n) {
  check_entropy(h_bits, n);
  if (n == 2) {
    // Solve 1 - H_b(1/2 - d) = 1 - h, which stays well conditioned near d = 0.
    const double target = 1.0 - h_bits;
    auto gap = [](double d) {
      const double a = 2.0 * d;
      if (a >= 1.0) return 1.0;
      return 0.5 * ((1.0 + a) * std::log1p(a) + (1.0 - a) * std::log1p(-a)) / std::numbers::ln2;
    };
    if (target <= 0.0) return 0.5;
    if (gap(0.5) <= target) return 0.0;
    double lo = 0.0, hi = 0.5;
    for (;;) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) return 0.5 - hi;
      (gap(mid) <= target ? lo : hi) = mid;
    }
  }
  return std::max(0.0, (h_bits - 1.0) / std::log2(static_cast<double>(n - 1)));
}

double fano_bound_exact(double h_bits, int n) {
  check_entropy(h_bits, n);
  const double extra = std::log2(static_cast<double>(n - 1));
  return bisect([&](double p) { return binary_entropy_bits(p) + p * extra; }, h_bits, 0.0,
                static_cast<double>(n - 1) / n);
}

namespace {

void check_joint(const Eigen::MatrixXd& joint) {
  if (joint.rows() < 1 || joint.cols() < 1 || joint.rows() > 16 || joint.cols() > 16)
    throw std::invalid_argument("joint: alphabets must have 1..16 states");
  if (!joint.allFinite() || (joint.array() < 0.0).any()) throw std::invalid_argument("joint: negative or non-finite mass");
  if (std::abs(joint.sum() - 1.0) > 1e-9) throw std::invalid_argument("joint: probabilities do not sum to 1");
}

}  // namespace

double conditional_entropy_bits(const Eigen::MatrixXd& joint) {
  double h = 0.0;
  for (Eigen::Index z = 0; z < joint.cols(); ++z) {
    const double pz = joint.col(z).sum();
    if (pz <= 0) continue;
    for (Eigen::Index y = 0; y < joint.rows(); ++y) {
      const double p = joint(y, z);
      if (p > 0) h -= p * std::log2(p / pz);
    }
  }
  return std::max(0.0, h);
}

double map_error(const Eigen::MatrixXd& joint) {
  double correct = 0.0;
  for (Eigen::Index z = 0; z < joint.cols(); ++z) correct += joint.col(z).maxCoeff();
  return 1.0 - correct;
}

Eigen::MatrixXd push_forward(const Eigen::MatrixXd& joint, const std::vector<int>& f) {
  if (f.size() != static_cast<std::size_t>(joint.cols())) throw std::invalid_argument("push_forward: rule size");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(joint.rows(), joint.rows());
  for (Eigen::Index z = 0; z < joint.cols(); ++z) {
    const int y = f[static_cast<std::size_t>(z)];
    if (y < 0 || y >= joint.rows()) throw std::invalid_argument("push_forward: rule maps outside the label set");
    out.col(y) += joint.col(z);
  }
  return out;
}

DpiResult dpi_evaluate(const Eigen::MatrixXd& joint, const std::vector<int>& f) {
  check_joint(joint);
  DpiResult r;
  r.h_given_z = conditional_entropy_bits(joint);
  r.h_given_yhat = conditional_entropy_bits(push_forward(joint, f));
  r.holds = r.h_given_z <= r.h_given_yhat + 1e-12;
  return r;
}

bool dpi_check(const Eigen::MatrixXd& joint, const std::vector<int>& f) { return dpi_evaluate(joint, f).holds; }

bool confidence_entropy_identity(const std::vector<double>& probs, double delta) {
  const double c = confidence(probs);
  double h = 0.0;
  for (double p : probs)
    if (p > 0) h -= p * std::log(p);
  const double log_n = std::log(static_cast<double>(probs.size()));
  return should_stop(c, delta) == (h <= (1.0 - delta) * log_n);
}

FanoReport fano_report(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories,
                       double delta, int num_classes) {
  if (instances.size() != trajectories.size()) throw std::invalid_argument("fano_report: size mismatch");
  FanoReport r;
  r.delta = delta;
  r.num_classes = num_classes;
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(num_classes, num_classes);
  double entropy = 0.0;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& t = trajectories[i];
    for (const auto& rec : t.records) r.identity_ok = r.identity_ok && confidence_entropy_identity(rec.probs, delta);
    if (t.stop != StopReason::threshold_met) continue;
    ++r.count;
    counts(instances[i].label, t.final_label) += 1.0;
    errors += instances[i].label != t.final_label;
    for (double p : t.final_probs)
      if (p > 0) entropy -= p * std::log2(p);
  }
  if (r.count == 0) {
    r.note = "empty bucket: no instance reached the threshold";
    return r;
  }
  const double n = static_cast<double>(r.count);
  r.mean_predictive_entropy_bits = entropy / n;
  r.conditional_entropy_bits = std::min(conditional_entropy_bits(counts / n), std::log2(static_cast<double>(num_classes)));
  r.bound = fano_bound(r.conditional_entropy_bits, num_classes);
  r.empirical_error = static_cast<double>(errors) / n;
  r.bound_satisfied = r.empirical_error + 1e-12 >= r.bound;
  return r;
}

std::vector<FanoReport> verify_fano(const ModelParams<double>& params, const std::vector<PyramidInstance>& instances,
                                     const ReasonerConfig& config, const EncoderStub& stub,
                                     const std::vector<double>& delta_grid, int workers) {
  std::vector<FanoReport> out;
  for (double d : delta_grid) {
    ReasonerConfig rc = config;
    rc.confidence_threshold = d;
    rc.stopping_enabled = true;
    const auto trajectories = infer_dataset(instances, params, rc, stub, workers);
    auto rep = fano_report(instances, trajectories, d, params.config.num_classes);
    if (!rep.note.empty()) spdlog::info("fano: delta {} skipped ({})", d, rep.note);
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace pathseek
