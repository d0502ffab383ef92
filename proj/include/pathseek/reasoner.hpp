#pragma once

// Adaptive coarse-to-fine inference: per-scale tick loops, entropy-based
// confidence and stopping, Top-K pruning with child expansion, and
// cross-scale fusion of synchronisation outputs.

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathseek/attention.hpp"
#include "pathseek/budget.hpp"
#include "pathseek/dynamics.hpp"
#include "pathseek/pyramid.hpp"

namespace pathseek {

struct ReasonerConfig {
  int ticks_per_scale = 5;
  int num_scales = 3;
  int top_k = 10;
  // Values above 1 can never be reached and disable early exit.
  double confidence_threshold = 0.9;
  bool stopping_enabled = true;
  std::uint64_t seed = 1;
  CostModel cost;

  void validate() const {
    if (ticks_per_scale < 1) throw std::invalid_argument("reasoner.ticks_per_scale: must be >= 1");
    if (num_scales < 1) throw std::invalid_argument("reasoner.num_scales: must be >= 1");
    if (top_k < 1) throw std::invalid_argument("reasoner.top_k: must be >= 1");
    if (!(confidence_threshold >= 0.0) || !std::isfinite(confidence_threshold))
      throw std::invalid_argument("reasoner.confidence_threshold: must be finite and >= 0");
  }
};

enum class StopReason { threshold_met, budget_exhausted };

inline const char* to_string(StopReason r) {
  return r == StopReason::threshold_met ? "threshold_met" : "budget_exhausted";
}

struct TickRecord {
  int tick = 0;  // global, 1-based
  int scale = 0;
  std::vector<double> probs;
  double confidence = 0.0;
  std::vector<RegionId> candidates;
  std::vector<double> scores;
  int s_out_snapshot = 0;  // index into Trajectory::s_out_history
};

struct Trajectory {
  std::vector<TickRecord> records;
  std::vector<int> t_star_per_scale;  // global ticks
  std::vector<std::vector<RegionId>> selected;  // per transition
  StopReason stop = StopReason::budget_exhausted;
  int stop_tick = 0;
  int stop_scale = 0;
  std::vector<double> final_probs;
  int final_label = 0;
  BudgetReport budget;
  std::vector<std::vector<double>> s_out_history;

  // Scale at which inference ended (the last visited scale on exhaustion).
  int terminal_scale() const { return records.empty() ? 0 : records.back().scale; }
};

// C = 1 - H(p) / log N, with 0 log 0 = 0.
inline double confidence(const std::vector<double>& probs) {
  const std::size_t n = probs.size();
  if (n < 2) throw std::invalid_argument("confidence: needs at least two classes");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= -1e-12) || !std::isfinite(p)) throw std::invalid_argument("confidence: not a distribution");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("confidence: probabilities do not sum to 1");
  double h = 0.0;
  for (double p : probs) {
    const double q = std::max(p, 0.0) / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  const double c = 1.0 - h / std::log(static_cast<double>(n));
  return std::clamp(c, 0.0, 1.0);
}

inline bool should_stop(double c, double delta) { return c >= delta; }

// Positions of the min(K, n) largest scores, descending, ties to the lowest id.
inline std::vector<std::size_t> topk_select(const std::vector<double>& scores, int k,
                                            const std::vector<RegionId>& ids = {}) {
  if (scores.empty()) throw std::invalid_argument("topk_select: empty scores");
  if (k < 1) throw std::invalid_argument("topk_select: K must be >= 1");
  if (!ids.empty() && ids.size() != scores.size()) throw std::invalid_argument("topk_select: ids/scores mismatch");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("topk_select: non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  auto id = [&](std::size_t i) { return ids.empty() ? static_cast<RegionId>(i) : ids[i]; };
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), scores.size());
  if (take < static_cast<std::size_t>(k))
    spdlog::warn("top-k: K={} exceeds {} candidates, selecting all", k, scores.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return id(a) < id(b);
                    });
  order.resize(take);
  return order;
}

// y = W_o S_out + b_o.
template <typename Scalar>
ad::Var<Scalar> predict_head(ModelGraph<Scalar>& g, const ad::Var<Scalar>& s_out) {
  detail::require_shape(s_out, g.config().sync_out, 1, "predict_head");
  return ad::affine(g.vars().output_w, s_out, g.vars().output_b);
}

// y = MLP([S_out(fine) ; S_out(coarse, most confident tick)]).
template <typename Scalar>
ad::Var<Scalar> fuse_predict(ModelGraph<Scalar>& g, const ad::Var<Scalar>& s_fine, const ad::Var<Scalar>& s_coarse) {
  if (!s_coarse.valid()) throw std::logic_error("fuse_predict: missing coarse operand");
  detail::require_shape(s_fine, g.config().sync_out, 1, "fuse_predict(fine)");
  detail::require_shape(s_coarse, g.config().sync_out, 1, "fuse_predict(coarse)");
  const auto& w = g.vars();
  auto x = ad::concat_rows(s_fine, s_coarse);
  for (std::size_t l = 0; l < w.fusion_w.size(); ++l) {
    if (l > 0) x = ad::gelu(x);
    x = ad::affine(w.fusion_w[l], x, w.fusion_b[l]);
  }
  return x;
}

// Frozen inputs to one tick's attention-to-prediction path.
template <typename Scalar>
struct TickSnapshot {
  int tick = 0;
  int scale = 0;
  std::vector<RegionId> candidates;
  Mat<Scalar> e, history, out_alpha, out_beta, action_alpha, action_beta;
  Mat<Scalar> weights;              // heads x n
  std::vector<Mat<Scalar>> values;  // per head, n x head_dim
  Mat<Scalar> context;              // the b actually produced
  std::optional<Mat<Scalar>> coarse_s_out;
  std::vector<double> probs;
};

template <typename Scalar>
using TickHead = std::function<ad::Var<Scalar>(const ad::Var<Scalar>& s_out)>;

struct StopRule {
  bool enabled = true;
  double delta = 0.9;
};

template <typename Scalar>
struct ScaleRun {
  std::vector<TickRecord> records;
  std::vector<ad::Var<Scalar>> logits;
  std::vector<ad::Var<Scalar>> s_out;
  std::vector<std::vector<double>> scores;
  std::size_t t_star = 0;  // index within this scale
  bool stopped = false;

  const ad::Var<Scalar>& s_out_at_t_star() const { return s_out[t_star]; }
};

inline std::size_t argmax_confidence(const std::vector<TickRecord>& records) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].confidence > records[best].confidence) best = i;
  return best;
}

// One scale of reasoning.  Each tick: attention with the query from the
// previous action synchronisation, synapse transition, history push, neuron
// update, synchronisation update, prediction, record.
template <typename Scalar>
ScaleRun<Scalar> run_scale(ModelGraph<Scalar>& g, LatentState<Scalar>& state, const ProjectedCandidates<Scalar>& cands,
                           int n, const TickHead<Scalar>& head, const StopRule& stop,
                           std::vector<TickSnapshot<Scalar>>* snapshots = nullptr,
                           std::optional<std::size_t> frozen_t_star = std::nullopt) {
  if (n < 1) throw std::invalid_argument("run_scale: n must be >= 1");
  if (cands.size() == 0) throw std::logic_error("run_scale: scale has no candidates");
  ScaleRun<Scalar> run;
  for (int i = 0; i < n; ++i) {
    TickSnapshot<Scalar> snap;
    if (snapshots) {
      snap.e = state.e.value();
      snap.history = state.history.value();
      snap.out_alpha = state.out_alpha.value();
      snap.out_beta = state.out_beta.value();
      snap.action_alpha = state.action_alpha.value();
      snap.action_beta = state.action_beta.value();
    }
    auto q = make_query(g, state.s_action);
    auto attn = cross_attention(g, q, cands);
    auto h = synapse_step(g, state.e, attn.context);
    push_history(g, state, h);
    state.e = neuron_update(g, state);
    auto sync = sync_update(g, state, state.e);
    auto logits = head(sync.s_out);
    ++state.tick;

    TickRecord rec;
    rec.tick = state.tick;
    rec.scale = state.scale;
    const Vec<Scalar> p = ad::softmax_values<Scalar>(logits.value().col(0));
    rec.probs.resize(static_cast<std::size_t>(p.size()));
    for (Eigen::Index k = 0; k < p.size(); ++k) rec.probs[static_cast<std::size_t>(k)] = static_cast<double>(p(k));
    rec.confidence = confidence(rec.probs);
    rec.candidates = cands.ids;
    rec.scores.resize(cands.size());
    for (std::size_t k = 0; k < cands.size(); ++k) rec.scores[k] = static_cast<double>(attn.scores(static_cast<Eigen::Index>(k)));

    if (snapshots) {
      snap.tick = rec.tick;
      snap.scale = rec.scale;
      snap.candidates = cands.ids;
      snap.weights = attn.weights;
      for (const auto& v : cands.values) snap.values.push_back(v.value());
      snap.context = attn.context.value();
      snap.probs = rec.probs;
      snapshots->push_back(std::move(snap));
    }

    run.scores.push_back(rec.scores);
    run.logits.push_back(logits);
    run.s_out.push_back(sync.s_out);
    run.records.push_back(std::move(rec));
    if (stop.enabled && should_stop(run.records.back().confidence, stop.delta)) {
      run.stopped = true;
      break;
    }
  }
  run.t_star = frozen_t_star ? *frozen_t_star : argmax_confidence(run.records);
  if (run.t_star >= run.records.size()) throw std::logic_error("run_scale: frozen t* out of range");
  return run;
}

// Discrete choices of a rollout; replayed verbatim when frozen.
struct Decisions {
  std::vector<std::vector<std::size_t>> selections;  // pool positions per transition
  std::vector<std::size_t> t_star;                   // per scale, index within the scale
};

template <typename Scalar>
using ScaleHead =
    std::function<ad::Var<Scalar>(ModelGraph<Scalar>&, const ad::Var<Scalar>& s_out, int scale, int tick)>;

template <typename Scalar>
struct RolloutOptions {
  const Decisions* frozen = nullptr;
  // Replaces the learned heads (scripted tests).
  ScaleHead<Scalar> head;
  bool capture_snapshots = false;
};

template <typename Scalar>
struct Rollout {
  Trajectory trajectory;
  std::vector<std::vector<ad::Var<Scalar>>> logits;  // per visited scale
  Decisions decisions;
  std::vector<TickSnapshot<Scalar>> snapshots;
  // FIFO contents at the end of each scale and at the start of the next.
  std::vector<std::pair<Mat<Scalar>, Mat<Scalar>>> transition_history;
};

template <typename Scalar>
Mat<Scalar> gather_features(const PyramidInstance& instance, int scale, const std::vector<RegionId>& ids,
                            FeatureCache& cache, const EncoderStub& stub) {
  Mat<Scalar> f(static_cast<Eigen::Index>(ids.size()), instance.config.feature_dim);
  for (std::size_t i = 0; i < ids.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) = encode_region(instance, scale, ids[i], cache, stub).template cast<Scalar>().transpose();
  return f;
}

template <typename Scalar>
Rollout<Scalar> rollout(ModelGraph<Scalar>& g, const PyramidInstance& instance, FeatureCache& cache,
                        const EncoderStub& stub, const ReasonerConfig& config,
                        const RolloutOptions<Scalar>& options = {}) {
  config.validate();
  if (config.num_scales > instance.config.num_scales)
    throw std::invalid_argument("reasoner.num_scales exceeds the pyramid depth");
  if (instance.config.feature_dim != g.config().input_dim)
    throw std::invalid_argument("model.input_dim does not match pyramid.feature_dim");
  if (instance.config.num_classes != g.config().num_classes)
    throw std::invalid_argument("model.num_classes does not match pyramid.num_classes");

  Rollout<Scalar> out;
  Trajectory& traj = out.trajectory;
  const std::vector<std::uint64_t> calls_before = cache.encoder_calls();
  traj.budget.encoder_calls.assign(static_cast<std::size_t>(config.num_scales), 0);
  traj.budget.ticks.assign(static_cast<std::size_t>(config.num_scales), 0);
  traj.budget.cost = config.cost;

  LatentState<Scalar> state = init_state(g);
  std::vector<RegionId> pool = instance.regions_at(0);
  ad::Var<Scalar> coarse;
  const StopRule stop{config.stopping_enabled, config.confidence_threshold};

  for (int s = 0; s < config.num_scales; ++s) {
    state.scale = s;
    const std::size_t before = cache.total_calls();
    Mat<Scalar> feats = gather_features<Scalar>(instance, s, pool, cache, stub);
    traj.budget.regions_touched += cache.total_calls() - before;
    auto cands = project_candidates(g, pool, feats);

    const int first_tick = state.tick;
    TickHead<Scalar> head = [&](const ad::Var<Scalar>& s_out) {
      if (options.head) return options.head(g, s_out, s, state.tick + 1);
      return s == 0 ? predict_head(g, s_out) : fuse_predict(g, s_out, coarse);
    };
    std::optional<std::size_t> frozen_t;
    if (options.frozen && static_cast<std::size_t>(s) < options.frozen->t_star.size())
      frozen_t = options.frozen->t_star[static_cast<std::size_t>(s)];
    const std::size_t snaps_before = out.snapshots.size();
    auto run = run_scale(g, state, cands, config.ticks_per_scale, head, stop,
                         options.capture_snapshots ? &out.snapshots : nullptr, frozen_t);
    if (s > 0 && coarse.valid())
      for (std::size_t k = snaps_before; k < out.snapshots.size(); ++k) out.snapshots[k].coarse_s_out = coarse.value();

    traj.budget.ticks[static_cast<std::size_t>(s)] = static_cast<std::uint64_t>(state.tick - first_tick);
    for (auto& rec : run.records) {
      rec.s_out_snapshot = static_cast<int>(traj.s_out_history.size());
      const auto& so = run.s_out[static_cast<std::size_t>(rec.tick - first_tick - 1)].value();
      std::vector<double> v(static_cast<std::size_t>(so.rows()));
      for (Eigen::Index k = 0; k < so.rows(); ++k) v[static_cast<std::size_t>(k)] = static_cast<double>(so(k, 0));
      traj.s_out_history.push_back(std::move(v));
      traj.records.push_back(rec);
    }
    out.logits.push_back(run.logits);
    out.decisions.t_star.push_back(run.t_star);
    traj.t_star_per_scale.push_back(run.records[run.t_star].tick);

    if (run.stopped) {
      traj.stop = StopReason::threshold_met;
      traj.stop_tick = run.records.back().tick;
      traj.stop_scale = s;
      break;
    }
    if (s + 1 == config.num_scales) break;

    std::vector<std::size_t> picked;
    const std::size_t transition = static_cast<std::size_t>(s);
    if (options.frozen && transition < options.frozen->selections.size()) {
      picked = options.frozen->selections[transition];
    } else {
      picked = topk_select(run.scores[run.t_star], config.top_k, pool);
    }
    out.decisions.selections.push_back(picked);
    std::vector<RegionId> parents;
    std::vector<RegionId> next;
    for (auto pos : picked) {
      if (pos >= pool.size()) throw std::logic_error("rollout: selection out of range");
      parents.push_back(pool[pos]);
      for (auto child : children_of(instance, pool[pos])) next.push_back(child);
    }
    if (next.empty()) throw std::logic_error("rollout: next scale has no candidates");
    traj.selected.push_back(parents);
    coarse = run.s_out_at_t_star();
    out.transition_history.emplace_back(state.history.value(), Mat<Scalar>());
    pool = std::move(next);
    out.transition_history.back().second = state.history.value();
  }

  if (traj.stop == StopReason::threshold_met) {
    traj.final_probs = traj.records.back().probs;
  } else {
    traj.stop_tick = traj.records.back().tick;
    traj.stop_scale = traj.records.back().scale;
    traj.final_probs = traj.records[argmax_confidence(traj.records)].probs;
  }
  traj.final_label = static_cast<int>(std::max_element(traj.final_probs.begin(), traj.final_probs.end()) -
                                      traj.final_probs.begin());
  const auto& calls_after = cache.encoder_calls();
  for (int s = 0; s < config.num_scales; ++s) {
    const auto i = static_cast<std::size_t>(s);
    const std::uint64_t b = i < calls_before.size() ? calls_before[i] : 0;
    const std::uint64_t a = i < calls_after.size() ? calls_after[i] : 0;
    traj.budget.encoder_calls[i] = a - b;
  }
  return out;
}

// Inference without gradient recording.
template <typename Scalar>
Trajectory infer(const PyramidInstance& instance, const ModelParams<Scalar>& params, const ReasonerConfig& config,
                 FeatureCache& cache, const EncoderStub& stub) {
  ModelGraph<Scalar> g(params);
  return rollout(g, instance, cache, stub, config).trajectory;
}

}  // namespace pathseek
