#pragma once

// Exhaustive gated-attention MIL baseline, dataset-level evaluation, K/delta
// sweeps and stopping-scale histograms.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pathseek/metrics.hpp"
#include "pathseek/reasoner.hpp"
#include "pathseek/training.hpp"

namespace pathseek {

struct BaselineConfig {
  int hidden = 32;
  int attention_dim = 16;
  int epochs = 20;
  double learning_rate = 1e-3;
  int warmup_steps = 100;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// embed: GELU(W_e h + b_e); gate: tanh(V x) * sigmoid(U x); logits a = w . gate;
// pooled = sum softmax(a)_i x_i; class logits = W_c pooled + b_c.
template <typename Scalar>
struct BaselineParams {
  int input_dim = 0;
  int num_classes = 0;
  std::vector<std::string> names;
  std::vector<Mat<Scalar>> tensors;

  std::vector<Mat<Scalar>*> refs() {
    std::vector<Mat<Scalar>*> r;
    for (auto& t : tensors) r.push_back(&t);
    return r;
  }
  std::vector<const Mat<Scalar>*> crefs() const {
    std::vector<const Mat<Scalar>*> r;
    for (const auto& t : tensors) r.push_back(&t);
    return r;
  }
};

template <typename Scalar>
BaselineParams<Scalar> init_baseline(int input_dim, int num_classes, const BaselineConfig& config) {
  BaselineParams<Scalar> p;
  p.input_dim = input_dim;
  p.num_classes = num_classes;
  std::mt19937_64 rng(config.seed);
  auto linear = [&](const std::string& name, int out, int in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat<Scalar> w(out, in), b(out, 1);
    for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = static_cast<Scalar>(u(rng));
    for (Eigen::Index k = 0; k < b.size(); ++k) b(k) = static_cast<Scalar>(u(rng));
    p.names.push_back(name + ".w");
    p.tensors.push_back(std::move(w));
    p.names.push_back(name + ".b");
    p.tensors.push_back(std::move(b));
  };
  linear("embed", config.hidden, input_dim);
  linear("gate.v", config.attention_dim, config.hidden);
  linear("gate.u", config.attention_dim, config.hidden);
  linear("gate.w", 1, config.attention_dim);
  linear("classifier", num_classes, config.hidden);
  return p;
}

template <typename Scalar>
struct BaselineForward {
  ad::Var<Scalar> logits;
  Vec<Scalar> attention;
};

// Rows of `features` are instances' regions.  `vars` are the bound tensors.
template <typename Scalar>
BaselineForward<Scalar> baseline_forward(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& v,
                                         const Mat<Scalar>& features) {
  if (features.rows() == 0) throw std::invalid_argument("baseline: empty bag");
  auto x = tape.constant(features);
  auto emb = ad::gelu(ad::affine_rows(x, v[0], v[1]));
  auto gate = ad::hadamard(ad::tanh(ad::affine_rows(emb, v[2], v[3])), ad::sigmoid(ad::affine_rows(emb, v[4], v[5])));
  auto scores = ad::affine_rows(gate, v[6], v[7]);  // n x 1
  auto a = ad::softmax(scores);
  auto pooled = ad::matmul(ad::transpose(emb), a);
  BaselineForward<Scalar> f;
  f.attention = a.value().col(0);
  f.logits = ad::affine(v[8], pooled, v[9]);
  return f;
}

// All finest-scale features of an instance, rows in region-id order.
Eigen::MatrixXd finest_features(const PyramidInstance& instance, const EncoderStub& stub, FeatureCache& cache);

struct BaselineModel {
  BaselineConfig config;
  BaselineParams<double> params;
  std::vector<TrainMetrics> metrics;
};

struct BaselinePrediction {
  std::vector<double> probs;
  Eigen::VectorXd attention;
  BudgetReport budget;
};

BaselineModel baseline_mil_train(const std::vector<PyramidInstance>& train_set,
                                 const std::vector<PyramidInstance>& val_set, const BaselineConfig& config,
                                 const EncoderStub& stub);
BaselinePrediction baseline_mil_predict(const BaselineModel& model, const PyramidInstance& instance,
                                        const EncoderStub& stub, const CostModel& cost = {});

// Trajectories for every instance, in input order.  Each instance gets its
// own feature cache, so results do not depend on the worker count.
std::vector<Trajectory> infer_dataset(const std::vector<PyramidInstance>& instances, const ModelParams<double>& params,
                                      const ReasonerConfig& config, const EncoderStub& stub, int workers = 1);

// Runs fn(i) for i in [0, n) on `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct StopHistogram {
  double delta = 0.0;
  // counts[s] for threshold stops at scale s; counts.back() = budget_exhausted.
  std::vector<std::size_t> counts;

  std::size_t total() const;
  std::vector<double> fractions() const;
  // Threshold stops at the finest scale plus exhausted runs.
  double finest_fraction() const;
};

StopHistogram scale_histogram(const std::vector<Trajectory>& trajectories, int num_scales, double delta = 0.0);

struct MethodSummary {
  std::string method;
  double auc = 0.0;
  double mean_patches = 0.0;
  double mean_time = 0.0;
  double mean_ticks = 0.0;
};

struct SweepRow {
  int top_k = 0;
  double delta = 0.0;
  double auc = 0.0;
  double mean_patches = 0.0;
  double mean_time = 0.0;
  double mean_ticks = 0.0;
  double pruning_recall = 0.0;
  std::vector<double> stop_fractions;
};

struct BenchReport {
  std::vector<MethodSummary> methods;
  std::vector<SweepRow> sweep;
  std::vector<StopHistogram> histograms;
  // Confidence curves of a few example trajectories: [instance][tick].
  std::vector<std::vector<double>> confidence_curves;
  std::vector<std::string> notes;

  bool operator==(const BenchReport&) const;
};

// Mean over trajectories with at least one transition of
// |selected coarse regions that are ancestors of evidence| / min(|ancestors|, K).
double pruning_recall(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories,
                      int top_k);

MethodSummary summarize(const std::string& method, const std::vector<PyramidInstance>& instances,
                        const std::vector<Trajectory>& trajectories);

SweepRow sweep_row(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories,
                   int top_k, double delta, int num_scales);

MethodSummary summarize_baseline(const std::vector<PyramidInstance>& instances,
                                 const std::vector<BaselinePrediction>& predictions);

// Methods (baseline, adaptive at the configured threshold, adaptive without
// early exit), stopping histograms and a threshold sweep at the configured K,
// and confidence curves of the first `curves` instances.
BenchReport run_bench(const std::vector<PyramidInstance>& instances, const ModelParams<double>& params,
                      const BaselineModel& baseline, const ReasonerConfig& reasoner, const EncoderStub& stub,
                      const std::vector<double>& delta_grid, int workers = 1, std::size_t curves = 5);

std::vector<SweepRow> sweep(const std::vector<PyramidInstance>& instances, const ModelParams<double>& params,
                            const ReasonerConfig& base, const EncoderStub& stub, const std::vector<int>& k_grid,
                            const std::vector<double>& delta_grid, int workers = 1);

}  // namespace pathseek
