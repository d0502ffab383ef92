#include "pathseek/bench.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <thread>

namespace pathseek {

void BaselineConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("baseline.hidden: must be >= 1");
  if (attention_dim < 1) throw std::invalid_argument("baseline.attention_dim: must be >= 1");
  if (epochs < 0) throw std::invalid_argument("baseline.epochs: must be >= 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("baseline.learning_rate: must be >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("baseline.warmup_steps: must be >= 0");
}

Eigen::MatrixXd finest_features(const PyramidInstance& instance, const EncoderStub& stub, FeatureCache& cache) {
  const int finest = instance.config.num_scales - 1;
  const auto ids = instance.regions_at(finest);
  Eigen::MatrixXd f(static_cast<Eigen::Index>(ids.size()), instance.config.feature_dim);
  for (std::size_t i = 0; i < ids.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) = encode_region(instance, finest, ids[i], cache, stub).transpose();
  return f;
}

namespace {

std::vector<ad::Var<double>> bind(ad::Tape<double>& tape, const BaselineParams<double>& p) {
  std::vector<ad::Var<double>> v;
  for (const auto& t : p.tensors) v.push_back(tape.leaf(t));
  return v;
}

}  // namespace

BaselineModel baseline_mil_train(const std::vector<PyramidInstance>& train_set,
                                 const std::vector<PyramidInstance>& val_set, const BaselineConfig& config,
                                 const EncoderStub& stub) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("baseline: dataset is empty");
  BaselineModel model;
  model.config = config;
  model.params = init_baseline<double>(train_set.front().config.feature_dim, train_set.front().config.num_classes,
                                       config);
  std::vector<Eigen::MatrixXd> bags(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    FeatureCache cache(train_set[i].config.num_scales);
    bags[i] = finest_features(train_set[i], stub, cache);
  }
  AdamW<double> opt(model.params.crefs(), config.weight_decay);
  TrainConfig schedule;
  schedule.learning_rate = config.learning_rate;
  schedule.warmup_steps = config.warmup_steps;
  schedule.schedule = Schedule::cosine;
  const long total = static_cast<long>(train_set.size()) * config.epochs;
  long step = 0;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    double lr = 0;
    for (auto i : order) {
      ++step;
      ad::Tape<double> tape;
      tape.set_recording(true);
      auto vars = bind(tape, model.params);
      auto fwd = baseline_forward(tape, vars, bags[i]);
      auto loss = ad::cross_entropy(fwd.logits, train_set[i].label);
      if (!std::isfinite(loss.scalar())) throw std::runtime_error("baseline: non-finite loss");
      loss_sum += loss.scalar();
      tape.backward(loss);
      std::vector<Eigen::MatrixXd> grads;
      for (const auto& v : vars) grads.push_back(tape.grad(v));
      std::vector<const Eigen::MatrixXd*> gp;
      for (const auto& g : grads) gp.push_back(&g);
      lr = learning_rate_at(schedule, step, total);
      opt.step(model.params.refs(), gp, lr);
    }
    TrainMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.loss = loss_sum / static_cast<double>(train_set.size());
    m.lr = lr;
    m.val_auc = std::numeric_limits<double>::quiet_NaN();
    if (!val_set.empty()) {
      std::vector<std::vector<double>> scores;
      std::vector<int> labels;
      for (const auto& inst : val_set) {
        scores.push_back(baseline_mil_predict(model, inst, stub).probs);
        labels.push_back(inst.label);
      }
      try {
        m.val_auc = compute_auc(scores, labels).macro;
      } catch (const std::invalid_argument&) {
      }
    }
    spdlog::info("baseline epoch {} loss {:.4f} val_auc {:.4f}", epoch, m.loss, m.val_auc);
    model.metrics.push_back(m);
  }
  return model;
}

BaselinePrediction baseline_mil_predict(const BaselineModel& model, const PyramidInstance& instance,
                                        const EncoderStub& stub, const CostModel& cost) {
  FeatureCache cache(instance.config.num_scales);
  const Eigen::MatrixXd bag = finest_features(instance, stub, cache);
  ad::Tape<double> tape;
  auto vars = bind(tape, model.params);
  auto fwd = baseline_forward(tape, vars, bag);
  BaselinePrediction p;
  const Eigen::VectorXd probs = ad::softmax_values<double>(fwd.logits.value().col(0));
  p.probs.assign(probs.data(), probs.data() + probs.size());
  p.attention = fwd.attention;
  p.budget.encoder_calls = cache.encoder_calls();
  p.budget.ticks.assign(static_cast<std::size_t>(instance.config.num_scales), 0);
  p.budget.regions_touched = cache.total_calls();
  p.budget.cost = cost;
  return p;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers < 1) throw std::invalid_argument("workers: must be >= 1");
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Trajectory> infer_dataset(const std::vector<PyramidInstance>& instances, const ModelParams<double>& params,
                                      const ReasonerConfig& config, const EncoderStub& stub, int workers) {
  std::vector<Trajectory> out(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    FeatureCache cache(instances[i].config.num_scales);
    out[i] = infer(instances[i], params, config, cache, stub);
  });
  return out;
}

std::size_t StopHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<double> StopHistogram::fractions() const {
  const double n = static_cast<double>(total());
  std::vector<double> f(counts.size(), 0.0);
  if (n == 0) return f;
  for (std::size_t i = 0; i < counts.size(); ++i) f[i] = static_cast<double>(counts[i]) / n;
  return f;
}

double StopHistogram::finest_fraction() const {
  if (counts.size() < 2 || total() == 0) return 0.0;
  return static_cast<double>(counts[counts.size() - 2] + counts.back()) / static_cast<double>(total());
}

StopHistogram scale_histogram(const std::vector<Trajectory>& trajectories, int num_scales, double delta) {
  if (num_scales < 1) throw std::invalid_argument("scale_histogram: num_scales must be >= 1");
  StopHistogram h;
  h.delta = delta;
  h.counts.assign(static_cast<std::size_t>(num_scales) + 1, 0);
  for (const auto& t : trajectories) {
    if (t.stop == StopReason::budget_exhausted) {
      ++h.counts.back();
    } else {
      if (t.stop_scale < 0 || t.stop_scale >= num_scales) throw std::out_of_range("scale_histogram: stop scale");
      ++h.counts[static_cast<std::size_t>(t.stop_scale)];
    }
  }
  return h;
}

double pruning_recall(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories,
                      int top_k) {
  if (instances.size() != trajectories.size()) throw std::invalid_argument("pruning_recall: size mismatch");
  double total = 0;
  int used = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& t = trajectories[i];
    if (t.selected.empty()) continue;
    std::set<RegionId> ancestors;
    for (auto id : instances[i].informative_set) ancestors.insert(instances[i].root_of(id));
    std::size_t hit = 0;
    for (auto s : t.selected.front()) hit += ancestors.count(s);
    const auto denom = std::min<std::size_t>(ancestors.size(), static_cast<std::size_t>(top_k));
    total += static_cast<double>(hit) / static_cast<double>(denom);
    ++used;
  }
  return used ? total / used : std::numeric_limits<double>::quiet_NaN();
}

namespace {

double dataset_auc(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories) {
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    scores.push_back(trajectories[i].final_probs);
    labels.push_back(instances[i].label);
  }
  try {
    return compute_auc(scores, labels).macro;
  } catch (const std::invalid_argument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

MethodSummary summarize(const std::string& method, const std::vector<PyramidInstance>& instances,
                        const std::vector<Trajectory>& trajectories) {
  MethodSummary m;
  m.method = method;
  m.auc = dataset_auc(instances, trajectories);
  BudgetReport total;
  for (const auto& t : trajectories) {
    total.cost = t.budget.cost;
    total += t.budget;
  }
  const double n = std::max<double>(1.0, static_cast<double>(trajectories.size()));
  m.mean_patches = static_cast<double>(total.total_encoder_calls()) / n;
  m.mean_time = total.simulated_time() / n;
  m.mean_ticks = static_cast<double>(total.total_ticks()) / n;
  return m;
}

SweepRow sweep_row(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories,
                   int top_k, double delta, int num_scales) {
  const auto m = summarize("adaptive", instances, trajectories);
  SweepRow r;
  r.top_k = top_k;
  r.delta = delta;
  r.auc = m.auc;
  r.mean_patches = m.mean_patches;
  r.mean_time = m.mean_time;
  r.mean_ticks = m.mean_ticks;
  r.pruning_recall = pruning_recall(instances, trajectories, top_k);
  r.stop_fractions = scale_histogram(trajectories, num_scales, delta).fractions();
  return r;
}

std::vector<SweepRow> sweep(const std::vector<PyramidInstance>& instances, const ModelParams<double>& params,
                            const ReasonerConfig& base, const EncoderStub& stub, const std::vector<int>& k_grid,
                            const std::vector<double>& delta_grid, int workers) {
  std::vector<SweepRow> rows;
  for (int k : k_grid) {
    for (double d : delta_grid) {
      ReasonerConfig rc = base;
      rc.top_k = k;
      rc.confidence_threshold = d;
      rows.push_back(sweep_row(instances, infer_dataset(instances, params, rc, stub, workers), k, d, rc.num_scales));
    }
  }
  return rows;
}

MethodSummary summarize_baseline(const std::vector<PyramidInstance>& instances,
                                 const std::vector<BaselinePrediction>& predictions) {
  if (instances.size() != predictions.size()) throw std::invalid_argument("summarize_baseline: size mismatch");
  MethodSummary m;
  m.method = "baseline_mil";
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  BudgetReport total;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    scores.push_back(predictions[i].probs);
    labels.push_back(instances[i].label);
    total.cost = predictions[i].budget.cost;
    total += predictions[i].budget;
  }
  try {
    m.auc = compute_auc(scores, labels).macro;
  } catch (const std::invalid_argument&) {
    m.auc = std::numeric_limits<double>::quiet_NaN();
  }
  const double n = std::max<double>(1.0, static_cast<double>(instances.size()));
  m.mean_patches = static_cast<double>(total.total_encoder_calls()) / n;
  m.mean_time = total.simulated_time() / n;
  m.mean_ticks = 0.0;
  return m;
}

BenchReport run_bench(const std::vector<PyramidInstance>& instances, const ModelParams<double>& params,
                      const BaselineModel& baseline, const ReasonerConfig& reasoner, const EncoderStub& stub,
                      const std::vector<double>& delta_grid, int workers, std::size_t curves) {
  if (instances.empty()) throw std::invalid_argument("bench: no evaluation instances");
  BenchReport report;
  std::vector<BaselinePrediction> base(instances.size());
  parallel_for(instances.size(), workers,
               [&](std::size_t i) { base[i] = baseline_mil_predict(baseline, instances[i], stub, reasoner.cost); });
  report.methods.push_back(summarize_baseline(instances, base));

  const auto adaptive = infer_dataset(instances, params, reasoner, stub, workers);
  report.methods.push_back(summarize("adaptive", instances, adaptive));
  ReasonerConfig full = reasoner;
  full.stopping_enabled = false;
  report.methods.push_back(summarize("adaptive_no_exit", instances, infer_dataset(instances, params, full, stub, workers)));

  for (double d : delta_grid) {
    ReasonerConfig rc = reasoner;
    rc.confidence_threshold = d;
    const auto traj = infer_dataset(instances, params, rc, stub, workers);
    report.histograms.push_back(scale_histogram(traj, rc.num_scales, d));
    report.sweep.push_back(sweep_row(instances, traj, rc.top_k, d, rc.num_scales));
  }
  for (std::size_t i = 0; i < std::min(curves, adaptive.size()); ++i) {
    std::vector<double> c;
    for (const auto& r : adaptive[i].records) c.push_back(r.confidence);
    report.confidence_curves.push_back(std::move(c));
  }
  const double recall = pruning_recall(instances, adaptive, reasoner.top_k);
  report.notes.push_back("pruning_recall " + std::to_string(recall) + " at K " + std::to_string(reasoner.top_k) +
                         ", delta " + std::to_string(reasoner.confidence_threshold));
  report.notes.push_back("instances " + std::to_string(instances.size()));
  return report;
}

}  // namespace pathseek
