#include "pathseek/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "pathseek/metrics.hpp"

namespace pathseek {

const char* to_string(Schedule s) {
  switch (s) {
    case Schedule::constant:
      return "constant";
    case Schedule::cosine:
      return "cosine";
    case Schedule::multistep:
      return "multistep";
  }
  return "constant";
}

Schedule parse_schedule(const std::string& name) {
  if (name == "constant") return Schedule::constant;
  if (name == "cosine") return Schedule::cosine;
  if (name == "multistep") return Schedule::multistep;
  throw std::invalid_argument("train.schedule: expected constant, cosine or multistep, got '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train.epochs: must be >= 0");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train.learning_rate: must be finite and >= 0");
  if (warmup_steps < 0) throw std::invalid_argument("train.warmup_steps: must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay: must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size: must be >= 1");
  if (multistep_interval < 1) throw std::invalid_argument("train.multistep_interval: must be >= 1");
  if (!(multistep_gamma > 0.0)) throw std::invalid_argument("train.multistep_gamma: must be > 0");
}

double learning_rate_at(const TrainConfig& c, long step, long total_steps) {
  const double lr = c.learning_rate;
  if (step < c.warmup_steps) return lr * static_cast<double>(step) / c.warmup_steps;
  const long after = step - c.warmup_steps;
  switch (c.schedule) {
    case Schedule::constant:
      return lr;
    case Schedule::multistep:
      return lr * std::pow(c.multistep_gamma, static_cast<double>(after / c.multistep_interval));
    case Schedule::cosine: {
      const long span = std::max<long>(1, total_steps - c.warmup_steps);
      const double frac = std::min(1.0, static_cast<double>(after) / static_cast<double>(span));
      return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * frac));
    }
  }
  return lr;
}

double per_tick_loss(const Eigen::VectorXd& logits, int label) {
  if (label < 0 || label >= logits.size()) throw std::out_of_range("per_tick_loss: label out of range");
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum()) - logits(label);
}

std::pair<std::size_t, std::size_t> select_checkpoints(const std::vector<double>& losses,
                                                       const std::vector<double>& confidences) {
  if (losses.empty() || confidences.size() != losses.size())
    throw std::invalid_argument("select_checkpoints: empty or mismatched scale");
  std::size_t t1 = 0, t2 = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] < losses[t1]) t1 = i;
    if (confidences[i] > confidences[t2]) t2 = i;
  }
  return {t1, t2};
}

ScaleLossRecord make_scale_record(std::vector<double> losses, std::vector<double> confidences) {
  ScaleLossRecord r;
  std::tie(r.t1, r.t2) = select_checkpoints(losses, confidences);
  r.contribution = 0.5 * (losses[r.t1] + losses[r.t2]);
  r.losses = std::move(losses);
  r.confidences = std::move(confidences);
  return r;
}

double composite_loss(const std::vector<ScaleLossRecord>& scales, int z) {
  if (static_cast<int>(scales.size()) != z || z < 1)
    throw std::invalid_argument("composite_loss: expected " + std::to_string(z) + " scales, got " +
                                std::to_string(scales.size()));
  double total = 0;
  for (const auto& s : scales) total += s.contribution;
  return total / z;
}

namespace {

double validation_auc(const std::vector<PyramidInstance>& val, const ModelParams<double>& params,
                      const ReasonerConfig& reasoner, const EncoderStub& stub) {
  if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  for (const auto& inst : val) {
    FeatureCache cache(inst.config.num_scales);
    scores.push_back(infer(inst, params, reasoner, cache, stub).final_probs);
    labels.push_back(inst.label);
  }
  try {
    return compute_auc(scores, labels).macro;
  } catch (const std::invalid_argument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

TrainResult train(const std::vector<PyramidInstance>& train_set, const std::vector<PyramidInstance>& val_set,
                  ModelParams<double> params, const TrainConfig& config, const ReasonerConfig& reasoner,
                  const EncoderStub& stub, const EpochCallback& on_epoch) {
  config.validate();
  reasoner.validate();
  if (train_set.empty()) throw std::invalid_argument("train: dataset is empty");
  TrainResult result;
  AdamW<double> opt(params, config.weight_decay);
  const long steps_per_epoch =
      (static_cast<long>(train_set.size()) + config.batch_size - 1) / config.batch_size;
  const long total_steps = steps_per_epoch * config.epochs;
  long step = 0;
  double lr = 0.0;
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      ++step;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      ModelParams<double> grads = zeros_like(params);
      for (std::size_t b = start; b < end; ++b) {
        const auto& inst = train_set[order[b]];
        const std::uint64_t dropout_seed =
            derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(b));
        auto r = loss_and_gradient(params, inst, reasoner, stub, GraphOptions{true, true, dropout_seed});
        if (!std::isfinite(r.loss) || !r.grads)
          throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ", instance seed " + std::to_string(inst.generator_seed));
        loss_sum += r.loss;
        add_into(grads, *r.grads);
      }
      scale_all(grads, 1.0 / static_cast<double>(end - start));
      const double norm = global_norm(grads);
      if (!std::isfinite(norm))
        throw std::runtime_error("train: non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step));
      if (config.grad_clip > 0.0 && norm > config.grad_clip) scale_all(grads, config.grad_clip / norm);
      lr = learning_rate_at(config, step, total_steps);
      opt.step(params, grads, lr);
    }
    TrainMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.loss = loss_sum / static_cast<double>(train_set.size());
    m.val_auc = validation_auc(val_set, params, reasoner, stub);
    m.lr = lr;
    spdlog::info("epoch {} step {} loss {:.4f} val_auc {:.4f} lr {:.3g}", m.epoch, m.step, m.loss, m.val_auc, m.lr);
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m, params);
  }
  result.params = std::move(params);
  return result;
}

void write_metrics_csv(const std::vector<TrainMetrics>& metrics, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,step,loss,val_auc,lr\n";
  out.precision(10);
  for (const auto& m : metrics) out << m.epoch << ',' << m.step << ',' << m.loss << ',' << m.val_auc << ',' << m.lr << '\n';
}

}  // namespace pathseek
