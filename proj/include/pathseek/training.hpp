#pragma once

// Dual-checkpoint composite loss, AdamW with warmup schedules, full-depth
// training rollouts and the finite-difference gradient harness.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pathseek/reasoner.hpp"

namespace pathseek {

enum class Schedule { constant, cosine, multistep };

const char* to_string(Schedule s);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 5e-5;
  int warmup_steps = 5000;
  Schedule schedule = Schedule::cosine;
  double weight_decay = 0.0;
  int batch_size = 1;
  // Global-norm clipping; disabled when negative.
  double grad_clip = -1.0;
  int multistep_interval = 8000;
  double multistep_gamma = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

// Learning rate for the 1-based optimizer step s out of total_steps.
double learning_rate_at(const TrainConfig& config, long step, long total_steps);

struct ScaleLossRecord {
  std::vector<double> losses;
  std::vector<double> confidences;
  std::size_t t1 = 0;  // argmin loss, 0-based within the scale
  std::size_t t2 = 0;  // argmax confidence, 0-based within the scale
  double contribution = 0.0;
};

// Softmax cross-entropy in log-sum-exp form.
double per_tick_loss(const Eigen::VectorXd& logits, int label);

// (argmin loss, argmax confidence), earliest on ties, 0-based.
std::pair<std::size_t, std::size_t> select_checkpoints(const std::vector<double>& losses,
                                                       const std::vector<double>& confidences);

ScaleLossRecord make_scale_record(std::vector<double> losses, std::vector<double> confidences);

// (1/z) sum over scales of (L[t1] + L[t2]) / 2.
double composite_loss(const std::vector<ScaleLossRecord>& scales, int z);

using Checkpoints = std::vector<std::pair<std::size_t, std::size_t>>;

template <typename Scalar>
struct CompositeLoss {
  ad::Var<Scalar> loss;
  std::vector<ScaleLossRecord> scales;
  Checkpoints checkpoints;
};

// Differentiable composite loss over a full-depth rollout.  Checkpoint
// indices are chosen from the values (or taken from `frozen`) and act as
// constants of the backward pass.
template <typename Scalar>
CompositeLoss<Scalar> composite_loss(const std::vector<std::vector<ad::Var<Scalar>>>& logits, int label, int z,
                                     const Checkpoints* frozen = nullptr) {
  if (static_cast<int>(logits.size()) != z)
    throw std::invalid_argument("composite_loss: expected " + std::to_string(z) + " scales, got " +
                                std::to_string(logits.size()));
  CompositeLoss<Scalar> out;
  ad::Var<Scalar> total;
  for (std::size_t s = 0; s < logits.size(); ++s) {
    const auto& ticks = logits[s];
    if (ticks.empty()) throw std::invalid_argument("composite_loss: empty scale");
    std::vector<ad::Var<Scalar>> terms;
    std::vector<double> losses, confs;
    for (const auto& l : ticks) {
      terms.push_back(ad::cross_entropy(l, label));
      losses.push_back(static_cast<double>(terms.back().scalar()));
      const Vec<Scalar> p = ad::softmax_values<Scalar>(l.value().col(0));
      std::vector<double> pd(static_cast<std::size_t>(p.size()));
      for (Eigen::Index k = 0; k < p.size(); ++k) pd[static_cast<std::size_t>(k)] = static_cast<double>(p(k));
      confs.push_back(confidence(pd));
    }
    ScaleLossRecord rec = make_scale_record(losses, confs);
    if (frozen) {
      if (s >= frozen->size()) throw std::invalid_argument("composite_loss: frozen checkpoints too short");
      rec.t1 = (*frozen)[s].first;
      rec.t2 = (*frozen)[s].second;
      if (rec.t1 >= ticks.size() || rec.t2 >= ticks.size())
        throw std::invalid_argument("composite_loss: frozen checkpoint out of range");
      rec.contribution = 0.5 * (rec.losses[rec.t1] + rec.losses[rec.t2]);
    }
    auto contrib = ad::scale(ad::add(terms[rec.t1], terms[rec.t2]), Scalar(0.5));
    total = s == 0 ? contrib : ad::add(total, contrib);
    out.checkpoints.emplace_back(rec.t1, rec.t2);
    out.scales.push_back(std::move(rec));
  }
  out.loss = ad::scale(total, Scalar(1) / static_cast<Scalar>(z));
  return out;
}

// Decoupled-weight-decay Adam over an ordered list of tensors.
template <typename Scalar>
class AdamW {
 public:
  AdamW(const std::vector<const Mat<Scalar>*>& shapes, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto* m : shapes) {
      m_.push_back(Mat<Scalar>::Zero(m->rows(), m->cols()));
      v_.push_back(Mat<Scalar>::Zero(m->rows(), m->cols()));
    }
  }
  AdamW(const ModelParams<Scalar>& params, double weight_decay) : AdamW(tensors_of(params), weight_decay) {}

  void step(const std::vector<Mat<Scalar>*>& params, const std::vector<const Mat<Scalar>*>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("AdamW: tensor count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat<Scalar>& p = *params[i];
      const Mat<Scalar>& g = *grads[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      if (weight_decay_ != 0.0) p *= static_cast<Scalar>(1.0 - lr * weight_decay_);
      p.array() -= static_cast<Scalar>(lr) * (m_[i].array() / static_cast<Scalar>(c1)) /
                   ((v_[i].array() / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(eps_));
    }
  }

  void step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, double lr) {
    std::vector<Mat<Scalar>*> ps;
    params.w.visit([&](const std::string&, Mat<Scalar>& m) { ps.push_back(&m); });
    step(ps, tensors_of(grads), lr);
  }

  long steps() const { return t_; }

  static std::vector<const Mat<Scalar>*> tensors_of(const ModelParams<Scalar>& p) {
    std::vector<const Mat<Scalar>*> out;
    p.w.visit([&](const std::string&, const Mat<Scalar>& m) { out.push_back(&m); });
    return out;
  }

 private:
  std::vector<Mat<Scalar>> m_, v_;
  double weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
};

template <typename Scalar>
Scalar global_norm(const ModelParams<Scalar>& p) {
  Scalar s = 0;
  p.w.visit([&](const std::string&, const Mat<Scalar>& m) { s += m.squaredNorm(); });
  return std::sqrt(s);
}

template <typename Scalar>
void scale_all(ModelParams<Scalar>& p, Scalar factor) {
  p.w.visit([&](const std::string&, Mat<Scalar>& m) { m *= factor; });
}

template <typename Scalar>
void add_into(ModelParams<Scalar>& acc, const ModelParams<Scalar>& other) {
  std::vector<const Mat<Scalar>*> os;
  other.w.visit([&](const std::string&, const Mat<Scalar>& m) { os.push_back(&m); });
  std::size_t i = 0;
  acc.w.visit([&](const std::string&, Mat<Scalar>& m) { m += *os[i++]; });
}

// Full-depth rollout, composite loss and (optionally) its gradient.
template <typename Scalar>
struct StepResult {
  double loss = 0.0;
  std::vector<ScaleLossRecord> scales;
  Decisions decisions;
  Checkpoints checkpoints;
  std::optional<ModelParams<Scalar>> grads;
};

template <typename Scalar>
StepResult<Scalar> loss_and_gradient(const ModelParams<Scalar>& params, const PyramidInstance& instance,
                                     const ReasonerConfig& reasoner, const EncoderStub& stub, GraphOptions options,
                                     const Decisions* frozen = nullptr, const Checkpoints* frozen_checkpoints = nullptr) {
  ReasonerConfig rc = reasoner;
  rc.stopping_enabled = false;
  ModelGraph<Scalar> g(params, options);
  FeatureCache cache(instance.config.num_scales);
  RolloutOptions<Scalar> ro;
  ro.frozen = frozen;
  auto r = rollout(g, instance, cache, stub, rc, ro);
  auto cl = composite_loss(r.logits, instance.label, rc.num_scales, frozen_checkpoints);
  StepResult<Scalar> out;
  out.loss = static_cast<double>(cl.loss.scalar());
  out.scales = std::move(cl.scales);
  out.decisions = std::move(r.decisions);
  out.checkpoints = std::move(cl.checkpoints);
  if (options.record_gradients) {
    if (!std::isfinite(out.loss)) throw std::runtime_error("non-finite loss on instance seed " +
                                                           std::to_string(instance.generator_seed));
    g.tape().backward(cl.loss);
    out.grads = g.gradients();
  }
  return out;
}

struct TrainMetrics {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double val_auc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams<double> params;
  std::vector<TrainMetrics> metrics;
};

using EpochCallback = std::function<void(const TrainMetrics&, const ModelParams<double>&)>;

TrainResult train(const std::vector<PyramidInstance>& train_set, const std::vector<PyramidInstance>& val_set,
                  ModelParams<double> params, const TrainConfig& config, const ReasonerConfig& reasoner,
                  const EncoderStub& stub, const EpochCallback& on_epoch = {});

void write_metrics_csv(const std::vector<TrainMetrics>& metrics, const std::filesystem::path& path);

struct TensorCheck {
  std::string name;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double relative_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradientCheckReport {
  double loss = 0.0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::vector<TensorCheck> tensors;
};

// Analytic vs central-difference gradients of the composite loss for every
// parameter tensor, with selections, t* and (t1, t2) frozen to the base
// rollout.  Relative error per tensor: |a - n| / max(|a|, |n|, 1e-8).
template <typename Scalar>
GradientCheckReport gradient_check(const ModelParams<Scalar>& params, const PyramidInstance& instance,
                                   const ReasonerConfig& reasoner, const EncoderStub& stub, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("gradient_check: epsilon must be positive");
  auto base = loss_and_gradient(params, instance, reasoner, stub, GraphOptions{true, false, 0});
  GradientCheckReport report;
  report.loss = base.loss;
  ModelParams<Scalar> work = params;
  auto eval = [&]() {
    return static_cast<Scalar>(
        loss_and_gradient(work, instance, reasoner, stub, GraphOptions{}, &base.decisions, &base.checkpoints).loss);
  };
  std::vector<Mat<Scalar>*> targets;
  std::vector<std::string> names;
  work.w.visit([&](const std::string& n, Mat<Scalar>& m) {
    targets.push_back(&m);
    names.push_back(n);
  });
  std::vector<const Mat<Scalar>*> analytic;
  base.grads->w.visit([&](const std::string&, const Mat<Scalar>& m) { analytic.push_back(&m); });
  const auto eps = static_cast<Scalar>(epsilon);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Mat<Scalar>& m = *targets[t];
    Mat<Scalar> numeric(m.rows(), m.cols());
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const Scalar orig = m(k);
      m(k) = orig + eps;
      const Scalar up = eval();
      m(k) = orig - eps;
      const Scalar down = eval();
      m(k) = orig;
      numeric(k) = (up - down) / (Scalar(2) * eps);
    }
    if (!analytic[t]->allFinite() || !numeric.allFinite())
      throw std::runtime_error("gradient_check: non-finite gradient in " + names[t]);
    TensorCheck tc;
    tc.name = names[t];
    tc.analytic_norm = static_cast<double>(analytic[t]->norm());
    tc.numeric_norm = static_cast<double>(numeric.norm());
    const double diff = static_cast<double>((*analytic[t] - numeric).norm());
    tc.relative_error = diff / std::max({tc.analytic_norm, tc.numeric_norm, 1e-8});
    tc.max_abs_error = m.size() ? static_cast<double>((*analytic[t] - numeric).cwiseAbs().maxCoeff()) : 0.0;
    report.max_relative_error = std::max(report.max_relative_error, tc.relative_error);
    report.max_abs_error = std::max(report.max_abs_error, tc.max_abs_error);
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

struct RichardsonSample {
  std::string name;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double error_eps = 0.0;
  double error_2eps = 0.0;
  double ratio = 0.0;
};

// Truncation errors of central differences at epsilon and 2 epsilon on the
// coordinates where the 2 epsilon error clears `floor`.  O(eps^2)
// truncation gives ratios near 4.
template <typename Scalar>
std::vector<RichardsonSample> richardson_check(const ModelParams<Scalar>& params, const PyramidInstance& instance,
                                               const ReasonerConfig& reasoner, const EncoderStub& stub,
                                               double epsilon, double floor, std::size_t max_samples) {
  auto base = loss_and_gradient(params, instance, reasoner, stub, GraphOptions{true, false, 0});
  ModelParams<Scalar> work = params;
  // Evaluated in Scalar throughout so extended precision keeps its roundoff floor.
  auto eval = [&]() {
    ModelGraph<Scalar> g(work);
    ReasonerConfig rc = reasoner;
    rc.stopping_enabled = false;
    FeatureCache cache(instance.config.num_scales);
    RolloutOptions<Scalar> ro;
    ro.frozen = &base.decisions;
    auto r = rollout(g, instance, cache, stub, rc, ro);
    return composite_loss(r.logits, instance.label, rc.num_scales, &base.checkpoints).loss.scalar();
  };
  std::vector<RichardsonSample> out;
  std::vector<const Mat<Scalar>*> analytic;
  base.grads->w.visit([&](const std::string&, const Mat<Scalar>& m) { analytic.push_back(&m); });
  std::size_t t = 0;
  work.w.visit([&](const std::string& name, Mat<Scalar>& m) {
    for (Eigen::Index k = 0; k < m.size() && out.size() < max_samples; ++k) {
      const Scalar orig = m(k);
      auto central = [&](Scalar h) {
        m(k) = orig + h;
        const Scalar up = eval();
        m(k) = orig - h;
        const Scalar down = eval();
        m(k) = orig;
        return (up - down) / (Scalar(2) * h);
      };
      const Scalar a = (*analytic[t])(k);
      const Scalar e1 = central(static_cast<Scalar>(epsilon)) - a;
      const Scalar e2 = central(static_cast<Scalar>(2 * epsilon)) - a;
      if (std::abs(static_cast<double>(e2)) < floor) continue;
      RichardsonSample s;
      s.name = name;
      s.index = k;
      s.analytic = static_cast<double>(a);
      s.error_eps = static_cast<double>(e1);
      s.error_2eps = static_cast<double>(e2);
      s.ratio = static_cast<double>(e2 / e1);
      out.push_back(s);
    }
    ++t;
  });
  return out;
}

}  // namespace pathseek
