#pragma once

// Executable checks of the attention-as-influence surrogate and of the
// Fano lower bound on error with the data-processing direction.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "pathseek/reasoner.hpp"

namespace pathseek {

// ---- influence -------------------------------------------------------------

// A tick's attention read decomposed so that the context is
//   b = b_out + sum_j A_j h_j,
// with A_j the head-averaged weight and h_j = sum_h (A^h_j / A_j) W_out^h v^h_j.
struct InfluenceSnapshot {
  TickSnapshot<double> tick;
  int label = 0;
  Eigen::VectorXd attention;  // A_j
  Eigen::MatrixXd h;          // d_in x n, column j = h_j
  Eigen::VectorXd bias;       // b_out
};

InfluenceSnapshot decompose(const ModelParams<double>& params, const TickSnapshot<double>& tick, int label);

// Loss of the tick's downstream path for an arbitrary context: synapse,
// history push, neuron models, synchronisation and head, with the recurrent
// state frozen at the snapshot.
double path_loss(const ModelParams<double>& params, const InfluenceSnapshot& snap, const Eigen::VectorXd& context);

// Loss and its gradient with respect to the context.
std::pair<double, Eigen::VectorXd> path_loss_gradient(const ModelParams<double>& params, const InfluenceSnapshot& snap,
                                                      const Eigen::VectorXd& context);

// Unmasked context b_out + sum_j A_j h_j.
Eigen::VectorXd aggregate(const InfluenceSnapshot& snap);

// L(A_i -> (1 - s) A_i) - L, without renormalising; s = 1 is the full mask.
double mask_influence_oracle(const ModelParams<double>& params, const InfluenceSnapshot& snap, std::size_t i,
                             double s = 1.0);

// -A_i dL/dA_i.
inline double first_order_estimate(double a_i, double grad_a_i) { return -a_i * grad_a_i; }

// A_i |grad_z L| |h_i|.
inline double influence_bound(double a_i, const Eigen::VectorXd& h_i, const Eigen::VectorXd& grad_z) {
  return a_i * grad_z.norm() * h_i.norm();
}

struct CandidateInfluence {
  RegionId id = 0;
  int tick = 0;
  int scale = 0;
  double attention = 0.0;
  double delta_loss = 0.0;
  double estimate = 0.0;
  double bound = 0.0;
  double h_norm = 0.0;
  // residual(s) / s^2 for each mask scale, residual(s) = L(s) - L(0) - s * estimate.
  std::vector<double> taylor_ratios;
  bool taylor_checked = false;  // false when the residual sits below the noise floor
  bool taylor_ok = true;
  bool bound_ok = true;
};

struct InfluenceReport {
  std::vector<CandidateInfluence> candidates;
  std::vector<double> mask_scales;
  std::size_t snapshots = 0;
  double max_taylor_residual = 0.0;  // max |delta_loss - estimate|
  double spearman_rho = 0.0;         // A_i vs |delta_loss|, pooled
  double empirical_cg = 0.0;         // max |grad_z L|
  double empirical_ch = 0.0;         // max |h_i|
  std::size_t taylor_checked = 0;
  std::size_t taylor_skipped = 0;
  bool cauchy_schwarz_ok = true;
  bool taylor_ok = true;
};

enum class TickSelector { all, best_per_scale };

// Influence analysis of one snapshot.
std::vector<CandidateInfluence> analyze_snapshot(const ModelParams<double>& params, const InfluenceSnapshot& snap,
                                                 const std::vector<double>& mask_scales, double* grad_norm = nullptr);

InfluenceReport verify_influence(const ModelParams<double>& params, const std::vector<PyramidInstance>& instances,
                             const ReasonerConfig& config, const EncoderStub& stub,
                             TickSelector selector = TickSelector::best_per_scale,
                             std::vector<double> mask_scales = {1e-2, 1e-3, 1e-4});

// Pooled rank correlation with average ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// ---- Fano ------------------------------------------------------------------

double binary_entropy_bits(double p);

// Smallest error probability compatible with H(Y|Yhat) = h_bits.  N = 2 uses
// bisection on H_b(P) >= h over [0, 1/2]; N >= 3 the simplified form
// max(0, (h - 1) / log2(N - 1)).
double fano_bound(double h_bits, int n);

// Smallest P in [0, (N-1)/N] with H_b(P) + P log2(N - 1) >= h_bits.
double fano_bound_exact(double h_bits, int n);

// joint(y, z) is p(Y = y, Z = z).
double conditional_entropy_bits(const Eigen::MatrixXd& joint);

// Error of the MAP decision from Z.
double map_error(const Eigen::MatrixXd& joint);

// Joint of (Y, f(Z)) with f mapping each z to a label in [0, |Y|).
Eigen::MatrixXd push_forward(const Eigen::MatrixXd& joint, const std::vector<int>& f);

struct DpiResult {
  double h_given_z = 0.0;
  double h_given_yhat = 0.0;
  bool holds = false;
};

DpiResult dpi_evaluate(const Eigen::MatrixXd& joint, const std::vector<int>& f);
bool dpi_check(const Eigen::MatrixXd& joint, const std::vector<int>& f);

// C >= delta and H <= (1 - delta) log N agree for these probabilities.
bool confidence_entropy_identity(const std::vector<double>& probs, double delta);

struct FanoReport {
  double delta = 0.0;
  std::size_t count = 0;
  int num_classes = 0;
  double mean_predictive_entropy_bits = 0.0;
  double conditional_entropy_bits = 0.0;  // plug-in H(Y|Yhat) from the bucket's confusion matrix
  double bound = 0.0;
  double empirical_error = 0.0;
  bool bound_satisfied = false;
  bool identity_ok = true;
  std::string note;
};

// Buckets are the instances whose inference at delta stopped on the threshold.
FanoReport fano_report(const std::vector<PyramidInstance>& instances, const std::vector<Trajectory>& trajectories,
                       double delta, int num_classes);

std::vector<FanoReport> verify_fano(const ModelParams<double>& params, const std::vector<PyramidInstance>& instances,
                                     const ReasonerConfig& config, const EncoderStub& stub,
                                     const std::vector<double>& delta_grid, int workers = 1);

}  // namespace pathseek
