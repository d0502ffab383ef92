#pragma once

// Query generation and multi-head cross-attention over candidate regions.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pathseek/dynamics.hpp"
#include "pathseek/pyramid.hpp"

namespace pathseek {

// Candidate features with their key/value projections, split per head.
template <typename Scalar>
struct ProjectedCandidates {
  std::vector<RegionId> ids;
  ad::Var<Scalar> features;  // n x d_in
  std::vector<ad::Var<Scalar>> keys;    // per head, n x head_dim
  std::vector<ad::Var<Scalar>> values;  // per head, n x head_dim

  std::size_t size() const { return ids.size(); }
};

template <typename Scalar>
struct AttentionResult {
  Mat<Scalar> weights;    // heads x n, each row a simplex
  Vec<Scalar> scores;     // head average
  ad::Var<Scalar> context;  // b, d_in x 1
};

struct AttentionTraceEntry {
  int tick = 0;
  int scale = 0;
  std::vector<RegionId> candidates;
  std::vector<double> scores;
};
using AttentionTrace = std::vector<AttentionTraceEntry>;

template <typename Scalar>
ProjectedCandidates<Scalar> project_candidates(ModelGraph<Scalar>& g, std::vector<RegionId> ids,
                                               const Mat<Scalar>& features) {
  const auto& c = g.config();
  if (ids.empty() || features.rows() == 0)
    throw std::invalid_argument("cross_attention: empty candidate set");
  if (features.rows() != static_cast<Eigen::Index>(ids.size()) || features.cols() != c.input_dim)
    throw std::invalid_argument("cross_attention: feature dimension mismatch");
  if (!features.allFinite()) throw std::domain_error("cross_attention: non-finite feature");
  ProjectedCandidates<Scalar> p;
  p.ids = std::move(ids);
  p.features = g.constant(features);
  const auto& w = g.vars();
  auto keys = ad::affine_rows(p.features, w.key_w, w.key_b);
  auto values = ad::affine_rows(p.features, w.value_w, w.value_b);
  for (int h = 0; h < c.heads; ++h) {
    p.keys.push_back(ad::slice_cols(keys, h * c.head_dim, c.head_dim));
    p.values.push_back(ad::slice_cols(values, h * c.head_dim, c.head_dim));
  }
  return p;
}

// q = W_i s_action + b_i.
template <typename Scalar>
ad::Var<Scalar> make_query(ModelGraph<Scalar>& g, const ad::Var<Scalar>& s_action) {
  detail::require_shape(s_action, g.config().sync_action, 1, "make_query");
  return ad::affine(g.vars().query_w, s_action, g.vars().query_b);
}

template <typename Scalar>
Scalar attention_temperature(const ModelConfig& c) {
  return std::sqrt(static_cast<Scalar>(c.literal_latent_scaling ? c.latent_dim : c.head_dim));
}

template <typename Scalar>
Vec<Scalar> head_average(const Mat<Scalar>& per_head) {
  return per_head.colwise().mean().transpose();
}

// Scaled dot-product attention with one query token per head; the context
// is the output projection of the concatenated head contexts.
template <typename Scalar>
AttentionResult<Scalar> cross_attention(ModelGraph<Scalar>& g, const ad::Var<Scalar>& q,
                                        const ProjectedCandidates<Scalar>& cands) {
  const auto& c = g.config();
  detail::require_shape(q, c.query_dim(), 1, "cross_attention(q)");
  if (cands.size() == 0) throw std::invalid_argument("cross_attention: empty candidate set");
  const Scalar inv_temp = Scalar(1) / attention_temperature<Scalar>(c);
  const auto n = static_cast<Eigen::Index>(cands.size());
  AttentionResult<Scalar> r;
  r.weights.resize(c.heads, n);
  ad::Var<Scalar> ctx;
  for (int h = 0; h < c.heads; ++h) {
    auto qh = ad::slice_rows(q, h * c.head_dim, c.head_dim);
    auto a = ad::softmax(ad::scale(ad::matmul(cands.keys[static_cast<std::size_t>(h)], qh), inv_temp));
    r.weights.row(h) = a.value().col(0).transpose();
    auto head_ctx = ad::matmul(ad::transpose(cands.values[static_cast<std::size_t>(h)]), a);
    ctx = h == 0 ? head_ctx : ad::concat_rows(ctx, head_ctx);
  }
  r.scores = head_average<Scalar>(r.weights);
  r.context = ad::affine(g.vars().attn_out_w, ctx, g.vars().attn_out_b);
  return r;
}

// Attention restricted to a selected subset: a fresh softmax over exactly
// the subset's candidates, head-averaged.
template <typename Scalar>
Vec<Scalar> joint_recalibrate(ModelGraph<Scalar>& g, const ad::Var<Scalar>& q,
                              const ProjectedCandidates<Scalar>& subset) {
  if (subset.size() == 0) throw std::invalid_argument("joint_recalibrate: empty subset");
  return cross_attention(g, q, subset).scores;
}

}  // namespace pathseek
