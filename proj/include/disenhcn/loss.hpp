#pragma once

#include <algorithm>
#include <vector>

#include "disenhcn/autodiff.hpp"
#include "disenhcn/errors.hpp"
#include "disenhcn/model.hpp"

namespace disenhcn {

/// One mini-batch of (context, positive, negative) triples for pairwise
/// ranking. unique_users is sorted and deduplicated.
struct PairwiseBatch {
  std::vector<std::int32_t> users, locations, times, positives, negatives;
  std::vector<std::int32_t> unique_users;

  std::size_t size() const { return users.size(); }

  void finalize_unique_users() {
    unique_users = users;
    std::sort(unique_users.begin(), unique_users.end());
    unique_users.erase(std::unique(unique_users.begin(), unique_users.end()), unique_users.end());
  }
};

enum class L2Scope { Touched, Full };

struct LossBreakdown {
  double bpr = 0.0, l2 = 0.0, independence = 0.0, total = 0.0;
};

/// Differentiable handles for the loss terms of one step.
struct LossNodes {
  ad::Node* bpr = nullptr;
  ad::Node* l2 = nullptr;
  ad::Node* independence = nullptr;
  ad::Node* total = nullptr;

  LossBreakdown values() const {
    LossBreakdown out;
    out.bpr = bpr->value.at(0, 0);
    out.l2 = l2 ? l2->value.at(0, 0) : 0.0;
    out.independence = independence ? independence->value.at(0, 0) : 0.0;
    out.total = total->value.at(0, 0);
    return out;
  }
};

/// Mean over pairs of -ln sigmoid(pos - neg).
inline ad::Node* bpr_loss(ad::Tape& tape, ad::Node* pos_scores, ad::Node* neg_scores) {
  if (pos_scores->value.size() == 0) throw std::invalid_argument("bpr_loss: empty batch");
  return tape.mean_all(tape.sigmoid_logloss(tape.sub(pos_scores, neg_scores)));
}

/// Squared-norm regularizer over the layer-0 rows the batch touches plus all
/// non-embedding parameters, scaled by 1/batch-size. Full scope sums entire
/// tables instead.
inline ad::Node* l2_term(ad::Tape& tape, const ParameterNodes& pn, const PairwiseBatch& batch,
                         L2Scope scope) {
  std::vector<ad::Node*> parts;
  auto sum_sq = [&tape](ad::Node* x) { return tape.sum_all(tape.square(x)); };
  if (scope == L2Scope::Full) {
    parts.push_back(sum_sq(pn.p0));
    parts.push_back(sum_sq(pn.q0));
    parts.push_back(sum_sq(pn.r0));
    parts.push_back(sum_sq(pn.s0));
  } else {
    auto unique_sorted = [](std::vector<std::int32_t> v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      return v;
    };
    parts.push_back(sum_sq(tape.row_select(pn.p0, batch.unique_users)));
    parts.push_back(sum_sq(tape.row_select(pn.q0, unique_sorted(batch.locations))));
    parts.push_back(sum_sq(tape.row_select(pn.r0, unique_sorted(batch.times))));
    std::vector<std::int32_t> acts = batch.positives;
    acts.insert(acts.end(), batch.negatives.begin(), batch.negatives.end());
    parts.push_back(sum_sq(tape.row_select(pn.s0, unique_sorted(std::move(acts)))));
  }
  for (int s = 0; s < 3; ++s) {
    parts.push_back(sum_sq(pn.w_att[s]));
    parts.push_back(sum_sq(pn.b_att[s]));
    parts.push_back(sum_sq(pn.a_att[s]));
  }
  for (const auto& [type, w] : pn.w_conv) parts.push_back(sum_sq(w));
  ad::Node* total = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) total = tape.add(total, parts[i]);
  return tape.scale(total, 1.0 / static_cast<double>(std::max<std::size_t>(batch.size(), 1)));
}

/// Distance correlation between the rows of X and Y (same row count n >= 2),
/// in [0, 1]. Off-diagonal distances are sqrt(||.||^2 + eps) so the statistic
/// stays differentiable at coincident points; the diagonal is masked to an
/// exact zero, since a sqrt(eps) diagonal does not scale with the data and
/// breaks scale invariance at the 1e-6 level. Numerator and denominator share
/// the eps so dCor(X, X) <= 1 holds exactly. A distance variance at or below
/// the eps floor is indistinguishable from a constant argument (whose masked
/// matrix leaves a residual of eps*(n-1)/n^2) and yields 0.
inline ad::Node* distance_correlation(ad::Tape& tape, ad::Node* x, ad::Node* y) {
  if (x->rows() != y->rows()) throw std::invalid_argument("distance_correlation: row count mismatch");
  if (x->rows() < 2) throw std::invalid_argument("distance_correlation: need at least 2 samples");
  constexpr double kEps = 1e-10;
  constexpr double kDegenerate = kEps;

  const std::int64_t n = x->rows();
  DenseMatrix off_diag(n, n, 1.0);
  for (std::int64_t i = 0; i < n; ++i) off_diag.at(i, i) = 0.0;
  ad::Node* mask = tape.constant(std::move(off_diag));
  auto centered = [&tape, mask](ad::Node* m) {
    return tape.double_center(tape.hadamard_dense(tape.sqrt_eps(tape.pairwise_sq_dists(m), kEps), mask));
  };
  ad::Node* a = centered(x);
  ad::Node* b = centered(y);
  ad::Node* m_xy = tape.mean_all(tape.hadamard_dense(a, b));
  ad::Node* m_xx = tape.mean_all(tape.square(a));
  ad::Node* m_yy = tape.mean_all(tape.square(b));

  if (m_xx->value.at(0, 0) <= kDegenerate || m_yy->value.at(0, 0) <= kDegenerate) return tape.scalar(0.0);
  ad::Node* numerator = tape.sqrt_eps(tape.clamp_min0(m_xy));
  ad::Node* denominator = tape.sqrt_eps(tape.sqrt_eps(tape.hadamard_dense(m_xx, m_yy)));
  return tape.div(numerator, denominator);
}

/// Sum of pairwise distance correlations between the three aspect chunks.
inline ad::Node* independence_loss(ad::Tape& tape, ad::Node* chunk_l, ad::Node* chunk_t,
                                   ad::Node* chunk_a) {
  if (chunk_l->rows() < 2) throw std::invalid_argument("independence_loss: need at least 2 users");
  ad::Node* lt = distance_correlation(tape, chunk_l, chunk_t);
  ad::Node* la = distance_correlation(tape, chunk_l, chunk_a);
  ad::Node* ta = distance_correlation(tape, chunk_t, chunk_a);
  return tape.add(tape.add(lt, la), ta);
}

/// Batch scores through the final embeddings: sum of per-aspect row dots.
inline ad::Node* batch_scores(ad::Tape& tape, const ForwardResult& fwd, const PairwiseBatch& batch,
                              const std::vector<std::int32_t>& activities) {
  ad::Node* lhs_l = tape.row_select(fwd.user_chunks[0], batch.users);
  ad::Node* lhs_t = tape.row_select(fwd.user_chunks[1], batch.users);
  ad::Node* lhs_a = tape.row_select(fwd.user_chunks[2], batch.users);
  ad::Node* score_l = tape.rows_dot(lhs_l, tape.row_select(fwd.locations, batch.locations));
  ad::Node* score_t = tape.rows_dot(lhs_t, tape.row_select(fwd.times, batch.times));
  ad::Node* score_a = tape.rows_dot(lhs_a, tape.row_select(fwd.activities, activities));
  return tape.add(tape.add(score_l, score_t), score_a);
}

/// total = bpr + lambda * l2 + gamma * independence, as tape nodes.
inline LossNodes total_loss(ad::Tape& tape, const ParameterNodes& pn, const ForwardResult& fwd,
                            const PairwiseBatch& batch, double lambda, double gamma, L2Scope scope) {
  if (batch.size() == 0) throw std::invalid_argument("total_loss: empty batch");
  LossNodes nodes;
  ad::Node* pos = batch_scores(tape, fwd, batch, batch.positives);
  ad::Node* neg = batch_scores(tape, fwd, batch, batch.negatives);
  nodes.bpr = bpr_loss(tape, pos, neg);
  nodes.total = nodes.bpr;
  nodes.l2 = l2_term(tape, pn, batch, scope);
  if (lambda != 0.0) nodes.total = tape.add(nodes.total, tape.scale(nodes.l2, lambda));
  if (gamma != 0.0 && batch.unique_users.size() >= 2) {
    nodes.independence = independence_loss(
        tape, tape.row_select(fwd.user_chunks[0], batch.unique_users),
        tape.row_select(fwd.user_chunks[1], batch.unique_users),
        tape.row_select(fwd.user_chunks[2], batch.unique_users));
    nodes.total = tape.add(nodes.total, tape.scale(nodes.independence, gamma));
  }
  return nodes;
}

}  // namespace disenhcn
