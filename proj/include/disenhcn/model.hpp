#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "disenhcn/autodiff.hpp"
#include "disenhcn/csr.hpp"
#include "disenhcn/data.hpp"
#include "disenhcn/errors.hpp"
#include "disenhcn/hypergraph.hpp"
#include "disenhcn/rng.hpp"

namespace disenhcn {

enum class FusionMode { Attention, Mean, Max };
enum class ConvMode { EffHGConv, HGConvLinearized };

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Attention: return "attention";
    case FusionMode::Mean: return "mean";
    case FusionMode::Max: return "max";
  }
  return "?";
}

inline const char* to_string(ConvMode m) {
  return m == ConvMode::EffHGConv ? "eff_hgconv" : "hgconv_linearized";
}

inline FusionMode fusion_from_string(const std::string& s) {
  if (s == "attention") return FusionMode::Attention;
  if (s == "mean") return FusionMode::Mean;
  if (s == "max") return FusionMode::Max;
  throw ConfigError("unknown fusion mode: " + s);
}

inline ConvMode conv_from_string(const std::string& s) {
  if (s == "eff_hgconv") return ConvMode::EffHGConv;
  if (s == "hgconv_linearized") return ConvMode::HGConvLinearized;
  throw ConfigError("unknown conv mode: " + s);
}

struct ModelConfig {
  std::int64_t d = 120;  // full user embedding size, split into three chunks
  std::int64_t layers = 1;
  std::set<HyperedgeType> enabled_types{kAllHyperedgeTypes.begin(), kAllHyperedgeTypes.end()};
  FusionMode fusion = FusionMode::Attention;
  ConvMode conv = ConvMode::EffHGConv;

  std::int64_t chunk() const { return d / 3; }

  void validate() const {
    if (d <= 0 || d % 3 != 0) throw ConfigError("embedding size d must be positive and divisible by 3");
    if (layers < 1) throw ConfigError("layer count must be >= 1");
    if (enabled_types.empty()) throw ConfigError("at least one hyperedge type must be enabled");
  }
};

/// All trainable state: the layer-0 embedding tables plus the per-aspect
/// attention parameters (and per-type linear maps in the linearized ablation).
struct ParameterSet {
  DenseMatrix p0;                      // N_U x d
  DenseMatrix q0, r0, s0;              // entity tables, N_* x d/3
  std::array<DenseMatrix, 3> w_att;    // d/3 x d/3 per aspect
  std::array<DenseMatrix, 3> b_att;    // 1 x d/3 per aspect
  std::array<DenseMatrix, 3> a_att;    // d/3 x 1 per aspect
  std::map<HyperedgeType, DenseMatrix> w_conv;  // HGConvLinearized only

  /// Stable name -> table enumeration. Fixed order: this is the checkpoint
  /// payload order and the Adam state alignment.
  std::vector<ad::ParamRef> named_tables() {
    std::vector<ad::ParamRef> refs;
    refs.push_back({"p0", &p0});
    refs.push_back({"q0", &q0});
    refs.push_back({"r0", &r0});
    refs.push_back({"s0", &s0});
    for (int s = 0; s < 3; ++s) {
      const std::string aspect = to_string(static_cast<Aspect>(s));
      refs.push_back({"w_att." + aspect, &w_att[s]});
      refs.push_back({"b_att." + aspect, &b_att[s]});
      refs.push_back({"a_att." + aspect, &a_att[s]});
    }
    for (auto& [type, table] : w_conv) refs.push_back({std::string("w_conv.") + to_string(type), &table});
    return refs;
  }

  bool all_finite() {
    for (auto& ref : named_tables())
      if (!ref.table->all_finite()) return false;
    return true;
  }
};

namespace detail {
inline void xavier_fill(DenseMatrix& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.n_rows + m.n_cols));
  for (auto& v : m.data) v = rng.uniform(-bound, bound);
}
}  // namespace detail

/// Xavier-uniform tables (bound sqrt(6/(rows+cols))), zero biases. Draw order
/// is fixed so a seed fully determines the parameters.
inline ParameterSet init_params(const ModelConfig& cfg, const Vocab& vocab, Rng& rng) {
  cfg.validate();
  const auto c = cfg.chunk();
  ParameterSet params;
  params.p0 = DenseMatrix(vocab.n_users(), cfg.d);
  params.q0 = DenseMatrix(vocab.n_locations(), c);
  params.r0 = DenseMatrix(vocab.n_times(), c);
  params.s0 = DenseMatrix(vocab.n_activities(), c);
  detail::xavier_fill(params.p0, rng);
  detail::xavier_fill(params.q0, rng);
  detail::xavier_fill(params.r0, rng);
  detail::xavier_fill(params.s0, rng);
  for (int s = 0; s < 3; ++s) {
    params.w_att[s] = DenseMatrix(c, c);
    params.b_att[s] = DenseMatrix(1, c);  // zero
    params.a_att[s] = DenseMatrix(c, 1);
    detail::xavier_fill(params.w_att[s], rng);
    detail::xavier_fill(params.a_att[s], rng);
  }
  if (cfg.conv == ConvMode::HGConvLinearized) {
    for (auto type : kAllHyperedgeTypes) {
      if (!cfg.enabled_types.count(type)) continue;
      DenseMatrix w(c, c);
      detail::xavier_fill(w, rng);
      params.w_conv.emplace(type, std::move(w));
    }
  }
  return params;
}

/// Immutable per-fit wiring derived from the adjacency set: transposes for
/// the backward pass and zero-degree indicator columns. A vertex with no
/// hyperedge of some type keeps its own embedding through that type's
/// propagation (mean over an empty neighborhood passes the vertex through),
/// which also makes an empty graph an exact identity model.
struct GraphContext {
  const AdjacencySet* adj = nullptr;
  std::array<CsrMatrix, 3> n2e_t, e2n_t;
  std::map<HyperedgeType, DenseMatrix> sim_zero_mask;   // N_U x 1
  std::array<DenseMatrix, 3> user_zero_mask;            // N_U x 1, empty history
  std::array<DenseMatrix, 3> entity_zero_mask;          // N_entity x 1, unseen entity

  static DenseMatrix zero_rows_mask(const CsrMatrix& m) {
    DenseMatrix mask(m.n_rows, 1);
    for (std::int64_t i = 0; i < m.n_rows; ++i) mask.at(i, 0) = m.row_nnz(i) == 0 ? 1.0 : 0.0;
    return mask;
  }

  explicit GraphContext(const AdjacencySet& adjacency) : adj(&adjacency) {
    for (const auto& [type, m] : adjacency.similarity) sim_zero_mask.emplace(type, zero_rows_mask(m));
    if (adjacency.u_enabled()) {
      for (int s = 0; s < 3; ++s) {
        n2e_t[s] = transpose(adjacency.n2e[s]);
        e2n_t[s] = transpose(adjacency.e2n[s]);
        user_zero_mask[s] = zero_rows_mask(adjacency.n2e[s]);
        entity_zero_mask[s] = zero_rows_mask(adjacency.e2n[s]);
      }
    }
  }
};

/// Final embeddings after layer combination, extracted as plain matrices for
/// scoring and evaluation.
struct FinalEmbeddings {
  std::array<DenseMatrix, 3> user_chunks;  // N_U x d/3 per aspect
  DenseMatrix locations, times, activities;
};

/// Handles into the tape for the differentiable final embeddings plus the
/// last layer's attention weights (for the report).
struct ForwardResult {
  std::array<ad::Node*, 3> user_chunks{};
  ad::Node* locations = nullptr;
  ad::Node* times = nullptr;
  ad::Node* activities = nullptr;
  std::array<ad::Node*, 3> attention{};          // n_users x n_enabled_types, last layer
  std::vector<HyperedgeType> attention_columns;  // column order of the above

  FinalEmbeddings extract() const {
    FinalEmbeddings out;
    for (int s = 0; s < 3; ++s) out.user_chunks[s] = user_chunks[s]->value;
    out.locations = locations->value;
    out.times = times->value;
    out.activities = activities->value;
    return out;
  }
};

/// Nodes for the trainable leaves of one forward evaluation.
struct ParameterNodes {
  ad::Node* p0 = nullptr;
  ad::Node* q0 = nullptr;
  ad::Node* r0 = nullptr;
  ad::Node* s0 = nullptr;
  std::array<ad::Node*, 3> w_att{}, b_att{}, a_att{};
  std::map<HyperedgeType, ad::Node*> w_conv;
};

inline ParameterNodes make_parameter_nodes(ad::Tape& tape, const ParameterSet& params, bool needs_grad) {
  ParameterNodes nodes;
  nodes.p0 = tape.leaf(params.p0, needs_grad);
  nodes.q0 = tape.leaf(params.q0, needs_grad);
  nodes.r0 = tape.leaf(params.r0, needs_grad);
  nodes.s0 = tape.leaf(params.s0, needs_grad);
  for (int s = 0; s < 3; ++s) {
    nodes.w_att[s] = tape.leaf(params.w_att[s], needs_grad);
    nodes.b_att[s] = tape.leaf(params.b_att[s], needs_grad);
    nodes.a_att[s] = tape.leaf(params.a_att[s], needs_grad);
  }
  for (const auto& [type, w] : params.w_conv) nodes.w_conv.emplace(type, tape.leaf(w, needs_grad));
  return nodes;
}

namespace detail {

/// Pairwise-tree sum. Besides being deterministic, it reproduces n * x
/// exactly when all terms are equal and n is a power of two, which keeps the
/// empty-graph model an exact identity.
inline ad::Node* balanced_sum(ad::Tape& tape, std::vector<ad::Node*> terms) {
  if (terms.empty()) throw std::invalid_argument("balanced_sum: empty input");
  while (terms.size() > 1) {
    std::vector<ad::Node*> next;
    next.reserve((terms.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < terms.size(); i += 2) next.push_back(tape.add(terms[i], terms[i + 1]));
    if (terms.size() % 2) next.push_back(terms.back());
    terms = std::move(next);
  }
  return terms[0];
}

struct LayerState {
  std::array<ad::Node*, 3> user_chunks{};  // fused, per aspect
  ad::Node* q = nullptr;
  ad::Node* r = nullptr;
  ad::Node* s = nullptr;

  ad::Node* entity(Aspect a) const {
    switch (a) {
      case Aspect::Location: return q;
      case Aspect::Time: return r;
      case Aspect::Activity: return s;
    }
    return nullptr;
  }
};

/// Per-type user chunks for one aspect at the next layer, in enabled-type
/// order. Similarity types propagate the chunk through their normalized
/// adjacency when they cover the aspect and pass it through otherwise; the
/// user-interaction type contributes the hyperedge feature (mean of the
/// user's interacted entities).
inline std::vector<std::pair<HyperedgeType, ad::Node*>> propagate_aspect(
    ad::Tape& tape, const GraphContext& ctx, const ParameterNodes& pn, const LayerState& state,
    Aspect aspect, const ModelConfig& cfg, std::array<ad::Node*, 3>* hyperedge_features) {
  const int si = static_cast<int>(aspect);
  ad::Node* chunk = state.user_chunks[si];
  std::vector<std::pair<HyperedgeType, ad::Node*>> out;
  for (auto type : kAllHyperedgeTypes) {
    if (!cfg.enabled_types.count(type)) continue;
    ad::Node* result = nullptr;
    if (type == HyperedgeType::U) {
      const auto& n2e = ctx.adj->n2e[si];
      ad::Node* feature = tape.spmm(&n2e, &ctx.n2e_t[si], state.entity(aspect));
      ad::Node* fallback = tape.mul_colvec(chunk, tape.constant(ctx.user_zero_mask[si]));
      result = tape.add(feature, fallback);
      if (cfg.conv == ConvMode::HGConvLinearized) result = tape.matmul(result, pn.w_conv.at(type));
      if (hyperedge_features) (*hyperedge_features)[si] = result;
    } else if (type_covers_aspect(type, aspect)) {
      const auto& m = ctx.adj->similarity.at(type);
      ad::Node* propagated = tape.spmm(&m, &m, chunk);  // symmetric operator
      ad::Node* fallback = tape.mul_colvec(chunk, tape.constant(ctx.sim_zero_mask.at(type)));
      result = tape.add(propagated, fallback);
      if (cfg.conv == ConvMode::HGConvLinearized) result = tape.matmul(result, pn.w_conv.at(type));
    } else {
      result = chunk;  // aspect outside the type's subspace: identity pass-through
    }
    out.emplace_back(type, result);
  }
  return out;
}

struct FusionOutput {
  ad::Node* fused = nullptr;
  ad::Node* weights = nullptr;  // attention mode only
};

inline FusionOutput fuse_types(ad::Tape& tape, const ParameterNodes& pn,
                               const std::vector<std::pair<HyperedgeType, ad::Node*>>& chunks,
                               Aspect aspect, FusionMode mode) {
  if (chunks.empty()) throw ConfigError("fuse_types: no enabled hyperedge types");
  const int si = static_cast<int>(aspect);
  FusionOutput out;
  switch (mode) {
    case FusionMode::Attention: {
      std::vector<ad::Node*> scores;
      scores.reserve(chunks.size());
      for (const auto& [type, chunk] : chunks) {
        ad::Node* hidden = tape.tanh(tape.add_rowvec(tape.matmul(chunk, pn.w_att[si]), pn.b_att[si]));
        scores.push_back(tape.matmul(hidden, pn.a_att[si]));  // n x 1
      }
      out.weights = tape.softmax_rows(tape.concat_cols(scores));
      std::vector<ad::Node*> weighted;
      weighted.reserve(chunks.size());
      for (std::size_t k = 0; k < chunks.size(); ++k)
        weighted.push_back(tape.mul_colvec(
            chunks[k].second,
            tape.slice_cols(out.weights, static_cast<std::int64_t>(k), static_cast<std::int64_t>(k) + 1)));
      out.fused = balanced_sum(tape, std::move(weighted));
      break;
    }
    case FusionMode::Mean: {
      std::vector<ad::Node*> terms;
      terms.reserve(chunks.size());
      for (const auto& [type, chunk] : chunks) terms.push_back(chunk);
      out.fused = tape.scale(balanced_sum(tape, std::move(terms)), 1.0 / static_cast<double>(chunks.size()));
      break;
    }
    case FusionMode::Max: {
      ad::Node* acc = nullptr;
      for (const auto& [type, chunk] : chunks) acc = acc ? tape.max2(acc, chunk) : chunk;
      out.fused = acc;
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Full forward pass: slice the user table into aspect chunks, run `layers`
/// rounds of intra-type propagation + inter-type fusion (entities update
/// through the user-interaction hyperedges), then average the layer snapshots.
inline ForwardResult forward(ad::Tape& tape, const ParameterNodes& pn, const GraphContext& ctx,
                             const ModelConfig& cfg) {
  cfg.validate();
  const auto c = cfg.chunk();

  detail::LayerState state;
  for (int s = 0; s < 3; ++s) state.user_chunks[s] = tape.slice_cols(pn.p0, s * c, (s + 1) * c);
  state.q = pn.q0;
  state.r = pn.r0;
  state.s = pn.s0;

  std::vector<detail::LayerState> snapshots{state};
  ForwardResult result;
  for (auto type : kAllHyperedgeTypes)
    if (cfg.enabled_types.count(type)) result.attention_columns.push_back(type);

  const bool u_enabled = cfg.enabled_types.count(HyperedgeType::U) > 0;
  for (std::int64_t layer = 0; layer < cfg.layers; ++layer) {
    detail::LayerState next;
    std::array<ad::Node*, 3> hyperedge_features{};
    for (Aspect aspect : kAllAspects) {
      auto chunks = detail::propagate_aspect(tape, ctx, pn, state, aspect, cfg,
                                             u_enabled ? &hyperedge_features : nullptr);
      auto fused = detail::fuse_types(tape, pn, chunks, aspect, cfg.fusion);
      next.user_chunks[static_cast<int>(aspect)] = fused.fused;
      result.attention[static_cast<int>(aspect)] = fused.weights;
    }
    if (u_enabled) {
      // entity update: hyperedge feature pushed back to members, unseen
      // entities keep their embedding
      auto update_entity = [&](Aspect aspect, ad::Node* current) {
        const int si = static_cast<int>(aspect);
        ad::Node* pushed = tape.spmm(&ctx.adj->e2n[si], &ctx.e2n_t[si], hyperedge_features[si]);
        ad::Node* keep = tape.mul_colvec(current, tape.constant(ctx.entity_zero_mask[si]));
        return tape.add(pushed, keep);
      };
      next.q = update_entity(Aspect::Location, state.q);
      next.r = update_entity(Aspect::Time, state.r);
      next.s = update_entity(Aspect::Activity, state.s);
    } else {
      next.q = state.q;
      next.r = state.r;
      next.s = state.s;
    }
    state = next;
    snapshots.push_back(state);
  }

  // uniform average over layers 0..L
  const double w = 1.0 / static_cast<double>(snapshots.size());
  auto combine = [&](auto&& get) {
    std::vector<ad::Node*> terms;
    terms.reserve(snapshots.size());
    for (const auto& snap : snapshots) terms.push_back(get(snap));
    return tape.scale(detail::balanced_sum(tape, std::move(terms)), w);
  };
  for (int s = 0; s < 3; ++s)
    result.user_chunks[s] = combine([s](const detail::LayerState& snap) { return snap.user_chunks[s]; });
  result.locations = combine([](const detail::LayerState& snap) { return snap.q; });
  result.times = combine([](const detail::LayerState& snap) { return snap.r; });
  result.activities = combine([](const detail::LayerState& snap) { return snap.s; });
  return result;
}

/// Convenience non-training forward: evaluates the model once and extracts
/// plain matrices.
inline FinalEmbeddings compute_final_embeddings(const ParameterSet& params, const GraphContext& ctx,
                                                const ModelConfig& cfg) {
  ad::Tape tape;
  auto pn = make_parameter_nodes(tape, params, /*needs_grad=*/false);
  return forward(tape, pn, ctx, cfg).extract();
}

/// Predicted preference: sum of the three per-aspect inner products.
inline double score(const FinalEmbeddings& emb, std::int64_t u, std::int64_t l, std::int64_t t,
                    std::int64_t a) {
  const auto& pl = emb.user_chunks[0];
  const auto& pt = emb.user_chunks[1];
  const auto& pa = emb.user_chunks[2];
  if (u < 0 || u >= pl.n_rows || l < 0 || l >= emb.locations.n_rows || t < 0 ||
      t >= emb.times.n_rows || a < 0 || a >= emb.activities.n_rows)
    throw std::out_of_range("score: index out of range");
  double y = 0.0;
  for (std::int64_t j = 0; j < pl.n_cols; ++j) y += pl.at(u, j) * emb.locations.at(l, j);
  for (std::int64_t j = 0; j < pt.n_cols; ++j) y += pt.at(u, j) * emb.times.at(t, j);
  for (std::int64_t j = 0; j < pa.n_cols; ++j) y += pa.at(u, j) * emb.activities.at(a, j);
  return y;
}

/// Scores for every activity under a fixed (u,l,t) context. The context part
/// is a constant offset shared by all entries.
inline std::vector<double> score_all_activities(const FinalEmbeddings& emb, std::int64_t u,
                                                std::int64_t l, std::int64_t t) {
  const auto& pl = emb.user_chunks[0];
  const auto& pt = emb.user_chunks[1];
  const auto& pa = emb.user_chunks[2];
  if (u < 0 || u >= pl.n_rows || l < 0 || l >= emb.locations.n_rows || t < 0 || t >= emb.times.n_rows)
    throw std::out_of_range("score_all_activities: index out of range");
  double offset = 0.0;
  for (std::int64_t j = 0; j < pl.n_cols; ++j) offset += pl.at(u, j) * emb.locations.at(l, j);
  for (std::int64_t j = 0; j < pt.n_cols; ++j) offset += pt.at(u, j) * emb.times.at(t, j);
  std::vector<double> scores(static_cast<std::size_t>(emb.activities.n_rows), offset);
  for (std::int64_t a = 0; a < emb.activities.n_rows; ++a) {
    double dot = 0.0;
    for (std::int64_t j = 0; j < pa.n_cols; ++j) dot += pa.at(u, j) * emb.activities.at(a, j);
    scores[static_cast<std::size_t>(a)] += dot;
  }
  return scores;
}

/// Five-number summary of the attention weight distribution per (aspect,
/// hyperedge type), over users. Quartiles use linear interpolation.
struct AttentionSummaryRow {
  Aspect aspect;
  HyperedgeType type;
  double min, q1, median, q3, max;
};

inline std::vector<AttentionSummaryRow> attention_report(const ForwardResult& fwd,
                                                         const ModelConfig& cfg) {
  if (cfg.fusion != FusionMode::Attention)
    throw ConfigError("attention_report requires attention fusion");
  auto quantile = [](std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
  };
  std::vector<AttentionSummaryRow> rows;
  for (Aspect aspect : kAllAspects) {
    const ad::Node* weights = fwd.attention[static_cast<int>(aspect)];
    for (std::size_t k = 0; k < fwd.attention_columns.size(); ++k) {
      std::vector<double> column;
      column.reserve(static_cast<std::size_t>(weights->rows()));
      for (std::int64_t i = 0; i < weights->rows(); ++i)
        column.push_back(weights->value.at(i, static_cast<std::int64_t>(k)));
      std::sort(column.begin(), column.end());
      rows.push_back({aspect, fwd.attention_columns[k], column.front(), quantile(column, 0.25),
                      quantile(column, 0.5), quantile(column, 0.75), column.back()});
    }
  }
  return rows;
}

inline std::string attention_report_csv(const std::vector<AttentionSummaryRow>& rows) {
  std::string csv = "aspect,type,min,q1,median,q3,max\n";
  char buf[160];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", to_string(row.aspect),
                  to_string(row.type), row.min, row.q1, row.median, row.q3, row.max);
    csv += buf;
  }
  return csv;
}

}  // namespace disenhcn
