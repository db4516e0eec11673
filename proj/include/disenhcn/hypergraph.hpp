#pragma once

#include <array>
#include <atomic>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "disenhcn/csr.hpp"
#include "disenhcn/data.hpp"
#include "disenhcn/errors.hpp"

namespace disenhcn {

/// The eight hyperedge types: seven user-similarity granularities plus the
/// per-user one-to-many interaction hyperedges.
enum class HyperedgeType { L, T, A, LT, LA, TA, LTA, U };

inline constexpr std::array<HyperedgeType, 8> kAllHyperedgeTypes = {
    HyperedgeType::L,  HyperedgeType::T,  HyperedgeType::A,   HyperedgeType::LT,
    HyperedgeType::LA, HyperedgeType::TA, HyperedgeType::LTA, HyperedgeType::U};

inline constexpr std::array<HyperedgeType, 7> kSimilarityTypes = {
    HyperedgeType::L,  HyperedgeType::T,  HyperedgeType::A, HyperedgeType::LT,
    HyperedgeType::LA, HyperedgeType::TA, HyperedgeType::LTA};

inline const char* to_string(HyperedgeType t) {
  switch (t) {
    case HyperedgeType::L: return "L";
    case HyperedgeType::T: return "T";
    case HyperedgeType::A: return "A";
    case HyperedgeType::LT: return "LT";
    case HyperedgeType::LA: return "LA";
    case HyperedgeType::TA: return "TA";
    case HyperedgeType::LTA: return "LTA";
    case HyperedgeType::U: return "U";
  }
  return "?";
}

inline HyperedgeType hyperedge_type_from_string(const std::string& s) {
  for (auto t : kAllHyperedgeTypes)
    if (s == to_string(t)) return t;
  throw ConfigError("unknown hyperedge type: " + s);
}

/// The three disentangled subspaces. Each owns a d/3 chunk of the user
/// embedding and one entity family.
enum class Aspect { Location = 0, Time = 1, Activity = 2 };

inline constexpr std::array<Aspect, 3> kAllAspects = {Aspect::Location, Aspect::Time, Aspect::Activity};

inline const char* to_string(Aspect a) {
  switch (a) {
    case Aspect::Location: return "location";
    case Aspect::Time: return "time";
    case Aspect::Activity: return "activity";
  }
  return "?";
}

/// Whether the given similarity hyperedge type propagates the given aspect's
/// chunk (aspect L is covered by types containing L, and so on).
inline bool type_covers_aspect(HyperedgeType t, Aspect s) {
  switch (s) {
    case Aspect::Location:
      return t == HyperedgeType::L || t == HyperedgeType::LT || t == HyperedgeType::LA ||
             t == HyperedgeType::LTA;
    case Aspect::Time:
      return t == HyperedgeType::T || t == HyperedgeType::LT || t == HyperedgeType::TA ||
             t == HyperedgeType::LTA;
    case Aspect::Activity:
      return t == HyperedgeType::A || t == HyperedgeType::LA || t == HyperedgeType::TA ||
             t == HyperedgeType::LTA;
  }
  return false;
}

/// Binary user x entity incidence matrices, built from the training split
/// only.
struct IncidenceSet {
  CsrMatrix r_ul, r_ut, r_ua;

  const CsrMatrix& for_aspect(Aspect s) const {
    switch (s) {
      case Aspect::Location: return r_ul;
      case Aspect::Time: return r_ut;
      case Aspect::Activity: return r_ua;
    }
    throw std::logic_error("bad aspect");
  }
};

/// The normalized propagation operators: one symmetric-normalized user-user
/// matrix per enabled similarity type, and per aspect the row-normalized
/// user->entity / entity->user mean-aggregation operators for the user
/// hyperedges.
struct AdjacencySet {
  std::map<HyperedgeType, CsrMatrix> similarity;  // sym_normalize(A_tau), N_U x N_U
  std::array<CsrMatrix, 3> n2e;                   // row_normalize(R_us), per aspect
  std::array<CsrMatrix, 3> e2n;                   // row_normalize(R_us^T), per aspect
  std::set<HyperedgeType> enabled;
  std::int64_t n_users = 0;

  bool u_enabled() const { return enabled.count(HyperedgeType::U) > 0; }
};

/// Number of times build_equivalent_adjacencies has run in this process.
/// The trainer asserts the graph is built exactly once per fit.
inline std::atomic<std::int64_t>& adjacency_build_count() {
  static std::atomic<std::int64_t> count{0};
  return count;
}

inline CsrMatrix binary_incidence(const std::vector<Record>& records, std::int64_t n_users,
                                  std::int64_t n_entities, std::int32_t Record::*field) {
  std::vector<std::tuple<std::int64_t, std::int64_t, double>> entries;
  entries.reserve(records.size());
  for (const auto& r : records) entries.emplace_back(r.u, r.*field, 1.0);
  auto m = from_triplets(n_users, n_entities, std::move(entries));
  for (auto& v : m.values) v = 1.0;  // repeated interactions stay binary
  return m;
}

inline IncidenceSet build_incidence(const DatasetBundle& bundle) {
  if (bundle.train.empty()) throw DataError("build_incidence: empty training split");
  IncidenceSet inc;
  inc.r_ul = binary_incidence(bundle.train, bundle.vocab.n_users(), bundle.vocab.n_locations(), &Record::l);
  inc.r_ut = binary_incidence(bundle.train, bundle.vocab.n_users(), bundle.vocab.n_times(), &Record::t);
  inc.r_ua = binary_incidence(bundle.train, bundle.vocab.n_users(), bundle.vocab.n_activities(), &Record::a);
  return inc;
}

/// Builds the equivalent adjacency A_tau = H_tau H_tau^T for every enabled
/// similarity type without materializing combination hyperedges: the base
/// adjacencies come from R R^T products and the pairwise/triple granularities
/// from Hadamard products (multiplication of binary memberships realizes the
/// logical AND of the component similarities). Each A_tau is symmetric-
/// normalized into the propagation operator.
inline AdjacencySet build_equivalent_adjacencies(const IncidenceSet& inc,
                                                 const std::set<HyperedgeType>& enabled) {
  adjacency_build_count().fetch_add(1);
  AdjacencySet adj;
  adj.enabled = enabled;
  adj.n_users = inc.r_ul.n_rows;

  const bool need_l = enabled.count(HyperedgeType::L) || enabled.count(HyperedgeType::LT) ||
                      enabled.count(HyperedgeType::LA) || enabled.count(HyperedgeType::LTA);
  const bool need_t = enabled.count(HyperedgeType::T) || enabled.count(HyperedgeType::LT) ||
                      enabled.count(HyperedgeType::TA) || enabled.count(HyperedgeType::LTA);
  const bool need_a = enabled.count(HyperedgeType::A) || enabled.count(HyperedgeType::LA) ||
                      enabled.count(HyperedgeType::TA) || enabled.count(HyperedgeType::LTA);

  CsrMatrix a_l, a_t, a_a;
  if (need_l) a_l = spgemm(inc.r_ul, transpose(inc.r_ul));
  if (need_t) a_t = spgemm(inc.r_ut, transpose(inc.r_ut));
  if (need_a) a_a = spgemm(inc.r_ua, transpose(inc.r_ua));

  auto emit = [&adj](HyperedgeType type, const CsrMatrix& a) {
    if (adj.enabled.count(type)) adj.similarity.emplace(type, sym_normalize(a));
  };
  emit(HyperedgeType::L, a_l);
  emit(HyperedgeType::T, a_t);
  emit(HyperedgeType::A, a_a);
  if (enabled.count(HyperedgeType::LT)) adj.similarity.emplace(HyperedgeType::LT, sym_normalize(hadamard(a_l, a_t)));
  if (enabled.count(HyperedgeType::LA)) adj.similarity.emplace(HyperedgeType::LA, sym_normalize(hadamard(a_l, a_a)));
  if (enabled.count(HyperedgeType::TA)) adj.similarity.emplace(HyperedgeType::TA, sym_normalize(hadamard(a_t, a_a)));
  if (enabled.count(HyperedgeType::LTA))
    adj.similarity.emplace(HyperedgeType::LTA, sym_normalize(hadamard(hadamard(a_l, a_t), a_a)));

  if (enabled.count(HyperedgeType::U)) {
    for (Aspect s : kAllAspects) {
      const auto& r = inc.for_aspect(s);
      adj.n2e[static_cast<int>(s)] = row_normalize(r);
      adj.e2n[static_cast<int>(s)] = row_normalize(transpose(r));
    }
  }
  return adj;
}

/// Test oracle: enumerates the combination hyperedges of a similarity type
/// one column at a time (a user belongs to combination (l,t,a) iff it visited
/// l, was active at t and performed a) and accumulates H H^T directly.
/// Guarded against large instances; the production path never does this.
inline CsrMatrix oracle_adjacency(const IncidenceSet& inc, HyperedgeType type) {
  if (type == HyperedgeType::U) throw ConfigError("oracle_adjacency: type U has no user-user adjacency");

  std::vector<const CsrMatrix*> parts;
  const bool has_l = type == HyperedgeType::L || type == HyperedgeType::LT ||
                     type == HyperedgeType::LA || type == HyperedgeType::LTA;
  const bool has_t = type == HyperedgeType::T || type == HyperedgeType::LT ||
                     type == HyperedgeType::TA || type == HyperedgeType::LTA;
  const bool has_a = type == HyperedgeType::A || type == HyperedgeType::LA ||
                     type == HyperedgeType::TA || type == HyperedgeType::LTA;
  if (has_l) parts.push_back(&inc.r_ul);
  if (has_t) parts.push_back(&inc.r_ut);
  if (has_a) parts.push_back(&inc.r_ua);

  double n_columns = 1.0;
  for (const auto* p : parts) n_columns *= static_cast<double>(p->n_cols);
  if (n_columns > 1e6) throw DataError("oracle_adjacency: instance too large to enumerate");

  const std::int64_t n_users = inc.r_ul.n_rows;
  // per-part membership lookup: users_of[part][entity] = sorted user list
  std::vector<std::vector<std::vector<std::int32_t>>> users_of(parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& m = *parts[k];
    users_of[k].assign(static_cast<std::size_t>(m.n_cols), {});
    for (std::int64_t u = 0; u < m.n_rows; ++u)
      for (std::int64_t p = m.row_ptr[u]; p < m.row_ptr[u + 1]; ++p)
        users_of[k][m.col_idx[p]].push_back(static_cast<std::int32_t>(u));
  }

  DenseMatrix acc(n_users, n_users);
  std::vector<std::int64_t> combo(parts.size(), 0);
  std::vector<std::int32_t> members;
  for (;;) {
    members = users_of[0][combo[0]];
    for (std::size_t k = 1; k < parts.size() && !members.empty(); ++k) {
      std::vector<std::int32_t> next;
      std::set_intersection(members.begin(), members.end(), users_of[k][combo[k]].begin(),
                            users_of[k][combo[k]].end(), std::back_inserter(next));
      members = std::move(next);
    }
    for (std::int32_t u : members)
      for (std::int32_t v : members) acc.at(u, v) += 1.0;

    // advance the combination counter
    std::size_t k = 0;
    while (k < parts.size()) {
      if (++combo[k] < parts[k]->n_cols) break;
      combo[k] = 0;
      ++k;
    }
    if (k == parts.size()) break;
  }

  std::vector<std::tuple<std::int64_t, std::int64_t, double>> entries;
  for (std::int64_t i = 0; i < n_users; ++i)
    for (std::int64_t j = 0; j < n_users; ++j)
      if (acc.at(i, j) != 0.0) entries.emplace_back(i, j, acc.at(i, j));
  return from_triplets(n_users, n_users, std::move(entries));
}

inline nlohmann::json adjacency_stats(const AdjacencySet& adj) {
  nlohmann::json report = nlohmann::json::object();
  auto degree_histogram = [](const CsrMatrix& m) {
    // buckets: 0, 1-2, 3-8, 9-32, 33-128, >128
    std::array<std::int64_t, 6> buckets{};
    for (std::int64_t i = 0; i < m.n_rows; ++i) {
      const auto d = m.row_nnz(i);
      if (d == 0) ++buckets[0];
      else if (d <= 2) ++buckets[1];
      else if (d <= 8) ++buckets[2];
      else if (d <= 32) ++buckets[3];
      else if (d <= 128) ++buckets[4];
      else ++buckets[5];
    }
    return buckets;
  };
  for (const auto& [type, m] : adj.similarity) {
    nlohmann::json entry;
    entry["nnz"] = m.nnz();
    entry["rows"] = m.n_rows;
    entry["bytes"] = m.memory_bytes();
    entry["degree_histogram"] = degree_histogram(m);
    report[to_string(type)] = entry;
  }
  if (adj.u_enabled()) {
    std::int64_t nnz = 0;
    std::size_t bytes = 0;
    for (int s = 0; s < 3; ++s) {
      nnz += adj.n2e[s].nnz() + adj.e2n[s].nnz();
      bytes += adj.n2e[s].memory_bytes() + adj.e2n[s].memory_bytes();
    }
    nlohmann::json entry;
    entry["nnz"] = nnz;
    entry["rows"] = adj.n_users;
    entry["bytes"] = bytes;
    report["U"] = entry;
  }
  return report;
}

}  // namespace disenhcn
