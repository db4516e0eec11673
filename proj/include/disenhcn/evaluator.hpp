#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <json.hpp>

#include "disenhcn/data.hpp"
#include "disenhcn/errors.hpp"
#include "disenhcn/model.hpp"

namespace disenhcn {

struct MetricsReport {
  double recall_at_k = 0.0;
  double ndcg_at_k = 0.0;
  std::int64_t k = 0;
  std::int64_t n_records = 0;
  std::vector<std::int64_t> per_record_ranks;  // 1-based, optional

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["k"] = k;
    j["recall"] = recall_at_k;
    j["ndcg"] = ndcg_at_k;
    j["n_records"] = n_records;
    return j;
  }
};

/// 1-based rank of the target under descending score order; ties break toward
/// the smaller activity index.
inline std::int64_t rank_of_target(std::span<const double> scores, std::int64_t target) {
  if (target < 0 || target >= static_cast<std::int64_t>(scores.size()))
    throw std::out_of_range("rank_of_target: target out of range");
  const double s = scores[static_cast<std::size_t>(target)];
  std::int64_t rank = 1;
  for (std::int64_t a = 0; a < static_cast<std::int64_t>(scores.size()); ++a) {
    const double v = scores[static_cast<std::size_t>(a)];
    if (v > s || (v == s && a < target)) ++rank;
  }
  return rank;
}

struct EvalOptions {
  bool exclude_train_positives = false;  // mask train-observed activities of the same context
  const ObservedIndex* train_observed = nullptr;
  int threads = 1;
  bool collect_ranks = false;
};

/// Full ranking over all activities per record. Recall@k counts ranks <= k;
/// NDCG@k credits 1/log2(rank+1) (single relevant item, ideal DCG = 1).
inline MetricsReport evaluate(const FinalEmbeddings& emb, const std::vector<Record>& records,
                              std::int64_t k, const EvalOptions& opts = {}) {
  if (records.empty()) throw DataError("evaluate: empty record set");
  if (opts.exclude_train_positives && !opts.train_observed)
    throw ConfigError("evaluate: exclusion requires the train observed index");

  std::vector<std::int64_t> ranks(records.size(), 0);
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = records[i];
      auto scores = score_all_activities(emb, r.u, r.l, r.t);
      if (opts.exclude_train_positives) {
        const auto* acts = opts.train_observed->activities_for(r.u, r.l, r.t);
        if (acts)
          for (auto a : *acts)
            if (a != r.a) scores[static_cast<std::size_t>(a)] = -std::numeric_limits<double>::infinity();
      }
      ranks[i] = rank_of_target(scores, r.a);
    }
  };

  const int n_threads = std::max(1, opts.threads);
  if (n_threads == 1 || records.size() < 64) {
    worker(0, records.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (records.size() + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * chunk;
      if (begin >= records.size()) break;
      pool.emplace_back(worker, begin, std::min(records.size(), begin + chunk));
    }
    for (auto& th : pool) th.join();
  }

  MetricsReport report;
  report.k = k;
  report.n_records = static_cast<std::int64_t>(records.size());
  double recall = 0.0, ndcg = 0.0;
  for (auto rank : ranks) {
    if (rank <= k) {
      recall += 1.0;
      ndcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  report.recall_at_k = recall / static_cast<double>(records.size());
  report.ndcg_at_k = ndcg / static_cast<double>(records.size());
  if (opts.collect_ranks) report.per_record_ranks = std::move(ranks);
  return report;
}

/// Ranks every test record's activities by train frequency (ties toward the
/// smaller index) through the same metric code. Sanity baseline.
inline MetricsReport popularity_baseline(const DatasetBundle& bundle, std::int64_t k,
                                         const EvalOptions& opts = {}) {
  if (bundle.train.empty()) throw DataError("popularity_baseline: empty training split");
  std::vector<double> counts(static_cast<std::size_t>(bundle.vocab.n_activities()), 0.0);
  for (const auto& r : bundle.train) counts[static_cast<std::size_t>(r.a)] += 1.0;

  MetricsReport report;
  report.k = k;
  report.n_records = static_cast<std::int64_t>(bundle.test.size());
  if (bundle.test.empty()) return report;
  double recall = 0.0, ndcg = 0.0;
  std::vector<std::int64_t> ranks;
  for (const auto& r : bundle.test) {
    const auto rank = rank_of_target(counts, r.a);
    if (rank <= k) {
      recall += 1.0;
      ndcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
    if (opts.collect_ranks) ranks.push_back(rank);
  }
  report.recall_at_k = recall / static_cast<double>(bundle.test.size());
  report.ndcg_at_k = ndcg / static_cast<double>(bundle.test.size());
  report.per_record_ranks = std::move(ranks);
  return report;
}

}  // namespace disenhcn
