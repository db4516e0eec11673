#include "disenhcn/evaluator.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace disenhcn;
using testutil::random_dense;

namespace {

// Embeddings whose activity scores for user 0 at (l0, t0) are exactly `scores`
// (single-dim activity chunk, unit user chunk).
FinalEmbeddings embeddings_with_scores(const std::vector<double>& scores) {
  FinalEmbeddings emb;
  emb.user_chunks[0] = DenseMatrix(1, 1);
  emb.user_chunks[1] = DenseMatrix(1, 1);
  emb.user_chunks[2] = DenseMatrix(1, 1, 1.0);
  emb.locations = DenseMatrix(1, 1);
  emb.times = DenseMatrix(1, 1);
  emb.activities = DenseMatrix(static_cast<std::int64_t>(scores.size()), 1);
  for (std::size_t a = 0; a < scores.size(); ++a) emb.activities.at(a, 0) = scores[a];
  return emb;
}

}  // namespace

TEST(RankOfTarget, UniqueMaxAndTies) {
  std::vector<double> scores = {0.1, 0.9, 0.3};
  EXPECT_EQ(rank_of_target(scores, 1), 1);
  EXPECT_EQ(rank_of_target(scores, 2), 2);
  EXPECT_EQ(rank_of_target(scores, 0), 3);

  std::vector<double> equal(6, 1.0);
  EXPECT_EQ(rank_of_target(equal, 0), 1);  // tie-break toward smaller index
  EXPECT_EQ(rank_of_target(equal, 4), 5);

  EXPECT_THROW(rank_of_target(scores, 3), std::out_of_range);
}

TEST(Evaluate, SingleRecordRankCases) {
  // target rank 1 -> recall 1, ndcg 1
  auto emb = embeddings_with_scores({5.0, 1.0, 0.0, -1.0});
  auto top = evaluate(emb, {{0, 0, 0, 0}}, 10);
  EXPECT_DOUBLE_EQ(top.recall_at_k, 1.0);
  EXPECT_DOUBLE_EQ(top.ndcg_at_k, 1.0);

  // target rank 3 -> ndcg = 1/log2(4) = 0.5
  auto third = evaluate(embeddings_with_scores({5.0, 4.0, 3.0, 0.0}), {{0, 0, 0, 2}}, 10);
  EXPECT_DOUBLE_EQ(third.recall_at_k, 1.0);
  EXPECT_DOUBLE_EQ(third.ndcg_at_k, 0.5);

  // target just outside the window -> both zero
  auto outside = evaluate(embeddings_with_scores({5.0, 4.0, 3.0, 0.0}), {{0, 0, 0, 3}}, 3);
  EXPECT_DOUBLE_EQ(outside.recall_at_k, 0.0);
  EXPECT_DOUBLE_EQ(outside.ndcg_at_k, 0.0);

  EXPECT_THROW(evaluate(emb, {}, 10), DataError);
}

TEST(Evaluate, MonotoneInKAndNdcgBelowRecall) {
  Rng rng(101);
  FinalEmbeddings emb;
  const int nu = 5, nl = 4, nt = 3, na = 20, c = 3;
  for (int s = 0; s < 3; ++s) emb.user_chunks[s] = random_dense(rng, nu, c);
  emb.locations = random_dense(rng, nl, c);
  emb.times = random_dense(rng, nt, c);
  emb.activities = random_dense(rng, na, c);

  std::vector<Record> records;
  for (int i = 0; i < 40; ++i)
    records.push_back({static_cast<std::int32_t>(rng.uniform_below(nu)),
                       static_cast<std::int32_t>(rng.uniform_below(nl)),
                       static_cast<std::int32_t>(rng.uniform_below(nt)),
                       static_cast<std::int32_t>(rng.uniform_below(na))});

  double prev_recall = 0.0, prev_ndcg = 0.0;
  for (std::int64_t k = 1; k <= na; ++k) {
    auto rep = evaluate(emb, records, k);
    EXPECT_GE(rep.recall_at_k, prev_recall);
    EXPECT_GE(rep.ndcg_at_k, prev_ndcg);
    EXPECT_LE(rep.ndcg_at_k, rep.recall_at_k + 1e-15);
    prev_recall = rep.recall_at_k;
    prev_ndcg = rep.ndcg_at_k;
  }
}

TEST(Evaluate, OrderIndependentAndShiftInvariant) {
  Rng rng(103);
  FinalEmbeddings emb;
  const int c = 4;
  for (int s = 0; s < 3; ++s) emb.user_chunks[s] = random_dense(rng, 4, c);
  emb.locations = random_dense(rng, 3, c);
  emb.times = random_dense(rng, 2, c);
  emb.activities = random_dense(rng, 12, c);

  std::vector<Record> records;
  for (int i = 0; i < 25; ++i)
    records.push_back({static_cast<std::int32_t>(rng.uniform_below(4)),
                       static_cast<std::int32_t>(rng.uniform_below(3)),
                       static_cast<std::int32_t>(rng.uniform_below(2)),
                       static_cast<std::int32_t>(rng.uniform_below(12))});
  auto forward_order = evaluate(emb, records, 5);
  std::reverse(records.begin(), records.end());
  auto reverse_order = evaluate(emb, records, 5);
  EXPECT_DOUBLE_EQ(forward_order.recall_at_k, reverse_order.recall_at_k);
  EXPECT_DOUBLE_EQ(forward_order.ndcg_at_k, reverse_order.ndcg_at_k);

  // per-record ranks are invariant to the context offset: zeroing the
  // location/time chunks shifts every activity score equally
  EvalOptions with_ranks;
  with_ranks.collect_ranks = true;
  auto base = evaluate(emb, records, 5, with_ranks);
  FinalEmbeddings no_context = emb;
  no_context.user_chunks[0].fill(0.0);
  no_context.user_chunks[1].fill(0.0);
  auto shifted = evaluate(no_context, records, 5, with_ranks);
  EXPECT_EQ(base.per_record_ranks, shifted.per_record_ranks);
}

TEST(Evaluate, ThreadedMatchesSingleThreaded) {
  Rng rng(105);
  FinalEmbeddings emb;
  const int c = 4;
  for (int s = 0; s < 3; ++s) emb.user_chunks[s] = random_dense(rng, 6, c);
  emb.locations = random_dense(rng, 4, c);
  emb.times = random_dense(rng, 3, c);
  emb.activities = random_dense(rng, 30, c);
  std::vector<Record> records;
  for (int i = 0; i < 300; ++i)
    records.push_back({static_cast<std::int32_t>(rng.uniform_below(6)),
                       static_cast<std::int32_t>(rng.uniform_below(4)),
                       static_cast<std::int32_t>(rng.uniform_below(3)),
                       static_cast<std::int32_t>(rng.uniform_below(30))});
  EvalOptions threaded;
  threaded.threads = 4;
  auto a = evaluate(emb, records, 10);
  auto b = evaluate(emb, records, 10, threaded);
  EXPECT_DOUBLE_EQ(a.recall_at_k, b.recall_at_k);
  EXPECT_DOUBLE_EQ(a.ndcg_at_k, b.ndcg_at_k);
}

TEST(Evaluate, ExclusionMasksTrainPositives) {
  // two activities: train observed a0 for the context, test target a1 scored
  // lower; with exclusion the competitor vanishes and the target ranks first
  DatasetBundle bundle;
  bundle.vocab.intern(Vocab::kUser, "u0");
  bundle.vocab.intern(Vocab::kLocation, "l0");
  bundle.vocab.intern(Vocab::kTime, "t0");
  bundle.vocab.intern(Vocab::kActivity, "a0");
  bundle.vocab.intern(Vocab::kActivity, "a1");
  bundle.train = {{0, 0, 0, 0}};
  bundle.rebuild_observed();

  auto emb = embeddings_with_scores({2.0, 1.0});
  std::vector<Record> test = {{0, 0, 0, 1}};
  auto plain = evaluate(emb, test, 1);
  EXPECT_DOUBLE_EQ(plain.recall_at_k, 0.0);

  ObservedIndex train_only;
  train_only.build({&bundle.train}, 1, 1);
  EvalOptions opts;
  opts.exclude_train_positives = true;
  opts.train_observed = &train_only;
  auto masked = evaluate(emb, test, 1, opts);
  EXPECT_DOUBLE_EQ(masked.recall_at_k, 1.0);
}

TEST(PopularityBaseline, FrequencyRanking) {
  DatasetBundle bundle;
  bundle.vocab.intern(Vocab::kUser, "u0");
  bundle.vocab.intern(Vocab::kLocation, "l0");
  bundle.vocab.intern(Vocab::kTime, "t0");
  for (int i = 0; i < 4; ++i) bundle.vocab.intern(Vocab::kActivity, "a" + std::to_string(i));
  // all train mass on activity 0
  for (int i = 0; i < 5; ++i) bundle.train.push_back({0, 0, 0, 0});
  bundle.test = {{0, 0, 0, 0}, {0, 0, 0, 0}};
  bundle.rebuild_observed();
  auto all_hit = popularity_baseline(bundle, 1);
  EXPECT_DOUBLE_EQ(all_hit.recall_at_k, 1.0);
  EXPECT_DOUBLE_EQ(all_hit.ndcg_at_k, 1.0);

  // uniform counts: ranking equals index order via tie-break
  DatasetBundle uniform;
  uniform.vocab = bundle.vocab;
  for (int a = 0; a < 4; ++a) uniform.train.push_back({0, 0, 0, a});
  uniform.test = {{0, 0, 0, 2}};
  uniform.rebuild_observed();
  EvalOptions opts;
  opts.collect_ranks = true;
  auto rep = popularity_baseline(uniform, 2, opts);
  ASSERT_EQ(rep.per_record_ranks.size(), 1u);
  EXPECT_EQ(rep.per_record_ranks[0], 3);
  EXPECT_GE(rep.recall_at_k, 0.0);
  EXPECT_LE(rep.recall_at_k, 1.0);
}

TEST(MetricsReport, JsonShape) {
  MetricsReport rep;
  rep.k = 10;
  rep.recall_at_k = 0.5;
  rep.ndcg_at_k = 0.25;
  rep.n_records = 7;
  auto j = rep.to_json();
  EXPECT_EQ(j["k"], 10);
  EXPECT_EQ(j["n_records"], 7);
  EXPECT_DOUBLE_EQ(j["recall"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["ndcg"].get<double>(), 0.25);
}
