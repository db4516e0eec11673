#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "disenhcn/evaluator.hpp"
#include "disenhcn/run_config.hpp"
#include "disenhcn/synth.hpp"
#include "disenhcn/trainer.hpp"
#include "disenhcn/verify.hpp"

namespace disenhcn {

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

/// synth: emit a synthetic quadruple CSV.
inline void cmd_synth(const SynthSpec& spec, const std::filesystem::path& out_path) {
  write_text_file(out_path, records_to_csv(generate_synthetic(spec)));
}

struct PrepareSummary {
  std::int64_t n_users = 0, n_locations = 0, n_times = 0, n_activities = 0, n_records = 0;

  std::string table() const {
    std::ostringstream os;
    os << "#User #Location #Time #Activity #Records\n"
       << n_users << " " << n_locations << " " << n_times << " " << n_activities << " " << n_records
       << "\n";
    return os.str();
  }
};

/// prepare: ingest -> filter -> vocab -> encode -> dedup -> split -> save.
inline PrepareSummary cmd_prepare(const std::filesystem::path& input_csv,
                                  const std::filesystem::path& out_dir, const RunConfig& cfg) {
  auto raw = ingest_csv(input_csv);
  raw = apply_filters(std::move(raw), cfg.filter);
  if (raw.empty()) throw DataError("prepare: no records left after filtering");
  auto vocab = build_vocab(raw);
  auto encoded = dedup_records(encode(raw, vocab), vocab);
  auto bundle = split(std::move(encoded), std::move(vocab), cfg.split, cfg.train.seed);
  save_bundle(bundle, out_dir);

  PrepareSummary summary;
  summary.n_users = bundle.vocab.n_users();
  summary.n_locations = bundle.vocab.n_locations();
  summary.n_times = bundle.vocab.n_times();
  summary.n_activities = bundle.vocab.n_activities();
  summary.n_records =
      static_cast<std::int64_t>(bundle.train.size() + bundle.valid.size() + bundle.test.size());
  return summary;
}

/// train: fit on a bundle directory, write best.ckpt, last.ckpt and the log.
inline FitResult cmd_train(const std::filesystem::path& bundle_dir,
                           const std::filesystem::path& out_dir, const RunConfig& cfg,
                           const std::filesystem::path& resume_path = {}) {
  auto bundle = load_bundle(bundle_dir);
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  auto result = fit(bundle, cfg.model, cfg.train, resume ? &*resume : nullptr);
  std::filesystem::create_directories(out_dir);
  save_checkpoint(result.best, out_dir / "best.ckpt");
  save_checkpoint(result.last, out_dir / "last.ckpt");
  write_text_file(out_dir / "train_log.csv", training_log_csv(result.log));
  return result;
}

inline void require_matching_vocab(const Checkpoint& ckpt, const DatasetBundle& bundle) {
  if (ckpt.vocab_hashes != vocab_hashes_of(bundle.vocab))
    throw DataError("checkpoint vocabulary does not match the bundle");
}

/// evaluate: rebuild the graph from the train split, embed once, rank the
/// test split.
inline MetricsReport cmd_evaluate(const std::filesystem::path& ckpt_path,
                                  const std::filesystem::path& bundle_dir, std::int64_t k,
                                  const RunConfig& cfg,
                                  const std::filesystem::path& ranks_csv = {}) {
  auto ckpt = load_checkpoint(ckpt_path);
  auto bundle = load_bundle(bundle_dir);
  require_matching_vocab(ckpt, bundle);

  auto inc = build_incidence(bundle);
  auto adj = build_equivalent_adjacencies(inc, ckpt.model.enabled_types);
  GraphContext ctx(adj);
  auto emb = compute_final_embeddings(ckpt.params, ctx, ckpt.model);

  EvalOptions opts;
  opts.threads = cfg.threads;
  opts.collect_ranks = !ranks_csv.empty();
  ObservedIndex train_observed;
  if (cfg.eval_exclude_train) {
    train_observed.build({&bundle.train}, std::max<std::int64_t>(bundle.vocab.n_locations(), 1),
                         std::max<std::int64_t>(bundle.vocab.n_times(), 1));
    opts.exclude_train_positives = true;
    opts.train_observed = &train_observed;
  }
  auto report = evaluate(emb, bundle.test, k, opts);
  if (!ranks_csv.empty()) {
    std::string csv = "record,rank\n";
    for (std::size_t i = 0; i < report.per_record_ranks.size(); ++i)
      csv += std::to_string(i) + "," + std::to_string(report.per_record_ranks[i]) + "\n";
    write_text_file(ranks_csv, csv);
  }
  return report;
}

struct Prediction {
  std::string activity;
  double score = 0.0;
};

/// predict: top-k activities for a raw (user, location, time) context.
inline std::vector<Prediction> cmd_predict(const std::filesystem::path& ckpt_path,
                                           const std::filesystem::path& bundle_dir,
                                           const std::string& user, const std::string& location,
                                           const std::string& time, std::int64_t k) {
  auto ckpt = load_checkpoint(ckpt_path);
  auto bundle = load_bundle(bundle_dir);
  require_matching_vocab(ckpt, bundle);
  const auto u = bundle.vocab.encode(Vocab::kUser, user);
  const auto l = bundle.vocab.encode(Vocab::kLocation, location);
  const auto t = bundle.vocab.encode(Vocab::kTime, time);

  auto inc = build_incidence(bundle);
  auto adj = build_equivalent_adjacencies(inc, ckpt.model.enabled_types);
  GraphContext ctx(adj);
  auto emb = compute_final_embeddings(ckpt.params, ctx, ckpt.model);
  auto scores = score_all_activities(emb, u, l, t);

  std::vector<std::int64_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  const auto top = std::min<std::int64_t>(k, static_cast<std::int64_t>(order.size()));
  std::vector<Prediction> out;
  for (std::int64_t i = 0; i < top; ++i)
    out.push_back({bundle.vocab.decode(Vocab::kActivity, static_cast<std::int32_t>(order[i])),
                   scores[order[i]]});
  return out;
}

struct InspectOutput {
  nlohmann::json adjacency;
  std::string attention_csv;
};

/// inspect: adjacency statistics plus the attention weight distribution.
inline InspectOutput cmd_inspect(const std::filesystem::path& ckpt_path,
                                 const std::filesystem::path& bundle_dir) {
  auto ckpt = load_checkpoint(ckpt_path);
  auto bundle = load_bundle(bundle_dir);
  require_matching_vocab(ckpt, bundle);
  auto inc = build_incidence(bundle);
  auto adj = build_equivalent_adjacencies(inc, ckpt.model.enabled_types);
  GraphContext ctx(adj);

  InspectOutput out;
  out.adjacency = adjacency_stats(adj);
  if (ckpt.model.fusion == FusionMode::Attention) {
    ad::Tape tape;
    auto pn = make_parameter_nodes(tape, ckpt.params, false);
    auto fwd = forward(tape, pn, ctx, ckpt.model);
    out.attention_csv = attention_report_csv(attention_report(fwd, ckpt.model));
  }
  return out;
}

/// gradcheck: finite-difference verification on the fixed tiny instance.
inline ad::GradCheckReport cmd_gradcheck(const GradCheckSetup& setup = {}) {
  return run_model_gradcheck(setup);
}

}  // namespace disenhcn
