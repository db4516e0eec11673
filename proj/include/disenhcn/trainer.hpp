#pragma once

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "disenhcn/evaluator.hpp"
#include "disenhcn/loss.hpp"
#include "disenhcn/model.hpp"

namespace disenhcn {

enum class LrSchedule { Step, Milestones };

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::int64_t lr_decay_every = 20;
  // default: milestone schedule; the step schedule (decay 0.1 every 20
  // epochs) is available as lr_schedule=step but freezes optimization after
  // ~40 epochs, too early for small corpora
  LrSchedule lr_schedule = LrSchedule::Milestones;
  std::vector<std::int64_t> lr_milestones{50, 100, 200, 400};
  double lr_milestone_decay = 0.5;
  std::int64_t epochs = 500;
  std::int64_t patience = 20;
  std::int64_t batch_size = 2048;
  std::int64_t negatives_per_positive = 1;
  double lambda = 3e-5;
  double gamma = 3e-3;
  std::uint64_t seed = 2024;
  std::int64_t eval_k = 10;
  L2Scope l2_scope = L2Scope::Touched;

  void validate() const {
    if (lr <= 0) throw ConfigError("lr must be positive");
    if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("lr_decay must be in (0, 1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (negatives_per_positive < 1) throw ConfigError("negatives_per_positive must be >= 1");
    if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
  }

  /// Effective learning rate for a 0-based epoch index.
  double lr_at_epoch(std::int64_t epoch) const {
    if (lr_schedule == LrSchedule::Step)
      return lr * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_every));
    double factor = 1.0;
    for (auto m : lr_milestones)
      if (m <= epoch) factor *= lr_milestone_decay;
    return lr * factor;
  }
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<DenseMatrix> m, v;  // aligned with ParameterSet::named_tables()
  std::int64_t step = 0;

  static AdamState like(ParameterSet& params) {
    AdamState state;
    for (auto ref : params.named_tables()) {
      state.m.emplace_back(ref.table->n_rows, ref.table->n_cols);
      state.v.emplace_back(ref.table->n_rows, ref.table->n_cols);
    }
    return state;
  }
};

/// Canonical bias-corrected Adam update over the named parameter tables.
inline void adam_step(ParameterSet& params, const std::vector<DenseMatrix>& grads, AdamState& state,
                      double lr) {
  auto refs = params.named_tables();
  if (grads.size() != refs.size() || state.m.size() != refs.size())
    throw std::logic_error("adam_step: table count mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < refs.size(); ++k) {
    DenseMatrix& p = *refs[k].table;
    const DenseMatrix& g = grads[k];
    if (!g.same_shape(p)) throw std::logic_error("adam_step: gradient shape mismatch for " + refs[k].name);
    if (!g.all_finite()) throw DataError("adam_step: non-finite gradient in " + refs[k].name);
    DenseMatrix& m = state.m[k];
    DenseMatrix& v = state.v[k];
    for (std::int64_t i = 0; i < p.size(); ++i) {
      m.data[i] = AdamState::kBeta1 * m.data[i] + (1.0 - AdamState::kBeta1) * g.data[i];
      v.data[i] = AdamState::kBeta2 * v.data[i] + (1.0 - AdamState::kBeta2) * g.data[i] * g.data[i];
      const double m_hat = m.data[i] / bc1;
      const double v_hat = v.data[i] / bc2;
      p.data[i] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEps);
    }
  }
}

/// Shuffles the train split and pairs every positive with fresh negatives.
/// Batches hold batch_size positives (the last may be short); with k
/// negatives per positive a batch carries batch_size * k rows.
inline std::vector<PairwiseBatch> sample_epoch_batches(const DatasetBundle& bundle,
                                                       const TrainConfig& cfg, Rng& rng) {
  if (bundle.train.empty()) throw DataError("sample_epoch_batches: empty training split");
  std::vector<std::size_t> order(bundle.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<PairwiseBatch> batches;
  PairwiseBatch current;
  std::int64_t positives_in_batch = 0;
  auto flush = [&]() {
    if (current.size() == 0) return;
    current.finalize_unique_users();
    batches.push_back(std::move(current));
    current = PairwiseBatch{};
    positives_in_batch = 0;
  };
  for (std::size_t idx : order) {
    const Record& r = bundle.train[idx];
    for (std::int64_t k = 0; k < cfg.negatives_per_positive; ++k) {
      const auto neg = sample_negative(bundle, r.u, r.l, r.t, rng);
      current.users.push_back(r.u);
      current.locations.push_back(r.l);
      current.times.push_back(r.t);
      current.positives.push_back(r.a);
      current.negatives.push_back(neg);
    }
    if (++positives_in_batch == cfg.batch_size) flush();
  }
  flush();
  return batches;
}

// -- checkpoints --------------------------------------------------------------

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  ModelConfig model;
  std::array<std::uint64_t, 4> vocab_hashes{};
  ParameterSet params;
  AdamState adam;
  std::int64_t epoch = -1;  // last completed 0-based epoch
  double best_val_recall = 0.0;
  double best_val_ndcg = 0.0;
};

inline std::array<std::uint64_t, 4> vocab_hashes_of(const Vocab& vocab) {
  return {vocab.hash(Vocab::kUser), vocab.hash(Vocab::kLocation), vocab.hash(Vocab::kTime),
          vocab.hash(Vocab::kActivity)};
}

namespace detail {
inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}
inline std::uint64_t from_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }
}  // namespace detail

/// Binary container: magic "DHCN", little-endian u32 version, u64 header
/// length, JSON header, then raw 64-bit float payloads in header table order.
inline void save_checkpoint(Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["model"]["d"] = ckpt.model.d;
  header["model"]["layers"] = ckpt.model.layers;
  std::vector<std::string> types;
  for (auto t : kAllHyperedgeTypes)
    if (ckpt.model.enabled_types.count(t)) types.push_back(to_string(t));
  header["model"]["enabled_types"] = types;
  header["model"]["fusion"] = to_string(ckpt.model.fusion);
  header["model"]["conv"] = to_string(ckpt.model.conv);
  header["vocab_hashes"] = {detail::hex64(ckpt.vocab_hashes[0]), detail::hex64(ckpt.vocab_hashes[1]),
                            detail::hex64(ckpt.vocab_hashes[2]), detail::hex64(ckpt.vocab_hashes[3])};
  header["epoch"] = ckpt.epoch;
  header["adam_step"] = ckpt.adam.step;
  header["best_val_recall"] = ckpt.best_val_recall;
  header["best_val_ndcg"] = ckpt.best_val_ndcg;

  auto refs = ckpt.params.named_tables();
  std::vector<const DenseMatrix*> payload;
  nlohmann::json tables = nlohmann::json::array();
  auto add_table = [&](const std::string& name, const DenseMatrix& m) {
    nlohmann::json t;
    t["name"] = name;
    t["rows"] = m.n_rows;
    t["cols"] = m.n_cols;
    tables.push_back(t);
    payload.push_back(&m);
  };
  for (std::size_t k = 0; k < refs.size(); ++k) add_table(refs[k].name, *refs[k].table);
  for (std::size_t k = 0; k < refs.size(); ++k) add_table("adam.m." + refs[k].name, ckpt.adam.m[k]);
  for (std::size_t k = 0; k < refs.size(); ++k) add_table("adam.v." + refs[k].name, ckpt.adam.v[k]);
  header["tables"] = tables;

  const std::string header_bytes = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write("DHCN", 4);
  const std::uint32_t version = Checkpoint::kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t header_len = header_bytes.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const DenseMatrix* m : payload)
    out.write(reinterpret_cast<const char*>(m->data.data()),
              static_cast<std::streamsize>(m->data.size() * sizeof(double)));
  if (!out) throw DataError("short write to checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DHCN", 4) != 0)
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof(version)) || version != Checkpoint::kVersion)
    throw DataError("unsupported checkpoint version in " + path.string());
  std::uint64_t header_len = 0;
  if (!in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len)) || header_len > (1u << 26))
    throw DataError("corrupt checkpoint header length in " + path.string());
  std::string header_bytes(header_len, '\0');
  if (!in.read(header_bytes.data(), static_cast<std::streamsize>(header_len)))
    throw DataError("truncated checkpoint header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  ckpt.model.d = header.at("model").at("d").get<std::int64_t>();
  ckpt.model.layers = header.at("model").at("layers").get<std::int64_t>();
  ckpt.model.enabled_types.clear();
  for (const auto& t : header.at("model").at("enabled_types"))
    ckpt.model.enabled_types.insert(hyperedge_type_from_string(t.get<std::string>()));
  ckpt.model.fusion = fusion_from_string(header.at("model").at("fusion").get<std::string>());
  ckpt.model.conv = conv_from_string(header.at("model").at("conv").get<std::string>());
  for (int i = 0; i < 4; ++i)
    ckpt.vocab_hashes[i] = detail::from_hex64(header.at("vocab_hashes").at(i).get<std::string>());
  ckpt.epoch = header.at("epoch").get<std::int64_t>();
  ckpt.adam.step = header.at("adam_step").get<std::int64_t>();
  ckpt.best_val_recall = header.at("best_val_recall").get<double>();
  ckpt.best_val_ndcg = header.at("best_val_ndcg").get<double>();

  std::map<std::string, DenseMatrix> loaded;
  for (const auto& t : header.at("tables")) {
    DenseMatrix m(t.at("rows").get<std::int64_t>(), t.at("cols").get<std::int64_t>());
    if (!in.read(reinterpret_cast<char*>(m.data.data()),
                 static_cast<std::streamsize>(m.data.size() * sizeof(double))))
      throw DataError("truncated checkpoint payload at table " + t.at("name").get<std::string>());
    loaded.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  in.peek();
  if (!in.eof()) throw DataError("trailing bytes after checkpoint payload in " + path.string());

  // rebuild parameter tables in declared shapes
  auto take = [&loaded](const std::string& name) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw DataError("checkpoint missing table: " + name);
    DenseMatrix m = std::move(it->second);
    loaded.erase(it);
    return m;
  };
  ckpt.params.p0 = take("p0");
  ckpt.params.q0 = take("q0");
  ckpt.params.r0 = take("r0");
  ckpt.params.s0 = take("s0");
  for (int s = 0; s < 3; ++s) {
    const std::string aspect = to_string(static_cast<Aspect>(s));
    ckpt.params.w_att[s] = take("w_att." + aspect);
    ckpt.params.b_att[s] = take("b_att." + aspect);
    ckpt.params.a_att[s] = take("a_att." + aspect);
  }
  if (ckpt.model.conv == ConvMode::HGConvLinearized)
    for (auto type : kAllHyperedgeTypes)
      if (ckpt.model.enabled_types.count(type))
        ckpt.params.w_conv.emplace(type, take(std::string("w_conv.") + to_string(type)));
  auto refs = ckpt.params.named_tables();
  for (const auto& ref : refs) ckpt.adam.m.push_back(take("adam.m." + ref.name));
  for (const auto& ref : refs) ckpt.adam.v.push_back(take("adam.v." + ref.name));
  if (!loaded.empty()) throw DataError("checkpoint holds unexpected table: " + loaded.begin()->first);
  return ckpt;
}

// -- fit ----------------------------------------------------------------------

struct EpochLog {
  std::int64_t epoch = 0;  // 0-based
  double bpr = 0.0, l2 = 0.0, independence = 0.0, total = 0.0;
  double val_recall = 0.0, val_ndcg = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string csv = "epoch,bpr,l2,ind,total,val_recall10,val_ndcg10,lr,seconds\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n",
                  static_cast<long long>(row.epoch), row.bpr, row.l2, row.independence, row.total,
                  row.val_recall, row.val_ndcg, row.lr, row.seconds);
    csv += buf;
  }
  return csv;
}

struct FitResult {
  Checkpoint best;  // highest validation recall
  Checkpoint last;  // final state, resumable
  std::vector<EpochLog> log;
};

/// Full training loop: adjacency built once up front, per-epoch seeded
/// shuffling and negative resampling, Adam updates, per-epoch validation,
/// early stopping when neither validation metric improves for `patience`
/// epochs. Resuming from a checkpoint replays exactly the remaining epochs of
/// an uninterrupted run (per-epoch sampling streams are derived from the seed
/// and the epoch index, not carried state).
inline FitResult fit(const DatasetBundle& bundle, const ModelConfig& model_cfg,
                     const TrainConfig& train_cfg, const Checkpoint* resume = nullptr) {
  model_cfg.validate();
  train_cfg.validate();

  auto inc = build_incidence(bundle);
  auto adj = build_equivalent_adjacencies(inc, model_cfg.enabled_types);
  GraphContext ctx(adj);

  FitResult result;
  ParameterSet params;
  AdamState adam;
  std::int64_t start_epoch = 0;
  double best_recall = -1.0, best_ndcg = -1.0;
  if (resume) {
    if (resume->vocab_hashes != vocab_hashes_of(bundle.vocab))
      throw DataError("resume: checkpoint vocabulary does not match the bundle");
    params = resume->params;
    adam = resume->adam;
    start_epoch = resume->epoch + 1;
    best_recall = resume->best_val_recall;
    best_ndcg = resume->best_val_ndcg;
  } else {
    Rng init_rng(train_cfg.seed);
    params = init_params(model_cfg, bundle.vocab, init_rng);
    adam = AdamState::like(params);
  }

  auto snapshot = [&](std::int64_t epoch) {
    Checkpoint ckpt;
    ckpt.model = model_cfg;
    ckpt.vocab_hashes = vocab_hashes_of(bundle.vocab);
    ckpt.params = params;
    ckpt.adam = adam;
    ckpt.epoch = epoch;
    ckpt.best_val_recall = best_recall;
    ckpt.best_val_ndcg = best_ndcg;
    return ckpt;
  };

  result.best = snapshot(start_epoch - 1);
  std::int64_t epochs_since_improvement = 0;

  for (std::int64_t epoch = start_epoch; epoch < train_cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = train_cfg.lr_at_epoch(epoch);
    Rng epoch_rng = Rng::fork(train_cfg.seed, static_cast<std::uint64_t>(epoch));
    auto batches = sample_epoch_batches(bundle, train_cfg, epoch_rng);

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    std::int64_t total_rows = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      ad::Tape tape;
      auto pn = make_parameter_nodes(tape, params, /*needs_grad=*/true);
      auto fwd = forward(tape, pn, ctx, model_cfg);
      auto nodes =
          total_loss(tape, pn, fwd, batch, train_cfg.lambda, train_cfg.gamma, train_cfg.l2_scope);
      const auto values = nodes.values();
      if (!std::isfinite(values.total))
        throw DataError("fit: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                        std::to_string(b));
      tape.backward(nodes.total);

      std::vector<DenseMatrix> grads;
      std::vector<ad::Node*> leaves{pn.p0, pn.q0, pn.r0, pn.s0};
      for (int s = 0; s < 3; ++s) {
        leaves.push_back(pn.w_att[s]);
        leaves.push_back(pn.b_att[s]);
        leaves.push_back(pn.a_att[s]);
      }
      for (auto& [type, node] : pn.w_conv) leaves.push_back(node);
      for (ad::Node* leaf : leaves)
        grads.push_back(leaf->grad.n_rows ? leaf->grad
                                          : DenseMatrix(leaf->value.n_rows, leaf->value.n_cols));
      adam_step(params, grads, adam, lr);

      const auto n = static_cast<std::int64_t>(batch.size());
      row.bpr += values.bpr * static_cast<double>(n);
      row.l2 += values.l2 * static_cast<double>(n);
      row.independence += values.independence * static_cast<double>(n);
      row.total += values.total * static_cast<double>(n);
      total_rows += n;
    }
    row.bpr /= static_cast<double>(total_rows);
    row.l2 /= static_cast<double>(total_rows);
    row.independence /= static_cast<double>(total_rows);
    row.total /= static_cast<double>(total_rows);

    if (!bundle.valid.empty()) {
      auto emb = compute_final_embeddings(params, ctx, model_cfg);
      auto metrics = evaluate(emb, bundle.valid, train_cfg.eval_k);
      row.val_recall = metrics.recall_at_k;
      row.val_ndcg = metrics.ndcg_at_k;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool recall_improved = row.val_recall > best_recall;
    const bool ndcg_improved = row.val_ndcg > best_ndcg;
    if (recall_improved) best_recall = row.val_recall;
    if (ndcg_improved) best_ndcg = row.val_ndcg;
    if (recall_improved) result.best = snapshot(epoch);
    if (recall_improved || ndcg_improved)
      epochs_since_improvement = 0;
    else
      ++epochs_since_improvement;

    result.log.push_back(row);
    if (!bundle.valid.empty() && epochs_since_improvement >= train_cfg.patience) {
      result.last = snapshot(epoch);
      return result;
    }
  }
  result.last = snapshot(result.log.empty() ? start_epoch - 1 : result.log.back().epoch);
  if (bundle.valid.empty()) result.best = result.last;
  return result;
}

}  // namespace disenhcn
