#include "disenhcn/commands.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "disenhcn/run_config.hpp"
#include "disenhcn/synth.hpp"

using namespace disenhcn;
namespace fs = std::filesystem;

TEST(RunConfig, PaperDefaults) {
  RunConfig cfg;
  EXPECT_EQ(cfg.model.d, 120);
  EXPECT_EQ(cfg.model.layers, 1);
  EXPECT_EQ(cfg.model.enabled_types.size(), 8u);
  EXPECT_EQ(cfg.model.fusion, FusionMode::Attention);
  EXPECT_EQ(cfg.model.conv, ConvMode::EffHGConv);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 1e-3);
  EXPECT_EQ(cfg.train.lr_schedule, LrSchedule::Milestones);
  EXPECT_EQ(cfg.train.lr_milestones, (std::vector<std::int64_t>{50, 100, 200, 400}));
  EXPECT_DOUBLE_EQ(cfg.train.lr_milestone_decay, 0.5);
  EXPECT_DOUBLE_EQ(cfg.train.lr_decay, 0.1);
  EXPECT_EQ(cfg.train.lr_decay_every, 20);
  EXPECT_EQ(cfg.train.epochs, 500);
  EXPECT_EQ(cfg.train.patience, 20);
  EXPECT_EQ(cfg.train.batch_size, 2048);
  EXPECT_DOUBLE_EQ(cfg.train.lambda, 3e-5);
  EXPECT_DOUBLE_EQ(cfg.train.gamma, 3e-3);
  EXPECT_EQ(cfg.train.eval_k, 10);
}

TEST(RunConfig, OverridesAndUnknownKeys) {
  RunConfig cfg;
  cfg.apply_overrides({"gamma=0", "enabled_types=L,T,A,U", "fusion=mean", "epochs=7"});
  EXPECT_DOUBLE_EQ(cfg.train.gamma, 0.0);
  EXPECT_EQ(cfg.model.enabled_types.size(), 4u);
  EXPECT_TRUE(cfg.model.enabled_types.count(HyperedgeType::U));
  EXPECT_FALSE(cfg.model.enabled_types.count(HyperedgeType::LTA));
  EXPECT_EQ(cfg.model.fusion, FusionMode::Mean);
  EXPECT_EQ(cfg.train.epochs, 7);

  EXPECT_THROW(cfg.apply("not_a_key", "1"), ConfigError);
  EXPECT_THROW(cfg.apply("epochs", "seven"), ConfigError);
  EXPECT_THROW(cfg.apply("fusion", "median"), ConfigError);
  EXPECT_THROW(cfg.apply_overrides({"epochs"}), ConfigError);
  EXPECT_THROW(cfg.apply("enabled_types", "L,Q"), ConfigError);
}

TEST(RunConfig, FileParsingWithCommentsAndErrors) {
  const auto path = fs::temp_directory_path() / "disenhcn_cfg.txt";
  std::ofstream(path) << "# training setup\n"
                         "lr = 0.01\n"
                         "batch_size=128   # inline comment\n"
                         "\n"
                         "l2_scope=full\n";
  RunConfig cfg;
  cfg.apply_file(path);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 0.01);
  EXPECT_EQ(cfg.train.batch_size, 128);
  EXPECT_EQ(cfg.train.l2_scope, L2Scope::Full);

  std::ofstream(path) << "just a line without equals\n";
  EXPECT_THROW(cfg.apply_file(path), ConfigError);
  EXPECT_THROW(cfg.apply_file("/nonexistent/cfg.txt"), ConfigError);
}

TEST(Synth, PoolPropertyWithoutNoise) {
  SynthSpec spec;
  spec.noise_rate = 0.0;
  spec.n_users = 30;
  auto records = generate_synthetic(spec);
  ASSERT_EQ(records.size(), 30u * 40u);
  // per user, every drawn location shares one residue class mod k_locations
  std::map<std::string, std::set<std::int64_t>> residues;
  for (const auto& r : records)
    residues[r.user].insert(std::stoll(r.location.substr(1)) % spec.k_locations);
  for (const auto& [user, classes] : residues) EXPECT_EQ(classes.size(), 1u) << user;
}

TEST(Synth, FullNoiseIsGloballyUniform) {
  SynthSpec spec;
  spec.noise_rate = 1.0;
  spec.n_users = 50;
  spec.records_per_user = 100;
  auto records = generate_synthetic(spec);
  std::vector<std::int64_t> counts(spec.n_locations, 0);
  for (const auto& r : records) ++counts[std::stoll(r.location.substr(1))];
  const double expected = static_cast<double>(records.size()) / spec.n_locations;
  double chi2 = 0.0;
  for (auto c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 50.0);  // df = 19
}

TEST(Synth, GoldenCorpusHash) {
  SynthSpec spec;  // the acceptance corpus: defaults, seed 13
  auto records = generate_synthetic(spec);
  EXPECT_EQ(records.size(), 4000u);
  EXPECT_EQ(corpus_hash(records), 0x5a158ebb4b9cbfd1ull);
}

TEST(Synth, Validation) {
  SynthSpec spec;
  spec.k_locations = 21;  // > n_locations
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = SynthSpec{};
  spec.noise_rate = 1.5;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(Commands, SynthPrepareRoundTrip) {
  const auto dir = fs::temp_directory_path() / "disenhcn_cmd_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  RunConfig cfg;
  cfg.synth.n_users = 40;
  cfg.synth.records_per_user = 20;
  cmd_synth(cfg.synth, dir / "data.csv");
  auto summary = cmd_prepare(dir / "data.csv", dir / "bundle", cfg);
  EXPECT_EQ(summary.n_users, 40);
  EXPECT_GT(summary.n_records, 0);
  EXPECT_NE(summary.table().find("#User #Location #Time #Activity #Records"), std::string::npos);

  // byte-identical rerun (same seed)
  auto bytes_of = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  auto first = bytes_of(dir / "bundle" / "train.csv");
  cmd_prepare(dir / "data.csv", dir / "bundle", cfg);
  EXPECT_EQ(bytes_of(dir / "bundle" / "train.csv"), first);

  auto bundle = load_bundle(dir / "bundle");
  EXPECT_EQ(bundle.vocab.n_users(), 40);

  // empty post-filter corpus is an explicit error
  RunConfig harsh = cfg;
  harsh.filter.min_locations_per_user = 1000;
  EXPECT_THROW(cmd_prepare(dir / "data.csv", dir / "bundle2", harsh), DataError);
}

TEST(Commands, TrainEvaluatePredictInspect) {
  const auto dir = fs::temp_directory_path() / "disenhcn_cmd_train_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  RunConfig cfg;
  cfg.synth.n_users = 30;
  cfg.synth.records_per_user = 15;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 256;
  cfg.model.d = 12;
  cmd_synth(cfg.synth, dir / "data.csv");
  cmd_prepare(dir / "data.csv", dir / "bundle", cfg);
  auto result = cmd_train(dir / "bundle", dir / "run", cfg);
  EXPECT_EQ(result.log.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "run" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "train_log.csv"));

  auto report = cmd_evaluate(dir / "run" / "best.ckpt", dir / "bundle", 10, cfg, dir / "ranks.csv");
  EXPECT_GE(report.recall_at_k, 0.0);
  EXPECT_LE(report.recall_at_k, 1.0);
  EXPECT_TRUE(fs::exists(dir / "ranks.csv"));

  // deterministic across repeat evaluations
  auto report2 = cmd_evaluate(dir / "run" / "best.ckpt", dir / "bundle", 10, cfg);
  EXPECT_EQ(report.to_json().dump(), report2.to_json().dump());

  auto bundle = load_bundle(dir / "bundle");
  const auto& some_user = bundle.vocab.ids(Vocab::kUser).front();
  const auto& some_loc = bundle.vocab.ids(Vocab::kLocation).front();
  const auto& some_time = bundle.vocab.ids(Vocab::kTime).front();
  auto all = cmd_predict(dir / "run" / "best.ckpt", dir / "bundle", some_user, some_loc, some_time,
                         bundle.vocab.n_activities());
  EXPECT_EQ(static_cast<std::int64_t>(all.size()), bundle.vocab.n_activities());
  std::set<std::string> unique_activities;
  for (const auto& p : all) unique_activities.insert(p.activity);
  EXPECT_EQ(static_cast<std::int64_t>(unique_activities.size()), bundle.vocab.n_activities());
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GE(all[i - 1].score, all[i].score);

  auto top1 = cmd_predict(dir / "run" / "best.ckpt", dir / "bundle", some_user, some_loc, some_time, 1);
  ASSERT_EQ(top1.size(), 1u);
  EXPECT_EQ(top1[0].activity, all[0].activity);

  EXPECT_THROW(
      cmd_predict(dir / "run" / "best.ckpt", dir / "bundle", "nobody", some_loc, some_time, 3),
      DataError);

  auto inspect = cmd_inspect(dir / "run" / "best.ckpt", dir / "bundle");
  EXPECT_TRUE(inspect.adjacency.contains("LTA"));
  EXPECT_TRUE(inspect.adjacency.contains("U"));
  // 3 aspects x 8 types + header
  EXPECT_EQ(std::count(inspect.attention_csv.begin(), inspect.attention_csv.end(), '\n'), 25);
}

TEST(Commands, GradcheckPasses) {
  auto report = cmd_gradcheck();
  EXPECT_TRUE(report.pass()) << report.max_rel_err;
  EXPECT_LE(report.max_rel_err, 1e-4);
}
