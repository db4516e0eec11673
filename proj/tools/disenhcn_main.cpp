// Command-line front end: synth | prepare | train | evaluate | predict |
// inspect | gradcheck. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 verification failure.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "disenhcn/commands.hpp"

namespace {

using namespace disenhcn;

RunConfig load_run_config(const std::string& config_path, const std::vector<std::string>& overrides,
                          std::int64_t seed_flag) {
  RunConfig cfg;
  if (!config_path.empty()) cfg.apply_file(config_path);
  if (seed_flag >= 0) cfg.apply("seed", std::to_string(seed_flag));
  cfg.apply_overrides(overrides);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"disentangled hypergraph convolutional networks for spatiotemporal activity prediction"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags remain valid after the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed_flag = -1;
  int threads = 0;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--set", overrides, "override a config key (repeatable)")->type_size(1);
  app.add_option("--seed", seed_flag, "seed override");
  app.add_option("--threads", threads, "evaluation threads (default 1, deterministic)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic quadruple CSV");
  std::string synth_out = "synth.csv";
  synth->add_option("--out", synth_out, "output CSV path");

  auto* prepare = app.add_subcommand("prepare", "ingest, filter, encode and split a CSV corpus");
  std::string prepare_input, prepare_out = "bundle";
  prepare->add_option("--input", prepare_input, "input quadruple CSV")->required();
  prepare->add_option("--out", prepare_out, "output bundle directory");

  auto* train = app.add_subcommand("train", "train on a prepared bundle");
  std::string train_bundle, train_out = "run", train_resume;
  train->add_option("--bundle", train_bundle, "bundle directory")->required();
  train->add_option("--out", train_out, "output directory (best.ckpt, last.ckpt, train_log.csv)");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* evaluate = app.add_subcommand("evaluate", "rank the test split of a bundle");
  std::string eval_ckpt, eval_bundle, eval_ranks;
  std::int64_t eval_k = 10;
  evaluate->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  evaluate->add_option("--bundle", eval_bundle, "bundle directory")->required();
  evaluate->add_option("--k", eval_k, "ranking cutoff (default 10)");
  evaluate->add_option("--ranks", eval_ranks, "optional per-record rank CSV output");

  auto* predict = app.add_subcommand("predict", "top-k activities for a (user, location, time)");
  std::string pred_ckpt, pred_bundle, pred_user, pred_location, pred_time;
  std::int64_t pred_k = 10;
  predict->add_option("--ckpt", pred_ckpt, "checkpoint path")->required();
  predict->add_option("--bundle", pred_bundle, "bundle directory")->required();
  predict->add_option("--user", pred_user, "raw user id")->required();
  predict->add_option("--location", pred_location, "raw location id")->required();
  predict->add_option("--time", pred_time, "raw time id")->required();
  predict->add_option("--k", pred_k, "list length");

  auto* inspect = app.add_subcommand("inspect", "adjacency statistics and attention distributions");
  std::string ins_ckpt, ins_bundle, ins_out;
  inspect->add_option("--ckpt", ins_ckpt, "checkpoint path")->required();
  inspect->add_option("--bundle", ins_bundle, "bundle directory")->required();
  inspect->add_option("--out", ins_out, "directory for adjacency.json / attention.csv (default stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    RunConfig cfg = load_run_config(config_path, overrides, seed_flag);
    if (threads > 0) cfg.threads = threads;

    if (*synth) {
      cmd_synth(cfg.synth, synth_out);
      std::printf("wrote %s (%lld users x %lld records, seed %llu)\n", synth_out.c_str(),
                  static_cast<long long>(cfg.synth.n_users),
                  static_cast<long long>(cfg.synth.records_per_user),
                  static_cast<unsigned long long>(cfg.synth.seed));
    } else if (*prepare) {
      auto summary = cmd_prepare(prepare_input, prepare_out, cfg);
      std::fputs(summary.table().c_str(), stdout);
    } else if (*train) {
      std::printf("config: d=%lld layers=%lld types=%zu fusion=%s conv=%s lr=%g schedule=%s "
                  "batch=%lld lambda=%g gamma=%g seed=%llu\n",
                  static_cast<long long>(cfg.model.d), static_cast<long long>(cfg.model.layers),
                  cfg.model.enabled_types.size(), to_string(cfg.model.fusion),
                  to_string(cfg.model.conv), cfg.train.lr,
                  cfg.train.lr_schedule == LrSchedule::Milestones ? "milestones" : "step",
                  static_cast<long long>(cfg.train.batch_size), cfg.train.lambda, cfg.train.gamma,
                  static_cast<unsigned long long>(cfg.train.seed));
      auto result = cmd_train(train_bundle, train_out, cfg, train_resume);
      std::printf("trained %zu epochs; best val recall@%lld %.6f (epoch %lld); wrote %s/\n",
                  result.log.size(), static_cast<long long>(cfg.train.eval_k),
                  result.best.best_val_recall, static_cast<long long>(result.best.epoch),
                  train_out.c_str());
    } else if (*evaluate) {
      auto report = cmd_evaluate(eval_ckpt, eval_bundle, eval_k, cfg, eval_ranks);
      std::printf("%s\n", report.to_json().dump().c_str());
    } else if (*predict) {
      auto predictions = cmd_predict(pred_ckpt, pred_bundle, pred_user, pred_location, pred_time, pred_k);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& p : predictions) j.push_back({{"activity", p.activity}, {"score", p.score}});
      std::printf("%s\n", nlohmann::json{{"results", j}}.dump().c_str());
    } else if (*inspect) {
      auto out = cmd_inspect(ins_ckpt, ins_bundle);
      if (ins_out.empty()) {
        std::printf("%s\n", out.adjacency.dump(2).c_str());
        if (!out.attention_csv.empty()) std::fputs(out.attention_csv.c_str(), stdout);
      } else {
        write_text_file(std::filesystem::path(ins_out) / "adjacency.json", out.adjacency.dump(2) + "\n");
        if (!out.attention_csv.empty())
          write_text_file(std::filesystem::path(ins_out) / "attention.csv", out.attention_csv);
        std::printf("wrote %s/adjacency.json%s\n", ins_out.c_str(),
                    out.attention_csv.empty() ? "" : " and attention.csv");
      }
    } else if (*gradcheck) {
      GradCheckSetup setup;
      setup.lambda = cfg.train.lambda;
      setup.gamma = cfg.train.gamma;
      setup.fusion = cfg.model.fusion;
      setup.conv = cfg.model.conv;
      auto report = cmd_gradcheck(setup);
      std::printf("gradcheck: %zu entries, max rel err %.3e (param %s[%lld]), mean %.3e, tolerance %.0e\n",
                  report.n_checked, report.max_rel_err, report.worst_param.c_str(),
                  static_cast<long long>(report.worst_index), report.mean_rel_err, report.tolerance);
      if (!report.pass()) {
        std::fprintf(stderr, "gradcheck FAILED\n");
        return 3;
      }
      std::printf("gradcheck PASSED\n");
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const VerificationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
