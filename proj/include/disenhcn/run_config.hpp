#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "disenhcn/data.hpp"
#include "disenhcn/errors.hpp"
#include "disenhcn/model.hpp"
#include "disenhcn/synth.hpp"
#include "disenhcn/trainer.hpp"

namespace disenhcn {

/// Everything a run needs: model, training, filtering, splitting and the
/// synthetic generator, parsed from a flat key=value file plus repeatable
/// --set overrides. Unknown keys are hard errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  FilterConfig filter{0, 0, 0};  // filters opt-in from the config file
  SplitConfig split;
  SynthSpec synth;
  bool eval_exclude_train = false;
  int threads = 1;

  void apply(const std::string& key, const std::string& value);
  void apply_file(const std::filesystem::path& path);
  void apply_overrides(const std::vector<std::string>& overrides);
};

namespace detail {

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + value + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const auto v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + value + "'");
}

inline std::set<HyperedgeType> parse_types(const std::string& value) {
  std::set<HyperedgeType> types;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    types.insert(hyperedge_type_from_string(item));
  }
  if (types.empty()) throw ConfigError("enabled_types: empty set");
  return types;
}

inline std::vector<std::int64_t> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<std::int64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
  return out;
}

}  // namespace detail

inline void RunConfig::apply(const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;

  if (key == "d") model.d = parse_int(key, value);
  else if (key == "layers") model.layers = parse_int(key, value);
  else if (key == "enabled_types") model.enabled_types = detail::parse_types(value);
  else if (key == "fusion") model.fusion = fusion_from_string(value);
  else if (key == "conv") model.conv = conv_from_string(value);
  else if (key == "lr") train.lr = parse_double(key, value);
  else if (key == "lr_decay") train.lr_decay = parse_double(key, value);
  else if (key == "lr_decay_every") train.lr_decay_every = parse_int(key, value);
  else if (key == "lr_schedule") {
    if (value == "step") train.lr_schedule = LrSchedule::Step;
    else if (value == "milestones") train.lr_schedule = LrSchedule::Milestones;
    else throw ConfigError("lr_schedule: expected 'step' or 'milestones', got '" + value + "'");
  } else if (key == "lr_milestones") train.lr_milestones = detail::parse_int_list(key, value);
  else if (key == "lr_milestone_decay") train.lr_milestone_decay = parse_double(key, value);
  else if (key == "epochs") train.epochs = parse_int(key, value);
  else if (key == "patience") train.patience = parse_int(key, value);
  else if (key == "batch_size") train.batch_size = parse_int(key, value);
  else if (key == "negatives_per_positive") train.negatives_per_positive = parse_int(key, value);
  else if (key == "lambda") train.lambda = parse_double(key, value);
  else if (key == "gamma") train.gamma = parse_double(key, value);
  else if (key == "seed") {
    train.seed = static_cast<std::uint64_t>(parse_int(key, value));
    synth.seed = train.seed;
  } else if (key == "eval_k") train.eval_k = parse_int(key, value);
  else if (key == "l2_scope") {
    if (value == "touched") train.l2_scope = L2Scope::Touched;
    else if (value == "full") train.l2_scope = L2Scope::Full;
    else throw ConfigError("l2_scope: expected 'touched' or 'full', got '" + value + "'");
  } else if (key == "min_locations_per_user") filter.min_locations_per_user = parse_int(key, value);
  else if (key == "min_activities_per_user") filter.min_activities_per_user = parse_int(key, value);
  else if (key == "min_activity_frequency") filter.min_activity_frequency = parse_int(key, value);
  else if (key == "train_ratio") split.train_ratio = parse_double(key, value);
  else if (key == "valid_ratio") split.valid_ratio = parse_double(key, value);
  else if (key == "test_ratio") split.test_ratio = parse_double(key, value);
  else if (key == "eval_exclude_train") eval_exclude_train = parse_bool(key, value);
  else if (key == "threads") threads = static_cast<int>(parse_int(key, value));
  else if (key == "synth_users") synth.n_users = parse_int(key, value);
  else if (key == "synth_locations") synth.n_locations = parse_int(key, value);
  else if (key == "synth_times") synth.n_times = parse_int(key, value);
  else if (key == "synth_activities") synth.n_activities = parse_int(key, value);
  else if (key == "synth_k_locations") synth.k_locations = parse_int(key, value);
  else if (key == "synth_k_times") synth.k_times = parse_int(key, value);
  else if (key == "synth_k_activities") synth.k_activities = parse_int(key, value);
  else if (key == "synth_records_per_user") synth.records_per_user = parse_int(key, value);
  else if (key == "synth_noise_rate") synth.noise_rate = parse_double(key, value);
  else if (key == "synth_seed") synth.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else throw ConfigError("unknown config key: '" + key + "'");
}

inline void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    // strip comments and surrounding whitespace
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto first = s.find_first_not_of(" \t");
      if (first == std::string::npos) return std::string();
      const auto last = s.find_last_not_of(" \t");
      return s.substr(first, last - first + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline void RunConfig::apply_overrides(const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

}  // namespace disenhcn
