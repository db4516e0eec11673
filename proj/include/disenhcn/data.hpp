#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "disenhcn/errors.hpp"
#include "disenhcn/rng.hpp"

namespace disenhcn {

/// One raw (user, location, time, activity) observation as it appears in an
/// input file.
struct RawRecord {
  std::string user, location, time, activity;
};

/// The same observation after id -> dense-index encoding.
struct Record {
  std::int32_t u = 0, l = 0, t = 0, a = 0;
  bool operator==(const Record&) const = default;
};

struct FilterConfig {
  std::int64_t min_locations_per_user = 10;
  std::int64_t min_activities_per_user = 5;
  std::int64_t min_activity_frequency = 0;  // 100 for keyword-style corpora
};

struct SplitConfig {
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double test_ratio = 0.1;
};

/// Bidirectional raw-id <-> dense-index maps for the four entity families.
class Vocab {
 public:
  enum Family { kUser = 0, kLocation = 1, kTime = 2, kActivity = 3 };

  std::int32_t intern(Family f, const std::string& id) {
    auto& map = index_[f];
    auto it = map.find(id);
    if (it != map.end()) return it->second;
    const auto idx = static_cast<std::int32_t>(ids_[f].size());
    ids_[f].push_back(id);
    map.emplace(id, idx);
    return idx;
  }

  std::int32_t encode(Family f, const std::string& id) const {
    auto it = index_[f].find(id);
    if (it == index_[f].end())
      throw DataError("unknown " + std::string(kFamilyName[f]) + " id: " + id);
    return it->second;
  }

  const std::string& decode(Family f, std::int32_t idx) const {
    if (idx < 0 || static_cast<std::size_t>(idx) >= ids_[f].size())
      throw DataError("index out of range for " + std::string(kFamilyName[f]));
    return ids_[f][idx];
  }

  bool contains(Family f, const std::string& id) const { return index_[f].count(id) > 0; }

  std::int64_t count(Family f) const { return static_cast<std::int64_t>(ids_[f].size()); }
  std::int64_t n_users() const { return count(kUser); }
  std::int64_t n_locations() const { return count(kLocation); }
  std::int64_t n_times() const { return count(kTime); }
  std::int64_t n_activities() const { return count(kActivity); }

  const std::vector<std::string>& ids(Family f) const { return ids_[f]; }

  /// FNV-1a over the family's id list, order-sensitive. Used to detect that a
  /// checkpoint and a dataset bundle belong together.
  std::uint64_t hash(Family f) const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](unsigned char c) {
      h ^= c;
      h *= 0x100000001b3ull;
    };
    for (const auto& id : ids_[f]) {
      for (char c : id) mix(static_cast<unsigned char>(c));
      mix(0);
    }
    return h;
  }

  static constexpr const char* kFamilyName[4] = {"user", "location", "time", "activity"};

 private:
  std::array<std::vector<std::string>, 4> ids_;
  std::array<std::unordered_map<std::string, std::int32_t>, 4> index_;
};

/// Membership index over all observed quadruples, keyed by (u,l,t) context.
class ObservedIndex {
 public:
  void build(const std::vector<const std::vector<Record>*>& splits, std::int64_t n_locations,
             std::int64_t n_times) {
    n_locations_ = n_locations;
    n_times_ = n_times;
    by_context_.clear();
    for (const auto* split : splits)
      for (const auto& r : *split) by_context_[context_key(r.u, r.l, r.t)].push_back(r.a);
    for (auto& [key, acts] : by_context_) {
      std::sort(acts.begin(), acts.end());
      acts.erase(std::unique(acts.begin(), acts.end()), acts.end());
    }
  }

  bool contains(std::int32_t u, std::int32_t l, std::int32_t t, std::int32_t a) const {
    auto it = by_context_.find(context_key(u, l, t));
    if (it == by_context_.end()) return false;
    return std::binary_search(it->second.begin(), it->second.end(), a);
  }

  /// Sorted distinct activities observed with this context; nullptr if none.
  const std::vector<std::int32_t>* activities_for(std::int32_t u, std::int32_t l, std::int32_t t) const {
    auto it = by_context_.find(context_key(u, l, t));
    return it == by_context_.end() ? nullptr : &it->second;
  }

  std::size_t n_quadruples() const {
    std::size_t n = 0;
    for (const auto& [key, acts] : by_context_) n += acts.size();
    return n;
  }

 private:
  std::uint64_t context_key(std::int32_t u, std::int32_t l, std::int32_t t) const {
    return (static_cast<std::uint64_t>(u) * static_cast<std::uint64_t>(n_locations_) +
            static_cast<std::uint64_t>(l)) *
               static_cast<std::uint64_t>(n_times_) +
           static_cast<std::uint64_t>(t);
  }

  std::int64_t n_locations_ = 1, n_times_ = 1;
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> by_context_;
};

struct DatasetBundle {
  Vocab vocab;
  std::vector<Record> train, valid, test;
  ObservedIndex observed;

  void rebuild_observed() {
    observed.build({&train, &valid, &test}, std::max<std::int64_t>(vocab.n_locations(), 1),
                   std::max<std::int64_t>(vocab.n_times(), 1));
  }
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}
}  // namespace detail

inline constexpr const char* kCsvHeader = "user_id,location_id,time_id,activity_id";

/// Reads a 4-column CSV of raw quadruples. The header line is mandatory and
/// error messages carry 1-based line numbers.
inline std::vector<RawRecord> ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file (missing header): " + path.string());
  if (detail::strip_cr(line) != kCsvHeader)
    throw DataError("malformed header in " + path.string() + ": expected '" + kCsvHeader + "'");
  std::vector<RawRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 4)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns, got " +
                      std::to_string(fields.size()));
    for (const auto& f : fields)
      if (f.empty())
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty field");
    records.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  return records;
}

/// Removes users below the distinct-location / distinct-activity thresholds
/// and activities below the frequency threshold, iterating until nothing
/// changes (dropping an activity can push a user under its threshold and vice
/// versa). Record order is preserved.
inline std::vector<RawRecord> apply_filters(std::vector<RawRecord> records, const FilterConfig& cfg) {
  if (cfg.min_locations_per_user < 0 || cfg.min_activities_per_user < 0 || cfg.min_activity_frequency < 0)
    throw ConfigError("filter thresholds must be non-negative");
  for (;;) {
    std::unordered_map<std::string, std::unordered_set<std::string>> user_locs, user_acts;
    std::unordered_map<std::string, std::int64_t> act_freq;
    for (const auto& r : records) {
      user_locs[r.user].insert(r.location);
      user_acts[r.user].insert(r.activity);
      ++act_freq[r.activity];
    }
    std::vector<RawRecord> kept;
    kept.reserve(records.size());
    for (auto& r : records) {
      if (static_cast<std::int64_t>(user_locs[r.user].size()) < cfg.min_locations_per_user) continue;
      if (static_cast<std::int64_t>(user_acts[r.user].size()) < cfg.min_activities_per_user) continue;
      if (act_freq[r.activity] < cfg.min_activity_frequency) continue;
      kept.push_back(std::move(r));
    }
    const bool stable = kept.size() == records.size();
    records = std::move(kept);
    if (stable) break;
  }
  return records;
}

/// Dense indices assigned by first occurrence, scanning records in order with
/// fields visited user, location, time, activity.
inline Vocab build_vocab(const std::vector<RawRecord>& records) {
  Vocab v;
  for (const auto& r : records) {
    v.intern(Vocab::kUser, r.user);
    v.intern(Vocab::kLocation, r.location);
    v.intern(Vocab::kTime, r.time);
    v.intern(Vocab::kActivity, r.activity);
  }
  return v;
}

inline std::vector<Record> encode(const std::vector<RawRecord>& records, const Vocab& vocab) {
  std::vector<Record> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back({vocab.encode(Vocab::kUser, r.user), vocab.encode(Vocab::kLocation, r.location),
                   vocab.encode(Vocab::kTime, r.time), vocab.encode(Vocab::kActivity, r.activity)});
  return out;
}

inline std::vector<RawRecord> decode(const std::vector<Record>& records, const Vocab& vocab) {
  std::vector<RawRecord> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back({vocab.decode(Vocab::kUser, r.u), vocab.decode(Vocab::kLocation, r.l),
                   vocab.decode(Vocab::kTime, r.t), vocab.decode(Vocab::kActivity, r.a)});
  return out;
}

/// Drops exact duplicate quadruples, keeping the first occurrence. Incidences
/// are binary, so duplicates carry no additional signal.
inline std::vector<Record> dedup_records(const std::vector<Record>& records, const Vocab& vocab) {
  std::unordered_set<std::uint64_t> seen;
  std::vector<Record> out;
  out.reserve(records.size());
  const auto nl = static_cast<std::uint64_t>(std::max<std::int64_t>(vocab.n_locations(), 1));
  const auto nt = static_cast<std::uint64_t>(std::max<std::int64_t>(vocab.n_times(), 1));
  const auto na = static_cast<std::uint64_t>(std::max<std::int64_t>(vocab.n_activities(), 1));
  for (const auto& r : records) {
    const std::uint64_t key =
        ((static_cast<std::uint64_t>(r.u) * nl + static_cast<std::uint64_t>(r.l)) * nt +
         static_cast<std::uint64_t>(r.t)) *
            na +
        static_cast<std::uint64_t>(r.a);
    if (seen.insert(key).second) out.push_back(r);
  }
  return out;
}

/// Seeded uniform shuffle followed by a contiguous partition. Valid/test sizes
/// round down; the remainder goes to train.
inline DatasetBundle split(std::vector<Record> records, Vocab vocab, const SplitConfig& cfg,
                           std::uint64_t seed) {
  if (cfg.train_ratio <= 0 || cfg.valid_ratio <= 0 || cfg.test_ratio <= 0)
    throw ConfigError("split ratios must be positive");
  if (std::abs(cfg.train_ratio + cfg.valid_ratio + cfg.test_ratio - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  Rng rng(seed);
  rng.shuffle(records);
  const auto n = static_cast<std::int64_t>(records.size());
  const auto n_valid = static_cast<std::int64_t>(cfg.valid_ratio * static_cast<double>(n));
  const auto n_test = static_cast<std::int64_t>(cfg.test_ratio * static_cast<double>(n));
  const auto n_train = n - n_valid - n_test;

  DatasetBundle bundle;
  bundle.vocab = std::move(vocab);
  bundle.train.assign(records.begin(), records.begin() + n_train);
  bundle.valid.assign(records.begin() + n_train, records.begin() + n_train + n_valid);
  bundle.test.assign(records.begin() + n_train + n_valid, records.end());
  bundle.rebuild_observed();
  return bundle;
}

/// Uniform draw over activities not observed with the (u,l,t) context.
/// Rejection sampling capped at 100 draws, then a uniform pick from the
/// explicitly enumerated complement.
inline std::int32_t sample_negative(const DatasetBundle& bundle, std::int32_t u, std::int32_t l,
                                    std::int32_t t, Rng& rng) {
  const auto n_a = bundle.vocab.n_activities();
  if (n_a <= 0) throw DataError("sample_negative: no activities in vocabulary");
  const auto* observed = bundle.observed.activities_for(u, l, t);
  if (observed && static_cast<std::int64_t>(observed->size()) >= n_a)
    throw DataError("sample_negative: all activities observed for this context");
  for (int attempt = 0; attempt < 100; ++attempt) {
    const auto a = static_cast<std::int32_t>(rng.uniform_below(static_cast<std::uint64_t>(n_a)));
    if (!observed || !std::binary_search(observed->begin(), observed->end(), a)) return a;
  }
  std::vector<std::int32_t> complement;
  complement.reserve(static_cast<std::size_t>(n_a) - (observed ? observed->size() : 0));
  for (std::int32_t a = 0; a < n_a; ++a)
    if (!observed || !std::binary_search(observed->begin(), observed->end(), a)) complement.push_back(a);
  return complement[rng.uniform_below(complement.size())];
}

// -- bundle directory serialization -----------------------------------------

inline void save_split_csv(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << kCsvHeader << "\n";
  for (const auto& r : records) out << r.u << "," << r.l << "," << r.t << "," << r.a << "\n";
}

inline std::vector<Record> load_split_csv(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || detail::strip_cr(line) != kCsvHeader)
    throw DataError("malformed header in " + path.string());
  std::vector<Record> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != 4)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
    Record r;
    try {
      r.u = static_cast<std::int32_t>(std::stol(fields[0]));
      r.l = static_cast<std::int32_t>(std::stol(fields[1]));
      r.t = static_cast<std::int32_t>(std::stol(fields[2]));
      r.a = static_cast<std::int32_t>(std::stol(fields[3]));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric index");
    }
    if (r.u < 0 || r.u >= vocab.n_users() || r.l < 0 || r.l >= vocab.n_locations() || r.t < 0 ||
        r.t >= vocab.n_times() || r.a < 0 || r.a >= vocab.n_activities())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": index out of vocabulary range");
    records.push_back(r);
  }
  return records;
}

inline void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["users"] = bundle.vocab.ids(Vocab::kUser);
  j["locations"] = bundle.vocab.ids(Vocab::kLocation);
  j["times"] = bundle.vocab.ids(Vocab::kTime);
  j["activities"] = bundle.vocab.ids(Vocab::kActivity);
  std::ofstream out(dir / "vocab.json");
  if (!out) throw DataError("cannot write " + (dir / "vocab.json").string());
  out << j.dump(2) << "\n";
  save_split_csv(dir / "train.csv", bundle.train);
  save_split_csv(dir / "valid.csv", bundle.valid);
  save_split_csv(dir / "test.csv", bundle.test);
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "vocab.json");
  if (!in) throw DataError("cannot open " + (dir / "vocab.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt vocab.json: " + std::string(e.what()));
  }
  DatasetBundle bundle;
  const std::pair<const char*, Vocab::Family> families[] = {{"users", Vocab::kUser},
                                                            {"locations", Vocab::kLocation},
                                                            {"times", Vocab::kTime},
                                                            {"activities", Vocab::kActivity}};
  for (const auto& [key, family] : families) {
    if (!j.contains(key)) throw DataError("vocab.json missing key: " + std::string(key));
    for (const auto& id : j[key]) bundle.vocab.intern(family, id.get<std::string>());
  }
  bundle.train = load_split_csv(dir / "train.csv", bundle.vocab);
  bundle.valid = load_split_csv(dir / "valid.csv", bundle.vocab);
  bundle.test = load_split_csv(dir / "test.csv", bundle.vocab);
  bundle.rebuild_observed();
  return bundle;
}

}  // namespace disenhcn
