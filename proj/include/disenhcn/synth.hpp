#pragma once

#include <string>
#include <vector>

#include "disenhcn/data.hpp"
#include "disenhcn/errors.hpp"
#include "disenhcn/rng.hpp"

namespace disenhcn {

/// Desk-scale synthetic corpus: every user draws each record coordinate from
/// a per-user cluster pool (entities are partitioned among clusters by index
/// modulo), except that with probability noise_rate a coordinate is resampled
/// globally. Defaults are the corpus the acceptance runs use.
struct SynthSpec {
  std::int64_t n_users = 100;
  std::int64_t n_locations = 20;
  std::int64_t n_times = 8;
  std::int64_t n_activities = 30;
  std::int64_t k_locations = 4;
  std::int64_t k_times = 2;
  std::int64_t k_activities = 5;
  std::int64_t records_per_user = 40;
  double noise_rate = 0.1;
  std::uint64_t seed = 13;

  void validate() const {
    if (n_users < 1 || n_locations < 1 || n_times < 1 || n_activities < 1)
      throw ConfigError("synth: entity counts must be positive");
    if (k_locations < 1 || k_locations > n_locations || k_times < 1 || k_times > n_times ||
        k_activities < 1 || k_activities > n_activities)
      throw ConfigError("synth: cluster counts must be in [1, entity count]");
    if (records_per_user < 1) throw ConfigError("synth: records_per_user must be positive");
    if (noise_rate < 0.0 || noise_rate > 1.0) throw ConfigError("synth: noise_rate must be in [0,1]");
  }
};

inline std::vector<RawRecord> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // entity e belongs to cluster e % k; a user's pool for cluster c is every
  // entity with e % k == c
  auto draw = [&rng](std::int64_t n_entities, std::int64_t k, std::int64_t cluster, double noise) {
    std::int64_t entity;
    const std::int64_t pool = n_entities / k + ((cluster < n_entities % k) ? 1 : 0);
    entity = cluster + k * static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(pool)));
    if (noise > 0.0 && rng.uniform01() < noise)
      entity = static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(n_entities)));
    return entity;
  };

  std::vector<RawRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n_users * spec.records_per_user));
  for (std::int64_t u = 0; u < spec.n_users; ++u) {
    const auto c_l = static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(spec.k_locations)));
    const auto c_t = static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(spec.k_times)));
    const auto c_a = static_cast<std::int64_t>(rng.uniform_below(static_cast<std::uint64_t>(spec.k_activities)));
    for (std::int64_t k = 0; k < spec.records_per_user; ++k) {
      const auto l = draw(spec.n_locations, spec.k_locations, c_l, spec.noise_rate);
      const auto t = draw(spec.n_times, spec.k_times, c_t, spec.noise_rate);
      const auto a = draw(spec.n_activities, spec.k_activities, c_a, spec.noise_rate);
      records.push_back({"u" + std::to_string(u), "l" + std::to_string(l), "t" + std::to_string(t),
                         "a" + std::to_string(a)});
    }
  }
  return records;
}

inline std::string records_to_csv(const std::vector<RawRecord>& records) {
  std::string csv = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) csv += r.user + "," + r.location + "," + r.time + "," + r.activity + "\n";
  return csv;
}

/// FNV-1a over the serialized CSV; pins the generator output across runs.
inline std::uint64_t corpus_hash(const std::vector<RawRecord>& records) {
  const std::string csv = records_to_csv(records);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : csv) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace disenhcn
