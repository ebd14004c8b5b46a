#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace mvq::bench {

struct BenchConfig {
  std::uint64_t seed = 1;
  std::size_t length = 64;  // raster tokens per decode
  std::size_t window = 64;
  std::uint32_t vocab = 64;
  std::uint32_t embed_dim = 64;
  std::uint32_t layers = 4;
  std::size_t trials = 3;
  std::vector<double> densities{0.0, 0.25, 0.5, 0.75};

  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;
};

/// A scripted raster sequence with exactly `unique` distinct ids, the first
/// occurrence of each at a seeded random set of positions that includes 0.
/// Repeats copy an id already emitted.
std::vector<std::uint32_t> duplicate_workload(std::size_t length, std::size_t unique,
                                              std::uint32_t vocab, std::uint64_t seed);

/// Unique-id count for a duplicate density: round(length * (1 - density)), at least 1.
std::size_t unique_for_density(std::size_t length, double density);

struct WorkloadResult {
  double density = 0.0;
  std::size_t unique = 0;
  std::size_t duplicates = 0;
  std::size_t final_cache_length = 0;
  double compression_ratio = 1.0;  // final cache length / length
  double mean_step_ns_compressed = 0.0;
  double mean_step_ns_full = 0.0;
  double speedup = 1.0;  // full / compressed mean step time
  double max_logit_diff = 0.0;
  bool equivalent = true;
  std::vector<std::size_t> cache_len_trace;  // from the first trial
};

struct BenchReport {
  BenchConfig config;
  std::vector<WorkloadResult> workloads;
};

/// For each density, decodes scripted workloads with decode_full_oracle and
/// compensated decode_raster and compares them.
BenchReport run_bench(const BenchConfig& config);

/// CPU model, core count, compiler, build type and OS.
nlohmann::json machine_fingerprint();

nlohmann::json to_json(const BenchReport& report);

}  // namespace mvq::bench
