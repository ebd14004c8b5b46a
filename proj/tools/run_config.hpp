#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "mergevq/mergear.hpp"
#include "mergevq/sampler.hpp"
#include "mergevq/tome.hpp"

namespace mvq::cli {

/// Every knob a command may read. Loaded from JSON, then overridden by flags,
/// then validated as a whole before any module runs.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t length = 64;  // L
  std::size_t layers = 4;   // N
  std::string schedule = "constant";
  std::size_t kept = 16;  // K target
  std::size_t embed_dim = 32;
  std::size_t code_dim = 18;

  std::string sampler_version = "G+R";
  std::string sampler_kind = "exponential";
  int sampler_stage = 1;  // G+R only: 1 -> [121, 225], 2 -> [144, 256]
  double lambda = 1.0;
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t draws = 100000;

  std::string mode = "compensated";
  std::optional<std::size_t> window;  // unset: per-command default
  double temperature = 0.0;  // 0 = greedy

  std::size_t randgen_k = 16;
  std::size_t recovery_hidden = 64;

  std::filesystem::path out_dir = "out";

  /// Throws std::invalid_argument naming the first bad field. The merge
  /// schedule is only checked for feasibility when check_schedule is set.
  void validate(bool check_schedule = true) const;

  tome::MergeSchedule merge_schedule() const;
  mergear::Mode mergear_mode() const;
  sampler::SamplerConfig sampler_config() const;
};

/// Overlays a JSON object onto cfg; unknown keys and wrong types are rejected.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& cfg);

/// "inf" or a positive integer.
std::size_t parse_window(const std::string& s);
std::string window_string(std::size_t w);

}  // namespace mvq::cli
