#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "run_config.hpp"

namespace mvq::cli {

/// Each command writes its files under cfg.out_dir (when it has any) and
/// returns the JSON report that main prints on stdout.

nlohmann::json cmd_encode(const RunConfig& cfg);

struct RecoverArgs {
  std::filesystem::path codes;
  std::optional<std::filesystem::path> truth;  // MVQS ground truth, for loss reporting
};
nlohmann::json cmd_recover(const RunConfig& cfg, const RecoverArgs& args);

nlohmann::json cmd_mergear_sim(const RunConfig& cfg, bool omit_timing);
nlohmann::json cmd_randgen_sim(const RunConfig& cfg);
nlohmann::json cmd_sample_ratios(const RunConfig& cfg);
nlohmann::json cmd_align_demo(const RunConfig& cfg);

struct BenchArgs {
  std::size_t trials = 3;
  std::vector<double> densities{0.0, 0.25, 0.5, 0.75};
};
nlohmann::json cmd_bench(const RunConfig& cfg, const BenchArgs& args);

/// Writes pretty JSON followed by a newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace mvq::cli
