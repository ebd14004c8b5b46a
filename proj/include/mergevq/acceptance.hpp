#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace mvq::acceptance {

struct Outcome {
  int id = 0;  // 0 for the fixture loader
  std::string name;
  std::vector<std::string> modules;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;
};

struct Options {
  /// Run only criteria touching one of these modules; empty runs everything.
  std::vector<std::string> only;
  /// Frozen reference values; the built-in copy is used when absent.
  std::optional<std::filesystem::path> fixture;
  std::uint64_t seed = 20240611;
  std::size_t threads = 0;  // 0 = thread_budget()
};

/// The reference values shipped with the library.
const nlohmann::json& default_fixture();

/// Modules that may be passed to Options::only.
std::vector<std::string> known_modules();

/// Runs the selected criteria in id order. Throws std::invalid_argument for an
/// unknown or uncovered module name and std::runtime_error if the fixture file
/// cannot be read. A fixture that does not parse yields a failed "fixture"
/// outcome (id 0) instead of an exception.
std::vector<Outcome> run(const Options& options);

/// One line per outcome: "PASS  3  name  [modules]  0.12s / 30s  detail".
std::string format_line(const Outcome& o);

bool all_passed(const std::vector<Outcome>& outcomes);

}  // namespace mvq::acceptance
