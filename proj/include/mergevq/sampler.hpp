#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergevq/numerics.hpp"

namespace mvq::sampler {

enum class Kind { kExponential, kGaussian };
enum class Version { kR, kGR, kG };

/// Inclusive bounds on the kept-token count.
struct KeptRange {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
};

inline constexpr KeptRange kRangeR{36, 100};
inline constexpr KeptRange kRangeGrStage1{121, 225};
inline constexpr KeptRange kRangeGrStage2{144, 256};
inline constexpr KeptRange kRangeGExponential{256, 1024};
inline constexpr KeptRange kRangeGGaussian{225, 400};

/// kept(T) = (base + sign * T)^2.
struct KeptMapping {
  int base = 0;
  int sign = 1;
};

/// R: (6+T)^2, G+R: (12+T)^2, G: (16+T)^2.
KeptMapping default_mapping(Version v);
/// The usual range for a version and kind (G+R uses its first-stage range).
KeptRange default_range(Version v, Kind kind);

struct SamplerConfig {
  Kind kind = Kind::kExponential;
  Version version = Version::kGR;
  double lambda = 1.0;
  double mu = 0.0;
  double sigma = 1.0;
  KeptRange range = kRangeGrStage1;
  KeptMapping mapping = default_mapping(Version::kGR);
};

struct TableEntry {
  int t = 0;
  double probability = 0.0;
};

/// Merge-ratio sampler over the offset T.
///
/// The support is every integer T with base + sign*T >= 0 whose kept count
/// lies in the range (and T >= 0 for the exponential kind). Probabilities are
/// the closed-form pmf restricted to the support and renormalized.
class MergeRatioSampler {
 public:
  explicit MergeRatioSampler(const SamplerConfig& config);

  const SamplerConfig& config() const { return config_; }
  std::span<const TableEntry> table() const { return table_; }
  std::vector<int> support() const;

  /// Throws std::out_of_range if kept(t) falls outside the configured range.
  std::uint32_t kept_tokens(int t) const;
  int sample_offset(RandomStream& rng) const;
  std::uint32_t sample_kept(RandomStream& rng) const { return kept_tokens(sample_offset(rng)); }

 private:
  SamplerConfig config_;
  std::vector<TableEntry> table_;
  std::vector<double> cdf_;
};

std::vector<TableEntry> distribution_table(const MergeRatioSampler& s);

/// Half the L1 distance between the table and empirical frequencies from counts
/// (counts[i] belongs to table[i]).
double total_variation(std::span<const TableEntry> table, std::span<const std::uint64_t> counts);

bool is_perfect_square(std::uint64_t n);

Kind parse_kind(const std::string& s);
Version parse_version(const std::string& s);
std::string to_string(Kind k);
std::string to_string(Version v);

}  // namespace mvq::sampler
