#include "mergevq/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvq::sampler {

namespace {

std::uint64_t isqrt(std::uint64_t n) {
  auto r = static_cast<std::uint64_t>(std::sqrt(static_cast<double>(n)));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

std::string range_string(KeptRange r) {
  return "[" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]";
}

}  // namespace

KeptMapping default_mapping(Version v) {
  switch (v) {
    case Version::kR: return {6, 1};
    case Version::kGR: return {12, 1};
    case Version::kG: return {16, 1};
  }
  throw std::invalid_argument("default_mapping: unknown version");
}

KeptRange default_range(Version v, Kind kind) {
  switch (v) {
    case Version::kR: return kRangeR;
    case Version::kGR: return kRangeGrStage1;
    case Version::kG: return kind == Kind::kExponential ? kRangeGExponential : kRangeGGaussian;
  }
  throw std::invalid_argument("default_range: unknown version");
}

MergeRatioSampler::MergeRatioSampler(const SamplerConfig& config) : config_(config) {
  if (config.kind == Kind::kExponential && !(config.lambda > 0.0 && std::isfinite(config.lambda))) {
    throw std::invalid_argument("sampler: lambda must be > 0");
  }
  if (config.kind == Kind::kGaussian &&
      !(config.sigma > 0.0 && std::isfinite(config.sigma) && std::isfinite(config.mu))) {
    throw std::invalid_argument("sampler: sigma must be > 0 and mu finite");
  }
  if (config.mapping.sign != 1 && config.mapping.sign != -1) {
    throw std::invalid_argument("sampler: mapping sign must be +1 or -1");
  }
  if (config.range.lo > config.range.hi) {
    throw std::invalid_argument("sampler: empty kept range " + range_string(config.range));
  }

  // Enumerate m = base + sign*T over the square roots inside the range.
  std::uint64_t m_lo = isqrt(config.range.lo);
  if (m_lo * m_lo < config.range.lo) ++m_lo;
  const std::uint64_t m_hi = isqrt(config.range.hi);
  std::vector<int> ts;
  for (std::uint64_t m = m_lo; m <= m_hi; ++m) {
    const int t = (static_cast<int>(m) - config.mapping.base) * config.mapping.sign;
    if (config.kind == Kind::kExponential && t < 0) continue;
    ts.push_back(t);
  }
  std::sort(ts.begin(), ts.end());
  if (ts.empty()) {
    throw std::invalid_argument("sampler: no offset maps into " + range_string(config.range));
  }

  std::vector<double> w(ts.size());
  double z = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double t = ts[i];
    if (config.kind == Kind::kExponential) {
      w[i] = (1.0 - std::exp(-config.lambda)) * std::exp(-config.lambda * t);
    } else {
      const double d = t - config.mu;
      w[i] = std::exp(-d * d / (2.0 * config.sigma * config.sigma));
    }
    z += w[i];
  }
  if (!(z > 0.0)) throw std::invalid_argument("sampler: support has zero probability mass");
  double cdf = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double p = w[i] / z;
    table_.push_back({ts[i], p});
    cdf += p;
    cdf_.push_back(cdf);
  }
}

std::vector<int> MergeRatioSampler::support() const {
  std::vector<int> out;
  for (const auto& e : table_) out.push_back(e.t);
  return out;
}

std::uint32_t MergeRatioSampler::kept_tokens(int t) const {
  const long long m = config_.mapping.base + static_cast<long long>(config_.mapping.sign) * t;
  const long long kept = m * m;
  if (m < 0 || kept < config_.range.lo || kept > config_.range.hi) {
    throw std::out_of_range("kept_tokens: T=" + std::to_string(t) + " gives " +
                            std::to_string(kept) + " (base " + std::to_string(m) +
                            "), outside " + range_string(config_.range));
  }
  return static_cast<std::uint32_t>(kept);
}

int MergeRatioSampler::sample_offset(RandomStream& rng) const {
  const double u = rng.uniform();
  for (std::size_t i = 0; i < cdf_.size(); ++i)
    if (u < cdf_[i]) return table_[i].t;
  return table_.back().t;
}

std::vector<TableEntry> distribution_table(const MergeRatioSampler& s) {
  return {s.table().begin(), s.table().end()};
}

double total_variation(std::span<const TableEntry> table, std::span<const std::uint64_t> counts) {
  if (table.size() != counts.size()) throw std::invalid_argument("total_variation: size mismatch");
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  if (n == 0) throw std::invalid_argument("total_variation: no samples");
  double tv = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i)
    tv += std::abs(static_cast<double>(counts[i]) / static_cast<double>(n) - table[i].probability);
  return 0.5 * tv;
}

bool is_perfect_square(std::uint64_t n) {
  const auto r = isqrt(n);
  return r * r == n;
}

Kind parse_kind(const std::string& s) {
  if (s == "exponential") return Kind::kExponential;
  if (s == "gaussian") return Kind::kGaussian;
  throw std::invalid_argument("unknown sampler kind '" + s + "' (expected exponential|gaussian)");
}

Version parse_version(const std::string& s) {
  if (s == "R") return Version::kR;
  if (s == "G+R" || s == "GR") return Version::kGR;
  if (s == "G") return Version::kG;
  throw std::invalid_argument("unknown version '" + s + "' (expected R|G+R|G)");
}

std::string to_string(Kind k) { return k == Kind::kExponential ? "exponential" : "gaussian"; }

std::string to_string(Version v) {
  switch (v) {
    case Version::kR: return "R";
    case Version::kGR: return "G+R";
    case Version::kG: return "G";
  }
  return "?";
}

}  // namespace mvq::sampler
