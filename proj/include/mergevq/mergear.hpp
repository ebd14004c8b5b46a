#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "mergevq/numerics.hpp"
#include "mergevq/tome.hpp"
#include "mergevq/toymodel.hpp"

namespace mvq::mergear {

/// kLossy drops duplicate key/value rows outright. kCompensated also bumps the
/// surviving entry's size so attention adds log(s); with the toy model's
/// content-addressed keys this reproduces uncompressed decoding exactly.
enum class Mode { kLossy, kCompensated };

inline constexpr std::size_t kUnboundedWindow = std::numeric_limits<std::size_t>::max();

/// Causal mask that admits only the first occurrence of each cluster.
///
/// Indices are generation steps: step t produces raster position order[t].
/// Key u is visible to query t iff u <= t and position order[u] is the first
/// position of its cluster to be generated.
class DedupCausalMask {
 public:
  DedupCausalMask() = default;
  DedupCausalMask(std::size_t l, std::vector<std::uint8_t> allowed)
      : l_(l), allowed_(std::move(allowed)) {}

  std::size_t length() const { return l_; }
  bool allowed(std::size_t query, std::size_t key) const { return allowed_[query * l_ + key] != 0; }
  /// Keys visible to one query, ascending.
  std::vector<std::uint32_t> keys_for(std::size_t query) const;
  AttentionMask to_attention_mask() const;

  bool operator==(const DedupCausalMask&) const = default;

 private:
  std::size_t l_ = 0;
  std::vector<std::uint8_t> allowed_;
};

DedupCausalMask build_causal_mask(const tome::SourceMatrix& s, std::span<const std::uint32_t> order);
/// Raster order (identity permutation).
DedupCausalMask build_causal_mask(const tome::SourceMatrix& s);

/// Clusters of equal token ids, numbered in order of first occurrence.
tome::SourceMatrix trace_source(std::span<const std::uint32_t> tokens);

struct PositionEntry {
  std::uint32_t position = 0;
  std::uint32_t token = 0;
  /// Positions represented (1 + duplicates folded in); meaningful for non-redundant entries.
  std::uint32_t size = 1;
  bool redundant = false;
  /// For redundant entries, the position of the surviving occurrence; else == position.
  std::uint32_t first_position = 0;
};

/// Ledger of generated raster positions.
///
/// Non-redundant entries are kept forever. Redundant entries are dropped once
/// their position falls outside the window.
class PositionCache {
 public:
  std::span<const PositionEntry> entries() const { return entries_; }
  /// The raster position the next generated token will take.
  std::uint32_t next_position() const { return next_position_; }

  std::size_t non_redundant_count() const;
  std::vector<std::uint32_t> non_redundant_positions() const;
  const PositionEntry* find(std::uint32_t position) const;

  /// Records a fresh token at next_position().
  void add_token(std::uint32_t token);
  /// Records a duplicate of the entry at first_position at next_position().
  void add_duplicate(std::uint32_t token, std::uint32_t first_position);
  /// Drops redundant entries with position < next_position() - window.
  void evict(std::size_t window);

 private:
  std::vector<PositionEntry> entries_;
  std::uint32_t next_position_ = 0;
};

/// The first occurrence of `token` among non-redundant entries whose position
/// lies in the last `window` positions ([next - window, next)).
std::optional<std::uint32_t> detect_duplicate(std::uint32_t token, const PositionCache& cache,
                                              std::size_t window);

/// Merge-instruction id for a target kept-token count: floor(sqrt(kept)),
/// clamped to the table size.
std::uint32_t merge_instruction_bucket(std::size_t kept_tokens, std::uint32_t buckets);

/// Incremental MergeAR decoder over a toy model.
///
/// Stream layout: class token at position 0, merge instruction at 1, raster
/// token t at stream position t + 2.
class MergeArSession {
 public:
  MergeArSession(const toy::ToyARModel& model, Mode mode, std::size_t window);

  /// Feeds the two prefix tokens; returns logits for raster token 0.
  std::vector<float> start(std::uint32_t class_id, std::uint32_t merge_instruction);
  /// Feeds the token generated for the next raster position; returns logits for the one after.
  std::vector<float> feed(std::uint32_t token);

  const PositionCache& positions() const { return positions_; }
  const toy::KvCache& kv() const { return kv_; }
  /// Content entries held in the KV cache (prefix entries excluded).
  std::size_t cache_length() const { return kv_.entries() - 2; }
  std::size_t duplicates() const { return duplicates_; }
  Mode mode() const { return mode_; }
  std::size_t window() const { return window_; }

 private:
  const toy::ToyARModel& model_;
  Mode mode_;
  std::size_t window_;
  toy::KvCache kv_;
  PositionCache positions_;
  std::vector<std::size_t> kv_entry_of_position_;
  std::size_t duplicates_ = 0;
  bool started_ = false;
};

struct DecodeStats {
  std::size_t duplicates = 0;
  std::vector<std::size_t> cache_len_trace;  // content cache length after each token
  std::vector<std::int64_t> step_ns;         // wall time of each token's forward step
};

struct DecodeResult {
  std::vector<std::uint32_t> tokens;
  std::vector<std::vector<float>> logits;  // logits[t] produced tokens[t]
  PositionCache positions;
  DecodeStats stats;
};

/// Generates l raster tokens with duplicate detection and KV compression.
DecodeResult decode_raster(const toy::ToyARModel& model, std::uint32_t class_id,
                           std::uint32_t merge_instruction, std::size_t l, Mode mode,
                           std::size_t window, const toy::TokenChooser& chooser);

struct OracleResult {
  std::vector<std::uint32_t> tokens;
  std::vector<std::vector<float>> logits;
  std::vector<std::int64_t> step_ns;
};

/// Plain uncompressed KV decode with the same stream layout.
OracleResult decode_full_oracle(const toy::ToyARModel& model, std::uint32_t class_id,
                                std::uint32_t merge_instruction, std::size_t l,
                                const toy::TokenChooser& chooser);

/// Largest absolute logit difference over all steps; traces must have equal shape.
double max_logit_diff(const std::vector<std::vector<float>>& a,
                      const std::vector<std::vector<float>>& b);

}  // namespace mvq::mergear
