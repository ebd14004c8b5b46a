#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mergevq/numerics.hpp"

namespace mvq::tome {

/// Binary K x L assignment of original token positions to merged clusters.
///
/// Stored in column form: assignment()[j] is the row owning original position
/// j, so every column holds exactly one 1 by construction. Row coverage (each
/// cluster owns at least one position) holds for everything produced by the
/// encoder but not necessarily for predicted sources; see is_partition().
class SourceMatrix {
 public:
  SourceMatrix() = default;
  SourceMatrix(std::size_t k, std::vector<std::uint32_t> assignment);

  static SourceMatrix identity(std::size_t l);

  std::size_t k() const { return k_; }
  std::size_t l() const { return assignment_.size(); }
  std::uint32_t cluster_of(std::size_t position) const { return assignment_[position]; }
  std::span<const std::uint32_t> assignment() const { return assignment_; }

  /// Entry S(i, j).
  bool operator()(std::size_t i, std::size_t j) const { return assignment_[j] == i; }

  std::vector<std::uint32_t> row_counts() const;
  std::vector<std::uint32_t> empty_rows() const;
  bool is_partition() const { return empty_rows().empty(); }

  /// Dense K x L 0/1 matrix.
  Matrix to_dense() const;

  bool operator==(const SourceMatrix&) const = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::uint32_t> assignment_;
};

/// Boolean product outer * inner: position j goes to outer.cluster_of(inner.cluster_of(j)).
SourceMatrix compose_source(const SourceMatrix& outer, const SourceMatrix& inner);

/// MVQS file: "MVQS" | u32 k | u32 l | u32 assignment[l], little-endian.
void write_source(std::ostream& out, const SourceMatrix& s);
SourceMatrix read_source(std::istream& in);
void save_source(const std::filesystem::path& path, const SourceMatrix& s);
SourceMatrix load_source(const std::filesystem::path& path);

/// Merged tokens with their sizes and ancestry.
struct TokenState {
  Matrix tokens;
  std::vector<std::uint32_t> sizes;
  SourceMatrix source;

  /// Unmerged state: sizes all 1, source = I_L.
  static TokenState initial(Matrix tokens);

  /// Checks row counts agree, sizes are positive, and sizes match source row counts.
  void validate() const;

  /// log(s) per token, the proportional-attention key bias.
  std::vector<double> log_sizes() const;
};

/// One selected pair: a indexes group A (even positions), b group B (odd positions).
struct MergePair {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  double similarity = 0.0;

  std::size_t token_a() const { return 2 * std::size_t{a}; }
  std::size_t token_b() const { return 2 * std::size_t{b} + 1; }
};

struct MergePlan {
  std::vector<MergePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Cosine-similarity bipartite matching on attention keys.
///
/// Group A holds even positions, group B odd positions. Pairs are taken in
/// order of decreasing similarity (ties: lower A index, then lower B index),
/// skipping any pair whose A or B token is already used, until r pairs are
/// chosen. When the r best A tokens prefer distinct B tokens this is exactly
/// "each A picks its best B, keep the r best"; otherwise a later A falls back
/// to its best free B so every token is merged at most once per layer.
MergePlan bipartite_soft_match(const Matrix& keys, std::size_t r);

/// Replaces each pair by its size-weighted mean at the A token's slot.
/// Survivors keep their relative order; B members disappear.
TokenState apply_merge(const TokenState& state, const MergePlan& plan);

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // dim x dim
  Matrix w1;              // dim x ffn
  Matrix w2;              // ffn x dim

  /// N(0,1) draws scaled by 1/sqrt(fan_in).
  static LayerWeights random(std::size_t dim, std::size_t ffn_dim, RandomStream& rng);
  std::size_t dim() const { return wq.rows(); }
};

struct EncoderWeights {
  std::vector<LayerWeights> layers;

  static EncoderWeights random(std::size_t dim, std::size_t n_layers, RandomStream& rng,
                               std::size_t ffn_mult = 4);
};

/// Pre-norm transformer layer:
///   x1 = x + attention(LN(x) Wq, LN(x) Wk, LN(x) Wv, key_bias) Wo
///   y  = x1 + relu(LN(x1) W1) W2
/// If keys_out is non-null it receives LN(x) Wk.
Matrix transformer_layer(const Matrix& x, const LayerWeights& w,
                         std::span<const double> key_bias = {}, Matrix* keys_out = nullptr);

/// One ToMeAttention step: transformer_layer with log-size bias, then r merges
/// chosen on that layer's keys. The source is composed with the merge.
TokenState tome_attention_layer(const TokenState& state, std::size_t r, const LayerWeights& w);

/// Per-layer merge counts.
class MergeSchedule {
 public:
  MergeSchedule() = default;
  explicit MergeSchedule(std::vector<std::uint32_t> per_layer) : per_layer_(std::move(per_layer)) {}

  std::span<const std::uint32_t> per_layer() const { return per_layer_; }
  std::size_t layers() const { return per_layer_.size(); }
  std::size_t total() const;
  std::uint32_t operator[](std::size_t i) const { return per_layer_[i]; }

  /// Throws unless r_i <= floor(remaining / 2) at every layer starting from l tokens.
  void validate(std::size_t l) const;
  std::size_t kept(std::size_t l) const { return l - total(); }

 private:
  std::vector<std::uint32_t> per_layer_;
};

MergeSchedule constant_schedule(std::size_t r, std::size_t n_layers);

/// Counts proportional to (N - i + 1)^power for layer i in [1, N], rounded with
/// largest remainders (ties to the shallower layer) so they sum to l - k_target.
/// The result is non-increasing. Throws if the rounded schedule is infeasible.
MergeSchedule decreasing_schedule(std::size_t l, std::size_t k_target, std::size_t n_layers,
                                  int power);
inline MergeSchedule linear_schedule(std::size_t l, std::size_t k_target, std::size_t n_layers) {
  return decreasing_schedule(l, k_target, n_layers, 1);
}
inline MergeSchedule square_schedule(std::size_t l, std::size_t k_target, std::size_t n_layers) {
  return decreasing_schedule(l, k_target, n_layers, 2);
}

struct EncodeResult {
  SourceMatrix source;  // K x L
  Matrix tokens;        // K x dim
  std::vector<std::uint32_t> sizes;
};

/// Runs schedule.layers() ToMeAttention layers over tokens (L x dim).
EncodeResult encode(const Matrix& tokens, const MergeSchedule& schedule,
                    const EncoderWeights& weights);

}  // namespace mvq::tome
