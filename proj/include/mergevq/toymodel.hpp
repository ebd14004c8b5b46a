#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mergevq/numerics.hpp"

namespace mvq::toy {

struct ModelConfig {
  std::uint32_t vocab = 64;
  std::uint32_t embed_dim = 64;
  std::uint32_t layers = 4;
  std::uint32_t l_max = 256;
  std::uint32_t classes = 16;
  std::uint32_t merge_buckets = 33;  // floor(sqrt(kept)) for kept <= 1024
  std::uint32_t ffn_mult = 4;
  /// init_model refuses configurations whose parameters exceed this many bytes.
  std::size_t max_parameter_bytes = std::size_t{64} << 20;

  bool operator==(const ModelConfig&) const = default;
};

enum class TokenKind : std::uint8_t {
  kClass,
  kMergeInstruction,
  kPositionInstruction,
  kContent,
};

/// One input of the decode stream. Each kind has its own embedding table.
struct StepInput {
  TokenKind kind = TokenKind::kContent;
  std::uint32_t id = 0;

  static StepInput content(std::uint32_t id) { return {TokenKind::kContent, id}; }
  static StepInput class_token(std::uint32_t id) { return {TokenKind::kClass, id}; }
  static StepInput merge_instruction(std::uint32_t id) { return {TokenKind::kMergeInstruction, id}; }
  static StepInput position_instruction(std::uint32_t pos) {
    return {TokenKind::kPositionInstruction, pos};
  }
  bool operator==(const StepInput&) const = default;
};

struct ToyLayer {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix w1;              // d x ffn
  Matrix w2;              // ffn x d

  bool operator==(const ToyLayer&) const = default;
};

/// Deterministic random-weight causal decoder.
///
/// The residual stream starts as embed(input) + position_embedding[position].
/// Queries read the residual stream; keys and values of every layer are
/// projections of LN(embed(input)) only, so equal inputs always contribute
/// identical key/value rows regardless of where they occur.
class ToyARModel {
 public:
  static ToyARModel init(std::uint64_t seed, const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::uint32_t vocab() const { return config_.vocab; }
  std::uint32_t dim() const { return config_.embed_dim; }
  std::uint32_t l_max() const { return config_.l_max; }
  std::size_t parameter_count() const;

  std::span<const float> embedding(StepInput input) const;
  std::span<const float> position_embedding(std::size_t position) const {
    return position_embedding_.row(position);
  }
  const std::vector<ToyLayer>& layers() const { return layers_; }
  const Matrix& head() const { return head_; }

  bool operator==(const ToyARModel&) const = default;

 private:
  ModelConfig config_;
  Matrix token_embedding_;
  Matrix position_embedding_;
  Matrix class_embedding_;
  Matrix merge_embedding_;
  Matrix position_instruction_embedding_;
  std::vector<ToyLayer> layers_;
  Matrix head_;  // d x vocab
};

/// Shorthand for ToyARModel::init with the remaining fields at their defaults.
ToyARModel init_model(std::uint64_t seed, std::uint32_t vocab, std::uint32_t embed_dim,
                      std::uint32_t layers, std::uint32_t l_max);

/// What a forward step does with its own key/value rows.
struct CacheWrite {
  enum class Mode { kAppend, kMergeInto, kSkip };
  Mode mode = Mode::kAppend;
  std::size_t entry = 0;

  /// New entry of size 1.
  static CacheWrite append() { return {Mode::kAppend, 0}; }
  /// The step's rows equal those of `entry`; bump its size instead of storing them.
  static CacheWrite merge_into(std::size_t entry) { return {Mode::kMergeInto, entry}; }
  /// Drop the rows entirely.
  static CacheWrite skip() { return {Mode::kSkip, 0}; }
};

class KvCache;

/// One incremental decode step at stream position `position`, which must equal
/// cache.steps(). The cache is updated per `write` before attention, so an
/// appended step attends to itself. Returns next-token logits (length vocab).
std::vector<float> forward_step(const ToyARModel& model, StepInput input, std::size_t position,
                                KvCache& cache, CacheWrite write);

/// Per-layer key/value rows plus a multiplicity per entry.
///
/// An entry of size s stands for s identical key/value rows; attention adds
/// log(s) to its score.
class KvCache {
 public:
  KvCache(std::size_t layers, std::size_t dim);
  explicit KvCache(const ToyARModel& model) : KvCache(model.config().layers, model.dim()) {}

  std::size_t entries() const { return sizes_.size(); }
  /// Forward steps applied so far (== the next stream position).
  std::size_t steps() const { return steps_; }
  std::size_t layers() const { return keys_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const float> key(std::size_t layer, std::size_t entry) const {
    return {keys_[layer].data() + entry * dim_, dim_};
  }
  std::span<const float> value(std::size_t layer, std::size_t entry) const {
    return {values_[layer].data() + entry * dim_, dim_};
  }
  std::uint32_t size_of(std::size_t entry) const { return sizes_[entry]; }
  std::span<const std::uint32_t> sizes() const { return sizes_; }

 private:
  friend std::vector<float> forward_step(const ToyARModel&, StepInput, std::size_t, KvCache&,
                                         CacheWrite);
  std::size_t dim_;
  std::size_t steps_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
  std::vector<std::uint32_t> sizes_;
};

inline std::vector<float> forward_step(const ToyARModel& model, StepInput input,
                                       std::size_t position, KvCache& cache) {
  return forward_step(model, input, position, cache, CacheWrite::append());
}

/// Whole-sequence forward with a causal mask (positions 0..n-1); row i holds
/// the logits after input i. Reference for the incremental path.
Matrix forward_full(const ToyARModel& model, std::span<const StepInput> inputs);

/// Index of the largest entry, lowest index on ties.
std::uint32_t argmax(std::span<const float> logits);

/// Picks the next token from logits; `step` counts chosen tokens from 0.
using TokenChooser = std::function<std::uint32_t(std::size_t step, std::span<const float> logits)>;

TokenChooser greedy_chooser();
/// Softmax(logits / temperature) inverse-CDF sampling from `rng`, which must
/// outlive the chooser.
TokenChooser sampling_chooser(double temperature, RandomStream& rng);
/// Emits ids[step] regardless of logits; throws past the end of the script.
TokenChooser scripted_chooser(std::vector<std::uint32_t> ids);

}  // namespace mvq::toy
