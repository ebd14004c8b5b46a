#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mergevq/numerics.hpp"
#include "mergevq/tome.hpp"

namespace mvq::recovery {

struct RecoveryConfig {
  std::size_t length = 256;   // L, number of recovery queries
  std::size_t code_dim = 18;  // width of the quantized tokens
  std::size_t hidden = 384;
  std::size_t ffn = 1536;
};

/// Source recovery decoder: L learnable queries, one cross-attention block
/// over the (projected) quantized tokens, then two self-attention blocks.
///
/// Blocks use the pre-norm layout of tome::transformer_layer. The refined
/// queries are projected back to code_dim so they can be scored directly
/// against the quantized tokens.
struct RecoveryModel {
  Matrix queries;      // L x hidden
  Matrix input_proj;   // code_dim x hidden
  tome::LayerWeights cross;
  std::array<tome::LayerWeights, 2> self;
  Matrix output_proj;  // hidden x code_dim

  static RecoveryModel init(const RecoveryConfig& config, std::uint64_t seed);

  std::size_t length() const { return queries.rows(); }
  std::size_t hidden() const { return queries.cols(); }
  std::size_t code_dim() const { return input_proj.rows(); }

  /// Throws if parameter shapes are inconsistent or any entry is non-finite.
  void validate() const;
};

/// Affinities of the refined queries against the quantized tokens.
struct SourceLogits {
  std::size_t l = 0;
  std::size_t k = 0;
  Matrix scores;              // L x K
  std::vector<double> probs;  // L x K row-major, softmax over each row

  double prob(std::size_t j, std::size_t i) const { return probs[j * k + i]; }
};

/// Cross-attention block: queries come from x, keys and values from memory.
Matrix cross_attention_block(const Matrix& x, const Matrix& memory, const tome::LayerWeights& w);

/// Refined queries Q~ (L x code_dim).
Matrix refine_queries(const RecoveryModel& model, const Matrix& z_quant);

SourceLogits recovery_forward(const RecoveryModel& model, const Matrix& z_quant);

/// Builds logits whose probabilities are the given row-stochastic table.
SourceLogits logits_from_probs(std::size_t l, std::size_t k, std::vector<double> probs);

struct SourcePrediction {
  tome::SourceMatrix source;
  std::vector<std::uint32_t> empty_clusters;

  /// True when some cluster received no position.
  bool degenerate() const { return !empty_clusters.empty(); }
};

/// Row-wise argmax (ties to the lowest cluster index).
SourcePrediction predict_source(const SourceLogits& logits);

inline constexpr double kProbClamp = 1e-7;

/// Summed binary cross-entropy between probs (L x K) and truth^T, with probs
/// clamped to [eps, 1 - eps].
double source_loss(std::span<const double> probs, std::size_t l, std::size_t k,
                   const tome::SourceMatrix& truth);
double source_loss(const SourceLogits& logits, const tome::SourceMatrix& truth);

/// d source_loss / d probs; zero where the clamp is active.
std::vector<double> source_loss_grad(std::span<const double> probs, std::size_t l, std::size_t k,
                                     const tome::SourceMatrix& truth);
std::vector<double> source_loss_grad(const SourceLogits& logits, const tome::SourceMatrix& truth);

/// S^T z_quant: row j of the result is the row of z_quant that owns position j.
Matrix recover_tokens(const Matrix& z_quant, const tome::SourceMatrix& s);

}  // namespace mvq::recovery
