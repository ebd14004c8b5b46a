#pragma once

#include <cstdint>
#include <vector>

#include "mergevq/numerics.hpp"
#include "mergevq/recovery.hpp"
#include "mergevq/tome.hpp"
#include "mergevq/toymodel.hpp"

namespace mvq::randgen {

/// One random-order generation.
///
/// Slot n of the order is the n-th generated token; order[n] names the merged
/// token (cluster slot in [0, k)) it fills. Stream layout: class at 0, the
/// position instruction for step n at 2n + 1, the generated token at 2n + 2.
struct RandomOrderTrace {
  std::vector<std::uint32_t> order;
  std::vector<toy::StepInput> stream;
  std::vector<std::uint32_t> tokens;  // tokens[n] was generated at step n

  std::size_t k() const { return order.size(); }
  /// Tokens re-sorted into slot order: result[order[n]] = tokens[n].
  std::vector<std::uint32_t> raster_tokens() const;
};

/// Uniform permutation of [0, k) (Fisher-Yates, back to front).
std::vector<std::uint32_t> sample_permutation(std::size_t k, RandomStream& rng);

/// Decodes k tokens in a given order; order must be a permutation of [0, k).
RandomOrderTrace decode_in_order(const toy::ToyARModel& model, std::uint32_t class_id,
                                 std::vector<std::uint32_t> order, const toy::TokenChooser& chooser);

/// Samples the order from rng, then decodes.
RandomOrderTrace random_order_decode(const toy::ToyARModel& model, std::uint32_t class_id,
                                     std::size_t k, RandomStream& rng,
                                     const toy::TokenChooser& chooser = toy::greedy_chooser());

struct PipelineResult {
  Matrix z_k;                             // k x d, rows in slot order
  recovery::SourcePrediction prediction;  // the S used for expansion
  Matrix expanded;                        // l x d
};

/// Token ids -> LFQ code rows -> source prediction -> token expansion.
///
/// When source_override is non-null it replaces the predicted S (the recovery
/// model is not run) and must be k x l.
PipelineResult generate_pipeline(const RandomOrderTrace& trace,
                                 const recovery::RecoveryModel& recovery, std::size_t lfq_dim,
                                 std::size_t l, const tome::SourceMatrix* source_override = nullptr);

}  // namespace mvq::randgen
