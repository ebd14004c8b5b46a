#include "mergevq/randgen.hpp"

#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "mergevq/lfq.hpp"

namespace mvq::randgen {

std::vector<std::uint32_t> RandomOrderTrace::raster_tokens() const {
  std::vector<std::uint32_t> out(order.size());
  for (std::size_t n = 0; n < order.size(); ++n) out[order[n]] = tokens[n];
  return out;
}

std::vector<std::uint32_t> sample_permutation(std::size_t k, RandomStream& rng) {
  std::vector<std::uint32_t> p(k);
  std::iota(p.begin(), p.end(), 0u);
  for (std::size_t i = k; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_int(i)]);
  return p;
}

RandomOrderTrace decode_in_order(const toy::ToyARModel& model, std::uint32_t class_id,
                                 std::vector<std::uint32_t> order,
                                 const toy::TokenChooser& chooser) {
  const std::size_t k = order.size();
  if (k == 0) throw std::invalid_argument("random-order decode: k must be >= 1");
  if (2 * k + 1 > model.l_max()) {
    throw std::invalid_argument("random-order decode: 2k+1 = " + std::to_string(2 * k + 1) +
                                " exceeds l_max " + std::to_string(model.l_max()));
  }
  std::vector<bool> seen(k, false);
  for (auto s : order) {
    if (s >= k || seen[s]) throw std::invalid_argument("random-order decode: order is not a permutation");
    seen[s] = true;
  }

  RandomOrderTrace trace;
  trace.order = std::move(order);
  trace.stream.reserve(2 * k + 1);
  trace.tokens.reserve(k);
  toy::KvCache cache(model);
  auto feed = [&](toy::StepInput in) {
    const std::size_t pos = trace.stream.size();
    trace.stream.push_back(in);
    return toy::forward_step(model, in, pos, cache);
  };
  feed(toy::StepInput::class_token(class_id));
  for (std::size_t n = 0; n < k; ++n) {
    const auto logits = feed(toy::StepInput::position_instruction(trace.order[n]));
    const std::uint32_t token = chooser(n, logits);
    trace.tokens.push_back(token);
    feed(toy::StepInput::content(token));
  }
  return trace;
}

RandomOrderTrace random_order_decode(const toy::ToyARModel& model, std::uint32_t class_id,
                                     std::size_t k, RandomStream& rng,
                                     const toy::TokenChooser& chooser) {
  return decode_in_order(model, class_id, sample_permutation(k, rng), chooser);
}

PipelineResult generate_pipeline(const RandomOrderTrace& trace,
                                 const recovery::RecoveryModel& recovery, std::size_t lfq_dim,
                                 std::size_t l, const tome::SourceMatrix* source_override) {
  const std::size_t k = trace.k();
  if (k == 0) throw std::invalid_argument("generate_pipeline: empty trace");
  if (lfq_dim == 0 || lfq_dim > lfq::kMaxCodeDim) {
    throw std::invalid_argument("generate_pipeline: lfq_dim out of range");
  }
  PipelineResult out;
  out.z_k = Matrix(k, lfq_dim);
  const auto ids = trace.raster_tokens();
  for (std::size_t i = 0; i < k; ++i) {
    if (lfq_dim < 32 && (ids[i] >> lfq_dim) != 0) {
      throw std::invalid_argument("generate_pipeline: token id " + std::to_string(ids[i]) +
                                  " does not fit in " + std::to_string(lfq_dim) + " code bits");
    }
    const auto code = lfq::index_code(ids[i], lfq_dim);
    std::copy(code.begin(), code.end(), out.z_k.row(i).begin());
  }

  if (source_override != nullptr) {
    if (source_override->k() != k || source_override->l() != l) {
      throw std::invalid_argument("generate_pipeline: override source is " +
                                  std::to_string(source_override->k()) + "x" +
                                  std::to_string(source_override->l()) + ", expected " +
                                  std::to_string(k) + "x" + std::to_string(l));
    }
    out.prediction.source = *source_override;
    out.prediction.empty_clusters = source_override->empty_rows();
  } else {
    if (recovery.length() != l || recovery.code_dim() != lfq_dim) {
      throw std::invalid_argument("generate_pipeline: recovery model is configured for L=" +
                                  std::to_string(recovery.length()) + ", d=" +
                                  std::to_string(recovery.code_dim()));
    }
    out.prediction = recovery::predict_source(recovery::recovery_forward(recovery, out.z_k));
  }
  out.expanded = recovery::recover_tokens(out.z_k, out.prediction.source);
  return out;
}

}  // namespace mvq::randgen
