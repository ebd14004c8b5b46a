#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "mergevq/numerics.hpp"

namespace mvq::lfq {

inline constexpr std::size_t kDefaultCodeDim = 18;
inline constexpr std::size_t kMaxCodeDim = 62;

/// A point of the implicit codebook {-1,+1}^d.
///
/// Bit j (0-based) is 1 iff component j is +1, and the index is
/// sum_j 2^j * bit_j: the first component is the least significant bit.
struct LfqCode {
  std::uint32_t dims = 0;
  std::uint64_t index = 0;

  bool bit(std::size_t j) const { return ((index >> j) & 1u) != 0; }
  std::vector<float> values() const;
  bool operator==(const LfqCode&) const = default;
};

struct Quantized {
  std::vector<LfqCode> codes;
  Matrix values;  // entries in {-1, +1}
};

/// Element-wise sign with 0 mapped to +1.
Quantized quantize(const Matrix& z);

/// Rejects entries other than exactly -1 or +1.
std::uint64_t code_index(std::span<const float> code);
std::vector<float> index_code(std::uint64_t index, std::size_t d);

/// Straight-through backward of quantize: the identity on the incoming gradient.
inline Matrix quantize_backward(const Matrix& grad_out) { return grad_out; }

/// mean((z - z_quant)^2) over all entries. z_quant is treated as a constant
/// (stop-gradient), so only z receives gradient.
double commitment_loss(const Matrix& z, const Matrix& z_quant);
/// d commitment_loss / d z = 2 (z - z_quant) / n, in double.
std::vector<double> commitment_loss_grad(const Matrix& z, const Matrix& z_quant);

struct EntropyTerms {
  double sample_entropy = 0.0;    // mean over rows of sum_j H(p_ij)
  double codebook_entropy = 0.0;  // sum_j H(mean_i p_ij)
  double penalty = 0.0;           // sample_entropy - codebook_entropy
};

/// Bit probabilities p_ij = sigmoid(2 z_ij) (the probability of +1); H is the
/// binary entropy in nats. Minimizing the penalty makes individual codes
/// confident while keeping the batch spread over the codebook.
EntropyTerms entropy_penalty(const Matrix& z);

class CodebookStats {
 public:
  explicit CodebookStats(std::size_t dims);

  std::size_t dims() const { return dims_; }
  std::size_t distinct() const { return counts_.size(); }
  std::uint64_t count(std::uint64_t index) const;
  std::uint64_t total() const { return total_; }
  /// distinct / 2^d.
  double usage() const;

  void record(std::span<const LfqCode> codes);

 private:
  std::size_t dims_;
  std::uint64_t total_ = 0;
  std::unordered_map<std::uint64_t, std::uint64_t> counts_;
};

CodebookStats record_usage(CodebookStats stats, std::span<const LfqCode> codes);

/// ".codes" text file: one decimal index per line.
void save_codes(const std::filesystem::path& path, std::span<const LfqCode> codes);
std::vector<std::uint64_t> load_codes(const std::filesystem::path& path);

}  // namespace mvq::lfq
