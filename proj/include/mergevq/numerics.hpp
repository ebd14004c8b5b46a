#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mvq {

/// Dense row-major matrix of 32-bit floats.
///
/// Every public operation in this library that produces a Matrix guarantees
/// finite entries; reductions accumulate in double.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  /// Builds a matrix from nested row lists; all rows must have equal length.
  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool operator==(const Matrix& other) const = default;

  std::string shape_string() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Boolean (query, key) admission table for masked attention.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;  // queries * keys, row-major

  AttentionMask() = default;
  AttentionMask(std::size_t q, std::size_t k, bool fill);

  /// Standard lower-triangular mask: key j visible to query i iff j <= i.
  static AttentionMask causal(std::size_t n);

  bool operator()(std::size_t q, std::size_t k) const { return allowed[q * keys + k] != 0; }
  void set(std::size_t q, std::size_t k, bool value) { allowed[q * keys + k] = value ? 1 : 0; }
};

/// SplitMix64 counter-based generator.
///
/// The i-th 64-bit output is mix(seed + (i+1) * 0x9E3779B97F4A7C15) with the
/// SplitMix64 finalizer, so integer sequences are identical on every
/// platform. Normal draws use the cosine branch of Box-Muller on two
/// consecutive uniforms: u1 in (0,1], u2 in [0,1).
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  std::uint64_t uniform_int(std::uint64_t bound);
  double normal();

  /// Derives an independent stream (used to give sub-components their own streams).
  RandomStream split();

 private:
  std::uint64_t state_;
};

std::vector<double> rng_normal(RandomStream& stream, std::size_t n);

/// rows x cols matrix of N(0, 1) * scale draws, filled row-major.
Matrix random_normal_matrix(RandomStream& stream, std::size_t rows, std::size_t cols,
                            double scale = 1.0);

/// Standard product; accumulation per output entry is left-to-right in double.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);

/// Softmax of v / temperature with max subtraction.
std::vector<double> softmax(std::span<const double> v, double temperature = 1.0);

/// Scaled dot-product attention, softmax(q k^T / sqrt(d) + bias) v.
///
/// d is k.cols(). key_bias (one entry per key, may be empty) is added to every
/// query's scores; mask (may be null) excludes (query, key) pairs. A query row
/// with no admissible key is rejected.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 std::span<const double> key_bias = {}, const AttentionMask* mask = nullptr);

/// Parameter-free layer normalization per row (eps = 1e-5).
Matrix layer_norm(const Matrix& x);
Matrix relu(const Matrix& x);

/// Largest absolute entry-wise difference; shapes must agree.
double max_abs_diff(const Matrix& a, const Matrix& b);

void require_finite(const Matrix& m, const char* where);

}  // namespace mvq
