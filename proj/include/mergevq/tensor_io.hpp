#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mergevq/numerics.hpp"

namespace mvq {

/// MVQT tensor file:
///   "MVQT" | u8 version (=1) | u32 ndim | u32 dims[ndim] | f32 data (row-major)
/// All integers and floats little-endian.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

inline constexpr std::uint8_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void write_matrix(std::ostream& out, const Matrix& m);
/// Accepts 2-d tensors only.
Matrix read_matrix(std::istream& in);

void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

}  // namespace mvq
