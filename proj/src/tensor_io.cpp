#include "mergevq/tensor_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace mvq {

void write_tensor(std::ostream& out, const Tensor& t) {
  std::size_t n = 1;
  for (auto d : t.dims) n *= d;
  if (n != t.data.size()) throw std::invalid_argument("write_tensor: dims do not match data length");
  out.write("MVQT", 4);
  out.put(static_cast<char>(kTensorFormatVersion));
  detail::write_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) detail::write_u32(out, d);
  for (float f : t.data) detail::write_f32(out, f);
  if (!out) throw std::runtime_error("write_tensor: stream error");
}

Tensor read_tensor(std::istream& in) {
  detail::expect_magic(in, "MVQT");
  const int version = in.get();
  if (version != kTensorFormatVersion) {
    throw std::runtime_error("MVQT: unsupported version " + std::to_string(version));
  }
  Tensor t;
  const std::uint32_t ndim = detail::read_u32(in, "MVQT ndim");
  if (ndim > 8) throw std::runtime_error("MVQT: implausible ndim " + std::to_string(ndim));
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    t.dims.push_back(detail::read_u32(in, "MVQT dims"));
    n *= t.dims.back();
  }
  if (n > (std::size_t{1} << 32)) throw std::runtime_error("MVQT: tensor too large");
  t.data.resize(n);
  for (auto& f : t.data) {
    f = detail::read_f32(in, "MVQT data");
    if (!std::isfinite(f)) throw std::runtime_error("MVQT: non-finite value");
  }
  return t;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  Tensor t{{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
           {m.data().begin(), m.data().end()}};
  write_tensor(out, t);
}

Matrix read_matrix(std::istream& in) {
  Tensor t = read_tensor(in);
  if (t.dims.size() != 2) {
    throw std::runtime_error("MVQT: expected a 2-d tensor, got ndim=" + std::to_string(t.dims.size()));
  }
  return Matrix(t.dims[0], t.dims[1], std::move(t.data));
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_matrix(out, m);
}

Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_matrix(in);
}

}  // namespace mvq
