#include "mergevq/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mvq {

namespace {

std::string shapes(const Matrix& a, const Matrix& b) {
  return a.shape_string() + " and " + b.shape_string();
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                " does not match " + shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << "(" << rows_ << "x" << cols_ << ")";
  return os.str();
}

AttentionMask::AttentionMask(std::size_t q, std::size_t k, bool fill)
    : queries(q), keys(k), allowed(q * k, fill ? 1 : 0) {}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask m(n, n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
  return m;
}

std::uint64_t RandomStream::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomStream::uniform_int(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("RandomStream::uniform_int: bound must be > 0");
  // Reject the top partial bucket so every residue is equally likely.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double RandomStream::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RandomStream RandomStream::split() { return RandomStream(next_u64()); }

std::vector<double> rng_normal(RandomStream& stream, std::size_t n) {
  std::vector<double> out(n);
  for (auto& x : out) x = stream.normal();
  return out;
}

Matrix random_normal_matrix(RandomStream& stream, std::size_t rows, std::size_t cols,
                            double scale) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = static_cast<float>(stream.normal() * scale);
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch " + shapes(a, b));
  }
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  require_finite(out, "matmul");
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("add: shape mismatch " + shapes(a, b));
  }
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  require_finite(out, "add");
  return out;
}

std::vector<double> softmax(std::span<const double> v, double temperature) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - mx) / temperature);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

namespace {

// Width 0 means runtime width. Fixed widths let the inner loops stay in
// registers; the summation order is the same either way.
template <std::size_t D, std::size_t DV>
void attend_rows(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const double> key_bias,
                 const AttentionMask* mask, double scale, Matrix& out) {
  const std::size_t d = D != 0 ? D : k.cols();
  const std::size_t dv = DV != 0 ? DV : v.cols();
  const std::size_t nk = k.rows();
  std::vector<double> scores(nk);
  std::vector<double> acc_buf(DV == 0 ? dv : 0);
  std::vector<double> qd_buf(D == 0 ? d : 0);
  std::array<double, (D == 0 ? 1 : D)> qd_fixed{};
  std::array<double, (DV == 0 ? 1 : DV)> acc_fixed{};
  double* qd = D == 0 ? qd_buf.data() : qd_fixed.data();
  double* acc = DV == 0 ? acc_buf.data() : acc_fixed.data();
  const float* kdata = k.data().data();
  const float* vdata = v.data().data();
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto qi = q.row(i);
    for (std::size_t c = 0; c < d; ++c) qd[c] = qi[c];
    const std::uint8_t* admit = mask != nullptr ? mask->allowed.data() + i * nk : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < nk; ++j) {
      if (admit != nullptr && admit[j] == 0) continue;
      const float* kj = kdata + j * d;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += qd[c] * kj[c];
      scores[j] = dot * scale;
    }
    for (std::size_t j = 0; j < nk; ++j) {
      if (admit != nullptr && admit[j] == 0) continue;
      if (!key_bias.empty()) scores[j] += key_bias[j];
      mx = std::max(mx, scores[j]);
      any = true;
    }
    if (!any) {
      throw std::invalid_argument("attention: query row " + std::to_string(i) +
                                  " has every key masked");
    }
    double denom = 0.0;
    std::fill(acc, acc + dv, 0.0);
    for (std::size_t j = 0; j < nk; ++j) {
      if (admit != nullptr && admit[j] == 0) continue;
      const double w = std::exp(scores[j] - mx);
      denom += w;
      const float* vj = vdata + j * dv;
      for (std::size_t c = 0; c < dv; ++c) acc[c] += w * vj[c];
    }
    for (std::size_t c = 0; c < dv; ++c) out(i, c) = static_cast<float>(acc[c] / denom);
  }
}

}  // namespace

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v,
                 std::span<const double> key_bias, const AttentionMask* mask) {
  if (q.cols() != k.cols()) {
    throw std::invalid_argument("attention: query/key width mismatch " + shapes(q, k));
  }
  if (v.rows() != k.rows()) {
    throw std::invalid_argument("attention: key/value count mismatch " + shapes(k, v));
  }
  if (k.rows() == 0) throw std::invalid_argument("attention: no keys");
  if (!key_bias.empty() && key_bias.size() != k.rows()) {
    throw std::invalid_argument("attention: bias length " + std::to_string(key_bias.size()) +
                                " != key count " + std::to_string(k.rows()));
  }
  if (mask != nullptr && (mask->queries != q.rows() || mask->keys != k.rows())) {
    throw std::invalid_argument("attention: mask shape does not match (queries, keys)");
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Matrix out(q.rows(), v.cols());
  const std::size_t d = k.cols();
  const std::size_t dv = v.cols();
  if (d == 4 && dv == 4) {
    attend_rows<4, 4>(q, k, v, key_bias, mask, scale, out);
  } else if (d == 8 && dv == 8) {
    attend_rows<8, 8>(q, k, v, key_bias, mask, scale, out);
  } else {
    attend_rows<0, 0>(q, k, v, key_bias, mask, scale, out);
  }
  require_finite(out, "attention");
  return out;
}

Matrix layer_norm(const Matrix& x) {
  constexpr double kEps = 1e-5;
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    double mean = 0.0;
    for (float e : r) mean += e;
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (float e : r) var += (e - mean) * (e - mean);
    var /= static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = static_cast<float>((r[c] - mean) * inv);
  }
  return out;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (auto& e : out.data()) e = e > 0.0f ? e : 0.0f;
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " + shapes(a, b));
  }
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(ad[i]) - bd[i]));
  return m;
}

void require_finite(const Matrix& m, const char* where) {
  for (float e : m.data()) {
    if (!std::isfinite(e)) {
      throw std::runtime_error(std::string(where) + ": non-finite value in result");
    }
  }
}

}  // namespace mvq
