#include <doctest.h>

#include <stdexcept>
#include <cmath>
#include <sstream>
#include <vector>

#include "mergevq/numerics.hpp"
#include "mergevq/tensor_io.hpp"

using namespace mvq;

namespace {

// Long-double reference; no max subtraction, so it only suits small scores.
Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                       const std::vector<double>& bias, const AttentionMask* mask) {
  Matrix out(q.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    long double denom = 0;
    std::vector<long double> acc(v.cols(), 0);
    for (std::size_t j = 0; j < k.rows(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      long double s = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += (long double)q(i, c) * k(j, c);
      s /= std::sqrt((long double)q.cols());
      if (!bias.empty()) s += bias[j];
      const long double w = std::exp(s);
      denom += w;
      for (std::size_t c = 0; c < v.cols(); ++c) acc[c] += w * v(j, c);
    }
    for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) = static_cast<float>(acc[c] / denom);
  }
  return out;
}

}  // namespace

TEST_CASE("SplitMix64 reference outputs") {
  RandomStream a(0);
  CHECK(a.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(a.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(a.next_u64() == 0x06c45d188009454fULL);
  RandomStream b(42);
  CHECK(b.next_u64() == 0xbdd732262feb6e95ULL);
}

TEST_CASE("uniform draws stay in range and normals look standard") {
  RandomStream rng(7);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const auto k = rng.uniform_int(5);
    REQUIRE(k < 5);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("split streams are deterministic and distinct") {
  RandomStream a(3), b(3);
  auto sa = a.split();
  auto sb = b.split();
  CHECK(sa.next_u64() == sb.next_u64());
  CHECK(a.next_u64() != sa.next_u64());
}

TEST_CASE("matrix construction and shape errors") {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(m.rows() == 2);
  CHECK(m(1, 0) == 3.0f);
  CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<float>{1, 2, 3}), std::invalid_argument);
  CHECK(matmul(m, Matrix::identity(2)) == m);
  CHECK(transpose(transpose(m)) == m);
  CHECK(matmul(m, m) == Matrix::from_rows({{7, 10}, {15, 22}}));
  CHECK_THROWS_AS(matmul(m, Matrix(3, 1)), std::invalid_argument);
  CHECK_THROWS_AS(add(m, Matrix(2, 3)), std::invalid_argument);
  CHECK(add(m, m) == Matrix::from_rows({{2, 4}, {6, 8}}));
}

TEST_CASE("softmax sums to one and rejects bad input") {
  const std::vector<double> v{1.0, 2.0, 3.0, 1000.0};
  const auto p = softmax(v);
  double s = 0;
  for (double x : p) s += x;
  CHECK(s == doctest::Approx(1.0));
  CHECK(p[3] == doctest::Approx(1.0));
  const auto hot = softmax(std::vector<double>{0.0, std::log(3.0)});
  CHECK(hot[1] == doctest::Approx(0.75));
  CHECK_THROWS_AS(softmax(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(softmax(v, 0.0), std::invalid_argument);
}

TEST_CASE("attention matches a long-double reference for all kernel widths") {
  RandomStream rng(11);
  for (std::size_t d : {3, 4, 8, 5}) {
    for (std::size_t dv : {4, 8, 2}) {
      const Matrix q = random_normal_matrix(rng, 7, d);
      const Matrix k = random_normal_matrix(rng, 9, d);
      const Matrix v = random_normal_matrix(rng, 9, dv);
      const auto bias = rng_normal(rng, 9);
      AttentionMask mask(7, 9, true);
      for (std::size_t i = 0; i < 7; ++i) mask.set(i, (i * 3) % 9, false);
      CHECK(max_abs_diff(attention(q, k, v), naive_attention(q, k, v, {}, nullptr)) < 1e-6);
      CHECK(max_abs_diff(attention(q, k, v, bias, &mask), naive_attention(q, k, v, bias, &mask)) < 1e-6);
    }
  }
}

TEST_CASE("attention with a single admissible key returns that value row") {
  const Matrix q = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix k = Matrix::from_rows({{5, 5}, {-1, 2}});
  const Matrix v = Matrix::from_rows({{1, 2}, {3, 4}});
  const auto mask = AttentionMask::causal(2);
  const Matrix out = attention(q, k, v, {}, &mask);
  CHECK(out(0, 0) == 1.0f);
  CHECK(out(0, 1) == 2.0f);
}

TEST_CASE("attention validation") {
  const Matrix a(2, 3), b(2, 4);
  CHECK_THROWS_AS(attention(a, b, b), std::invalid_argument);
  CHECK_THROWS_AS(attention(a, a, Matrix(3, 3)), std::invalid_argument);
  CHECK_THROWS_AS(attention(a, Matrix(0, 3), Matrix(0, 3)), std::invalid_argument);
  const std::vector<double> bias{1.0};
  CHECK_THROWS_AS(attention(a, a, a, bias), std::invalid_argument);
  AttentionMask none(2, 2, false);
  CHECK_THROWS_AS(attention(a, a, a, {}, &none), std::invalid_argument);
  AttentionMask wrong(3, 2, true);
  CHECK_THROWS_AS(attention(a, a, a, {}, &wrong), std::invalid_argument);
}

TEST_CASE("layer norm gives zero mean and unit variance rows") {
  RandomStream rng(5);
  const Matrix x = random_normal_matrix(rng, 4, 16, 3.0);
  const Matrix y = layer_norm(x);
  for (std::size_t i = 0; i < 4; ++i) {
    double m = 0, s = 0;
    for (float e : y.row(i)) m += e;
    m /= 16;
    for (float e : y.row(i)) s += (e - m) * (e - m);
    CHECK(std::abs(m) < 1e-5);
    CHECK(s / 16 == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(relu(Matrix::from_rows({{-1, 2}})) == Matrix::from_rows({{0, 2}}));
}

TEST_CASE("require_finite and max_abs_diff") {
  Matrix m(1, 2);
  m(0, 1) = std::nanf("");
  CHECK_THROWS(require_finite(m, "t"));
  CHECK(max_abs_diff(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{1, 4.5}})) == 2.5);
  CHECK_THROWS_AS(max_abs_diff(Matrix(1, 2), Matrix(2, 1)), std::invalid_argument);
}

TEST_CASE("MVQT round trip and byte layout") {
  const Matrix m = Matrix::from_rows({{1.5f, -2}, {0, 3}, {4, 5}});
  std::stringstream ss;
  write_matrix(ss, m);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 1 + 4 + 8 + 6 * 4);
  CHECK(bytes.substr(0, 4) == "MVQT");
  CHECK(bytes[4] == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 2);  // ndim, little-endian
  CHECK(static_cast<unsigned char>(bytes[9]) == 3);  // rows
  CHECK(read_matrix(ss) == m);
}

TEST_CASE("MVQT rejects malformed input") {
  {
    std::stringstream ss("MVQX");
    CHECK_THROWS_AS(read_tensor(ss), std::runtime_error);
  }
  {
    std::stringstream ss;
    write_matrix(ss, Matrix(2, 2));
    std::string bytes = ss.str();
    bytes[4] = 9;
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(read_tensor(bad), std::runtime_error);
    std::stringstream cut(ss.str().substr(0, ss.str().size() - 2));
    CHECK_THROWS_AS(read_tensor(cut), std::runtime_error);
  }
  {
    std::stringstream ss;
    write_tensor(ss, Tensor{{2, 2, 1}, std::vector<float>(4, 1.0f)});
    CHECK_THROWS_AS(read_matrix(ss), std::runtime_error);
  }
  std::stringstream out;
  CHECK_THROWS_AS(write_tensor(out, Tensor{{3}, {1.0f}}), std::invalid_argument);
}
