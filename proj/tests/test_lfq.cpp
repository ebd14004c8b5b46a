#include <doctest.h>

#include <stdexcept>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mergevq/lfq.hpp"

using namespace mvq;
using namespace mvq::lfq;

TEST_CASE("index convention: first component is the least significant bit") {
  CHECK(code_index(std::vector<float>{1, -1, 1, -1}) == 5);
  CHECK(index_code(0, 3) == std::vector<float>{-1, -1, -1});
  CHECK(index_code(6, 3) == std::vector<float>{-1, 1, 1});
  LfqCode c{4, 5};
  CHECK(c.bit(0));
  CHECK_FALSE(c.bit(1));
  CHECK(c.values() == std::vector<float>{1, -1, 1, -1});
}

TEST_CASE("index and code are inverse bijections for small widths") {
  for (std::size_t d = 1; d <= 10; ++d) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < (1ull << d); ++i) {
      const auto v = index_code(i, d);
      REQUIRE(v.size() == d);
      REQUIRE(code_index(v) == i);
      seen.insert(i);
    }
    CHECK(seen.size() == (1ull << d));
  }
  const std::uint64_t big = (1ull << 61) + 12345;
  CHECK(code_index(index_code(big, 62)) == big);
}

TEST_CASE("index validation") {
  CHECK_THROWS_AS(code_index(std::vector<float>{1, 0.5f}), std::invalid_argument);
  CHECK_THROWS_AS(code_index(std::vector<float>{}), std::invalid_argument);
  CHECK_THROWS_AS(index_code(8, 3), std::invalid_argument);
  CHECK_THROWS_AS(index_code(0, 0), std::invalid_argument);
  CHECK_THROWS_AS(index_code(0, 63), std::invalid_argument);
}

TEST_CASE("quantize takes signs with zero mapped to +1") {
  const Matrix z = Matrix::from_rows({{0.2f, -3, 0}, {-0.0f, 1e-9f, -1e-9f}});
  const auto q = quantize(z);
  CHECK(q.values == Matrix::from_rows({{1, -1, 1}, {1, 1, -1}}));
  CHECK(q.codes[0].index == 0b101);
  CHECK(q.codes[1].index == 0b011);
  CHECK(q.codes[0].dims == 3);
  CHECK(quantize_backward(z) == z);
}

TEST_CASE("commitment loss and its gradient") {
  const Matrix z = Matrix::from_rows({{0.5f, -2}, {1, 0.25f}});
  const Matrix q = quantize(z).values;
  // (0.25 + 1 + 0 + 0.5625) / 4
  CHECK(commitment_loss(z, q) == doctest::Approx(0.453125));
  const auto g = commitment_loss_grad(z, q);
  const double h = 1e-3;
  for (std::size_t i = 0; i < 4; ++i) {
    Matrix zp = z, zm = z;
    zp.data()[i] += static_cast<float>(h);
    zm.data()[i] -= static_cast<float>(h);
    const double fd = (commitment_loss(zp, q) - commitment_loss(zm, q)) / (2 * h);
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-3));
  }
  CHECK_THROWS_AS(commitment_loss(z, Matrix(1, 2)), std::invalid_argument);
}

TEST_CASE("entropy penalty") {
  const auto flat = entropy_penalty(Matrix(3, 2));
  CHECK(flat.sample_entropy == doctest::Approx(2 * std::log(2.0)));
  CHECK(flat.codebook_entropy == doctest::Approx(2 * std::log(2.0)));
  CHECK(flat.penalty == doctest::Approx(0.0));

  // Frozen from an independent double-precision computation.
  const auto t = entropy_penalty(Matrix::from_rows({{0.3f, -0.7f, 2.0f}, {1.2f, 0.1f, -0.4f}}));
  CHECK(t.sample_entropy == doctest::Approx(1.415646337578584).epsilon(1e-6));
  CHECK(t.codebook_entropy == doctest::Approx(1.8361677202148647).epsilon(1e-6));
  CHECK(t.penalty == doctest::Approx(-0.4205213826362808).epsilon(1e-6));

  // Confident, spread codes drive the penalty towards -d ln 2.
  const auto sharp = entropy_penalty(Matrix::from_rows({{10, -10}, {-10, 10}}));
  CHECK(sharp.penalty == doctest::Approx(-2 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("codebook statistics") {
  CodebookStats s(3);
  CHECK(s.usage() == 0.0);
  const std::vector<LfqCode> codes{{3, 1}, {3, 1}, {3, 6}};
  s.record(codes);
  CHECK(s.total() == 3);
  CHECK(s.distinct() == 2);
  CHECK(s.count(1) == 2);
  CHECK(s.count(5) == 0);
  CHECK(s.usage() == doctest::Approx(0.25));
  const auto s2 = record_usage(s, codes);
  CHECK(s2.total() == 6);
  CHECK(s.total() == 3);
  const std::vector<LfqCode> wrong{{4, 1}};
  CHECK_THROWS_AS(s.record(wrong), std::invalid_argument);
  CHECK_THROWS_AS(CodebookStats(0), std::invalid_argument);
}

TEST_CASE(".codes files") {
  const auto dir = std::filesystem::temp_directory_path() / "mvq_test_lfq";
  std::filesystem::create_directories(dir);
  const std::vector<LfqCode> codes{{18, 0}, {18, 262143}, {18, 77}};
  save_codes(dir / "a.codes", codes);
  CHECK(load_codes(dir / "a.codes") == std::vector<std::uint64_t>{0, 262143, 77});
  {
    std::ofstream bad(dir / "b.codes");
    bad << "12\nabc\n";
  }
  CHECK_THROWS_AS(load_codes(dir / "b.codes"), std::runtime_error);
  CHECK_THROWS_AS(load_codes(dir / "missing.codes"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
