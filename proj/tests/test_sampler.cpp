#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mergevq/sampler.hpp"

using namespace mvq;
using namespace mvq::sampler;

namespace {

SamplerConfig make(Kind kind, Version v, KeptRange range) {
  SamplerConfig c;
  c.kind = kind;
  c.version = v;
  c.mapping = default_mapping(v);
  c.range = range;
  return c;
}

void check_table(const MergeRatioSampler& s, const std::vector<std::pair<int, double>>& expect) {
  const auto t = s.table();
  REQUIRE(t.size() == expect.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(t[i].t == expect[i].first);
    CHECK(t[i].probability == doctest::Approx(expect[i].second).epsilon(1e-12));
  }
}

}  // namespace

TEST_CASE("default mappings and ranges") {
  CHECK(default_mapping(Version::kR).base == 6);
  CHECK(default_mapping(Version::kGR).base == 12);
  CHECK(default_mapping(Version::kG).base == 16);
  CHECK(default_range(Version::kR, Kind::kGaussian).lo == 36);
  CHECK(default_range(Version::kGR, Kind::kExponential).hi == 225);
  CHECK(default_range(Version::kG, Kind::kExponential).hi == 1024);
  CHECK(default_range(Version::kG, Kind::kGaussian).lo == 225);
  CHECK(kRangeGrStage2.lo == 144);
}

// Reference tables from an independent enumeration over T.
TEST_CASE("exponential table, G+R stage 1") {
  const MergeRatioSampler s(make(Kind::kExponential, Version::kGR, kRangeGrStage1));
  check_table(s, {{0, 0.6439142598879724}, {1, 0.23688281808991013}, {2, 0.08714431874203257},
                  {3, 0.03205860328008499}});
  CHECK(s.kept_tokens(0) == 144);
  CHECK(s.kept_tokens(3) == 225);
  CHECK(s.kept_tokens(-1) == 121);  // range check only; T = -1 is outside the support
  CHECK_THROWS_AS(s.kept_tokens(-2), std::out_of_range);
  CHECK_THROWS_AS(s.kept_tokens(4), std::out_of_range);
}

TEST_CASE("gaussian tables include negative offsets") {
  const MergeRatioSampler gr(make(Kind::kGaussian, Version::kGR, kRangeGrStage1));
  check_table(gr, {{-1, 0.2570583684642447}, {0, 0.4238175998984713}, {1, 0.2570583684642447},
                   {2, 0.05735747492292101}, {3, 0.0047081882501182806}});
  CHECK(gr.kept_tokens(-1) == 121);

  auto c = make(Kind::kGaussian, Version::kR, kRangeR);
  c.mu = 2;
  c.sigma = 1.5;
  check_table(MergeRatioSampler(c), {{0, 0.12007838424321347}, {1, 0.2338807565853503},
                                     {2, 0.29208171834287244}, {3, 0.2338807565853503},
                                     {4, 0.12007838424321347}});

  check_table(MergeRatioSampler(make(Kind::kGaussian, Version::kG, kRangeGGaussian)),
              {{-1, 0.25702182639486376}, {0, 0.42375735221140753}, {1, 0.25702182639486376},
               {2, 0.05734932128512788}, {3, 0.004707518958771252}, {4, 0.00014215475496584905}});
}

TEST_CASE("exponential G table with lambda 0.5") {
  auto c = make(Kind::kExponential, Version::kG, kRangeGExponential);
  c.lambda = 0.5;
  const MergeRatioSampler s(c);
  REQUIRE(s.table().size() == 17);
  CHECK(s.table()[0].probability == doctest::Approx(0.39354941514499114).epsilon(1e-12));
  CHECK(s.table()[2].probability == doctest::Approx(0.1447787389168873).epsilon(1e-12));
  CHECK(s.kept_tokens(16) == 1024);
}

TEST_CASE("a negative mapping sign flips the support") {
  auto c = make(Kind::kExponential, Version::kG, kRangeGExponential);
  c.mapping = {16, -1};
  const MergeRatioSampler s(c);
  CHECK(s.support() == std::vector<int>{0});
  c.kind = Kind::kGaussian;
  c.range = kRangeGGaussian;
  CHECK(MergeRatioSampler(c).support() == std::vector<int>{-4, -3, -2, -1, 0, 1});
}

TEST_CASE("every kept count is a perfect square inside the range") {
  for (auto v : {Version::kR, Version::kGR, Version::kG}) {
    for (auto k : {Kind::kExponential, Kind::kGaussian}) {
      const MergeRatioSampler s(make(k, v, default_range(v, k)));
      double total = 0;
      for (const auto& e : s.table()) {
        const auto kept = s.kept_tokens(e.t);
        CHECK(is_perfect_square(kept));
        CHECK(kept >= s.config().range.lo);
        CHECK(kept <= s.config().range.hi);
        total += e.probability;
      }
      CHECK(total == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("draws follow the table") {
  const MergeRatioSampler s(make(Kind::kGaussian, Version::kGR, kRangeGrStage1));
  RandomStream rng(99);
  std::vector<std::uint64_t> counts(s.table().size(), 0);
  for (int i = 0; i < 100000; ++i) {
    const int t = s.sample_offset(rng);
    const auto sup = s.support();
    const auto it = std::find(sup.begin(), sup.end(), t);
    REQUIRE(it != sup.end());
    ++counts[static_cast<std::size_t>(it - sup.begin())];
  }
  CHECK(total_variation(s.table(), counts) < 0.01);
  RandomStream r2(99);
  CHECK(is_perfect_square(s.sample_kept(r2)));
}

TEST_CASE("total variation") {
  const std::vector<TableEntry> t{{0, 0.5}, {1, 0.5}};
  CHECK(total_variation(t, std::vector<std::uint64_t>{5, 5}) == 0.0);
  CHECK(total_variation(t, std::vector<std::uint64_t>{10, 0}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(total_variation(t, std::vector<std::uint64_t>{1}), std::invalid_argument);
  CHECK_THROWS_AS(total_variation(t, std::vector<std::uint64_t>{0, 0}), std::invalid_argument);
}

TEST_CASE("config validation") {
  auto c = make(Kind::kExponential, Version::kR, kRangeR);
  c.lambda = 0;
  CHECK_THROWS_AS(MergeRatioSampler{c}, std::invalid_argument);
  c = make(Kind::kGaussian, Version::kR, kRangeR);
  c.sigma = -1;
  CHECK_THROWS_AS(MergeRatioSampler{c}, std::invalid_argument);
  c = make(Kind::kExponential, Version::kR, {50, 60});
  CHECK_THROWS_AS(MergeRatioSampler{c}, std::invalid_argument);
  c = make(Kind::kExponential, Version::kR, {100, 36});
  CHECK_THROWS_AS(MergeRatioSampler{c}, std::invalid_argument);
  c = make(Kind::kExponential, Version::kR, kRangeR);
  c.mapping.sign = 2;
  CHECK_THROWS_AS(MergeRatioSampler{c}, std::invalid_argument);
  c = make(Kind::kGaussian, Version::kR, kRangeR);
  c.mu = 1000;
  c.sigma = 0.1;
  CHECK_THROWS_AS(MergeRatioSampler{c}, std::invalid_argument);
}

TEST_CASE("parsing names") {
  CHECK(parse_version("R") == Version::kR);
  CHECK(parse_version("G+R") == Version::kGR);
  CHECK(parse_version("GR") == Version::kGR);
  CHECK(parse_version("G") == Version::kG);
  CHECK(parse_kind("gaussian") == Kind::kGaussian);
  CHECK(to_string(Version::kGR) == "G+R");
  CHECK(to_string(Kind::kExponential) == "exponential");
  CHECK_THROWS_AS(parse_version("X"), std::invalid_argument);
  CHECK_THROWS_AS(parse_kind("poisson"), std::invalid_argument);
  CHECK(is_perfect_square(0));
  CHECK(is_perfect_square(1024));
  CHECK_FALSE(is_perfect_square(1023));
  CHECK(is_perfect_square(4294967296ull));
}
