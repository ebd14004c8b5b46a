#include <doctest.h>

#include <stdexcept>
#include <set>

#include "mergevq/mergear.hpp"

using namespace mvq;
using namespace mvq::mergear;
using mvq::tome::SourceMatrix;

namespace {

toy::ToyARModel model(std::uint32_t l_max = 40) {
  toy::ModelConfig c;
  c.vocab = 10;
  c.embed_dim = 8;
  c.layers = 2;
  c.l_max = l_max;
  c.classes = 2;
  c.merge_buckets = 6;
  return toy::ToyARModel::init(17, c);
}

// Independent mask oracle: key u visible to query t iff u <= t and no earlier
// step generated a position of the same cluster.
bool oracle_allowed(const SourceMatrix& s, const std::vector<std::uint32_t>& order, std::size_t t,
                    std::size_t u) {
  if (u > t) return false;
  for (std::size_t w = 0; w < u; ++w)
    if (s.cluster_of(order[w]) == s.cluster_of(order[u])) return false;
  return true;
}

}  // namespace

TEST_CASE("trace_source numbers clusters by first occurrence") {
  const std::vector<std::uint32_t> tokens{7, 3, 7, 9, 3};
  CHECK(trace_source(tokens) == SourceMatrix(3, {0, 1, 0, 2, 1}));
  CHECK(trace_source(std::vector<std::uint32_t>{}).l() == 0);
}

TEST_CASE("raster dedup mask") {
  const SourceMatrix s = trace_source(std::vector<std::uint32_t>{1, 2, 1, 3, 2});
  const auto mask = build_causal_mask(s);
  CHECK(mask.length() == 5);
  CHECK(mask.keys_for(4) == std::vector<std::uint32_t>{0, 1, 3});
  CHECK(mask.keys_for(2) == std::vector<std::uint32_t>{0, 1});
  CHECK(mask.keys_for(0) == std::vector<std::uint32_t>{0});
  const auto am = mask.to_attention_mask();
  CHECK(am.queries == 5);
  CHECK(am(4, 3));
  CHECK_FALSE(am(4, 2));
}

TEST_CASE("dedup mask agrees with the oracle for random orders") {
  RandomStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t l = 1 + rng.uniform_int(20);
    std::vector<std::uint32_t> tokens(l), order(l);
    for (auto& t : tokens) t = static_cast<std::uint32_t>(rng.uniform_int(4));
    for (std::size_t i = 0; i < l; ++i) order[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = l; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    const SourceMatrix s = trace_source(tokens);
    const auto mask = build_causal_mask(s, order);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t u = 0; u < l; ++u) REQUIRE(mask.allowed(t, u) == oracle_allowed(s, order, t, u));
  }
}

TEST_CASE("dedup mask validation") {
  const SourceMatrix s = SourceMatrix::identity(3);
  CHECK_THROWS_AS(build_causal_mask(s, std::vector<std::uint32_t>{0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(build_causal_mask(s, std::vector<std::uint32_t>{0, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(build_causal_mask(s, std::vector<std::uint32_t>{0, 1, 3}), std::invalid_argument);
  CHECK(build_causal_mask(s, std::vector<std::uint32_t>{2, 0, 1}).keys_for(2).size() == 3);
}

TEST_CASE("position ledger and duplicate detection") {
  PositionCache c;
  c.add_token(4);
  c.add_token(5);
  CHECK(detect_duplicate(4, c, kUnboundedWindow) == 0u);
  CHECK(detect_duplicate(4, c, 1) == std::nullopt);
  CHECK(detect_duplicate(9, c, kUnboundedWindow) == std::nullopt);
  c.add_duplicate(4, 0);
  CHECK(c.next_position() == 3);
  CHECK(c.non_redundant_count() == 2);
  CHECK(c.non_redundant_positions() == std::vector<std::uint32_t>{0, 1});
  REQUIRE(c.find(0) != nullptr);
  CHECK(c.find(0)->size == 2);
  CHECK(c.find(2)->redundant);
  CHECK(c.find(2)->first_position == 0);
  CHECK_THROWS_AS(c.add_duplicate(4, 2), std::logic_error);
  CHECK_THROWS_AS(c.add_duplicate(5, 0), std::logic_error);
  CHECK_THROWS_AS(c.add_duplicate(5, 9), std::logic_error);
  c.add_token(6);
  c.evict(1);
  CHECK(c.find(2) == nullptr);
  CHECK(c.entries().size() == 3);
}

TEST_CASE("merge instruction buckets") {
  CHECK(merge_instruction_bucket(0, 33) == 0);
  CHECK(merge_instruction_bucket(15, 33) == 3);
  CHECK(merge_instruction_bucket(16, 33) == 4);
  CHECK(merge_instruction_bucket(256, 33) == 16);
  CHECK(merge_instruction_bucket(1024, 33) == 32);
  CHECK(merge_instruction_bucket(5000, 33) == 32);
  CHECK_THROWS_AS(merge_instruction_bucket(4, 0), std::invalid_argument);
}

TEST_CASE("compensated decode reproduces the full decode") {
  const auto m = model();
  const std::vector<std::uint32_t> script{1, 2, 1, 1, 3, 2, 4, 1, 3, 3, 0, 2};
  const auto full = decode_full_oracle(m, 1, 3, script.size(), toy::scripted_chooser(script));
  const auto comp = decode_raster(m, 1, 3, script.size(), Mode::kCompensated, kUnboundedWindow,
                                  toy::scripted_chooser(script));
  CHECK(comp.tokens == script);
  CHECK(full.tokens == script);
  CHECK(max_logit_diff(full.logits, comp.logits) < 1e-5);
  CHECK(comp.stats.duplicates == 7);
  CHECK(comp.stats.cache_len_trace.back() == 5);
  CHECK(comp.stats.cache_len_trace.size() == script.size());
  CHECK(comp.stats.step_ns.size() == script.size());

  const auto lossy = decode_raster(m, 1, 3, script.size(), Mode::kLossy, kUnboundedWindow,
                                   toy::scripted_chooser(script));
  CHECK(lossy.stats.cache_len_trace.back() == 5);
  CHECK(max_logit_diff(full.logits, lossy.logits) > 1e-6);
}

TEST_CASE("greedy compensated decode chooses the same tokens as the full decode") {
  const auto m = model();
  const auto full = decode_full_oracle(m, 0, 2, 30, toy::greedy_chooser());
  const auto comp = decode_raster(m, 0, 2, 30, Mode::kCompensated, kUnboundedWindow, toy::greedy_chooser());
  CHECK(comp.tokens == full.tokens);
  CHECK(max_logit_diff(full.logits, comp.logits) < 1e-5);
}

TEST_CASE("cache length never exceeds the unique count or the length") {
  const auto m = model();
  RandomStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint32_t> script(20);
    for (auto& t : script) t = static_cast<std::uint32_t>(rng.uniform_int(1 + trial % 6));
    const std::size_t w = 1 + rng.uniform_int(8);
    const auto r = decode_raster(m, 0, 1, script.size(), Mode::kCompensated, w, toy::scripted_chooser(script));
    const std::size_t unique = std::set<std::uint32_t>(script.begin(), script.end()).size();
    for (std::size_t t = 0; t < script.size(); ++t) {
      CHECK(r.stats.cache_len_trace[t] <= t + 1);
      if (t > 0) CHECK(r.stats.cache_len_trace[t] >= r.stats.cache_len_trace[t - 1]);
    }
    const auto ub = decode_raster(m, 0, 1, script.size(), Mode::kCompensated, kUnboundedWindow,
                                  toy::scripted_chooser(script));
    CHECK(ub.stats.cache_len_trace.back() == unique);
    CHECK(r.stats.cache_len_trace.back() >= unique);
  }
}

TEST_CASE("a short window can hold more entries than unique + window") {
  const auto m = model();
  const std::vector<std::uint32_t> script{1, 2, 1, 2};
  const auto r = decode_raster(m, 0, 1, 4, Mode::kCompensated, 1, toy::scripted_chooser(script));
  CHECK(r.stats.duplicates == 0);
  CHECK(r.stats.cache_len_trace.back() == 4);
  const auto r2 = decode_raster(m, 0, 1, 4, Mode::kCompensated, 2, toy::scripted_chooser(script));
  CHECK(r2.stats.duplicates == 2);
  CHECK(r2.stats.cache_len_trace.back() == 2);
}

TEST_CASE("session and decode validation") {
  const auto m = model(10);
  CHECK_THROWS_AS(MergeArSession(m, Mode::kLossy, 0), std::invalid_argument);
  MergeArSession s(m, Mode::kCompensated, 4);
  CHECK_THROWS_AS(s.feed(1), std::logic_error);
  s.start(0, 1);
  CHECK_THROWS_AS(s.start(0, 1), std::logic_error);
  CHECK(s.cache_length() == 0);
  s.feed(3);
  s.feed(3);
  CHECK(s.duplicates() == 1);
  CHECK(s.cache_length() == 1);
  CHECK_THROWS_AS(decode_raster(m, 0, 1, 9, Mode::kLossy, 4, toy::greedy_chooser()), std::invalid_argument);
  CHECK_NOTHROW(decode_raster(m, 0, 1, 8, Mode::kLossy, 4, toy::greedy_chooser()));
  CHECK_THROWS_AS(max_logit_diff({{1.0f}}, {}), std::invalid_argument);
  CHECK_THROWS_AS(max_logit_diff({{1.0f}}, {{1.0f, 2.0f}}), std::invalid_argument);
}
