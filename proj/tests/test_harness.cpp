#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "mergevq/acceptance.hpp"
#include "mergevq/bench.hpp"
#include "mergevq/mergear.hpp"
#include "mergevq/parallel.hpp"

using namespace mvq;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_CASE("thread budget honours MVQ_THREADS and the cap") {
  ::setenv("MVQ_THREADS", "3", 1);
  CHECK(thread_budget() == 3);
  CHECK(thread_budget(2) == 2);
  ::setenv("MVQ_THREADS", "junk", 1);
  CHECK(thread_budget() >= 1);
  ::unsetenv("MVQ_THREADS");
  CHECK(thread_budget(1) == 1);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (std::size_t threads : {1, 2, 4}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, threads, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, threads,
                                 [](std::size_t i) {
                                   if (i == 3) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("duplicate workloads have exactly the requested distinct ids") {
  for (std::size_t unique : {1, 5, 16, 32}) {
    const auto w = bench::duplicate_workload(32, unique, 40, unique * 7);
    CHECK(w.size() == 32);
    CHECK(std::set<std::uint32_t>(w.begin(), w.end()).size() == unique);
    for (auto id : w) CHECK(id < 40);
  }
  CHECK(bench::duplicate_workload(20, 4, 8, 3) == bench::duplicate_workload(20, 4, 8, 3));
  CHECK_THROWS_AS(bench::duplicate_workload(4, 5, 8, 1), std::invalid_argument);
  CHECK_THROWS_AS(bench::duplicate_workload(8, 5, 4, 1), std::invalid_argument);
  CHECK_THROWS_AS(bench::duplicate_workload(8, 0, 4, 1), std::invalid_argument);
  CHECK(bench::unique_for_density(64, 0.0) == 64);
  CHECK(bench::unique_for_density(64, 0.75) == 16);
  CHECK(bench::unique_for_density(3, 0.99) == 1);
}

TEST_CASE("bench compares compressed and full decodes") {
  bench::BenchConfig c;
  c.length = 24;
  c.window = mergear::kUnboundedWindow;
  c.vocab = 32;
  c.embed_dim = 8;
  c.layers = 1;
  c.trials = 2;
  c.densities = {0.0, 0.5};
  const auto r = bench::run_bench(c);
  REQUIRE(r.workloads.size() == 2);
  CHECK(r.workloads[0].duplicates == 0);
  CHECK(r.workloads[0].final_cache_length == 24);
  CHECK(r.workloads[0].compression_ratio == doctest::Approx(1.0));
  CHECK(r.workloads[1].unique == 12);
  CHECK(r.workloads[1].duplicates == 12);
  CHECK(r.workloads[1].final_cache_length == 12);
  for (const auto& w : r.workloads) {
    CHECK(w.equivalent);
    CHECK(w.max_logit_diff < 1e-5);
    CHECK(w.cache_len_trace.size() == 24);
  }
  const auto j = bench::to_json(r);
  CHECK(j["config"]["window"] == "inf");
  CHECK(j["workloads"].size() == 2);
  for (const char* key : {"cpu", "hardware_threads", "threads_used", "compiler", "build_type", "os"})
    CHECK(j["machine"].contains(key));

  c.densities = {1.0};
  CHECK_THROWS_AS(bench::run_bench(c), std::invalid_argument);
  c.densities = {0.0};
  c.vocab = 8;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("built-in fixture matches the shipped fixture file") {
  std::ifstream in(MVQ_FIXTURE_PATH);
  REQUIRE(in);
  CHECK(nlohmann::json::parse(in) == acceptance::default_fixture());
}

TEST_CASE("module filter selects criteria") {
  acceptance::Options o;
  o.only = {"lfq"};
  const auto out = acceptance::run(o);
  // Criterion 5 also covers lfq.
  REQUIRE(out.size() == 2);
  CHECK(out[0].id == 4);
  CHECK(out[1].id == 5);
  CHECK(out[0].passed);
  CHECK(acceptance::all_passed(out));
  const auto line = acceptance::format_line(out[0]);
  CHECK(line.rfind("PASS", 0) == 0);
  CHECK(line.find("lfq-bijection") != std::string::npos);

  o.only = {"nonsense"};
  CHECK_THROWS_AS(acceptance::run(o), std::invalid_argument);
  o.only = {"randgen"};
  CHECK_THROWS_AS(acceptance::run(o), std::invalid_argument);
}

TEST_CASE("bad fixtures fail loudly") {
  acceptance::Options o;
  o.only = {"lfq"};
  o.fixture = write_temp("mvq_corrupt_fixture.json", "{ not json");
  auto out = acceptance::run(o);
  CHECK_FALSE(acceptance::all_passed(out));
  CHECK(out[0].id == 0);

  auto fixture = acceptance::default_fixture();
  fixture["lfq"]["codes"][0]["index"] = 6;
  o.fixture = write_temp("mvq_wrong_fixture.json", fixture.dump());
  out = acceptance::run(o);
  REQUIRE(out.size() == 2);
  CHECK_FALSE(out[0].passed);
  CHECK(out[1].passed);
  CHECK(acceptance::format_line(out[0]).rfind("FAIL", 0) == 0);

  o.fixture = std::filesystem::temp_directory_path() / "mvq_missing_fixture.json";
  std::filesystem::remove(*o.fixture);
  CHECK_THROWS_AS(acceptance::run(o), std::runtime_error);
}
