#include "mergevq/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "mergevq/mergear.hpp"
#include "mergevq/numerics.hpp"
#include "mergevq/parallel.hpp"
#include "mergevq/toymodel.hpp"

namespace mvq::bench {

namespace {

double mean_ns(const std::vector<std::int64_t>& v) {
  if (v.empty()) return 0.0;
  return static_cast<double>(std::accumulate(v.begin(), v.end(), std::int64_t{0})) /
         static_cast<double>(v.size());
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto s = line.substr(colon + 1);
        s.erase(0, s.find_first_not_of(' '));
        return s;
      }
    }
  }
  return "unknown";
}

}  // namespace

void BenchConfig::validate() const {
  if (length == 0) throw std::invalid_argument("bench: length must be >= 1");
  if (window == 0) throw std::invalid_argument("bench: window must be >= 1");
  if (trials == 0) throw std::invalid_argument("bench: trials must be >= 1");
  if (vocab < 2 || embed_dim == 0 || layers == 0) {
    throw std::invalid_argument("bench: vocab >= 2, embed_dim >= 1 and layers >= 1 required");
  }
  if (densities.empty()) throw std::invalid_argument("bench: no densities");
  for (double d : densities) {
    if (!(d >= 0.0 && d < 1.0)) throw std::invalid_argument("bench: density must lie in [0, 1)");
    if (unique_for_density(length, d) > vocab) {
      throw std::invalid_argument("bench: density " + std::to_string(d) + " needs " +
                                  std::to_string(unique_for_density(length, d)) +
                                  " distinct ids but vocab is " + std::to_string(vocab));
    }
  }
}

std::size_t unique_for_density(std::size_t length, double density) {
  const auto u = static_cast<std::size_t>(std::llround(static_cast<double>(length) * (1.0 - density)));
  return std::clamp<std::size_t>(u, 1, length);
}

std::vector<std::uint32_t> duplicate_workload(std::size_t length, std::size_t unique,
                                              std::uint32_t vocab, std::uint64_t seed) {
  if (length == 0 || unique == 0 || unique > length || unique > vocab) {
    throw std::invalid_argument("duplicate_workload: need 1 <= unique <= min(length, vocab)");
  }
  RandomStream rng(seed);
  std::vector<std::uint32_t> ids(vocab);
  std::iota(ids.begin(), ids.end(), 0u);
  for (std::size_t i = vocab; i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i)]);

  // Choose unique - 1 fresh positions among [1, length).
  std::vector<std::size_t> rest(length - 1);
  std::iota(rest.begin(), rest.end(), std::size_t{1});
  for (std::size_t i = 0; i + 1 < unique; ++i)
    std::swap(rest[i], rest[i + rng.uniform_int(rest.size() - i)]);
  std::vector<bool> fresh(length, false);
  fresh[0] = true;
  for (std::size_t i = 0; i + 1 < unique; ++i) fresh[rest[i]] = true;

  std::vector<std::uint32_t> out;
  out.reserve(length);
  std::size_t emitted = 0;
  for (std::size_t t = 0; t < length; ++t) {
    if (fresh[t]) {
      out.push_back(ids[emitted++]);
    } else {
      out.push_back(ids[rng.uniform_int(emitted)]);
    }
  }
  return out;
}

BenchReport run_bench(const BenchConfig& config) {
  config.validate();
  toy::ModelConfig mc;
  mc.vocab = config.vocab;
  mc.embed_dim = config.embed_dim;
  mc.layers = config.layers;
  mc.l_max = static_cast<std::uint32_t>(config.length + 2);
  const auto model = toy::ToyARModel::init(config.seed, mc);

  BenchReport report;
  report.config = config;
  for (std::size_t di = 0; di < config.densities.size(); ++di) {
    const double density = config.densities[di];
    const std::size_t unique = unique_for_density(config.length, density);
    struct Trial {
      mergear::DecodeResult compressed;
      mergear::OracleResult full;
    };
    std::vector<Trial> trials(config.trials);
    parallel_for(config.trials, thread_budget(), [&](std::size_t i) {
      const auto script = duplicate_workload(config.length, unique, config.vocab,
                                             config.seed * 1000003 + di * 1009 + i);
      const auto class_id = static_cast<std::uint32_t>(i % mc.classes);
      const auto mi = mergear::merge_instruction_bucket(unique, mc.merge_buckets);
      const auto run_full = [&] {
        trials[i].full = mergear::decode_full_oracle(model, class_id, mi, config.length,
                                                     toy::scripted_chooser(script));
      };
      const auto run_compressed = [&] {
        trials[i].compressed =
            mergear::decode_raster(model, class_id, mi, config.length,
                                   mergear::Mode::kCompensated, config.window,
                                   toy::scripted_chooser(script));
      };
      // Alternate which decode runs first so warm-up cost is not charged to one side.
      if (i % 2 == 0) {
        run_full();
        run_compressed();
      } else {
        run_compressed();
        run_full();
      }
    });

    WorkloadResult w;
    w.density = density;
    w.unique = unique;
    std::vector<std::int64_t> full_ns, comp_ns;
    for (const auto& t : trials) {
      full_ns.insert(full_ns.end(), t.full.step_ns.begin(), t.full.step_ns.end());
      comp_ns.insert(comp_ns.end(), t.compressed.stats.step_ns.begin(),
                     t.compressed.stats.step_ns.end());
      const double diff = mergear::max_logit_diff(t.compressed.logits, t.full.logits);
      w.max_logit_diff = std::max(w.max_logit_diff, diff);
      w.equivalent = w.equivalent && diff <= 1e-5 && t.compressed.tokens == t.full.tokens;
    }
    const auto& first = trials.front().compressed;
    w.duplicates = first.stats.duplicates;
    w.final_cache_length = first.stats.cache_len_trace.back();
    w.compression_ratio =
        static_cast<double>(w.final_cache_length) / static_cast<double>(config.length);
    w.cache_len_trace = first.stats.cache_len_trace;
    w.mean_step_ns_full = mean_ns(full_ns);
    w.mean_step_ns_compressed = mean_ns(comp_ns);
    w.speedup = w.mean_step_ns_compressed > 0.0 ? w.mean_step_ns_full / w.mean_step_ns_compressed : 1.0;
    report.workloads.push_back(std::move(w));
  }
  return report;
}

nlohmann::json machine_fingerprint() {
  nlohmann::json j;
  j["cpu"] = cpu_model();
  j["hardware_threads"] = std::thread::hardware_concurrency();
  j["threads_used"] = thread_budget();
#if defined(__clang__)
  j["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
  j["compiler"] = "gcc " __VERSION__;
#else
  j["compiler"] = "unknown";
#endif
#ifdef NDEBUG
  j["build_type"] = "release";
#else
  j["build_type"] = "debug";
#endif
  utsname u{};
  if (uname(&u) == 0) {
    j["os"] = std::string(u.sysname) + " " + u.release;
    j["arch"] = u.machine;
  } else {
    j["os"] = "unknown";
    j["arch"] = "unknown";
  }
  return j;
}

nlohmann::json to_json(const BenchReport& report) {
  const auto& c = report.config;
  nlohmann::json j;
  j["config"] = {{"seed", c.seed},         {"length", c.length},
                 {"window", c.window == mergear::kUnboundedWindow ? nlohmann::json("inf")
                                                                   : nlohmann::json(c.window)},
                 {"vocab", c.vocab},       {"embed_dim", c.embed_dim},
                 {"layers", c.layers},     {"trials", c.trials},
                 {"densities", c.densities}};
  j["workloads"] = nlohmann::json::array();
  for (const auto& w : report.workloads) {
    j["workloads"].push_back({{"density", w.density},
                              {"unique", w.unique},
                              {"duplicates", w.duplicates},
                              {"final_cache_length", w.final_cache_length},
                              {"compression_ratio", w.compression_ratio},
                              {"mean_step_ns_compressed", w.mean_step_ns_compressed},
                              {"mean_step_ns_full", w.mean_step_ns_full},
                              {"speedup", w.speedup},
                              {"max_logit_diff", w.max_logit_diff},
                              {"equivalent", w.equivalent},
                              {"cache_len_trace", w.cache_len_trace}});
  }
  j["machine"] = machine_fingerprint();
  return j;
}

}  // namespace mvq::bench
