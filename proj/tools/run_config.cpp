#include "run_config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "mergevq/lfq.hpp"

namespace mvq::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: " + where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw std::invalid_argument("config: unknown key '" + where + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& field, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: '" + where + key + "' has the wrong type");
  }
}

}  // namespace

std::size_t parse_window(const std::string& s) {
  if (s == "inf") return mergear::kUnboundedWindow;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v == 0 || s.front() == '-') {
    throw std::invalid_argument("window must be 'inf' or a positive integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

std::string window_string(std::size_t w) {
  return w == mergear::kUnboundedWindow ? "inf" : std::to_string(w);
}

void apply_json(RunConfig& cfg, const json& j) {
  reject_unknown(j,
                 {"seed", "length", "layers", "schedule", "kept", "embed_dim", "code_dim", "sampler",
                  "mergear", "randgen", "recovery", "out_dir"},
                 "");
  read(j, "seed", cfg.seed, "");
  read(j, "length", cfg.length, "");
  read(j, "layers", cfg.layers, "");
  read(j, "schedule", cfg.schedule, "");
  read(j, "kept", cfg.kept, "");
  read(j, "embed_dim", cfg.embed_dim, "");
  read(j, "code_dim", cfg.code_dim, "");
  if (j.contains("out_dir")) {
    std::string dir;
    read(j, "out_dir", dir, "");
    cfg.out_dir = dir;
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    reject_unknown(s, {"version", "kind", "stage", "lambda", "mu", "sigma", "draws"}, "sampler.");
    read(s, "version", cfg.sampler_version, "sampler.");
    read(s, "kind", cfg.sampler_kind, "sampler.");
    read(s, "stage", cfg.sampler_stage, "sampler.");
    read(s, "lambda", cfg.lambda, "sampler.");
    read(s, "mu", cfg.mu, "sampler.");
    read(s, "sigma", cfg.sigma, "sampler.");
    read(s, "draws", cfg.draws, "sampler.");
  }
  if (j.contains("mergear")) {
    const auto& m = j["mergear"];
    reject_unknown(m, {"mode", "window", "temperature"}, "mergear.");
    read(m, "mode", cfg.mode, "mergear.");
    read(m, "temperature", cfg.temperature, "mergear.");
    if (m.contains("window")) {
      const auto& w = m["window"];
      if (w.is_null()) {
        cfg.window.reset();
      } else if (w.is_string()) {
        cfg.window = parse_window(w.get<std::string>());
      } else if (w.is_number_unsigned() && w.get<std::size_t>() > 0) {
        cfg.window = w.get<std::size_t>();
      } else {
        throw std::invalid_argument("config: 'mergear.window' must be \"inf\" or a positive integer");
      }
    }
  }
  if (j.contains("randgen")) {
    reject_unknown(j["randgen"], {"k"}, "randgen.");
    read(j["randgen"], "k", cfg.randgen_k, "randgen.");
  }
  if (j.contains("recovery")) {
    reject_unknown(j["recovery"], {"hidden"}, "recovery.");
    read(j["recovery"], "hidden", cfg.recovery_hidden, "recovery.");
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  RunConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

tome::MergeSchedule RunConfig::merge_schedule() const {
  if (schedule == "constant") {
    const std::size_t removed = length - kept;
    if (removed % layers != 0) {
      throw std::invalid_argument("config: constant schedule needs (length - kept) divisible by layers");
    }
    return tome::constant_schedule(removed / layers, layers);
  }
  if (schedule == "linear") return tome::linear_schedule(length, kept, layers);
  if (schedule == "square") return tome::square_schedule(length, kept, layers);
  throw std::invalid_argument("config: schedule must be constant|linear|square, got '" + schedule + "'");
}

mergear::Mode RunConfig::mergear_mode() const {
  if (mode == "compensated") return mergear::Mode::kCompensated;
  if (mode == "lossy") return mergear::Mode::kLossy;
  throw std::invalid_argument("config: mode must be lossy|compensated, got '" + mode + "'");
}

sampler::SamplerConfig RunConfig::sampler_config() const {
  sampler::SamplerConfig c;
  c.kind = sampler::parse_kind(sampler_kind);
  c.version = sampler::parse_version(sampler_version);
  c.lambda = lambda;
  c.mu = mu;
  c.sigma = sigma;
  c.mapping = sampler::default_mapping(c.version);
  c.range = sampler::default_range(c.version, c.kind);
  if (c.version == sampler::Version::kGR && sampler_stage == 2) c.range = sampler::kRangeGrStage2;
  return c;
}

void RunConfig::validate(bool check_schedule) const {
  if (length < 2) throw std::invalid_argument("config: length must be >= 2");
  if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
  if (kept < 1 || kept > length) throw std::invalid_argument("config: kept must lie in [1, length]");
  if (embed_dim < 1) throw std::invalid_argument("config: embed_dim must be >= 1");
  if (code_dim < 1 || code_dim > lfq::kMaxCodeDim) {
    throw std::invalid_argument("config: code_dim must lie in [1, " + std::to_string(lfq::kMaxCodeDim) + "]");
  }
  if (check_schedule) merge_schedule().validate(length);
  if (sampler_stage != 1 && sampler_stage != 2) throw std::invalid_argument("config: sampler.stage must be 1 or 2");
  if (draws < 1) throw std::invalid_argument("config: sampler.draws must be >= 1");
  sampler::MergeRatioSampler check(sampler_config());
  (void)mergear_mode();
  if (window && *window == 0) throw std::invalid_argument("config: window must be >= 1");
  if (temperature < 0.0) throw std::invalid_argument("config: temperature must be >= 0");
  if (randgen_k < 1) throw std::invalid_argument("config: randgen.k must be >= 1");
  if (recovery_hidden < 1) throw std::invalid_argument("config: recovery.hidden must be >= 1");
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"length", c.length},
          {"layers", c.layers},
          {"schedule", c.schedule},
          {"kept", c.kept},
          {"embed_dim", c.embed_dim},
          {"code_dim", c.code_dim},
          {"sampler",
           {{"version", c.sampler_version},
            {"kind", c.sampler_kind},
            {"stage", c.sampler_stage},
            {"lambda", c.lambda},
            {"mu", c.mu},
            {"sigma", c.sigma},
            {"draws", c.draws}}},
          {"mergear",
           {{"mode", c.mode},
            {"window", c.window ? json(window_string(*c.window)) : json(nullptr)},
            {"temperature", c.temperature}}},
          {"randgen", {{"k", c.randgen_k}}},
          {"recovery", {{"hidden", c.recovery_hidden}}},
          {"out_dir", c.out_dir.string()}};
}

}  // namespace mvq::cli
