#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "commands.hpp"
#include "mergevq/acceptance.hpp"
#include "run_config.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitAcceptance = 3;

using mvq::cli::RunConfig;

/// Flags shared by the commands; unset flags leave the config file value alone.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> length, layers, kept, embed_dim, code_dim, k, draws, hidden;
  std::optional<std::string> schedule, version, kind, mode, window, out;
  std::optional<int> stage;
  std::optional<double> lambda, mu, sigma, temperature;

  RunConfig resolve(bool check_schedule) const {
    RunConfig c = config ? mvq::cli::load_config(*config) : RunConfig{};
    if (seed) c.seed = *seed;
    if (length) c.length = *length;
    if (layers) c.layers = *layers;
    if (kept) c.kept = *kept;
    if (embed_dim) c.embed_dim = *embed_dim;
    if (code_dim) c.code_dim = *code_dim;
    if (k) c.randgen_k = *k;
    if (draws) c.draws = *draws;
    if (hidden) c.recovery_hidden = *hidden;
    if (schedule) c.schedule = *schedule;
    if (version) c.sampler_version = *version;
    if (kind) c.sampler_kind = *kind;
    if (stage) c.sampler_stage = *stage;
    if (lambda) c.lambda = *lambda;
    if (mu) c.mu = *mu;
    if (sigma) c.sigma = *sigma;
    if (mode) c.mode = *mode;
    if (window) c.window = mvq::cli::parse_window(*window);
    if (temperature) c.temperature = *temperature;
    if (out) c.out_dir = *out;
    c.validate(check_schedule);
    return c;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run config; flags override its values");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--out", o.out, "Output directory");
}

void add_encoder(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--length,-l", o.length, "Token count L");
  cmd->add_option("--layers", o.layers, "Merge layers N");
  cmd->add_option("--kept", o.kept, "Target kept-token count K");
  cmd->add_option("--schedule", o.schedule, "constant | linear | square");
  cmd->add_option("--embed-dim", o.embed_dim, "Token width D");
  cmd->add_option("--code-dim", o.code_dim, "LFQ code width d");
}

void print_human(const std::string& line) { std::cerr << line << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-merging tokenizer and MergeAR toolkit"};
  app.require_subcommand(1);
  Overrides o;

  auto* encode = app.add_subcommand("encode", "Merge, quantize and expand a synthetic image");
  add_common(encode, o);
  add_encoder(encode, o);

  mvq::cli::RecoverArgs recover_args;
  std::string codes_path;
  std::optional<std::string> truth_path;
  auto* recover = app.add_subcommand("recover", "Predict the source matrix from a .codes file");
  add_common(recover, o);
  recover->add_option("--codes", codes_path, ".codes file of merged-token indices")->required();
  recover->add_option("--truth", truth_path, "Ground-truth MVQS file for loss reporting");
  recover->add_option("--length,-l", o.length, "Target length L");
  recover->add_option("--code-dim", o.code_dim, "LFQ code width d");
  recover->add_option("--hidden", o.hidden, "Recovery model width");

  bool omit_timing = false;
  auto* mergear = app.add_subcommand("mergear-sim", "Compressed raster decode vs the full decode");
  add_common(mergear, o);
  mergear->add_option("--length,-l", o.length, "Raster tokens to generate");
  mergear->add_option("--mode", o.mode, "lossy | compensated");
  mergear->add_option("--window", o.window, "Sliding window length or 'inf'");
  mergear->add_option("--kept", o.kept, "Kept-token count for the merge instruction");
  mergear->add_option("--temperature", o.temperature, "Sampling temperature; 0 decodes greedily");
  mergear->add_flag("--omit-timing", omit_timing, "Leave step_ns empty (for byte-stable output)");

  auto* randgen = app.add_subcommand("randgen-sim", "Random-order decode, source recovery, expansion");
  add_common(randgen, o);
  randgen->add_option("--k", o.k, "Merged tokens to generate");
  randgen->add_option("--l", o.length, "Expanded length L");
  randgen->add_option("--code-dim", o.code_dim, "LFQ code width d");
  randgen->add_option("--hidden", o.hidden, "Recovery model width");

  auto* sample = app.add_subcommand("sample-ratios", "Merge-ratio sampler histogram and exact table");
  add_common(sample, o);
  sample->add_option("--version", o.version, "R | G+R | G");
  sample->add_option("--kind", o.kind, "exponential | gaussian");
  sample->add_option("--stage", o.stage, "G+R training stage (1 or 2)");
  sample->add_option("--n", o.draws, "Number of draws");
  sample->add_option("--lambda", o.lambda, "Exponential rate");
  sample->add_option("--mu", o.mu, "Gaussian mean");
  sample->add_option("--sigma", o.sigma, "Gaussian standard deviation");

  auto* align = app.add_subcommand("align-demo", "Teacher/student alignment loss on a seeded fixture");
  add_common(align, o);
  align->add_option("--length,-l", o.length, "Token count");
  align->add_option("--embed-dim", o.embed_dim, "Token width");

  mvq::cli::BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Compressed vs full decode across duplicate densities");
  add_common(bench, o);
  bench->add_option("--length,-l", o.length, "Raster tokens per decode");
  bench->add_option("--window", o.window, "Sliding window length or 'inf' (default 64)");
  bench->add_option("--trials", bench_args.trials, "Decodes per density");
  bench->add_option("--densities", bench_args.densities, "Duplicate densities in [0, 1)")->delimiter(',');

  std::vector<std::string> only;
  std::optional<std::string> fixture;
  std::optional<std::string> verify_json;
  auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
  verify->add_option("--only", only, "Restrict to criteria touching these modules")->delimiter(',');
  verify->add_option("--fixture", fixture, "Reference-value fixture (JSON)");
  verify->add_option("--seed", o.seed, "Seed for the randomized trials");
  verify->add_option("--json", verify_json, "Also write the outcomes to this JSON file");
  std::optional<std::string> write_fixture;
  verify->add_option("--write-fixture", write_fixture,
                     "Write the built-in reference fixture to this path and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    nlohmann::json report;
    if (verify->parsed() && write_fixture) {
      mvq::cli::write_json(*write_fixture, mvq::acceptance::default_fixture());
      print_human("verify: fixture written to " + *write_fixture);
      return kExitOk;
    }
    if (verify->parsed()) {
      mvq::acceptance::Options opts;
      opts.only = only;
      if (fixture) opts.fixture = *fixture;
      if (o.seed) opts.seed = *o.seed;
      const auto outcomes = mvq::acceptance::run(opts);
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : outcomes) {
        std::cout << mvq::acceptance::format_line(r) << '\n';
        rows.push_back({{"id", r.id},
                        {"name", r.name},
                        {"modules", r.modules},
                        {"passed", r.passed},
                        {"seconds", r.seconds},
                        {"limit_seconds", r.limit_seconds},
                        {"detail", r.detail}});
      }
      const bool ok = mvq::acceptance::all_passed(outcomes);
      std::cout << (ok ? "all criteria passed" : "acceptance FAILED") << '\n';
      if (verify_json) mvq::cli::write_json(*verify_json, {{"passed", ok}, {"criteria", rows}});
      return ok ? kExitOk : kExitAcceptance;
    }

    const RunConfig cfg = o.resolve(encode->parsed());
    if (encode->parsed()) {
      report = mvq::cli::cmd_encode(cfg);
      print_human("encode: L=" + std::to_string(cfg.length) + " -> K=" + report["K"].dump() +
                  ", files in " + cfg.out_dir.string());
    } else if (recover->parsed()) {
      recover_args.codes = codes_path;
      if (truth_path) recover_args.truth = *truth_path;
      report = mvq::cli::cmd_recover(cfg, recover_args);
      print_human("recover: K=" + report["K"].dump() + " -> L=" + report["L"].dump() +
                  (report["degenerate"].get<bool>() ? " (degenerate source)" : ""));
    } else if (mergear->parsed()) {
      report = mvq::cli::cmd_mergear_sim(cfg, omit_timing);
      print_human("mergear-sim: " + report["duplicates"].dump() + " duplicates, equivalence " +
                  report["equivalence"].dump());
    } else if (randgen->parsed()) {
      report = mvq::cli::cmd_randgen_sim(cfg);
      print_human("randgen-sim: k=" + report["k"].dump() + " expanded to l=" + report["l"].dump());
    } else if (sample->parsed()) {
      report = mvq::cli::cmd_sample_ratios(cfg);
      print_human("sample-ratios: TV distance " + report["total_variation"].dump());
    } else if (align->parsed()) {
      report = mvq::cli::cmd_align_demo(cfg);
      print_human("align-demo: loss " + report["loss"].dump());
    } else if (bench->parsed()) {
      report = mvq::cli::cmd_bench(cfg, bench_args);
      print_human("bench: report written to " + (cfg.out_dir / "bench.json").string());
    }
    std::cout << report.dump(2) << '\n';
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
