#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "mergevq/align.hpp"
#include "mergevq/bench.hpp"
#include "mergevq/lfq.hpp"
#include "mergevq/mergear.hpp"
#include "mergevq/randgen.hpp"
#include "mergevq/recovery.hpp"
#include "mergevq/sampler.hpp"
#include "mergevq/tensor_io.hpp"
#include "mergevq/tome.hpp"
#include "mergevq/toymodel.hpp"

namespace mvq::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::size_t kBlock = 2;  // patches per block edge in the synthetic image
constexpr std::uint32_t kAlignClasses = 10;

/// Patch embeddings of a blocky synthetic image: the grid is ceil(sqrt(L))
/// patches wide, every kBlock x kBlock block of patches has one random RGB
/// colour, and a random 3 x D projection embeds each patch. Patches in one
/// block therefore embed identically. The first L patches in raster order are kept.
Matrix synthetic_patches(std::size_t l, std::size_t dim, RandomStream& rng) {
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(l))));
  const std::size_t blocks_per_row = (side + kBlock - 1) / kBlock;
  const Matrix colours = random_normal_matrix(rng, blocks_per_row * blocks_per_row, 3);
  const Matrix embed = random_normal_matrix(rng, 3, dim, 1.0 / std::sqrt(3.0));
  Matrix pixels(l, 3);
  for (std::size_t j = 0; j < l; ++j) {
    const std::size_t row = j / side, col = j % side;
    const auto c = colours.row((row / kBlock) * blocks_per_row + col / kBlock);
    std::copy(c.begin(), c.end(), pixels.row(j).begin());
  }
  return matmul(pixels, embed);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

json stream_json(const std::vector<toy::StepInput>& stream) {
  json out = json::array();
  for (const auto& s : stream) {
    const char* kind = "content";
    switch (s.kind) {
      case toy::TokenKind::kClass: kind = "class"; break;
      case toy::TokenKind::kMergeInstruction: kind = "merge_instruction"; break;
      case toy::TokenKind::kPositionInstruction: kind = "position_instruction"; break;
      case toy::TokenKind::kContent: break;
    }
    out.push_back({{"kind", kind}, {"id", s.id}});
  }
  return out;
}

toy::ToyARModel sim_model(std::uint64_t seed, std::size_t l_max) {
  toy::ModelConfig c;
  c.l_max = static_cast<std::uint32_t>(l_max);
  return toy::ToyARModel::init(seed, c);
}

}  // namespace

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write error on " + path.string());
}

json cmd_encode(const RunConfig& cfg) {
  RandomStream rng(cfg.seed);
  const auto schedule = cfg.merge_schedule();
  const Matrix patches = synthetic_patches(cfg.length, cfg.embed_dim, rng);
  const auto weights = tome::EncoderWeights::random(cfg.embed_dim, cfg.layers, rng);
  const Matrix to_code = random_normal_matrix(rng, cfg.embed_dim, cfg.code_dim,
                                              1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
  const auto enc = tome::encode(patches, schedule, weights);
  const Matrix z = matmul(enc.tokens, to_code);
  const auto q = lfq::quantize(z);
  const Matrix z_tilde_l = recovery::recover_tokens(q.values, enc.source);
  const auto stats = lfq::record_usage(lfq::CodebookStats(cfg.code_dim), q.codes);
  const auto entropy = lfq::entropy_penalty(z);

  // Alignment between a frozen teacher on a noisy view of the patches and the
  // same projection on the expanded merged tokens.
  const auto teacher = align::StubTeacher::random(cfg.embed_dim, kAlignClasses, 1.0, cfg.seed + 1);
  RandomStream view_rng = rng.split();
  const auto teacher_p = teacher.distribution(align::augment_view(patches, 0.05, view_rng));
  const auto student_p = teacher.distribution(recovery::recover_tokens(enc.tokens, enc.source));

  ensure_dir(cfg.out_dir);
  tome::save_source(cfg.out_dir / "source.mvqs", enc.source);
  save_matrix(cfg.out_dir / "z_k.mvqt", z);
  save_matrix(cfg.out_dir / "z_tilde_l.mvqt", z_tilde_l);
  lfq::save_codes(cfg.out_dir / "codes.codes", q.codes);

  json summary{{"L", cfg.length},
               {"K", enc.source.k()},
               {"layers", cfg.layers},
               {"schedule", cfg.schedule},
               {"schedule_per_layer", std::vector<std::uint32_t>(schedule.per_layer().begin(),
                                                                 schedule.per_layer().end())},
               {"schedule_total", schedule.total()},
               {"code_dim", cfg.code_dim},
               {"distinct_codes", stats.distinct()},
               {"usage", stats.usage()},
               {"cluster_sizes", enc.sizes},
               {"losses",
                {{"commitment", lfq::commitment_loss(z, q.values)},
                 {"entropy_sample", entropy.sample_entropy},
                 {"entropy_codebook", entropy.codebook_entropy},
                 {"entropy_penalty", entropy.penalty},
                 {"align", align::align_loss(student_p, teacher_p)}}},
               {"files", {"source.mvqs", "z_k.mvqt", "z_tilde_l.mvqt", "codes.codes"}}};
  write_json(cfg.out_dir / "summary.json", summary);
  return summary;
}

json cmd_recover(const RunConfig& cfg, const RecoverArgs& args) {
  const auto ids = lfq::load_codes(args.codes);
  if (ids.empty()) throw std::invalid_argument("recover: " + args.codes.string() + " holds no codes");
  Matrix z(ids.size(), cfg.code_dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = lfq::index_code(ids[i], cfg.code_dim);
    std::copy(row.begin(), row.end(), z.row(i).begin());
  }
  const recovery::RecoveryConfig rc{cfg.length, cfg.code_dim, cfg.recovery_hidden, 4 * cfg.recovery_hidden};
  const auto model = recovery::RecoveryModel::init(rc, cfg.seed);
  const auto logits = recovery::recovery_forward(model, z);
  const auto pred = recovery::predict_source(logits);
  const Matrix expanded = recovery::recover_tokens(z, pred.source);

  ensure_dir(cfg.out_dir);
  tome::save_source(cfg.out_dir / "source_pred.mvqs", pred.source);
  save_matrix(cfg.out_dir / "z_tilde_l.mvqt", expanded);

  json report{{"K", ids.size()},
              {"L", cfg.length},
              {"code_dim", cfg.code_dim},
              {"degenerate", pred.degenerate()},
              {"empty_clusters", pred.empty_clusters},
              {"assignment", std::vector<std::uint32_t>(pred.source.assignment().begin(),
                                                        pred.source.assignment().end())},
              {"files", {"source_pred.mvqs", "z_tilde_l.mvqt"}}};
  if (args.truth) {
    const auto truth = tome::load_source(*args.truth);
    if (truth.k() != ids.size() || truth.l() != cfg.length) {
      throw std::invalid_argument("recover: truth source shape does not match K x L");
    }
    std::size_t correct = 0;
    for (std::size_t j = 0; j < cfg.length; ++j) correct += truth.cluster_of(j) == pred.source.cluster_of(j);
    report["source_loss"] = recovery::source_loss(logits, truth);
    report["accuracy"] = static_cast<double>(correct) / static_cast<double>(cfg.length);
  }
  write_json(cfg.out_dir / "recover.json", report);
  return report;
}

json cmd_mergear_sim(const RunConfig& cfg, bool omit_timing) {
  const auto model = sim_model(cfg.seed, cfg.length + 2);
  const std::size_t window = cfg.window.value_or(mergear::kUnboundedWindow);
  const auto cls = static_cast<std::uint32_t>(cfg.seed % model.config().classes);
  const auto mi = mergear::merge_instruction_bucket(cfg.kept, model.config().merge_buckets);

  RandomStream fast_rng(cfg.seed), full_rng(cfg.seed);
  const auto chooser = [&](RandomStream& r) {
    return cfg.temperature > 0.0 ? toy::sampling_chooser(cfg.temperature, r) : toy::greedy_chooser();
  };
  const auto fast = mergear::decode_raster(model, cls, mi, cfg.length, cfg.mergear_mode(), window,
                                           chooser(fast_rng));
  const auto full = mergear::decode_full_oracle(model, cls, mi, cfg.length, chooser(full_rng));
  const bool same_tokens = fast.tokens == full.tokens;
  const double diff = same_tokens ? mergear::max_logit_diff(fast.logits, full.logits) : -1.0;
  const std::set<std::uint32_t> unique(fast.tokens.begin(), fast.tokens.end());

  return {{"seed", cfg.seed},
          {"length", cfg.length},
          {"mode", cfg.mode},
          {"window", window_string(window)},
          {"tokens", fast.tokens},
          {"unique", unique.size()},
          {"duplicates", fast.stats.duplicates},
          {"cache_len_trace", fast.stats.cache_len_trace},
          {"step_ns", omit_timing ? std::vector<std::int64_t>{} : fast.stats.step_ns},
          {"max_logit_diff", diff},
          {"equivalence", same_tokens && diff <= 1e-5}};
}

json cmd_randgen_sim(const RunConfig& cfg) {
  const std::size_t k = cfg.randgen_k;
  const auto model = sim_model(cfg.seed, 2 * k + 1);
  if (cfg.code_dim < 32 && (std::uint64_t{model.vocab()} - 1) >> cfg.code_dim != 0) {
    throw std::invalid_argument("randgen-sim: code_dim " + std::to_string(cfg.code_dim) +
                                " cannot index a vocabulary of " + std::to_string(model.vocab()));
  }
  RandomStream rng(cfg.seed);
  const auto cls = static_cast<std::uint32_t>(cfg.seed % model.config().classes);
  const auto trace = randgen::random_order_decode(model, cls, k, rng);
  const recovery::RecoveryConfig rc{cfg.length, cfg.code_dim, cfg.recovery_hidden, 4 * cfg.recovery_hidden};
  const auto rec = recovery::RecoveryModel::init(rc, cfg.seed + 1);
  const auto out = randgen::generate_pipeline(trace, rec, cfg.code_dim, cfg.length);

  ensure_dir(cfg.out_dir);
  save_matrix(cfg.out_dir / "z_k.mvqt", out.z_k);
  save_matrix(cfg.out_dir / "expanded.mvqt", out.expanded);
  tome::save_source(cfg.out_dir / "source_pred.mvqs", out.prediction.source);
  json meta{{"seed", cfg.seed},
            {"k", k},
            {"l", cfg.length},
            {"code_dim", cfg.code_dim},
            {"order", trace.order},
            {"tokens", trace.tokens},
            {"slot_tokens", trace.raster_tokens()},
            {"stream", stream_json(trace.stream)},
            {"assignment", std::vector<std::uint32_t>(out.prediction.source.assignment().begin(),
                                                      out.prediction.source.assignment().end())},
            {"degenerate", out.prediction.degenerate()},
            {"empty_clusters", out.prediction.empty_clusters},
            {"files", {"z_k.mvqt", "expanded.mvqt", "source_pred.mvqs"}}};
  write_json(cfg.out_dir / "randgen.json", meta);
  return meta;
}

json cmd_sample_ratios(const RunConfig& cfg) {
  const sampler::MergeRatioSampler s(cfg.sampler_config());
  const auto table = sampler::distribution_table(s);
  std::vector<std::uint64_t> counts(table.size(), 0);
  RandomStream rng(cfg.seed);
  for (std::size_t i = 0; i < cfg.draws; ++i) {
    const int t = s.sample_offset(rng);
    for (std::size_t j = 0; j < table.size(); ++j)
      if (table[j].t == t) ++counts[j];
  }
  json exact = json::array(), hist = json::array();
  for (std::size_t j = 0; j < table.size(); ++j) {
    const auto kept = s.kept_tokens(table[j].t);
    exact.push_back({{"t", table[j].t}, {"kept", kept}, {"probability", table[j].probability}});
    hist.push_back({{"t", table[j].t},
                    {"kept", kept},
                    {"count", counts[j]},
                    {"frequency", static_cast<double>(counts[j]) / static_cast<double>(cfg.draws)}});
  }
  const auto& c = s.config();
  return {{"version", sampler::to_string(c.version)},
          {"kind", sampler::to_string(c.kind)},
          {"parameters", c.kind == sampler::Kind::kExponential
                             ? json{{"lambda", c.lambda}}
                             : json{{"mu", c.mu}, {"sigma", c.sigma}}},
          {"range", {c.range.lo, c.range.hi}},
          {"mapping", {{"base", c.mapping.base}, {"sign", c.mapping.sign}}},
          {"draws", cfg.draws},
          {"seed", cfg.seed},
          {"table", exact},
          {"histogram", hist},
          {"total_variation", sampler::total_variation(table, counts)}};
}

json cmd_align_demo(const RunConfig& cfg) {
  RandomStream rng(cfg.seed);
  const Matrix tokens = synthetic_patches(cfg.length, cfg.embed_dim, rng);
  const auto teacher = align::StubTeacher::random(cfg.embed_dim, kAlignClasses, 1.0, cfg.seed + 1);
  Matrix student_proj = teacher.projection();
  for (auto& x : student_proj.data()) x = static_cast<float>(x + 0.1 * rng.normal());
  const align::StubTeacher student(student_proj, 1.0);

  const auto t = teacher.distribution(tokens);
  RandomStream view_rng = rng.split();
  const auto s = student.distribution(align::augment_view(tokens, 0.1, view_rng));
  const auto g = align::align_loss_grad(s, t);
  double gn = 0.0;
  for (double v : g) gn += v * v;
  const std::vector<double> uniform(kAlignClasses, 1.0 / kAlignClasses);

  return {{"seed", cfg.seed},
          {"classes", kAlignClasses},
          {"teacher", t},
          {"student", s},
          {"loss", align::align_loss(s, t)},
          {"teacher_entropy", align::align_loss(t, t)},
          {"grad_norm", std::sqrt(gn)},
          {"uniform_loss", align::align_loss(uniform, uniform)},
          {"ln_classes", std::log(static_cast<double>(kAlignClasses))}};
}

json cmd_bench(const RunConfig& cfg, const BenchArgs& args) {
  bench::BenchConfig b;
  b.seed = cfg.seed;
  b.length = cfg.length;
  b.window = cfg.window.value_or(64);
  b.trials = args.trials;
  b.densities = args.densities;
  const auto report = bench::to_json(bench::run_bench(b));
  ensure_dir(cfg.out_dir);
  write_json(cfg.out_dir / "bench.json", report);
  return report;
}

}  // namespace mvq::cli
