#include "mergevq/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mergevq/align.hpp"
#include "mergevq/bench.hpp"
#include "mergevq/lfq.hpp"
#include "mergevq/mergear.hpp"
#include "mergevq/numerics.hpp"
#include "mergevq/parallel.hpp"
#include "mergevq/recovery.hpp"
#include "mergevq/sampler.hpp"
#include "mergevq/tome.hpp"
#include "mergevq/toymodel.hpp"

namespace mvq::acceptance {

namespace {

using nlohmann::json;

constexpr const char* kDefaultFixture = R"({
  "tome": {"kept": [[16, 1, 8, 8], [64, 4, 8, 32], [256, 12, 16, 64]]},
  "lfq": {"codes": [
    {"index": 5, "d": 4, "values": [1, -1, 1, -1]},
    {"index": 0, "d": 3, "values": [-1, -1, -1]},
    {"index": 6, "d": 3, "values": [-1, 1, 1]}
  ]},
  "losses": {"ln2": 0.6931471805599453, "ln10": 2.302585092994046},
  "sampler": {
    "kept_at_zero": {"R": 36, "G+R": 144, "G": 256},
    "exp_lambda1_pair": [0.7310585786300049, 0.2689414213699951]
  }
})";

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Context {
  std::uint64_t seed;
  std::size_t threads;
  const json& fixture;
};

std::uint64_t trial_seed(std::uint64_t seed, int criterion, std::size_t trial) {
  return seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(criterion) * 1000003ull + trial;
}

const json& need(const json& root, const char* section, const char* key) {
  if (!root.is_object() || !root.contains(section) || !root[section].is_object() ||
      !root[section].contains(key)) {
    throw Failure(std::string("fixture: missing ") + section + "." + key);
  }
  return root[section][key];
}

template <class T>
T fixture_value(const json& root, const char* section, const char* key) {
  try {
    return need(root, section, key).get<T>();
  } catch (const json::exception& e) {
    throw Failure(std::string("fixture: bad ") + section + "." + key + ": " + e.what());
  }
}

/// Runs fn(trial, rng) on every trial; fn returns an error message or empty.
/// Throws the message of the lowest failing trial.
void for_trials(const Context& ctx, int criterion, std::size_t n,
                const std::function<std::string(std::size_t, RandomStream&)>& fn) {
  std::vector<std::string> errors(n);
  parallel_for(n, ctx.threads, [&](std::size_t i) {
    RandomStream rng(trial_seed(ctx.seed, criterion, i));
    try {
      errors[i] = fn(i, rng);
    } catch (const std::exception& e) {
      errors[i] = std::string("exception: ") + e.what();
    }
  });
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw Failure("trial " + std::to_string(i) + ": " + errors[i]);
}

std::size_t uniform_in(RandomStream& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_int(hi - lo + 1);
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Matrix repeat_rows(const Matrix& rows, std::span<const std::uint32_t> assignment) {
  Matrix out(assignment.size(), rows.cols());
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    const auto r = rows.row(assignment[j]);
    std::copy(r.begin(), r.end(), out.row(j).begin());
  }
  return out;
}

bool rows_bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// 1 -------------------------------------------------------------------------

std::string merge_arithmetic(const Context& ctx) {
  RandomStream rng(trial_seed(ctx.seed, 1, 0));
  std::size_t runs = 0;
  const std::size_t dim = 4;
  for (std::size_t l : {16, 64, 256}) {
    const Matrix tokens = random_normal_matrix(rng, l, dim);
    for (std::size_t n : {1, 4, 12}) {
      const auto weights = tome::EncoderWeights::random(dim, n, rng, 1);
      for (std::size_t r = 0;; ++r) {
        const auto schedule = tome::constant_schedule(r, n);
        try {
          schedule.validate(l);
        } catch (const std::invalid_argument&) {
          break;
        }
        const auto out = tome::encode(tokens, schedule, weights);
        const std::size_t k = l - r * n;
        if (out.tokens.rows() != k || out.source.k() != k || out.source.l() != l) {
          throw Failure("L=" + std::to_string(l) + " N=" + std::to_string(n) + " r=" +
                        std::to_string(r) + ": got " + std::to_string(out.tokens.rows()) +
                        " rows, expected " + std::to_string(k));
        }
        ++runs;
      }
    }
  }
  const json& kept = need(ctx.fixture, "tome", "kept");
  for (const auto& row : kept) {
    std::array<std::size_t, 4> v{};
    try {
      v = row.get<std::array<std::size_t, 4>>();
    } catch (const json::exception& e) {
      throw Failure(std::string("fixture: bad tome.kept entry: ") + e.what());
    }
    const auto [l, n, r, k] = v;
    const auto weights = tome::EncoderWeights::random(dim, n, rng, 1);
    const auto out = tome::encode(random_normal_matrix(rng, l, dim), tome::constant_schedule(r, n), weights);
    if (out.tokens.rows() != k) {
      throw Failure("fixture tome.kept: L=" + std::to_string(l) + " N=" + std::to_string(n) +
                    " r=" + std::to_string(r) + " gave K=" + std::to_string(out.tokens.rows()) +
                    ", fixture says " + std::to_string(k));
    }
  }
  return std::to_string(runs) + " feasible (L,N,r) encodes, " + std::to_string(kept.size()) +
         " fixture rows";
}

// 2 -------------------------------------------------------------------------

std::string partition_invariants(const Context& ctx) {
  for_trials(ctx, 2, 1000, [](std::size_t, RandomStream& rng) -> std::string {
    const std::size_t l = uniform_in(rng, 2, 96);
    const std::size_t n = uniform_in(rng, 1, 8);
    const std::size_t dim = rng.uniform_int(2) == 0 ? 4 : 8;
    std::vector<std::uint32_t> per_layer;
    std::size_t remaining = l;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<std::uint32_t>(rng.uniform_int(remaining / 2 + 1));
      per_layer.push_back(r);
      remaining -= r;
    }
    const tome::MergeSchedule schedule(per_layer);
    const auto weights = tome::EncoderWeights::random(dim, n, rng, 2);
    const auto out = tome::encode(random_normal_matrix(rng, l, dim), schedule, weights);
    const auto& s = out.source;
    if (s.l() != l || s.k() != remaining || out.tokens.rows() != remaining) return "shape mismatch";
    const Matrix dense = s.to_dense();
    double total = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      double col = 0.0;
      for (std::size_t i = 0; i < s.k(); ++i) col += dense(i, j);
      if (col != 1.0) return "column " + std::to_string(j) + " sums to " + fmt(col);
      total += col;
    }
    if (total != static_cast<double>(l)) return "total mass != L";
    const auto counts = s.row_counts();
    for (std::size_t i = 0; i < s.k(); ++i) {
      if (counts[i] < 1) return "row " + std::to_string(i) + " is empty";
      if (out.sizes[i] != counts[i]) return "size of token " + std::to_string(i) + " != row sum";
    }
    return {};
  });
  return "1000 random schedules: columns one-hot, rows non-empty, sizes conserved";
}

// 3 -------------------------------------------------------------------------

std::string duplicate_attention_identity(const Context& ctx) {
  std::vector<double> worst(200, 0.0);
  for_trials(ctx, 3, 200, [&](std::size_t trial, RandomStream& rng) -> std::string {
    const std::size_t k = uniform_in(rng, 1, 32);
    const std::size_t l = uniform_in(rng, k, 64);
    const std::size_t dim = std::array<std::size_t, 3>{4, 8, 16}[rng.uniform_int(3)];
    std::vector<std::uint32_t> assignment(l);
    for (std::size_t j = 0; j < l; ++j) assignment[j] = j < k ? j : rng.uniform_int(k);
    for (std::size_t j = l; j > 1; --j) std::swap(assignment[j - 1], assignment[rng.uniform_int(j)]);
    const tome::SourceMatrix s(k, assignment);
    std::vector<double> bias;
    for (auto c : s.row_counts()) bias.push_back(std::log(static_cast<double>(c)));

    const Matrix q = random_normal_matrix(rng, uniform_in(rng, 1, 8), dim);
    const Matrix km = random_normal_matrix(rng, k, dim);
    const Matrix vm = random_normal_matrix(rng, k, dim);
    const double d1 = max_abs_diff(attention(q, km, vm, bias),
                                   attention(q, repeat_rows(km, assignment), repeat_rows(vm, assignment)));

    const Matrix xm = random_normal_matrix(rng, k, dim);
    const auto w = tome::LayerWeights::random(dim, 2 * dim, rng);
    const Matrix ym = tome::transformer_layer(xm, w, bias);
    const Matrix ye = tome::transformer_layer(repeat_rows(xm, assignment), w);
    const double d2 = max_abs_diff(repeat_rows(ym, assignment), ye);

    worst[trial] = std::max(d1, d2);
    if (d1 > 1e-6) return "attention max |diff| " + fmt(d1);
    if (d2 > 1e-6) return "layer max |diff| " + fmt(d2);
    return {};
  });
  return "200 instances, max |diff| " + fmt(*std::max_element(worst.begin(), worst.end()));
}

// 4 -------------------------------------------------------------------------

std::string lfq_bijection(const Context& ctx) {
  std::size_t checked = 0;
  for (std::size_t d = 1; d <= 12; ++d) {
    for (std::uint64_t i = 0; i < (std::uint64_t{1} << d); ++i) {
      const auto code = lfq::index_code(i, d);
      if (lfq::code_index(code) != i) throw Failure("d=" + std::to_string(d) + " index " + std::to_string(i));
      const auto back = lfq::index_code(lfq::code_index(code), d);
      if (back != code) throw Failure("index_code(code_index(c)) != c at d=" + std::to_string(d));
      ++checked;
    }
  }
  RandomStream rng(trial_seed(ctx.seed, 4, 0));
  Matrix z = random_normal_matrix(rng, 10000, lfq::kDefaultCodeDim);
  for (std::size_t i = 0; i < z.rows(); i += 97) z(i, i % z.cols()) = 0.0f;
  const auto q1 = lfq::quantize(z);
  const auto q2 = lfq::quantize(q1.values);
  if (!(q1.values == q2.values) || q1.codes != q2.codes) throw Failure("quantize is not idempotent");
  for (std::size_t i = 0; i < z.rows(); ++i)
    if (lfq::code_index(q1.values.row(i)) != q1.codes[i].index) throw Failure("code of row " + std::to_string(i));

  const json& codes = need(ctx.fixture, "lfq", "codes");
  for (const auto& c : codes) {
    try {
      const auto values = lfq::index_code(c.at("index").get<std::uint64_t>(), c.at("d").get<std::size_t>());
      if (values != c.at("values").get<std::vector<float>>()) {
        throw Failure("fixture lfq.codes: index " + c.at("index").dump() + " disagrees");
      }
    } catch (const json::exception& e) {
      throw Failure(std::string("fixture: bad lfq.codes entry: ") + e.what());
    }
  }
  return std::to_string(checked) + " codes round-trip, 10000 rows idempotent";
}

// 5 -------------------------------------------------------------------------

std::string recovery_round_trip(const Context& ctx) {
  for_trials(ctx, 5, 100, [](std::size_t, RandomStream& rng) -> std::string {
    const std::size_t k = uniform_in(rng, 1, 16);
    const std::size_t n = uniform_in(rng, 1, 3);
    const std::size_t block = std::size_t{1} << n;
    const std::size_t l = k * block;
    const std::size_t dim = 16;
    std::vector<std::uint32_t> blocks(l);
    for (std::size_t j = 0; j < l; ++j) blocks[j] = static_cast<std::uint32_t>(j / block);
    const Matrix tokens = repeat_rows(random_normal_matrix(rng, k, dim), blocks);
    std::vector<std::uint32_t> per_layer;
    for (std::size_t i = 1; i <= n; ++i) per_layer.push_back(static_cast<std::uint32_t>(l >> i));
    const auto weights = tome::EncoderWeights::random(dim, n, rng);
    const auto out = tome::encode(tokens, tome::MergeSchedule(per_layer), weights);
    if (out.source.k() != k) return "K=" + std::to_string(out.source.k()) + ", expected " + std::to_string(k);
    for (std::size_t j = 0; j < l; ++j)
      if (out.source.cluster_of(j) != blocks[j]) return "position " + std::to_string(j) + " in the wrong cluster";
    const auto q = lfq::quantize(out.tokens);
    const Matrix rec = recovery::recover_tokens(q.values, out.source);
    for (std::size_t j = 0; j < l; ++j)
      if (!rows_bitwise_equal(rec.row(j), q.values.row(blocks[j]))) return "row " + std::to_string(j) + " differs";
    return {};
  });
  return "100 block-duplicate encodes recovered bitwise";
}

// 6 -------------------------------------------------------------------------

double naive_source_loss(const std::vector<double>& p, std::size_t l, std::size_t k,
                         const tome::SourceMatrix& s) {
  const Matrix dense = s.to_dense();
  double loss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      const double pj = std::min(std::max(p[j * k + i], 1e-7), 1.0 - 1e-7);
      const double t = dense(i, j);
      loss += -(t * std::log(pj) + (1.0 - t) * std::log(1.0 - pj));
    }
  }
  return loss;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(num) / den;
}

std::vector<double> central_differences(std::vector<double> x,
                                        const std::function<double(const std::vector<double>&)>& f) {
  constexpr double h = 1e-4;
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<double> random_simplex(RandomStream& rng, std::size_t c) {
  // Half softmax, half uniform: every entry is at least 1 / (2c).
  const auto p = softmax(rng_normal(rng, c));
  std::vector<double> out(c);
  for (std::size_t i = 0; i < c; ++i) out[i] = 0.5 * p[i] + 0.5 / static_cast<double>(c);
  return out;
}

std::string loss_correctness(const Context& ctx) {
  std::vector<double> worst_src(100), worst_align(100);
  for_trials(ctx, 6, 100, [&](std::size_t trial, RandomStream& rng) -> std::string {
    // Source loss on free probabilities.
    const std::size_t l = uniform_in(rng, 1, 16);
    const std::size_t k = uniform_in(rng, 1, 8);
    std::vector<std::uint32_t> assignment(l);
    for (auto& a : assignment) a = static_cast<std::uint32_t>(rng.uniform_int(k));
    const tome::SourceMatrix truth(k, assignment);
    std::vector<double> p(l * k);
    for (auto& v : p) v = 0.05 + 0.9 * rng.uniform();
    const double got = recovery::source_loss(p, l, k, truth);
    const double want = naive_source_loss(p, l, k, truth);
    if (std::abs(got - want) > 1e-6) return "source_loss " + fmt(got) + " vs oracle " + fmt(want);
    const auto fd = central_differences(p, [&](const std::vector<double>& x) {
      return recovery::source_loss(x, l, k, truth);
    });
    worst_src[trial] = relative_error(recovery::source_loss_grad(p, l, k, truth), fd);
    if (worst_src[trial] > 1e-4) return "source_loss_grad rel. err " + fmt(worst_src[trial]);

    // Source loss through a recovery forward pass.
    recovery::RecoveryConfig rc{l, 6, 8, 16};
    const auto model = recovery::RecoveryModel::init(rc, rng.next_u64());
    const auto logits = recovery::recovery_forward(model, random_normal_matrix(rng, k, 6));
    const double via_model = recovery::source_loss(logits, truth);
    const double via_oracle = naive_source_loss(logits.probs, l, k, truth);
    if (std::abs(via_model - via_oracle) > 1e-6) return "source_loss(logits) disagrees with oracle";

    // Alignment loss.
    const std::size_t c = uniform_in(rng, 2, 16);
    const auto student = random_simplex(rng, c);
    const auto teacher = softmax(rng_normal(rng, c));
    double naive = 0.0;
    for (std::size_t i = 0; i < c; ++i) naive -= teacher[i] * std::log(student[i]);
    if (std::abs(align::align_loss(student, teacher) - naive) > 1e-6) return "align_loss disagrees with oracle";
    const auto afd = central_differences(student, [&](const std::vector<double>& x) {
      return align::align_loss(x, teacher);
    });
    worst_align[trial] = relative_error(align::align_loss_grad(student, teacher), afd);
    if (worst_align[trial] > 1e-4) return "align_loss_grad rel. err " + fmt(worst_align[trial]);
    return {};
  });

  const double ln2 = fixture_value<double>(ctx.fixture, "losses", "ln2");
  const double ln10 = fixture_value<double>(ctx.fixture, "losses", "ln10");
  const std::vector<double> half{0.5};
  const double degenerate = recovery::source_loss(half, 1, 1, tome::SourceMatrix::identity(1));
  if (std::abs(degenerate - ln2) > 1e-12) throw Failure("L=K=1, p=0.5: " + fmt(degenerate) + " != ln 2");
  const std::vector<double> uniform(10, 0.1);
  const double flat = align::align_loss(uniform, uniform);
  if (std::abs(flat - ln10) > 1e-12) throw Failure("uniform C=10: " + fmt(flat) + " != ln 10");

  return "oracles within 1e-6; max grad rel. err " +
         fmt(*std::max_element(worst_src.begin(), worst_src.end())) + " (source), " +
         fmt(*std::max_element(worst_align.begin(), worst_align.end())) + " (align); ln 2, ln 10 exact";
}

// 7 -------------------------------------------------------------------------

toy::ToyARModel acceptance_model(std::uint64_t seed, std::uint32_t l_max) {
  toy::ModelConfig c;
  c.vocab = 64;
  c.embed_dim = 64;
  c.layers = 4;
  c.l_max = l_max;
  return toy::ToyARModel::init(seed, c);
}

std::string mergear_equivalence(const Context& ctx) {
  std::vector<std::size_t> dups(100), lens(100);
  std::vector<double> worst(100);
  for_trials(ctx, 7, 100, [&](std::size_t trial, RandomStream& rng) -> std::string {
    const auto model = acceptance_model(rng.next_u64(), 130);
    const std::size_t l = uniform_in(rng, 1, 128);
    const auto cls = static_cast<std::uint32_t>(rng.uniform_int(model.config().classes));
    const auto mi = static_cast<std::uint32_t>(rng.uniform_int(model.config().merge_buckets));
    const auto fast = mergear::decode_raster(model, cls, mi, l, mergear::Mode::kCompensated,
                                             mergear::kUnboundedWindow, toy::greedy_chooser());
    const auto full = mergear::decode_full_oracle(model, cls, mi, l, toy::greedy_chooser());
    if (fast.tokens != full.tokens) return "token streams differ";
    worst[trial] = mergear::max_logit_diff(fast.logits, full.logits);
    if (worst[trial] > 1e-5) return "logit diff " + fmt(worst[trial]);
    const std::set<std::uint32_t> unique(fast.tokens.begin(), fast.tokens.end());
    if (fast.stats.cache_len_trace.back() != unique.size()) {
      return "cache length " + std::to_string(fast.stats.cache_len_trace.back()) + " != unique " +
             std::to_string(unique.size());
    }
    dups[trial] = fast.stats.duplicates;
    lens[trial] = l;
    return {};
  });
  std::size_t d = 0, n = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    d += dups[i];
    n += lens[i];
  }
  return "100 trials, " + std::to_string(d) + "/" + std::to_string(n) +
         " steps were duplicates, max logit diff " + fmt(*std::max_element(worst.begin(), worst.end()));
}

// 8 -------------------------------------------------------------------------

std::string mask_duality(const Context& ctx) {
  for_trials(ctx, 8, 50, [](std::size_t, RandomStream& rng) -> std::string {
    const auto model = acceptance_model(rng.next_u64(), 130);
    const std::size_t l = uniform_in(rng, 1, 128);
    mergear::MergeArSession session(model, mergear::Mode::kCompensated, mergear::kUnboundedWindow);
    auto logits = session.start(static_cast<std::uint32_t>(rng.uniform_int(16)), 0);
    std::vector<std::uint32_t> tokens;
    std::vector<std::vector<std::uint32_t>> retained;
    for (std::size_t t = 0; t < l; ++t) {
      tokens.push_back(toy::argmax(logits));
      logits = session.feed(tokens.back());
      retained.push_back(session.positions().non_redundant_positions());
      if (retained.back().size() != session.cache_length()) return "KV rows != retained positions";
    }
    const auto mask = mergear::build_causal_mask(mergear::trace_source(tokens));
    for (std::size_t t = 0; t < l; ++t)
      if (mask.keys_for(t) != retained[t]) return "step " + std::to_string(t) + " key sets differ";
    return {};
  });
  return "50 traces: mask rows equal retained cache keys at every step";
}

// 9 -------------------------------------------------------------------------

std::string sampler_fidelity(const Context& ctx) {
  using namespace sampler;
  struct Case {
    Kind kind;
    Version version;
    KeptRange range;
  };
  const std::vector<Case> cases{
      {Kind::kExponential, Version::kR, kRangeR},
      {Kind::kExponential, Version::kGR, kRangeGrStage1},
      {Kind::kExponential, Version::kGR, kRangeGrStage2},
      {Kind::kExponential, Version::kG, kRangeGExponential},
      {Kind::kGaussian, Version::kR, kRangeR},
      {Kind::kGaussian, Version::kGR, kRangeGrStage1},
      {Kind::kGaussian, Version::kGR, kRangeGrStage2},
      {Kind::kGaussian, Version::kG, kRangeGGaussian},
  };
  double worst = 0.0;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    SamplerConfig cfg;
    cfg.kind = c.kind;
    cfg.version = c.version;
    cfg.range = c.range;
    cfg.mapping = default_mapping(c.version);
    const MergeRatioSampler s(cfg);
    const auto table = distribution_table(s);
    std::vector<std::uint64_t> counts(table.size(), 0);
    RandomStream rng(trial_seed(ctx.seed, 9, ci));
    for (int i = 0; i < 100000; ++i) {
      const int t = s.sample_offset(rng);
      const auto kept = s.kept_tokens(t);
      if (!is_perfect_square(kept) || kept < c.range.lo || kept > c.range.hi) {
        throw Failure("kept " + std::to_string(kept) + " outside the configured range");
      }
      const auto it = std::find_if(table.begin(), table.end(), [t](const auto& e) { return e.t == t; });
      ++counts[static_cast<std::size_t>(it - table.begin())];
    }
    const double tv = total_variation(table, counts);
    worst = std::max(worst, tv);
    if (tv > 0.02) throw Failure(to_string(c.kind) + "/" + to_string(c.version) + " TV " + fmt(tv));
  }

  const json& zero = need(ctx.fixture, "sampler", "kept_at_zero");
  for (const auto v : {Version::kR, Version::kGR, Version::kG}) {
    SamplerConfig cfg;
    cfg.version = v;
    cfg.mapping = default_mapping(v);
    cfg.range = default_range(v, Kind::kExponential);
    if (v == Version::kGR) cfg.range = kRangeGrStage2;
    std::uint32_t expected = 0;
    try {
      expected = zero.at(to_string(v)).get<std::uint32_t>();
    } catch (const json::exception& e) {
      throw Failure(std::string("fixture: bad sampler.kept_at_zero: ") + e.what());
    }
    if (MergeRatioSampler(cfg).kept_tokens(0) != expected) {
      throw Failure("version " + to_string(v) + " kept(0) != " + std::to_string(expected));
    }
  }
  const auto pair = fixture_value<std::vector<double>>(ctx.fixture, "sampler", "exp_lambda1_pair");
  SamplerConfig two;
  two.version = Version::kR;
  two.mapping = default_mapping(Version::kR);
  two.range = {36, 49};
  const auto t2 = distribution_table(MergeRatioSampler(two));
  if (pair.size() != 2 || t2.size() != 2 || std::abs(t2[0].probability - pair[0]) > 1e-12 ||
      std::abs(t2[1].probability - pair[1]) > 1e-12) {
    throw Failure("exponential table over {0,1} disagrees with sampler.exp_lambda1_pair");
  }
  return std::to_string(cases.size()) + " samplers x 1e5 draws, max TV " + fmt(worst);
}

// 10 ------------------------------------------------------------------------

std::string incremental_identity(const Context& ctx) {
  std::vector<double> worst(100);
  for_trials(ctx, 10, 100, [&](std::size_t trial, RandomStream& rng) -> std::string {
    const auto model = acceptance_model(rng.next_u64(), 64);
    const std::size_t n = uniform_in(rng, 1, 64);
    std::vector<toy::StepInput> inputs;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == 0) {
        inputs.push_back(toy::StepInput::class_token(static_cast<std::uint32_t>(rng.uniform_int(16))));
      } else if (i == 1) {
        inputs.push_back(toy::StepInput::merge_instruction(static_cast<std::uint32_t>(rng.uniform_int(33))));
      } else if (rng.uniform_int(4) == 0) {
        inputs.push_back(toy::StepInput::position_instruction(static_cast<std::uint32_t>(rng.uniform_int(64))));
      } else {
        inputs.push_back(toy::StepInput::content(static_cast<std::uint32_t>(rng.uniform_int(64))));
      }
    }
    const Matrix full = toy::forward_full(model, inputs);
    toy::KvCache cache(model);
    for (std::size_t i = 0; i < n; ++i) {
      const auto step = toy::forward_step(model, inputs[i], i, cache);
      for (std::size_t v = 0; v < step.size(); ++v)
        worst[trial] = std::max(worst[trial], std::abs(static_cast<double>(step[v]) - full(i, v)));
    }
    if (worst[trial] > 1e-5) return "max |diff| " + fmt(worst[trial]);
    return {};
  });
  return "100 sequences, max |diff| " + fmt(*std::max_element(worst.begin(), worst.end()));
}

// 11 ------------------------------------------------------------------------

std::string bench_sanity(const Context& ctx) {
  bench::BenchConfig cfg;
  cfg.seed = ctx.seed;
  cfg.length = 64;
  cfg.window = 64;
  cfg.trials = 2;
  cfg.densities = {0.0, 0.5};
  const auto report = bench::run_bench(cfg);
  const auto& none = report.workloads[0];
  const auto& half = report.workloads[1];
  const json j = bench::to_json(report);
  if (none.duplicates != 0 || none.compression_ratio != 1.0) {
    throw Failure("zero-duplicate workload compressed to ratio " + fmt(none.compression_ratio));
  }
  const auto target = static_cast<long long>(cfg.length / 2);
  if (std::llabs(static_cast<long long>(half.final_cache_length) - target) > 2) {
    throw Failure("50% workload ends at cache length " + std::to_string(half.final_cache_length));
  }
  if (!none.equivalent || !half.equivalent) throw Failure("compressed decode diverged from the full decode");
  json summary = j["workloads"];
  for (auto& w : summary) w.erase("cache_len_trace");
  return summary.dump();
}

struct Criterion {
  int id;
  const char* name;
  std::vector<std::string> modules;
  double limit_seconds;
  std::string (*run)(const Context&);
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "merge-arithmetic", {"tome"}, 1.0, merge_arithmetic},
      {2, "source-partition", {"tome"}, 30.0, partition_invariants},
      {3, "duplicate-attention", {"numerics", "tome"}, 30.0, duplicate_attention_identity},
      {4, "lfq-bijection", {"lfq"}, 10.0, lfq_bijection},
      {5, "recovery-round-trip", {"tome", "lfq", "recovery"}, 30.0, recovery_round_trip},
      {6, "loss-gradients", {"recovery", "align"}, 30.0, loss_correctness},
      {7, "mergear-equivalence", {"mergear", "toymodel"}, 120.0, mergear_equivalence},
      {8, "mask-duality", {"mergear"}, 30.0, mask_duality},
      {9, "sampler-fidelity", {"sampler"}, 30.0, sampler_fidelity},
      {10, "incremental-decode", {"toymodel"}, 60.0, incremental_identity},
      {11, "bench-sanity", {"mergear", "cli"}, 60.0, bench_sanity},
  };
  return all;
}

}  // namespace

const nlohmann::json& default_fixture() {
  static const json fixture = json::parse(kDefaultFixture);
  return fixture;
}

std::vector<std::string> known_modules() {
  return {"numerics", "tome", "lfq", "recovery", "align", "toymodel", "mergear", "randgen", "sampler", "cli"};
}

std::vector<Outcome> run(const Options& options) {
  const auto known = known_modules();
  for (const auto& m : options.only) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw std::invalid_argument("unknown module '" + m + "'");
    }
  }
  std::vector<const Criterion*> selected;
  for (const auto& c : criteria()) {
    const bool wanted = options.only.empty() ||
                        std::any_of(c.modules.begin(), c.modules.end(), [&](const std::string& m) {
                          return std::find(options.only.begin(), options.only.end(), m) != options.only.end();
                        });
    if (wanted) selected.push_back(&c);
  }
  if (selected.empty()) throw std::invalid_argument("no acceptance criterion covers the selected modules");

  std::vector<Outcome> out;
  json loaded;
  const json* fixture = &default_fixture();
  if (options.fixture) {
    std::ifstream in(*options.fixture);
    if (!in) throw std::runtime_error("cannot open fixture " + options.fixture->string());
    try {
      loaded = json::parse(in);
    } catch (const json::exception& e) {
      out.push_back({0, "fixture", {}, false, options.fixture->string() + ": " + e.what(), 0.0, 0.0});
      loaded = json::object();
    }
    fixture = &loaded;
  }

  const Context ctx{options.seed, options.threads == 0 ? thread_budget() : options.threads, *fixture};
  for (const Criterion* c : selected) {
    Outcome o{c->id, c->name, c->modules, false, {}, 0.0, c->limit_seconds};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o.detail = c->run(ctx);
      o.passed = true;
    } catch (const std::exception& e) {
      o.detail = e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.passed && o.seconds > o.limit_seconds) {
      o.passed = false;
      o.detail = "took " + fmt(o.seconds) + " s, limit " + fmt(o.limit_seconds) + " s; " + o.detail;
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::string format_line(const Outcome& o) {
  std::ostringstream s;
  std::string mods;
  for (const auto& m : o.modules) mods += (mods.empty() ? "" : ",") + m;
  s << (o.passed ? "PASS" : "FAIL") << "  " << o.id << "  " << o.name << "  [" << mods << "]  ";
  s.setf(std::ios::fixed);
  s.precision(2);
  s << o.seconds << "s / " << o.limit_seconds << "s  " << o.detail;
  return s.str();
}

bool all_passed(const std::vector<Outcome>& outcomes) {
  return !outcomes.empty() &&
         std::all_of(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.passed; });
}

}  // namespace mvq::acceptance
