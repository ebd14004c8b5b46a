#include "mergevq/tome.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "binary_io.hpp"

namespace mvq::tome {

SourceMatrix::SourceMatrix(std::size_t k, std::vector<std::uint32_t> assignment)
    : k_(k), assignment_(std::move(assignment)) {
  for (std::size_t j = 0; j < assignment_.size(); ++j) {
    if (assignment_[j] >= k_) {
      throw std::invalid_argument("SourceMatrix: position " + std::to_string(j) +
                                  " assigned to row " + std::to_string(assignment_[j]) +
                                  " >= k=" + std::to_string(k_));
    }
  }
}

SourceMatrix SourceMatrix::identity(std::size_t l) {
  std::vector<std::uint32_t> a(l);
  std::iota(a.begin(), a.end(), 0u);
  return SourceMatrix(l, std::move(a));
}

std::vector<std::uint32_t> SourceMatrix::row_counts() const {
  std::vector<std::uint32_t> counts(k_, 0);
  for (auto c : assignment_) ++counts[c];
  return counts;
}

std::vector<std::uint32_t> SourceMatrix::empty_rows() const {
  std::vector<std::uint32_t> out;
  const auto counts = row_counts();
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] == 0) out.push_back(static_cast<std::uint32_t>(i));
  return out;
}

Matrix SourceMatrix::to_dense() const {
  Matrix m(k_, l());
  for (std::size_t j = 0; j < l(); ++j) m(assignment_[j], j) = 1.0f;
  return m;
}

SourceMatrix compose_source(const SourceMatrix& outer, const SourceMatrix& inner) {
  if (outer.l() != inner.k()) {
    throw std::invalid_argument("compose_source: outer.l=" + std::to_string(outer.l()) +
                                " != inner.k=" + std::to_string(inner.k()));
  }
  std::vector<std::uint32_t> a(inner.l());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] = outer.cluster_of(inner.cluster_of(j));
  return SourceMatrix(outer.k(), std::move(a));
}

void write_source(std::ostream& out, const SourceMatrix& s) {
  out.write("MVQS", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(s.k()));
  detail::write_u32(out, static_cast<std::uint32_t>(s.l()));
  for (auto c : s.assignment()) detail::write_u32(out, c);
  if (!out) throw std::runtime_error("write_source: stream error");
}

SourceMatrix read_source(std::istream& in) {
  detail::expect_magic(in, "MVQS");
  const std::uint32_t k = detail::read_u32(in, "MVQS k");
  const std::uint32_t l = detail::read_u32(in, "MVQS l");
  if (l > (1u << 28)) throw std::runtime_error("MVQS: implausible length " + std::to_string(l));
  std::vector<std::uint32_t> a(l);
  for (auto& c : a) c = detail::read_u32(in, "MVQS assignment");
  try {
    return SourceMatrix(k, std::move(a));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("MVQS: ") + e.what());
  }
}

void save_source(const std::filesystem::path& path, const SourceMatrix& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_source(out, s);
}

SourceMatrix load_source(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_source(in);
}

TokenState TokenState::initial(Matrix tokens) {
  const std::size_t n = tokens.rows();
  return TokenState{std::move(tokens), std::vector<std::uint32_t>(n, 1), SourceMatrix::identity(n)};
}

void TokenState::validate() const {
  if (tokens.rows() != sizes.size() || sizes.size() != source.k()) {
    throw std::logic_error("TokenState: tokens/sizes/source row counts disagree");
  }
  const auto counts = source.row_counts();
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] != counts[i]) {
      throw std::logic_error("TokenState: size of token " + std::to_string(i) +
                             " does not match its source row");
    }
  }
}

std::vector<double> TokenState::log_sizes() const {
  std::vector<double> out(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) out[i] = std::log(static_cast<double>(sizes[i]));
  return out;
}

MergePlan bipartite_soft_match(const Matrix& keys, std::size_t r) {
  const std::size_t n = keys.rows();
  if (r > n / 2) {
    throw std::invalid_argument("bipartite_soft_match: r=" + std::to_string(r) +
                                " exceeds floor(" + std::to_string(n) + "/2)");
  }
  MergePlan plan;
  if (r == 0) return plan;

  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (float x : keys.row(i)) s += static_cast<double>(x) * x;
    norms[i] = std::sqrt(s);
  }
  const std::size_t na = (n + 1) / 2;
  const std::size_t nb = n / 2;
  std::vector<MergePair> candidates;
  candidates.reserve(na * nb);
  for (std::size_t a = 0; a < na; ++a) {
    const auto ka = keys.row(2 * a);
    for (std::size_t b = 0; b < nb; ++b) {
      const auto kb = keys.row(2 * b + 1);
      double dot = 0.0;
      for (std::size_t c = 0; c < keys.cols(); ++c) dot += static_cast<double>(ka[c]) * kb[c];
      const double denom = norms[2 * a] * norms[2 * b + 1];
      const double sim = denom > 0.0 ? dot / denom : 0.0;
      candidates.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), sim});
    }
  }
  // Pops candidates best-first; a heap avoids sorting pairs that are never reached.
  const auto worse = [](const MergePair& x, const MergePair& y) {
    if (x.similarity != y.similarity) return x.similarity < y.similarity;
    if (x.a != y.a) return x.a > y.a;
    return x.b > y.b;
  };
  std::make_heap(candidates.begin(), candidates.end(), worse);
  std::vector<bool> used_a(na, false), used_b(nb, false);
  auto end = candidates.end();
  while (plan.pairs.size() < r && end != candidates.begin()) {
    std::pop_heap(candidates.begin(), end, worse);
    --end;
    const MergePair& p = *end;
    if (used_a[p.a] || used_b[p.b]) continue;
    used_a[p.a] = used_b[p.b] = true;
    plan.pairs.push_back(p);
  }
  return plan;
}

TokenState apply_merge(const TokenState& state, const MergePlan& plan) {
  const std::size_t n = state.tokens.rows();
  if (plan.empty()) return state;
  if (plan.size() > n / 2) throw std::invalid_argument("apply_merge: plan larger than floor(n/2)");

  // partner[a-token] = b-token; b tokens are removed.
  std::vector<std::int64_t> partner(n, -1);
  std::vector<bool> removed(n, false);
  for (const auto& p : plan.pairs) {
    const std::size_t ta = p.token_a(), tb = p.token_b();
    if (tb >= n || ta >= n) throw std::invalid_argument("apply_merge: pair index out of range");
    if (partner[ta] != -1 || removed[tb]) throw std::invalid_argument("apply_merge: repeated index");
    partner[ta] = static_cast<std::int64_t>(tb);
    removed[tb] = true;
  }

  std::vector<std::uint32_t> new_index(n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (!removed[i]) new_index[i] = static_cast<std::uint32_t>(next++);
  for (std::size_t i = 0; i < n; ++i)
    if (partner[i] >= 0) new_index[static_cast<std::size_t>(partner[i])] = new_index[i];

  const std::size_t dim = state.tokens.cols();
  TokenState out{Matrix(next, dim), std::vector<std::uint32_t>(next), {}};
  for (std::size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    const std::size_t dst = new_index[i];
    if (partner[i] < 0) {
      std::copy_n(state.tokens.row(i).begin(), dim, out.tokens.row(dst).begin());
      out.sizes[dst] = state.sizes[i];
      continue;
    }
    const std::size_t b = static_cast<std::size_t>(partner[i]);
    const double sa = state.sizes[i], sb = state.sizes[b];
    const auto za = state.tokens.row(i), zb = state.tokens.row(b);
    for (std::size_t c = 0; c < dim; ++c) {
      out.tokens(dst, c) = static_cast<float>((sa * za[c] + sb * zb[c]) / (sa + sb));
    }
    out.sizes[dst] = state.sizes[i] + state.sizes[b];
  }
  out.source = compose_source(SourceMatrix(next, std::move(new_index)), state.source);
  return out;
}

LayerWeights LayerWeights::random(std::size_t dim, std::size_t ffn_dim, RandomStream& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(ffn_dim));
  LayerWeights w;
  w.wq = random_normal_matrix(rng, dim, dim, s);
  w.wk = random_normal_matrix(rng, dim, dim, s);
  w.wv = random_normal_matrix(rng, dim, dim, s);
  w.wo = random_normal_matrix(rng, dim, dim, s);
  w.w1 = random_normal_matrix(rng, dim, ffn_dim, s);
  w.w2 = random_normal_matrix(rng, ffn_dim, dim, s2);
  return w;
}

EncoderWeights EncoderWeights::random(std::size_t dim, std::size_t n_layers, RandomStream& rng,
                                      std::size_t ffn_mult) {
  EncoderWeights w;
  w.layers.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i)
    w.layers.push_back(LayerWeights::random(dim, dim * ffn_mult, rng));
  return w;
}

Matrix transformer_layer(const Matrix& x, const LayerWeights& w, std::span<const double> key_bias,
                         Matrix* keys_out) {
  if (x.cols() != w.dim()) {
    throw std::invalid_argument("transformer_layer: token width " + std::to_string(x.cols()) +
                                " != layer width " + std::to_string(w.dim()));
  }
  const Matrix h = layer_norm(x);
  Matrix keys = matmul(h, w.wk);
  const Matrix attn = attention(matmul(h, w.wq), keys, matmul(h, w.wv), key_bias);
  const Matrix x1 = add(x, matmul(attn, w.wo));
  Matrix y = add(x1, matmul(relu(matmul(layer_norm(x1), w.w1)), w.w2));
  if (keys_out != nullptr) *keys_out = std::move(keys);
  return y;
}

TokenState tome_attention_layer(const TokenState& state, std::size_t r, const LayerWeights& w) {
  Matrix keys;
  const auto bias = state.log_sizes();
  TokenState next{transformer_layer(state.tokens, w, bias, &keys), state.sizes, state.source};
  return apply_merge(next, bipartite_soft_match(keys, r));
}

std::size_t MergeSchedule::total() const {
  return std::accumulate(per_layer_.begin(), per_layer_.end(), std::size_t{0});
}

void MergeSchedule::validate(std::size_t l) const {
  std::size_t remaining = l;
  for (std::size_t i = 0; i < per_layer_.size(); ++i) {
    if (per_layer_[i] > remaining / 2) {
      throw std::invalid_argument("merge schedule infeasible: layer " + std::to_string(i + 1) +
                                  " merges " + std::to_string(per_layer_[i]) + " of " +
                                  std::to_string(remaining) + " tokens");
    }
    remaining -= per_layer_[i];
  }
}

MergeSchedule constant_schedule(std::size_t r, std::size_t n_layers) {
  return MergeSchedule(std::vector<std::uint32_t>(n_layers, static_cast<std::uint32_t>(r)));
}

MergeSchedule decreasing_schedule(std::size_t l, std::size_t k_target, std::size_t n_layers,
                                  int power) {
  if (k_target > l) throw std::invalid_argument("schedule: k_target exceeds l");
  if (n_layers == 0) throw std::invalid_argument("schedule: n_layers must be >= 1");
  const std::size_t total = l - k_target;
  std::vector<double> weight(n_layers);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n_layers; ++i) {
    weight[i] = std::pow(static_cast<double>(n_layers - i), power);
    wsum += weight[i];
  }
  std::vector<std::uint32_t> counts(n_layers);
  std::vector<double> frac(n_layers);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const double ideal = static_cast<double>(total) * weight[i] / wsum;
    counts[i] = static_cast<std::uint32_t>(std::floor(ideal));
    frac[i] = ideal - counts[i];
    assigned += counts[i];
  }
  std::vector<std::size_t> order(n_layers);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % n_layers]];

  MergeSchedule schedule(std::move(counts));
  schedule.validate(l);
  return schedule;
}

EncodeResult encode(const Matrix& tokens, const MergeSchedule& schedule,
                    const EncoderWeights& weights) {
  if (schedule.layers() > weights.layers.size()) {
    throw std::invalid_argument("encode: schedule has " + std::to_string(schedule.layers()) +
                                " layers but only " + std::to_string(weights.layers.size()) +
                                " weight sets");
  }
  schedule.validate(tokens.rows());
  TokenState state = TokenState::initial(tokens);
  for (std::size_t i = 0; i < schedule.layers(); ++i)
    state = tome_attention_layer(state, schedule[i], weights.layers[i]);
  return EncodeResult{std::move(state.source), std::move(state.tokens), std::move(state.sizes)};
}

}  // namespace mvq::tome
