#include "mergevq/mergear.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace mvq::mergear {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ns(Clock::time_point since) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - since).count();
}

void check_length(const toy::ToyARModel& model, std::size_t l) {
  if (l + 2 > model.l_max()) {
    throw std::invalid_argument("decode: length " + std::to_string(l) +
                                " plus two prefix tokens exceeds l_max " +
                                std::to_string(model.l_max()));
  }
}

}  // namespace

std::vector<std::uint32_t> DedupCausalMask::keys_for(std::size_t query) const {
  std::vector<std::uint32_t> out;
  for (std::size_t k = 0; k <= query && k < l_; ++k)
    if (allowed(query, k)) out.push_back(static_cast<std::uint32_t>(k));
  return out;
}

AttentionMask DedupCausalMask::to_attention_mask() const {
  AttentionMask m(l_, l_, false);
  m.allowed = allowed_;
  return m;
}

DedupCausalMask build_causal_mask(const tome::SourceMatrix& s, std::span<const std::uint32_t> order) {
  const std::size_t l = s.l();
  if (order.size() != l) {
    throw std::invalid_argument("build_causal_mask: order has " + std::to_string(order.size()) +
                                " entries for L=" + std::to_string(l));
  }
  std::vector<bool> seen_position(l, false);
  for (auto p : order) {
    if (p >= l || seen_position[p]) {
      throw std::invalid_argument("build_causal_mask: order is not a permutation of [0, L)");
    }
    seen_position[p] = true;
  }
  // first_step[t]: step t generates the first position of its cluster.
  std::vector<bool> cluster_seen(s.k(), false);
  std::vector<bool> first_step(l, false);
  for (std::size_t t = 0; t < l; ++t) {
    const auto c = s.cluster_of(order[t]);
    if (!cluster_seen[c]) {
      cluster_seen[c] = true;
      first_step[t] = true;
    }
  }
  std::vector<std::uint8_t> allowed(l * l, 0);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t u = 0; u <= t; ++u) allowed[t * l + u] = first_step[u] ? 1 : 0;
  return DedupCausalMask(l, std::move(allowed));
}

DedupCausalMask build_causal_mask(const tome::SourceMatrix& s) {
  std::vector<std::uint32_t> order(s.l());
  std::iota(order.begin(), order.end(), 0u);
  return build_causal_mask(s, order);
}

tome::SourceMatrix trace_source(std::span<const std::uint32_t> tokens) {
  std::unordered_map<std::uint32_t, std::uint32_t> cluster;
  std::vector<std::uint32_t> assignment(tokens.size());
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto [it, inserted] =
        cluster.try_emplace(tokens[j], static_cast<std::uint32_t>(cluster.size()));
    assignment[j] = it->second;
  }
  return tome::SourceMatrix(cluster.size(), std::move(assignment));
}

std::size_t PositionCache::non_redundant_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return !e.redundant; }));
}

std::vector<std::uint32_t> PositionCache::non_redundant_positions() const {
  std::vector<std::uint32_t> out;
  for (const auto& e : entries_)
    if (!e.redundant) out.push_back(e.position);
  return out;
}

const PositionEntry* PositionCache::find(std::uint32_t position) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), position,
                                   [](const PositionEntry& e, std::uint32_t p) { return e.position < p; });
  return (it != entries_.end() && it->position == position) ? &*it : nullptr;
}

void PositionCache::add_token(std::uint32_t token) {
  entries_.push_back({next_position_, token, 1, false, next_position_});
  ++next_position_;
}

void PositionCache::add_duplicate(std::uint32_t token, std::uint32_t first_position) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), first_position,
                             [](const PositionEntry& e, std::uint32_t p) { return e.position < p; });
  if (it == entries_.end() || it->position != first_position || it->redundant) {
    throw std::logic_error("PositionCache: duplicate target " + std::to_string(first_position) +
                           " is not a live first occurrence");
  }
  if (it->token != token) throw std::logic_error("PositionCache: duplicate token id mismatch");
  ++it->size;
  entries_.push_back({next_position_, token, 1, true, first_position});
  ++next_position_;
}

void PositionCache::evict(std::size_t window) {
  if (window >= next_position_) return;
  const std::uint32_t cutoff = next_position_ - static_cast<std::uint32_t>(window);
  std::erase_if(entries_, [cutoff](const PositionEntry& e) { return e.redundant && e.position < cutoff; });
}

std::optional<std::uint32_t> detect_duplicate(std::uint32_t token, const PositionCache& cache,
                                              std::size_t window) {
  const std::uint32_t next = cache.next_position();
  const std::uint32_t lo = window >= next ? 0 : next - static_cast<std::uint32_t>(window);
  for (const auto& e : cache.entries()) {
    if (e.position < lo || e.redundant) continue;
    if (e.token == token) return e.position;
  }
  return std::nullopt;
}

std::uint32_t merge_instruction_bucket(std::size_t kept_tokens, std::uint32_t buckets) {
  if (buckets == 0) throw std::invalid_argument("merge_instruction_bucket: no buckets");
  auto root = static_cast<std::size_t>(std::sqrt(static_cast<double>(kept_tokens)));
  while (root * root > kept_tokens) --root;
  while ((root + 1) * (root + 1) <= kept_tokens) ++root;
  return static_cast<std::uint32_t>(std::min<std::size_t>(root, buckets - 1));
}

MergeArSession::MergeArSession(const toy::ToyARModel& model, Mode mode, std::size_t window)
    : model_(model), mode_(mode), window_(window), kv_(model) {
  if (window == 0) throw std::invalid_argument("MergeArSession: window must be >= 1");
}

std::vector<float> MergeArSession::start(std::uint32_t class_id, std::uint32_t merge_instruction) {
  if (started_) throw std::logic_error("MergeArSession: already started");
  started_ = true;
  toy::forward_step(model_, toy::StepInput::class_token(class_id), 0, kv_);
  return toy::forward_step(model_, toy::StepInput::merge_instruction(merge_instruction), 1, kv_);
}

std::vector<float> MergeArSession::feed(std::uint32_t token) {
  if (!started_) throw std::logic_error("MergeArSession: feed before start");
  const std::size_t stream_position = positions_.next_position() + 2;
  const auto first = detect_duplicate(token, positions_, window_);
  toy::CacheWrite write = toy::CacheWrite::append();
  if (first) {
    ++duplicates_;
    if (mode_ == Mode::kCompensated) {
      write = toy::CacheWrite::merge_into(kv_entry_of_position_[*first]);
    } else {
      write = toy::CacheWrite::skip();
    }
  }
  auto logits = toy::forward_step(model_, toy::StepInput::content(token), stream_position, kv_, write);
  if (first) {
    positions_.add_duplicate(token, *first);
    kv_entry_of_position_.push_back(kv_entry_of_position_[*first]);
  } else {
    positions_.add_token(token);
    kv_entry_of_position_.push_back(kv_.entries() - 1);
  }
  positions_.evict(window_);
  return logits;
}

DecodeResult decode_raster(const toy::ToyARModel& model, std::uint32_t class_id,
                           std::uint32_t merge_instruction, std::size_t l, Mode mode,
                           std::size_t window, const toy::TokenChooser& chooser) {
  check_length(model, l);
  MergeArSession session(model, mode, window);
  DecodeResult out;
  out.tokens.reserve(l);
  out.logits.reserve(l);
  std::vector<float> logits = session.start(class_id, merge_instruction);
  for (std::size_t t = 0; t < l; ++t) {
    const std::uint32_t token = chooser(t, logits);
    out.tokens.push_back(token);
    out.logits.push_back(std::move(logits));
    const auto t0 = Clock::now();
    logits = session.feed(token);
    out.stats.step_ns.push_back(elapsed_ns(t0));
    out.stats.cache_len_trace.push_back(session.cache_length());
  }
  out.stats.duplicates = session.duplicates();
  out.positions = session.positions();
  return out;
}

OracleResult decode_full_oracle(const toy::ToyARModel& model, std::uint32_t class_id,
                                std::uint32_t merge_instruction, std::size_t l,
                                const toy::TokenChooser& chooser) {
  check_length(model, l);
  toy::KvCache cache(model);
  OracleResult out;
  toy::forward_step(model, toy::StepInput::class_token(class_id), 0, cache);
  std::vector<float> logits =
      toy::forward_step(model, toy::StepInput::merge_instruction(merge_instruction), 1, cache);
  for (std::size_t t = 0; t < l; ++t) {
    const std::uint32_t token = chooser(t, logits);
    out.tokens.push_back(token);
    out.logits.push_back(std::move(logits));
    const auto t0 = Clock::now();
    logits = toy::forward_step(model, toy::StepInput::content(token), t + 2, cache);
    out.step_ns.push_back(elapsed_ns(t0));
  }
  return out;
}

double max_logit_diff(const std::vector<std::vector<float>>& a,
                      const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_logit_diff: trace lengths differ");
  double m = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].size() != b[t].size()) throw std::invalid_argument("max_logit_diff: widths differ");
    for (std::size_t i = 0; i < a[t].size(); ++i)
      m = std::max(m, std::abs(static_cast<double>(a[t][i]) - b[t][i]));
  }
  return m;
}

}  // namespace mvq::mergear
