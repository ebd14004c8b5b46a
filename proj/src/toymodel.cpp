#include "mergevq/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mvq::toy {

namespace {

std::size_t count_parameters(const ModelConfig& c) {
  const std::size_t d = c.embed_dim;
  const std::size_t ffn = d * c.ffn_mult;
  std::size_t n = 0;
  n += std::size_t{c.vocab} * d;           // token embedding
  n += std::size_t{c.l_max} * d * 2;       // positions + position instructions
  n += std::size_t{c.classes} * d;
  n += std::size_t{c.merge_buckets} * d;
  n += std::size_t{c.layers} * (4 * d * d + 2 * d * ffn);
  n += d * std::size_t{c.vocab};           // head
  return n;
}

Matrix row_matrix(std::span<const float> r) { return Matrix(1, r.size(), {r.begin(), r.end()}); }

}  // namespace

ToyARModel ToyARModel::init(std::uint64_t seed, const ModelConfig& config) {
  if (config.vocab < 2) throw std::invalid_argument("toy model: vocab must be >= 2");
  if (config.embed_dim == 0 || config.layers == 0 || config.l_max == 0 || config.classes == 0 ||
      config.merge_buckets == 0 || config.ffn_mult == 0) {
    throw std::invalid_argument("toy model: all counts must be >= 1");
  }
  const std::size_t bytes = count_parameters(config) * sizeof(float);
  if (bytes > config.max_parameter_bytes) {
    throw std::invalid_argument("toy model: " + std::to_string(bytes) +
                                " parameter bytes exceed the configured bound of " +
                                std::to_string(config.max_parameter_bytes) + " (vocab=" +
                                std::to_string(config.vocab) + ", embed_dim=" +
                                std::to_string(config.embed_dim) + ")");
  }

  RandomStream rng(seed);
  const std::size_t d = config.embed_dim;
  const std::size_t ffn = d * config.ffn_mult;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(ffn));

  ToyARModel m;
  m.config_ = config;
  m.token_embedding_ = random_normal_matrix(rng, config.vocab, d);
  m.position_embedding_ = random_normal_matrix(rng, config.l_max, d);
  m.class_embedding_ = random_normal_matrix(rng, config.classes, d);
  m.merge_embedding_ = random_normal_matrix(rng, config.merge_buckets, d);
  m.position_instruction_embedding_ = random_normal_matrix(rng, config.l_max, d);
  m.layers_.reserve(config.layers);
  for (std::uint32_t i = 0; i < config.layers; ++i) {
    ToyLayer layer;
    layer.wq = random_normal_matrix(rng, d, d, sd);
    layer.wk = random_normal_matrix(rng, d, d, sd);
    layer.wv = random_normal_matrix(rng, d, d, sd);
    layer.wo = random_normal_matrix(rng, d, d, sd);
    layer.w1 = random_normal_matrix(rng, d, ffn, sd);
    layer.w2 = random_normal_matrix(rng, ffn, d, sf);
    m.layers_.push_back(std::move(layer));
  }
  m.head_ = random_normal_matrix(rng, d, config.vocab, sd);
  return m;
}

std::size_t ToyARModel::parameter_count() const { return count_parameters(config_); }

std::span<const float> ToyARModel::embedding(StepInput input) const {
  const Matrix* table = nullptr;
  const char* name = "";
  switch (input.kind) {
    case TokenKind::kContent: table = &token_embedding_; name = "content token"; break;
    case TokenKind::kClass: table = &class_embedding_; name = "class"; break;
    case TokenKind::kMergeInstruction: table = &merge_embedding_; name = "merge instruction"; break;
    case TokenKind::kPositionInstruction:
      table = &position_instruction_embedding_;
      name = "position instruction";
      break;
  }
  if (input.id >= table->rows()) {
    throw std::out_of_range(std::string("toy model: ") + name + " id " + std::to_string(input.id) +
                            " >= table size " + std::to_string(table->rows()));
  }
  return table->row(input.id);
}

ToyARModel init_model(std::uint64_t seed, std::uint32_t vocab, std::uint32_t embed_dim,
                      std::uint32_t layers, std::uint32_t l_max) {
  ModelConfig c;
  c.vocab = vocab;
  c.embed_dim = embed_dim;
  c.layers = layers;
  c.l_max = l_max;
  return ToyARModel::init(seed, c);
}

KvCache::KvCache(std::size_t layers, std::size_t dim)
    : dim_(dim), keys_(layers), values_(layers) {}

std::vector<float> forward_step(const ToyARModel& model, StepInput input, std::size_t position,
                                KvCache& cache, CacheWrite write) {
  if (position >= model.l_max()) {
    throw std::out_of_range("forward_step: position " + std::to_string(position) +
                            " >= l_max " + std::to_string(model.l_max()));
  }
  if (cache.layers() != model.layers().size() || cache.dim() != model.dim()) {
    throw std::invalid_argument("forward_step: cache shape does not match the model");
  }
  if (position != cache.steps()) {
    throw std::invalid_argument("forward_step: position " + std::to_string(position) +
                                " but the cache has seen " + std::to_string(cache.steps()) +
                                " steps");
  }
  if (write.mode == CacheWrite::Mode::kMergeInto && write.entry >= cache.entries()) {
    throw std::invalid_argument("forward_step: merge target entry out of range");
  }
  if (write.mode == CacheWrite::Mode::kSkip && cache.entries() == 0) {
    throw std::invalid_argument("forward_step: skipping the only key leaves nothing to attend to");
  }

  const Matrix e = row_matrix(model.embedding(input));
  const Matrix content = layer_norm(e);
  switch (write.mode) {
    case CacheWrite::Mode::kAppend:
      for (std::size_t l = 0; l < cache.layers(); ++l) {
        const Matrix k = matmul(content, model.layers()[l].wk);
        const Matrix v = matmul(content, model.layers()[l].wv);
        cache.keys_[l].insert(cache.keys_[l].end(), k.data().begin(), k.data().end());
        cache.values_[l].insert(cache.values_[l].end(), v.data().begin(), v.data().end());
      }
      cache.sizes_.push_back(1);
      break;
    case CacheWrite::Mode::kMergeInto:
      ++cache.sizes_[write.entry];
      break;
    case CacheWrite::Mode::kSkip:
      break;
  }
  ++cache.steps_;

  Matrix x = add(e, row_matrix(model.position_embedding(position)));
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.dim()));
  std::vector<double> scores(cache.entries());
  std::vector<double> acc(model.dim());
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const ToyLayer& w = model.layers()[l];
    const Matrix q = matmul(layer_norm(x), w.wq);
    const auto qr = q.row(0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cache.entries(); ++j) {
      const auto kj = cache.key(l, j);
      double dot = 0.0;
      for (std::size_t c = 0; c < model.dim(); ++c) dot += static_cast<double>(qr[c]) * kj[c];
      scores[j] = dot * scale + std::log(static_cast<double>(cache.size_of(j)));
      mx = std::max(mx, scores[j]);
    }
    double denom = 0.0;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < cache.entries(); ++j) {
      const double wj = std::exp(scores[j] - mx);
      denom += wj;
      const auto vj = cache.value(l, j);
      for (std::size_t c = 0; c < model.dim(); ++c) acc[c] += wj * vj[c];
    }
    Matrix a(1, model.dim());
    for (std::size_t c = 0; c < model.dim(); ++c) a(0, c) = static_cast<float>(acc[c] / denom);
    x = add(x, matmul(a, w.wo));
    x = add(x, matmul(relu(matmul(layer_norm(x), w.w1)), w.w2));
  }
  const Matrix logits = matmul(layer_norm(x), model.head());
  return {logits.data().begin(), logits.data().end()};
}

Matrix forward_full(const ToyARModel& model, std::span<const StepInput> inputs) {
  const std::size_t n = inputs.size();
  if (n == 0) return Matrix(0, model.vocab());
  if (n > model.l_max()) throw std::out_of_range("forward_full: sequence longer than l_max");
  Matrix e(n, model.dim());
  Matrix x(n, model.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const auto emb = model.embedding(inputs[i]);
    const auto pos = model.position_embedding(i);
    for (std::size_t c = 0; c < model.dim(); ++c) {
      e(i, c) = emb[c];
      x(i, c) = emb[c] + pos[c];
    }
  }
  const Matrix content = layer_norm(e);
  const AttentionMask mask = AttentionMask::causal(n);
  for (const ToyLayer& w : model.layers()) {
    const Matrix a = attention(matmul(layer_norm(x), w.wq), matmul(content, w.wk),
                               matmul(content, w.wv), {}, &mask);
    x = add(x, matmul(a, w.wo));
    x = add(x, matmul(relu(matmul(layer_norm(x), w.w1)), w.w2));
  }
  return matmul(layer_norm(x), model.head());
}

std::uint32_t argmax(std::span<const float> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<std::uint32_t>(best);
}

TokenChooser greedy_chooser() {
  return [](std::size_t, std::span<const float> logits) { return argmax(logits); };
}

TokenChooser sampling_chooser(double temperature, RandomStream& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sampling_chooser: temperature must be > 0");
  return [temperature, &rng](std::size_t, std::span<const float> logits) {
    std::vector<double> l(logits.begin(), logits.end());
    const auto p = softmax(l, temperature);
    const double u = rng.uniform();
    double cdf = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cdf += p[i];
      if (u < cdf) return static_cast<std::uint32_t>(i);
    }
    return static_cast<std::uint32_t>(p.size() - 1);
  };
}

TokenChooser scripted_chooser(std::vector<std::uint32_t> ids) {
  return [ids = std::move(ids)](std::size_t step, std::span<const float>) {
    if (step >= ids.size()) {
      throw std::out_of_range("scripted_chooser: script has only " + std::to_string(ids.size()) +
                              " tokens");
    }
    return ids[step];
  };
}

}  // namespace mvq::toy
