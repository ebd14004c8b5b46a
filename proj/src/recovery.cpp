#include "mergevq/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mvq::recovery {

namespace {

void check_shapes(std::size_t n, std::size_t l, std::size_t k, const tome::SourceMatrix& truth) {
  if (n != l * k) throw std::invalid_argument("source_loss: probs length != L*K");
  if (truth.l() != l || truth.k() != k) {
    throw std::invalid_argument("source_loss: truth is " + std::to_string(truth.k()) + "x" +
                                std::to_string(truth.l()) + ", probs are " + std::to_string(l) +
                                "x" + std::to_string(k));
  }
}

void check_block(const tome::LayerWeights& w, std::size_t hidden, const char* name) {
  if (w.wq.rows() != hidden || w.wq.cols() != hidden || w.wk.rows() != hidden ||
      w.wv.rows() != hidden || w.wo.rows() != hidden || w.wo.cols() != hidden ||
      w.w1.rows() != hidden || w.w2.cols() != hidden || w.w1.cols() != w.w2.rows()) {
    throw std::invalid_argument(std::string("RecoveryModel: bad shapes in ") + name);
  }
  for (const Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w1, &w.w2}) require_finite(*m, name);
}

}  // namespace

RecoveryModel RecoveryModel::init(const RecoveryConfig& config, std::uint64_t seed) {
  if (config.length == 0 || config.code_dim == 0 || config.hidden == 0 || config.ffn == 0) {
    throw std::invalid_argument("RecoveryModel: all dimensions must be >= 1");
  }
  RandomStream rng(seed);
  const double sh = 1.0 / std::sqrt(static_cast<double>(config.hidden));
  RecoveryModel m;
  m.queries = random_normal_matrix(rng, config.length, config.hidden, 1.0);
  m.input_proj = random_normal_matrix(rng, config.code_dim, config.hidden,
                                      1.0 / std::sqrt(static_cast<double>(config.code_dim)));
  m.cross = tome::LayerWeights::random(config.hidden, config.ffn, rng);
  for (auto& b : m.self) b = tome::LayerWeights::random(config.hidden, config.ffn, rng);
  m.output_proj = random_normal_matrix(rng, config.hidden, config.code_dim, sh);
  return m;
}

void RecoveryModel::validate() const {
  if (queries.rows() == 0 || hidden() == 0) throw std::invalid_argument("RecoveryModel: no queries");
  if (input_proj.cols() != hidden() || output_proj.rows() != hidden() ||
      output_proj.cols() != code_dim()) {
    throw std::invalid_argument("RecoveryModel: projection shapes inconsistent");
  }
  require_finite(queries, "RecoveryModel queries");
  require_finite(input_proj, "RecoveryModel input_proj");
  require_finite(output_proj, "RecoveryModel output_proj");
  check_block(cross, hidden(), "cross block");
  check_block(self[0], hidden(), "self block 0");
  check_block(self[1], hidden(), "self block 1");
}

Matrix cross_attention_block(const Matrix& x, const Matrix& memory, const tome::LayerWeights& w) {
  const Matrix h = layer_norm(x);
  const Matrix m = layer_norm(memory);
  const Matrix attn = attention(matmul(h, w.wq), matmul(m, w.wk), matmul(m, w.wv));
  const Matrix x1 = add(x, matmul(attn, w.wo));
  return add(x1, matmul(relu(matmul(layer_norm(x1), w.w1)), w.w2));
}

Matrix refine_queries(const RecoveryModel& model, const Matrix& z_quant) {
  if (z_quant.rows() == 0) throw std::invalid_argument("recovery_forward: K must be >= 1");
  if (z_quant.cols() != model.code_dim()) {
    throw std::invalid_argument("recovery_forward: token width " + std::to_string(z_quant.cols()) +
                                " != model code_dim " + std::to_string(model.code_dim()));
  }
  const Matrix memory = matmul(z_quant, model.input_proj);
  Matrix q = cross_attention_block(model.queries, memory, model.cross);
  for (const auto& block : model.self) q = tome::transformer_layer(q, block);
  return matmul(q, model.output_proj);
}

SourceLogits recovery_forward(const RecoveryModel& model, const Matrix& z_quant) {
  const Matrix refined = refine_queries(model, z_quant);
  SourceLogits out;
  out.l = refined.rows();
  out.k = z_quant.rows();
  out.scores = matmul(refined, transpose(z_quant));
  out.probs.reserve(out.l * out.k);
  std::vector<double> row(out.k);
  for (std::size_t j = 0; j < out.l; ++j) {
    for (std::size_t i = 0; i < out.k; ++i) row[i] = out.scores(j, i);
    const auto p = softmax(row);
    out.probs.insert(out.probs.end(), p.begin(), p.end());
  }
  return out;
}

SourceLogits logits_from_probs(std::size_t l, std::size_t k, std::vector<double> probs) {
  if (probs.size() != l * k) throw std::invalid_argument("logits_from_probs: length != L*K");
  SourceLogits out;
  out.l = l;
  out.k = k;
  out.scores = Matrix(l, k);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out.scores.data()[i] = static_cast<float>(std::log(std::max(probs[i], kProbClamp)));
  }
  out.probs = std::move(probs);
  return out;
}

SourcePrediction predict_source(const SourceLogits& logits) {
  if (logits.k == 0) throw std::invalid_argument("predict_source: K must be >= 1");
  std::vector<std::uint32_t> assignment(logits.l);
  for (std::size_t j = 0; j < logits.l; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.k; ++i)
      if (logits.prob(j, i) > logits.prob(j, best)) best = i;
    assignment[j] = static_cast<std::uint32_t>(best);
  }
  SourcePrediction out{tome::SourceMatrix(logits.k, std::move(assignment)), {}};
  out.empty_clusters = out.source.empty_rows();
  return out;
}

double source_loss(std::span<const double> probs, std::size_t l, std::size_t k,
                   const tome::SourceMatrix& truth) {
  check_shapes(probs.size(), l, k, truth);
  double loss = 0.0;
  for (std::size_t j = 0; j < l; ++j) {
    for (std::size_t i = 0; i < k; ++i) {
      const double p = std::clamp(probs[j * k + i], kProbClamp, 1.0 - kProbClamp);
      loss -= truth(i, j) ? std::log(p) : std::log1p(-p);
    }
  }
  return loss;
}

double source_loss(const SourceLogits& logits, const tome::SourceMatrix& truth) {
  return source_loss(logits.probs, logits.l, logits.k, truth);
}

std::vector<double> source_loss_grad(std::span<const double> probs, std::size_t l, std::size_t k,
                                     const tome::SourceMatrix& truth) {
  check_shapes(probs.size(), l, k, truth);
  std::vector<double> g(probs.size(), 0.0);
  for (std::size_t j = 0; j < l; ++j) {
    for (std::size_t i = 0; i < k; ++i) {
      const double p = probs[j * k + i];
      if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
      g[j * k + i] = truth(i, j) ? -1.0 / p : 1.0 / (1.0 - p);
    }
  }
  return g;
}

std::vector<double> source_loss_grad(const SourceLogits& logits, const tome::SourceMatrix& truth) {
  return source_loss_grad(logits.probs, logits.l, logits.k, truth);
}

Matrix recover_tokens(const Matrix& z_quant, const tome::SourceMatrix& s) {
  if (z_quant.rows() != s.k()) {
    throw std::invalid_argument("recover_tokens: z has " + std::to_string(z_quant.rows()) +
                                " rows but the source has k=" + std::to_string(s.k()));
  }
  Matrix out(s.l(), z_quant.cols());
  for (std::size_t j = 0; j < s.l(); ++j) {
    const auto src = z_quant.row(s.cluster_of(j));
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

}  // namespace mvq::recovery
