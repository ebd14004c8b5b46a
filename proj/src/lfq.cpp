#include "mergevq/lfq.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace mvq::lfq {

namespace {

void check_dim(std::size_t d) {
  if (d == 0 || d > kMaxCodeDim) {
    throw std::invalid_argument("LFQ code dimension must be in [1, " + std::to_string(kMaxCodeDim) +
                                "], got " + std::to_string(d));
  }
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Binary entropy of sigmoid(t) in nats, stable for large |t|.
double sigmoid_entropy(double t) {
  const double p = 1.0 / (1.0 + std::exp(-t));
  const double log_p = -softplus(-t);
  const double log_q = -softplus(t);
  return -(p * log_p + (1.0 - p) * log_q);
}

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

}  // namespace

std::vector<float> LfqCode::values() const { return index_code(index, dims); }

Quantized quantize(const Matrix& z) {
  check_dim(z.cols());
  Quantized q{{}, Matrix(z.rows(), z.cols())};
  q.codes.reserve(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    std::uint64_t index = 0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      const bool positive = z(i, j) >= 0.0f;
      q.values(i, j) = positive ? 1.0f : -1.0f;
      if (positive) index |= std::uint64_t{1} << j;
    }
    q.codes.push_back({static_cast<std::uint32_t>(z.cols()), index});
  }
  return q;
}

std::uint64_t code_index(std::span<const float> code) {
  check_dim(code.size());
  std::uint64_t index = 0;
  for (std::size_t j = 0; j < code.size(); ++j) {
    if (code[j] == 1.0f) {
      index |= std::uint64_t{1} << j;
    } else if (code[j] != -1.0f) {
      throw std::invalid_argument("code_index: component " + std::to_string(j) +
                                  " is not +/-1 (" + std::to_string(code[j]) + ")");
    }
  }
  return index;
}

std::vector<float> index_code(std::uint64_t index, std::size_t d) {
  check_dim(d);
  if ((index >> d) != 0) {
    throw std::invalid_argument("index_code: index " + std::to_string(index) +
                                " out of range for d=" + std::to_string(d));
  }
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = ((index >> j) & 1u) ? 1.0f : -1.0f;
  return out;
}

double commitment_loss(const Matrix& z, const Matrix& z_quant) {
  if (z.rows() != z_quant.rows() || z.cols() != z_quant.cols()) {
    throw std::invalid_argument("commitment_loss: shape mismatch " + z.shape_string() + " vs " +
                                z_quant.shape_string());
  }
  const auto a = z.data();
  const auto b = z_quant.data();
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

std::vector<double> commitment_loss_grad(const Matrix& z, const Matrix& z_quant) {
  if (z.rows() != z_quant.rows() || z.cols() != z_quant.cols()) {
    throw std::invalid_argument("commitment_loss_grad: shape mismatch");
  }
  const auto a = z.data();
  const auto b = z_quant.data();
  std::vector<double> g(a.size());
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = 2.0 * (static_cast<double>(a[i]) - b[i]) / n;
  return g;
}

EntropyTerms entropy_penalty(const Matrix& z) {
  check_dim(z.cols());
  EntropyTerms t;
  if (z.rows() == 0) return t;
  std::vector<double> mean_p(z.cols(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) {
      const double logit = 2.0 * z(i, j);
      t.sample_entropy += sigmoid_entropy(logit);
      mean_p[j] += 1.0 / (1.0 + std::exp(-logit));
    }
  }
  const double n = static_cast<double>(z.rows());
  t.sample_entropy /= n;
  for (double p : mean_p) t.codebook_entropy += binary_entropy(p / n);
  t.penalty = t.sample_entropy - t.codebook_entropy;
  return t;
}

CodebookStats::CodebookStats(std::size_t dims) : dims_(dims) { check_dim(dims); }

std::uint64_t CodebookStats::count(std::uint64_t index) const {
  const auto it = counts_.find(index);
  return it == counts_.end() ? 0 : it->second;
}

double CodebookStats::usage() const {
  return static_cast<double>(counts_.size()) / std::ldexp(1.0, static_cast<int>(dims_));
}

void CodebookStats::record(std::span<const LfqCode> codes) {
  for (const auto& c : codes) {
    if (c.dims != dims_) {
      throw std::invalid_argument("record_usage: code dimension " + std::to_string(c.dims) +
                                  " != stats dimension " + std::to_string(dims_));
    }
  }
  for (const auto& c : codes) {
    ++counts_[c.index];
    ++total_;
  }
}

CodebookStats record_usage(CodebookStats stats, std::span<const LfqCode> codes) {
  stats.record(codes);
  return stats;
}

void save_codes(const std::filesystem::path& path, std::span<const LfqCode> codes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& c : codes) out << c.index << '\n';
  if (!out) throw std::runtime_error("write error on " + path.string());
}

std::vector<std::uint64_t> load_codes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint64_t> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(line, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != line.size() || line[0] == '-') {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": not a decimal code index");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace mvq::lfq
