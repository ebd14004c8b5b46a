#include "mergevq/align.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mvq::align {

namespace {

void check_distributions(std::span<const double> student, std::span<const double> teacher) {
  if (student.size() != teacher.size()) {
    throw std::invalid_argument("align_loss: length mismatch " + std::to_string(student.size()) +
                                " vs " + std::to_string(teacher.size()));
  }
  if (student.empty()) throw std::invalid_argument("align_loss: empty distributions");
  for (auto d : {student, teacher}) {
    double sum = 0.0;
    for (double p : d) {
      if (!(p >= 0.0)) throw std::invalid_argument("align_loss: negative or NaN probability");
      sum += p;
    }
    // The slack absorbs summation rounding at exactly 1e-4.
    if (std::abs(sum - 1.0) > 1e-4 + 1e-12) {
      throw std::invalid_argument("align_loss: input sums to " + std::to_string(sum) +
                                  ", not a distribution");
    }
  }
}

}  // namespace

StubTeacher::StubTeacher(Matrix projection, double temperature)
    : projection_(std::move(projection)), temperature_(temperature) {
  if (!(temperature_ > 0.0)) throw std::invalid_argument("StubTeacher: temperature must be > 0");
  if (projection_.empty()) throw std::invalid_argument("StubTeacher: empty projection");
}

StubTeacher StubTeacher::random(std::size_t dim, std::size_t classes, double temperature,
                                std::uint64_t seed) {
  RandomStream rng(seed);
  return StubTeacher(
      random_normal_matrix(rng, dim, classes, 1.0 / std::sqrt(static_cast<double>(dim))),
      temperature);
}

std::vector<double> StubTeacher::distribution(const Matrix& tokens) const {
  return cls_distribution(tokens, projection_, temperature_);
}

std::vector<double> cls_distribution(const Matrix& tokens, const Matrix& projection,
                                     double temperature) {
  if (tokens.rows() == 0) throw std::invalid_argument("cls_distribution: no tokens");
  if (tokens.cols() != projection.rows()) {
    throw std::invalid_argument("cls_distribution: token width " + std::to_string(tokens.cols()) +
                                " != projection rows " + std::to_string(projection.rows()));
  }
  std::vector<double> pooled(tokens.cols(), 0.0);
  for (std::size_t i = 0; i < tokens.rows(); ++i)
    for (std::size_t c = 0; c < tokens.cols(); ++c) pooled[c] += tokens(i, c);
  for (auto& x : pooled) x /= static_cast<double>(tokens.rows());
  std::vector<double> logits(projection.cols(), 0.0);
  for (std::size_t c = 0; c < projection.rows(); ++c)
    for (std::size_t k = 0; k < projection.cols(); ++k) logits[k] += pooled[c] * projection(c, k);
  return softmax(logits, temperature);
}

double align_loss(std::span<const double> student, std::span<const double> teacher) {
  check_distributions(student, teacher);
  double loss = 0.0;
  for (std::size_t c = 0; c < student.size(); ++c) {
    if (teacher[c] == 0.0) continue;
    loss -= teacher[c] * std::log(std::max(student[c], kStudentClamp));
  }
  return loss;
}

std::vector<double> align_loss_grad(std::span<const double> student,
                                    std::span<const double> teacher) {
  check_distributions(student, teacher);
  std::vector<double> g(student.size(), 0.0);
  for (std::size_t c = 0; c < student.size(); ++c) {
    if (student[c] < kStudentClamp) continue;
    g[c] = -teacher[c] / student[c];
  }
  return g;
}

Matrix augment_view(const Matrix& tokens, double noise, RandomStream& rng) {
  Matrix out = tokens;
  for (auto& x : out.data()) x = static_cast<float>(x + noise * rng.normal());
  return out;
}

}  // namespace mvq::align
