#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mergevq/numerics.hpp"

namespace mvq::align {

/// Frozen stand-in for the pretrained teacher: a seeded random projection
/// from token width to class logits.
class StubTeacher {
 public:
  StubTeacher(Matrix projection, double temperature);
  static StubTeacher random(std::size_t dim, std::size_t classes, double temperature,
                            std::uint64_t seed);

  const Matrix& projection() const { return projection_; }
  double temperature() const { return temperature_; }
  std::size_t classes() const { return projection_.cols(); }

  std::vector<double> distribution(const Matrix& tokens) const;

 private:
  Matrix projection_;  // dim x classes
  double temperature_;
};

/// Class distribution of a token set: mean-pool rows (the [CLS] surrogate),
/// project, softmax at temperature.
std::vector<double> cls_distribution(const Matrix& tokens, const Matrix& projection,
                                     double temperature);

inline constexpr double kStudentClamp = 1e-7;

/// Cross-entropy -sum_c teacher_c log(student_c), student clamped below at 1e-7.
/// Both inputs must be distributions (sum within 1e-4 of 1) of equal length.
double align_loss(std::span<const double> student, std::span<const double> teacher);

/// d align_loss / d student_c = -teacher_c / student_c; zero where the clamp is active.
std::vector<double> align_loss_grad(std::span<const double> student,
                                    std::span<const double> teacher);

/// A noisy view of tokens: each entry plus N(0, noise^2).
Matrix augment_view(const Matrix& tokens, double noise, RandomStream& rng);

}  // namespace mvq::align
