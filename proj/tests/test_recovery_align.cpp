#include <doctest.h>

#include <stdexcept>
#include <cmath>
#include <numeric>

#include "mergevq/align.hpp"
#include "mergevq/recovery.hpp"

using namespace mvq;
using namespace mvq::recovery;
using mvq::tome::SourceMatrix;

TEST_CASE("recover_tokens copies each position's owning row") {
  const Matrix z = Matrix::from_rows({{1, 2}, {3, 4}});
  const SourceMatrix s(2, {1, 0, 1});
  const Matrix out = recover_tokens(z, s);
  CHECK(out == Matrix::from_rows({{3, 4}, {1, 2}, {3, 4}}));
  CHECK(out == matmul(transpose(s.to_dense()), z));
  CHECK_THROWS_AS(recover_tokens(Matrix(3, 2), s), std::invalid_argument);
}

TEST_CASE("source loss against an independent BCE sum") {
  const SourceMatrix truth(2, {0, 1, 1});
  const std::vector<double> p{0.9, 0.1, 0.2, 0.8, 0.5, 0.5};  // L x K
  const double expect = -(std::log(0.9) + std::log(0.9) + std::log(0.8) + std::log(0.8) +
                          std::log(0.5) + std::log(0.5));
  CHECK(source_loss(p, 3, 2, truth) == doctest::Approx(expect));
  const auto g = source_loss_grad(p, 3, 2, truth);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto pp = p, pm = p;
    pp[i] += 1e-6;
    pm[i] -= 1e-6;
    const double fd = (source_loss(pp, 3, 2, truth) - source_loss(pm, 3, 2, truth)) / 2e-6;
    CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  CHECK_THROWS_AS(source_loss(p, 2, 3, truth), std::invalid_argument);
  CHECK_THROWS_AS(source_loss(std::vector<double>(4), 2, 2, truth), std::invalid_argument);
}

TEST_CASE("clamped probabilities give finite loss and zero gradient") {
  const SourceMatrix truth(1, {0});
  const std::vector<double> p{0.0};
  CHECK(source_loss(p, 1, 1, truth) == doctest::Approx(-std::log(kProbClamp)));
  CHECK(source_loss_grad(p, 1, 1, truth)[0] == 0.0);
}

TEST_CASE("argmax prediction with ties and empty clusters") {
  auto logits = logits_from_probs(3, 3, {0.5, 0.5, 0.0, 0.1, 0.2, 0.7, 0.6, 0.3, 0.1});
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += logits.prob(j, i);
    CHECK(s == doctest::Approx(1.0));
  }
  const auto pred = predict_source(logits);
  CHECK(pred.source == SourceMatrix(3, {0, 2, 0}));
  CHECK(pred.degenerate());
  CHECK(pred.empty_clusters == std::vector<std::uint32_t>{1});
  CHECK_THROWS_AS(logits_from_probs(2, 2, {1.0}), std::invalid_argument);
}

TEST_CASE("recovery model forward shapes and determinism") {
  RecoveryConfig cfg{12, 5, 16, 32};
  const auto model = RecoveryModel::init(cfg, 3);
  model.validate();
  CHECK(model.length() == 12);
  CHECK(model.code_dim() == 5);
  RandomStream rng(1);
  const Matrix z = random_normal_matrix(rng, 4, 5);
  const auto a = recovery_forward(model, z);
  CHECK(a.l == 12);
  CHECK(a.k == 4);
  CHECK(a.scores.rows() == 12);
  CHECK(a.scores.cols() == 4);
  for (std::size_t j = 0; j < 12; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) s += a.prob(j, i);
    CHECK(s == doctest::Approx(1.0));
  }
  CHECK(recovery_forward(RecoveryModel::init(cfg, 3), z).scores == a.scores);
  CHECK(refine_queries(model, z).cols() == 5);
  CHECK_THROWS_AS(recovery_forward(model, Matrix(4, 6)), std::invalid_argument);
  CHECK_THROWS_AS(recovery_forward(model, Matrix(0, 5)), std::invalid_argument);
  CHECK_THROWS_AS(RecoveryModel::init({0, 5, 16, 32}, 1), std::invalid_argument);
  auto broken = model;
  broken.output_proj = Matrix(3, 3);
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);
}

TEST_CASE("alignment loss matches the cross-entropy sum") {
  const std::vector<double> student{0.7, 0.2, 0.1};
  const std::vector<double> teacher{0.5, 0.25, 0.25};
  const double expect = -(0.5 * std::log(0.7) + 0.25 * std::log(0.2) + 0.25 * std::log(0.1));
  CHECK(align::align_loss(student, teacher) == doctest::Approx(expect));
  // One-hot teacher gives plain negative log-likelihood.
  CHECK(align::align_loss(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}) ==
        doctest::Approx(std::log(2.0)));
  const auto g = align::align_loss_grad(student, teacher);
  CHECK(g[0] == doctest::Approx(-0.5 / 0.7));
  CHECK(g[2] == doctest::Approx(-2.5));
  const std::vector<double> zero{0.0, 1.0};
  CHECK(align::align_loss(zero, std::vector<double>{0.5, 0.5}) ==
        doctest::Approx(-0.5 * std::log(align::kStudentClamp)));
  CHECK(align::align_loss_grad(zero, std::vector<double>{0.5, 0.5})[0] == 0.0);
}

TEST_CASE("alignment loss validation") {
  using align::align_loss;
  CHECK_THROWS_AS(align_loss(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(align_loss(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(align_loss(std::vector<double>{0.6, 0.6}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(align_loss(std::vector<double>{1.5, -0.5}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("teacher distribution is softmax of the projected mean token") {
  const Matrix tokens = Matrix::from_rows({{1, 0}, {3, 2}});
  const Matrix proj = Matrix::from_rows({{1, 0, 0}, {0, 1, -1}});
  // mean = (2, 1) -> logits (2, 1, -1) / 2
  const auto p = align::cls_distribution(tokens, proj, 2.0);
  const double e0 = std::exp(1.0), e1 = std::exp(0.5), e2 = std::exp(-0.5);
  CHECK(p[0] == doctest::Approx(e0 / (e0 + e1 + e2)));
  CHECK(p[2] == doctest::Approx(e2 / (e0 + e1 + e2)));
  const align::StubTeacher t(proj, 2.0);
  CHECK(t.distribution(tokens) == p);
  CHECK(t.classes() == 3);
  CHECK_THROWS_AS(align::StubTeacher(proj, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(align::cls_distribution(Matrix(0, 2), proj, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(align::cls_distribution(Matrix(2, 3), proj, 1.0), std::invalid_argument);
  const auto r1 = align::StubTeacher::random(4, 5, 1.0, 9);
  const auto r2 = align::StubTeacher::random(4, 5, 1.0, 9);
  CHECK(r1.projection() == r2.projection());
}

TEST_CASE("augmented views") {
  RandomStream rng(2);
  const Matrix x = random_normal_matrix(rng, 3, 4);
  CHECK(align::augment_view(x, 0.0, rng) == x);
  const Matrix y = align::augment_view(x, 0.1, rng);
  CHECK(y.rows() == 3);
  CHECK(max_abs_diff(x, y) > 0.0);
  CHECK(max_abs_diff(x, y) < 1.0);
}
