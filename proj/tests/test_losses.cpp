#include <doctest.h>

#include <cmath>
#include <random>

#include "cure/errors.hpp"
#include "cure/losses.hpp"
#include "support.hpp"

using namespace cure;
using oracle::numeric_gradient;
using oracle::random_unit_rows;
using oracle::relative_error;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(values.size(), values.begin()->size());
  int i = 0;
  for (const auto& r : values) {
    int j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

constexpr double kTol = 1e-5;
constexpr int kTrials = 20;

}  // namespace

TEST_CASE("pseudo-label loss values") {
  SUBCASE("uniform logits give ln K") {
    const ClassifierHead head{Matrix::Zero(4, 8), Vector::Zero(8)};
    std::mt19937_64 rng(1);
    const Matrix e = random_unit_rows(5, 4, rng);
    const std::vector<int> targets = {0, 3, 7, 1, 5};
    CHECK(pseudo_label_loss(e, head, targets, 0.5).value == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }
  SUBCASE("two logits at temperature 0.5") {
    const ClassifierHead head{rows({{2, 0}, {0, 0}}), Vector::Zero(2)};
    const std::vector<int> target = {0};
    const double v = pseudo_label_loss(rows({{1, 0}}), head, target, 0.5).value;
    CHECK(v == doctest::Approx(std::log1p(std::exp(-4.0))).epsilon(1e-12));
    CHECK(v == doctest::Approx(0.0181).epsilon(1e-2));
  }
  SUBCASE("peaked logits drive the loss to zero") {
    const ClassifierHead head{rows({{200, 0}, {0, 0}}), Vector::Zero(2)};
    const std::vector<int> target = {0};
    CHECK(pseudo_label_loss(rows({{1, 0}}), head, target, 0.5).value < 1e-100);
  }
}

TEST_CASE("cosine and feature matching values") {
  const Matrix a = rows({{1, 0}, {0, 1}});
  const Matrix b = rows({{0, 1}, {1, 0}});
  CHECK(cosine_forget_loss(a, a).value == doctest::Approx(1.0));
  CHECK(cosine_forget_loss(a, b).value == doctest::Approx(0.0));
  CHECK(cosine_forget_loss(a, -a).value == doctest::Approx(-1.0));
  CHECK(cosine_retain_loss(a, a).value == doctest::Approx(-1.0));
  CHECK(cosine_retain_loss(a, b).value == doctest::Approx(0.0));
  CHECK(cosine_retain_loss(a, -a).value == doctest::Approx(1.0));
  CHECK(feature_matching_loss(a, a).value == 0.0);
  CHECK(feature_matching_loss(a, -a).value == doctest::Approx(4.0));
  CHECK(feature_matching_loss(a, b).value == doctest::Approx(2.0));
}

TEST_CASE("contrastive loss values") {
  const Matrix s = rows({{1, 0, 0}});
  SUBCASE("dead zone") {
    const Matrix t = rows({{0.2, std::sqrt(1 - 0.04), 0}});
    const Matrix c = rows({{0, 0, 1}});
    const std::vector<int> nearest = {0};
    CHECK(contrastive_forget_loss(s, t, c, nearest, 0.3).value == 0.0);
  }
  SUBCASE("similarities 0.5 and 0.1 with margin 0.3") {
    const Matrix t = rows({{0.5, std::sqrt(0.75), 0}});
    const Matrix c = rows({{0.1, 0, std::sqrt(0.99)}});
    const std::vector<int> nearest = {0};
    CHECK(contrastive_forget_loss(s, t, c, nearest, 0.3).value == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("everything aligned") {
    const std::vector<int> nearest = {0};
    CHECK(contrastive_forget_loss(s, s, s, nearest, 0.3).value == doctest::Approx(1.4).epsilon(1e-12));
  }
}

TEST_CASE("feature distribution loss") {
  SUBCASE("reference value for opposite axes at T = 0.5") {
    // Independent evaluation: logits divided by T, softmax over the two
    // feature dimensions, KL(student || teacher) scaled by T^2.
    const double t = 0.5;
    const auto p = oracle::softmax({1.0 / t, 0.0});
    const auto q = oracle::softmax({0.0, 1.0 / t});
    const double expected = t * t * oracle::kl(p, q);
    const double got = feature_distribution_loss(rows({{1, 0}}), rows({{0, 1}}), t).value;
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    CHECK(got == doctest::Approx(0.3808).epsilon(1e-3));
  }
  SUBCASE("identical inputs give zero and values are non-negative") {
    std::mt19937_64 rng(7);
    const Matrix a = random_unit_rows(6, 5, rng);
    const Matrix b = random_unit_rows(6, 5, rng);
    CHECK(feature_distribution_loss(a, a, 0.5).value == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(feature_distribution_loss(a, b, 0.5).value >= 0.0);
  }
  SUBCASE("student distribution is the first KL argument") {
    const Matrix s = rows({{1, 0, 0}});
    const Matrix t = rows({{0.6, 0.8, 0}});
    const double temp = 0.3;
    const auto p = oracle::softmax({1 / temp, 0, 0});
    const auto q = oracle::softmax({0.6 / temp, 0.8 / temp, 0});
    const double forward = feature_distribution_loss(s, t, temp).value;
    const double backward = feature_distribution_loss(t, s, temp).value;
    CHECK(forward == doctest::Approx(temp * temp * oracle::kl(p, q)).epsilon(1e-12));
    CHECK(std::abs(forward - backward) > 1e-3);
  }
}

TEST_CASE("weighted totals") {
  const LossWeights w;
  const LossComponents zero;
  const LossBreakdown z = grand_total(zero, w);
  CHECK(z.forget_total == 0.0);
  CHECK(z.retain_total == 0.0);
  CHECK(z.grand_total == 0.0);

  const LossComponents c{0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  CHECK(retain_loss_total(c, w) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(forget_loss_total(c, w) == doctest::Approx(0.3).epsilon(1e-12));

  LossWeights no_fd = w;
  no_fd.fd = 0.0;
  CHECK(retain_loss_total(c, no_fd) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(grand_total(c, no_fd).grand_total == doctest::Approx(0.5).epsilon(1e-12));

  LossWeights negative = w;
  negative.feat = -1.0;
  CHECK_THROWS_AS(negative.validate(), ConfigError);
}

TEST_CASE("angular margin loss values") {
  std::mt19937_64 rng(3);
  const Matrix e = random_unit_rows(6, 4, rng);
  const Matrix w = random_unit_rows(5, 4, rng).transpose();
  const std::vector<int> labels = {0, 1, 2, 3, 4, 0};
  SUBCASE("no margin reduces to scaled softmax cross-entropy") {
    double expected = 0.0;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> z(5);
      for (int c = 0; c < 5; ++c) z[c] = 16.0 * e.row(i).dot(w.col(c));
      expected -= std::log(oracle::softmax(z)[labels[i]]);
    }
    CHECK(angular_margin_loss(e, labels, w, 0.0, 16.0).value == doctest::Approx(expected / 6).epsilon(1e-12));
  }
  SUBCASE("aligned embedding with large scale") {
    const Matrix wc = rows({{1, 0}, {0, 1}});
    const std::vector<int> l = {0};
    CHECK(angular_margin_loss(rows({{1, 0}}), l, wc, 0.2, 200.0).value < 1e-30);
  }
  SUBCASE("single class") {
    const std::vector<int> l = {0, 0};
    CHECK(angular_margin_loss(e.topRows(2), l, w.leftCols(1), 0.2, 16.0).value == 0.0);
  }
}

TEST_CASE("loss invariants on random unit inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < kTrials; ++trial) {
    const Matrix s = random_unit_rows(7, 6, rng);
    const Matrix t = random_unit_rows(7, 6, rng);
    CHECK(cosine_forget_loss(s, t).value + cosine_retain_loss(s, t).value == 0.0);
    CHECK(feature_matching_loss(s, t).value ==
          doctest::Approx(2.0 - 2.0 * cosine_forget_loss(s, t).value).epsilon(1e-12));
    const Matrix c = random_unit_rows(3, 6, rng);
    const std::vector<int> nearest = {0, 1, 2, 0, 1, 2, 0};
    double previous = std::numeric_limits<double>::infinity();
    for (double m = 0.0; m <= 1.0; m += 0.05) {
      const double v = contrastive_forget_loss(s, t, c, nearest, m).value;
      CHECK(v <= previous);
      previous = v;
    }
    for (double temp : {0.1, 0.5, 1.0, 10.0}) {
      CHECK(std::isfinite(feature_distribution_loss(s, t, temp).value));
      const ClassifierHead head = ClassifierHead::random(6, 4, 1.0, trial);
      const std::vector<int> targets = {0, 1, 2, 3, 0, 1, 2};
      CHECK(std::isfinite(pseudo_label_loss(s, head, targets, temp).value));
    }
  }
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) {
    const Matrix s = random_unit_rows(5, 6, rng);
    const Matrix t = random_unit_rows(5, 6, rng);

    auto check = [&](const Matrix& analytic, const std::function<double(const Matrix&)>& f, const Matrix& at) {
      const double err = relative_error(analytic, numeric_gradient(f, at));
      worst = std::max(worst, err);
      CHECK(err < kTol);
    };

    check(cosine_forget_loss(s, t).grad_student, [&](const Matrix& x) { return cosine_forget_loss(x, t).value; }, s);
    check(cosine_retain_loss(s, t).grad_student, [&](const Matrix& x) { return cosine_retain_loss(x, t).value; }, s);
    check(feature_matching_loss(s, t).grad_student, [&](const Matrix& x) { return feature_matching_loss(x, t).value; },
          s);
    for (double temp : {0.5, 2.0}) {
      check(feature_distribution_loss(s, t, temp).grad_student,
            [&](const Matrix& x) { return feature_distribution_loss(x, t, temp).value; }, s);
    }

    // Keep the contrastive hinge active by starting the student near the
    // teacher and using a zero margin.
    const Matrix near = oracle::random_matrix(5, 6, rng, 0.2) + t;
    const Matrix sn = near.rowwise().normalized();
    const Matrix c = random_unit_rows(3, 6, rng);
    const std::vector<int> nearest = {0, 2, 1, 1, 0};
    check(contrastive_forget_loss(sn, t, c, nearest, 0.0).grad_student,
          [&](const Matrix& x) { return contrastive_forget_loss(x, t, c, nearest, 0.0).value; }, sn);

    const ClassifierHead head = ClassifierHead::random(6, 4, 0.5, trial);
    const std::vector<int> targets = {3, 0, 1, 2, 3};
    const HeadLossValue pl = pseudo_label_loss(s, head, targets, 0.5);
    check(pl.grad_student, [&](const Matrix& x) { return pseudo_label_loss(x, head, targets, 0.5).value; }, s);
    check(pl.grad_weight,
          [&](const Matrix& w) { return pseudo_label_loss(s, ClassifierHead{w, head.bias}, targets, 0.5).value; },
          head.weight);
    check(Matrix(pl.grad_bias),
          [&](const Matrix& b) { return pseudo_label_loss(s, ClassifierHead{head.weight, Vector(b)}, targets, 0.5).value; },
          Matrix(head.bias));

    const Matrix w = random_unit_rows(4, 6, rng).transpose();
    const std::vector<int> labels = {0, 1, 2, 3, 1};
    const AngularLossValue arc = angular_margin_loss(s, labels, w, 0.2, 16.0);
    check(arc.grad_embeddings, [&](const Matrix& x) { return angular_margin_loss(x, labels, w, 0.2, 16.0).value; }, s);
    check(arc.grad_class_weights,
          [&](const Matrix& x) { return angular_margin_loss(s, labels, x, 0.2, 16.0).value; }, w);
  }
  MESSAGE("worst relative gradient error: " << worst);
}

TEST_CASE("loss argument validation") {
  const Matrix a = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(cosine_forget_loss(a, Matrix::Identity(3, 3)), DimensionError);
  CHECK_THROWS_AS(feature_distribution_loss(a, a, 0.0), ConfigError);
  MarginSpec bad;
  bad.temperature = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
