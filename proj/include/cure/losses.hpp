#pragma once

// Forget/retain loss terms with analytic gradients, their weighted totals,
// and the angular-margin classification loss used to train the teacher.
//
// Embedding batches are row-major by sample (B x d). Every gradient is the
// derivative of the returned value w.r.t. the inputs as given; no implicit
// renormalization happens inside a loss.

#include <span>

#include "cure/embedding.hpp"

namespace cure {

struct LossWeights {
  double pseudo_label = 1.0;
  double cos_forget = 1.0;
  double contrast = 1.0;
  double cos_retain = 1.0;
  double feat = 1.0;
  double fd = 10.0;

  void validate() const;
  bool all_zero() const;
};

struct MarginSpec {
  double margin = 0.3;       // contrastive similarity margin
  double temperature = 0.5;
  double arc_margin = 0.2;   // additive angular margin for teacher training
  double scale = 16.0;       // logit scale for teacher training

  void validate() const;
};

struct LossComponents {
  double pseudo_label = 0.0;
  double cos_forget = 0.0;
  double contrast = 0.0;
  double cos_retain = 0.0;
  double feat = 0.0;
  double fd = 0.0;
};

struct LossBreakdown {
  LossComponents components;
  double forget_total = 0.0;
  double retain_total = 0.0;
  double grand_total = 0.0;
};

struct LossValue {
  double value = 0.0;
  Matrix grad_student;
};

struct HeadLossValue {
  double value = 0.0;
  Matrix grad_student;
  Matrix grad_weight;
  Vector grad_bias;
};

struct AngularLossValue {
  double value = 0.0;
  Matrix grad_embeddings;
  Matrix grad_class_weights;
};

// Mean cross-entropy of softmax(g(e) / T) against the pseudo-label targets.
HeadLossValue pseudo_label_loss(const Matrix& student, const ClassifierHead& head,
                                std::span<const int> targets, double temperature);

// Mean student/teacher dot product over forget pairs.
LossValue cosine_forget_loss(const Matrix& student, const Matrix& teacher);

// Mean of relu(s.t - m) + relu(s.c - m), c the retain centroid nearest to each
// forget sample (indices supplied in `nearest_retain`).
LossValue contrastive_forget_loss(const Matrix& student, const Matrix& teacher,
                                  const Matrix& retain_centroids,
                                  std::span<const int> nearest_retain, double margin);

// Negative mean dot product over retain pairs.
LossValue cosine_retain_loss(const Matrix& student, const Matrix& teacher);

// Mean squared Euclidean distance over pairs.
LossValue feature_matching_loss(const Matrix& student, const Matrix& teacher);

// Mean of T^2 * KL(softmax(s/T) || softmax(t/T)), softmax over feature dimensions.
LossValue feature_distribution_loss(const Matrix& student, const Matrix& teacher, double temperature);

double forget_loss_total(const LossComponents& c, const LossWeights& w);
double retain_loss_total(const LossComponents& c, const LossWeights& w);
LossBreakdown grand_total(const LossComponents& c, const LossWeights& w);

// Cross-entropy over s*cos(theta_j) with the true-class angle widened by
// arc_margin. class_weights is d x C with unit columns.
AngularLossValue angular_margin_loss(const Matrix& embeddings, std::span<const int> labels,
                                     const Matrix& class_weights, double arc_margin, double scale);

}  // namespace cure
