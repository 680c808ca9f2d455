#include "cure/losses.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cure/errors.hpp"

namespace cure {

namespace {

void require_paired(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": student and teacher batches differ in shape");
  }
  if (a.rows() == 0) throw EmptyInputError(std::string(what) + ": empty batch");
}

void require_temperature(double t) {
  if (!(t > 0.0)) throw ConfigError("temperature must be positive");
}

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& z) {
  const Vector max = z.rowwise().maxCoeff();
  Matrix shifted = z.colwise() - max;
  const Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {pseudo_label, cos_forget, contrast, cos_retain, feat, fd}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
}

bool LossWeights::all_zero() const {
  return pseudo_label == 0.0 && cos_forget == 0.0 && contrast == 0.0 && cos_retain == 0.0 &&
         feat == 0.0 && fd == 0.0;
}

void MarginSpec::validate() const {
  require_temperature(temperature);
  if (!(margin >= 0.0 && margin <= 1.0)) throw ConfigError("contrastive margin must lie in [0, 1]");
  if (!(arc_margin >= 0.0 && arc_margin < std::numbers::pi / 2)) {
    throw ConfigError("angular margin must lie in [0, pi/2)");
  }
  if (!(scale > 0.0)) throw ConfigError("logit scale must be positive");
}

HeadLossValue pseudo_label_loss(const Matrix& student, const ClassifierHead& head,
                                std::span<const int> targets, double temperature) {
  require_temperature(temperature);
  const auto batch = student.rows();
  if (batch == 0) throw EmptyInputError("pseudo_label_loss: empty batch");
  if (static_cast<Eigen::Index>(targets.size()) != batch) {
    throw DimensionError("pseudo_label_loss: one target per sample required");
  }
  const Matrix logp = log_softmax_rows(head.logits(student) / temperature);
  Matrix dlogits = logp.array().exp().matrix();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= head.num_classes()) throw DimensionError("pseudo_label_loss: target out of range");
    loss -= logp(i, y);
    dlogits(i, y) -= 1.0;
  }
  const double n = static_cast<double>(batch);
  dlogits /= (n * temperature);
  return {loss / n, dlogits * head.weight.transpose(), student.transpose() * dlogits,
          dlogits.colwise().sum().transpose()};
}

LossValue cosine_forget_loss(const Matrix& student, const Matrix& teacher) {
  require_paired(student, teacher, "cosine_forget_loss");
  const double n = static_cast<double>(student.rows());
  return {student.cwiseProduct(teacher).sum() / n, teacher / n};
}

LossValue contrastive_forget_loss(const Matrix& student, const Matrix& teacher,
                                  const Matrix& retain_centroids,
                                  std::span<const int> nearest_retain, double margin) {
  require_paired(student, teacher, "contrastive_forget_loss");
  if (!(margin >= 0.0 && margin <= 1.0)) throw ConfigError("contrastive margin must lie in [0, 1]");
  if (static_cast<Eigen::Index>(nearest_retain.size()) != student.rows()) {
    throw DimensionError("contrastive_forget_loss: missing retain-centroid assignment");
  }
  if (retain_centroids.cols() != student.cols()) {
    throw DimensionError("contrastive_forget_loss: centroid dimension mismatch");
  }
  const double n = static_cast<double>(student.rows());
  Matrix grad = Matrix::Zero(student.rows(), student.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < student.rows(); ++i) {
    const int k = nearest_retain[static_cast<std::size_t>(i)];
    if (k < 0 || k >= retain_centroids.rows()) {
      throw DimensionError("contrastive_forget_loss: retain-centroid index out of range");
    }
    const double to_teacher = student.row(i).dot(teacher.row(i)) - margin;
    const double to_centroid = student.row(i).dot(retain_centroids.row(k)) - margin;
    if (to_teacher > 0.0) {
      loss += to_teacher;
      grad.row(i) += teacher.row(i);
    }
    if (to_centroid > 0.0) {
      loss += to_centroid;
      grad.row(i) += retain_centroids.row(k);
    }
  }
  return {loss / n, grad / n};
}

LossValue cosine_retain_loss(const Matrix& student, const Matrix& teacher) {
  require_paired(student, teacher, "cosine_retain_loss");
  const double n = static_cast<double>(student.rows());
  return {-student.cwiseProduct(teacher).sum() / n, -teacher / n};
}

LossValue feature_matching_loss(const Matrix& student, const Matrix& teacher) {
  require_paired(student, teacher, "feature_matching_loss");
  const double n = static_cast<double>(student.rows());
  const Matrix diff = student - teacher;
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

LossValue feature_distribution_loss(const Matrix& student, const Matrix& teacher, double temperature) {
  require_temperature(temperature);
  require_paired(student, teacher, "feature_distribution_loss");
  const double n = static_cast<double>(student.rows());
  const Matrix log_p = log_softmax_rows(student / temperature);  // student
  const Matrix log_q = log_softmax_rows(teacher / temperature);  // teacher
  const Matrix p = log_p.array().exp().matrix();
  const Matrix log_ratio = log_p - log_q;
  // KL(student || teacher), one value per row
  const Vector kl = p.cwiseProduct(log_ratio).rowwise().sum();
  // d KL / d(s/T) = p * (log p - log q - KL)
  Matrix centered = log_ratio.colwise() - kl;
  Matrix grad = p.cwiseProduct(centered) * (temperature / n);
  return {temperature * temperature * kl.sum() / n, std::move(grad)};
}

double forget_loss_total(const LossComponents& c, const LossWeights& w) {
  w.validate();
  return w.pseudo_label * c.pseudo_label + w.cos_forget * c.cos_forget + w.contrast * c.contrast;
}

double retain_loss_total(const LossComponents& c, const LossWeights& w) {
  w.validate();
  return w.cos_retain * c.cos_retain + w.feat * c.feat + w.fd * c.fd;
}

LossBreakdown grand_total(const LossComponents& c, const LossWeights& w) {
  LossBreakdown b;
  b.components = c;
  b.forget_total = forget_loss_total(c, w);
  b.retain_total = retain_loss_total(c, w);
  b.grand_total = b.forget_total + b.retain_total;
  return b;
}

AngularLossValue angular_margin_loss(const Matrix& embeddings, std::span<const int> labels,
                                     const Matrix& class_weights, double arc_margin, double scale) {
  if (!(scale > 0.0)) throw ConfigError("logit scale must be positive");
  if (!(arc_margin >= 0.0 && arc_margin < std::numbers::pi / 2)) {
    throw ConfigError("angular margin must lie in [0, pi/2)");
  }
  const auto batch = embeddings.rows();
  if (batch == 0) throw EmptyInputError("angular_margin_loss: empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != batch) {
    throw DimensionError("angular_margin_loss: one label per sample required");
  }
  if (class_weights.rows() != embeddings.cols()) {
    throw DimensionError("angular_margin_loss: class weight dimension mismatch");
  }
  const double cos_m = std::cos(arc_margin);
  const double sin_m = std::sin(arc_margin);
  // Beyond theta + m = pi, cos(theta + m) stops decreasing; fall back to a linear penalty.
  const double threshold = std::cos(std::numbers::pi - arc_margin);
  const double fallback = arc_margin * sin_m;

  const Matrix cosines = embeddings * class_weights;
  Matrix logits = scale * cosines;
  std::vector<double> margin_slope(static_cast<std::size_t>(batch), 1.0);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= class_weights.cols()) throw DimensionError("angular_margin_loss: label out of range");
    const double c = cosines(i, y);
    double phi = 0.0;
    double slope = 1.0;
    if (c > threshold) {
      const double sin_t = std::sqrt(std::max(1.0 - c * c, 1e-12));
      phi = c * cos_m - sin_t * sin_m;
      slope = cos_m + c * sin_m / sin_t;
    } else {
      phi = c - fallback;
    }
    logits(i, y) = scale * phi;
    margin_slope[static_cast<std::size_t>(i)] = slope;
  }

  const Matrix logp = log_softmax_rows(logits);
  Matrix dcos = logp.array().exp().matrix();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= logp(i, y);
    dcos(i, y) -= 1.0;
    dcos(i, y) *= margin_slope[static_cast<std::size_t>(i)];
  }
  const double n = static_cast<double>(batch);
  dcos *= scale / n;
  return {loss / n, dcos * class_weights.transpose(), embeddings.transpose() * dcos};
}

}  // namespace cure
