#include "cure/clustering.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

#include "cure/errors.hpp"

namespace cure {

std::string to_string(ClusteringBackend backend) {
  return backend == ClusteringBackend::kmeans ? "kmeans" : "gmm";
}

ClusteringBackend clustering_backend_from_string(const std::string& s) {
  if (s == "kmeans") return ClusteringBackend::kmeans;
  if (s == "gmm") return ClusteringBackend::gmm;
  throw ConfigError("unknown clustering backend '" + s + "'");
}

int assign_cluster(const Vector& e, const Matrix& centroids) {
  if (centroids.rows() == 0) throw InfeasibleError("assign_cluster: no centroids");
  if (e.size() != centroids.cols()) throw DimensionError("assign_cluster: dimension mismatch");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (centroids.row(k).transpose() - e).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

int assign_cluster(const Vector& e, const ClusterModel& model) { return assign_cluster(e, model.centroids); }

std::vector<int> assign_all(const Matrix& points, const Matrix& centroids) {
  std::vector<int> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = assign_cluster(points.row(i).transpose(), centroids);
  }
  return out;
}

double within_cluster_ss(const Matrix& points, std::span<const int> assignments, int K) {
  Matrix sums = Matrix::Zero(K, points.cols());
  std::vector<int> counts(static_cast<std::size_t>(K), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int k = assignments[static_cast<std::size_t>(i)];
    sums.row(k) += points.row(i);
    ++counts[static_cast<std::size_t>(k)];
  }
  double ss = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int k = assignments[static_cast<std::size_t>(i)];
    ss += (points.row(i) - sums.row(k) / counts[static_cast<std::size_t>(k)]).squaredNorm();
  }
  return ss;
}

namespace {

Matrix seed_centroids(const Matrix& points, int K, std::mt19937_64& rng) {
  const auto n = points.rows();
  Matrix centroids(K, points.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = points.row(pick(rng));
  Vector nearest = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int k = 1; k < K; ++k) {
    Eigen::Index chosen = 0;
    const double total = nearest.sum();
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= nearest(i);
        if (r < 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centroids.row(k) = points.row(chosen);
    nearest = nearest.cwiseMin((points.rowwise() - centroids.row(k)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace

ClusterModel kmeans_fit(const Matrix& points, int K, std::uint64_t seed, const KMeansOptions& options) {
  if (K < 1) throw InfeasibleError("kmeans_fit: K must be at least 1");
  if (points.rows() < K) {
    throw InfeasibleError("kmeans_fit: " + std::to_string(points.rows()) + " points cannot form " +
                          std::to_string(K) + " clusters");
  }
  const auto n = points.rows();
  std::mt19937_64 rng(seed);
  ClusterModel model;
  model.centroids = seed_centroids(points, K, rng);
  model.assignments.assign(static_cast<std::size_t>(n), -1);

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const std::vector<int> assigned = assign_all(points, model.centroids);
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      objective += (points.row(i) - model.centroids.row(assigned[static_cast<std::size_t>(i)])).squaredNorm();
    }
    model.objective_history.push_back(objective);
    const bool stable = assigned == model.assignments;
    model.assignments = assigned;
    model.iterations = iter + 1;

    Matrix sums = Matrix::Zero(K, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assigned[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(assigned[static_cast<std::size_t>(i)])];
    }
    Matrix updated = model.centroids;
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) {
        updated.row(k) = sums.row(k) / counts[static_cast<std::size_t>(k)];
        continue;
      }
      // Empty cluster: move it onto the point farthest from where it was.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        const double d = (points.row(i) - model.centroids.row(k)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = true;
      updated.row(k) = points.row(far);
    }
    const double shift = (updated - model.centroids).rowwise().norm().maxCoeff();
    model.centroids = std::move(updated);
    if (stable || shift < options.tolerance) break;
  }
  return model;
}

ClusterModel gmm_fit(const Matrix& points, int K, std::uint64_t seed, const GmmOptions& options) {
  ClusterModel init = kmeans_fit(points, K, seed);
  const auto n = points.rows();
  const auto d = points.cols();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  Matrix means = init.centroids;
  std::vector<Matrix> covs(static_cast<std::size_t>(K), Matrix::Identity(d, d) * options.covariance_floor);
  Vector weights = Vector::Constant(K, 1.0 / K);
  Matrix resp = Matrix::Zero(n, K);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, init.assignments[static_cast<std::size_t>(i)]) = 1.0;

  auto m_step = [&] {
    const Vector nk = resp.colwise().sum().transpose().array() + 1e-12;
    weights = nk / static_cast<double>(n);
    means = (resp.transpose() * points).array().colwise() / nk.array();
    for (int k = 0; k < K; ++k) {
      const Matrix centered = points.rowwise() - means.row(k);
      Matrix cov = centered.transpose() * resp.col(k).asDiagonal() * centered / nk(k);
      cov.diagonal().array() += options.covariance_floor;
      covs[static_cast<std::size_t>(k)] = std::move(cov);
    }
  };

  double previous_ll = -std::numeric_limits<double>::infinity();
  ClusterModel model;
  model.source = init.source;
  m_step();
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Matrix log_prob(n, K);
    for (int k = 0; k < K; ++k) {
      Eigen::LLT<Matrix> llt(covs[static_cast<std::size_t>(k)]);
      if (llt.info() != Eigen::Success) throw InfeasibleError("gmm_fit: covariance not positive definite");
      const Matrix centered = (points.rowwise() - means.row(k)).transpose();
      const Matrix solved = llt.matrixL().solve(centered);
      const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      const Vector maha = solved.colwise().squaredNorm().transpose();
      log_prob.col(k) = (-0.5 * (maha.array() + log_det + static_cast<double>(d) * log2pi) +
                         std::log(weights(k))).matrix();
    }
    const Vector row_max = log_prob.rowwise().maxCoeff();
    const Vector lse = ((log_prob.colwise() - row_max).array().exp().rowwise().sum().log()).matrix() + row_max;
    resp = (log_prob.colwise() - lse).array().exp().matrix();
    const double ll = lse.sum();
    model.objective_history.push_back(-ll);
    model.iterations = iter + 1;
    m_step();
    if (std::abs(ll - previous_ll) <= options.tolerance * std::abs(ll)) break;
    previous_ll = ll;
  }
  model.centroids = means;
  model.assignments.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    resp.row(i).maxCoeff(&best);
    model.assignments[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return model;
}

std::vector<int> farthest_cluster_mapping(const ClusterModel& model) {
  const int K = model.K();
  if (K < 2) throw InfeasibleError("farthest_cluster_mapping: needs at least two clusters");
  std::vector<int> phi(static_cast<std::size_t>(K), 0);
  for (int k = 0; k < K; ++k) {
    double best = -1.0;
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      const double dist = (model.centroids.row(k) - model.centroids.row(j)).squaredNorm();
      if (dist > best) {
        best = dist;
        phi[static_cast<std::size_t>(k)] = j;
      }
    }
  }
  return phi;
}

PseudoLabelMap assign_pseudo_labels(const Matrix& forget_embeddings, const ClusterModel& model,
                                    std::span<const int> mapping) {
  if (static_cast<int>(mapping.size()) != model.K()) {
    throw DimensionError("assign_pseudo_labels: mapping length must equal K");
  }
  if (forget_embeddings.cols() != model.centroids.cols()) {
    throw DimensionError("assign_pseudo_labels: embedding dimension mismatch");
  }
  PseudoLabelMap labels;
  labels.mapping.assign(mapping.begin(), mapping.end());
  labels.baseline = assign_all(forget_embeddings, model.centroids);
  labels.target.reserve(labels.baseline.size());
  for (int b : labels.baseline) labels.target.push_back(mapping[static_cast<std::size_t>(b)]);
  return labels;
}

ForgetClustering recompute_forget_clusters(const ModelSnapshot& student, const Matrix& forget_inputs,
                                           int K, std::uint64_t seed, ClusteringBackend backend) {
  const Matrix embeddings = student.extractor.embed(forget_inputs);
  ForgetClustering out;
  out.model = backend == ClusteringBackend::kmeans ? kmeans_fit(embeddings, K, seed) : gmm_fit(embeddings, K, seed);
  out.model.source = ClusterSource::forget;
  out.mapping = farthest_cluster_mapping(out.model);
  return out;
}

void write_centroids_csv(std::ostream& out, const ClusterModel& model) {
  out << "cluster";
  for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) out << ",c" << j;
  out << '\n';
  out.precision(17);
  for (Eigen::Index k = 0; k < model.centroids.rows(); ++k) {
    out << k;
    for (Eigen::Index j = 0; j < model.centroids.cols(); ++j) out << ',' << model.centroids(k, j);
    out << '\n';
  }
}

void write_assignments_csv(std::ostream& out, const ClusterModel& model) {
  out << "point,cluster\n";
  for (std::size_t i = 0; i < model.assignments.size(); ++i) out << i << ',' << model.assignments[i] << '\n';
}

}  // namespace cure
