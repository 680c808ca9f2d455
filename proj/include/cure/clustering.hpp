#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cure/embedding.hpp"

namespace cure {

enum class ClusterSource { forget, retain };
enum class ClusteringBackend { kmeans, gmm };

std::string to_string(ClusteringBackend backend);
ClusteringBackend clustering_backend_from_string(const std::string& s);

struct ClusterModel {
  Matrix centroids;                     // K x d
  ClusterSource source = ClusterSource::forget;
  std::vector<int> assignments;         // positional: one per fitted point
  std::vector<double> objective_history;  // within-cluster sum of squares per Lloyd iteration
  int iterations = 0;

  int K() const { return static_cast<int>(centroids.rows()); }
  double objective() const { return objective_history.empty() ? 0.0 : objective_history.back(); }
};

struct KMeansOptions {
  int max_iterations = 300;
  double tolerance = 1e-6;  // max centroid displacement
};

// Lloyd's algorithm with distance-weighted seeding. Rows of `points` are the
// data; the fit is deterministic for a fixed seed.
ClusterModel kmeans_fit(const Matrix& points, int K, std::uint64_t seed, const KMeansOptions& options = {});

struct GmmOptions {
  int max_iterations = 200;
  double tolerance = 1e-7;   // relative log-likelihood change
  double covariance_floor = 1e-5;
};

// Full-covariance Gaussian mixture by EM, initialized from k-means. Centroids
// are the component means; assignments are maximum-posterior components.
ClusterModel gmm_fit(const Matrix& points, int K, std::uint64_t seed, const GmmOptions& options = {});

// Within-cluster sum of squares of `points` under `assignments`, centroids
// taken as the per-cluster means.
double within_cluster_ss(const Matrix& points, std::span<const int> assignments, int K);

// Nearest centroid by Euclidean distance; ties go to the lowest index.
int assign_cluster(const Vector& e, const Matrix& centroids);
int assign_cluster(const Vector& e, const ClusterModel& model);
std::vector<int> assign_all(const Matrix& points, const Matrix& centroids);

// phi[k] = index of the centroid farthest from centroid k (lowest index on ties).
std::vector<int> farthest_cluster_mapping(const ClusterModel& model);

struct PseudoLabelMap {
  std::vector<int> baseline;  // l_f, nearest forget centroid
  std::vector<int> target;    // phi(l_f)
  std::vector<int> mapping;   // phi
};

PseudoLabelMap assign_pseudo_labels(const Matrix& forget_embeddings, const ClusterModel& model,
                                    std::span<const int> mapping);

struct ForgetClustering {
  ClusterModel model;
  std::vector<int> mapping;
};

// Refits the forget clusters on the student's current forget embeddings.
ForgetClustering recompute_forget_clusters(const ModelSnapshot& student, const Matrix& forget_inputs,
                                           int K, std::uint64_t seed,
                                           ClusteringBackend backend = ClusteringBackend::kmeans);

// CSV rows: cluster index, centroid components. Assignments go to a second
// table: point index, cluster index.
void write_centroids_csv(std::ostream& out, const ClusterModel& model);
void write_assignments_csv(std::ostream& out, const ClusterModel& model);

}  // namespace cure
