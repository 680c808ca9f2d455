#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cure/clustering.hpp"
#include "cure/errors.hpp"
#include "support.hpp"

using namespace cure;

namespace {

Matrix points_2d(std::initializer_list<std::pair<double, double>> pts) {
  Matrix m(pts.size(), 2);
  int i = 0;
  for (auto [x, y] : pts) {
    m(i, 0) = x;
    m(i, 1) = y;
    ++i;
  }
  return m;
}

ClusterModel model_with(const Matrix& centroids) {
  ClusterModel m;
  m.centroids = centroids;
  return m;
}

}  // namespace

TEST_CASE("k-means on two well separated pairs") {
  const Matrix p = points_2d({{0, 0}, {0, 0.1}, {10, 10}, {10, 10.1}});
  const ClusterModel m = kmeans_fit(p, 2, 7);
  Matrix c = m.centroids;
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  CHECK(c(0, 0) == doctest::Approx(0.0));
  CHECK(c(0, 1) == doctest::Approx(0.05));
  CHECK(c(1, 0) == doctest::Approx(10.0));
  CHECK(c(1, 1) == doctest::Approx(10.05));
  CHECK(m.assignments[0] == m.assignments[1]);
  CHECK(m.assignments[2] == m.assignments[3]);
  CHECK(m.assignments[0] != m.assignments[2]);
}

TEST_CASE("k-means with K = 1 returns the mean") {
  std::mt19937_64 rng(3);
  const Matrix p = oracle::random_matrix(20, 3, rng);
  const ClusterModel m = kmeans_fit(p, 1, 0);
  CHECK((m.centroids.row(0) - p.colwise().mean()).norm() < 1e-12);
}

TEST_CASE("k-means infeasible inputs") {
  const Matrix p = points_2d({{0, 0}, {1, 1}});
  CHECK_THROWS_AS(kmeans_fit(p, 3, 0), InfeasibleError);
  CHECK_THROWS_AS(kmeans_fit(p, 0, 0), InfeasibleError);
}

TEST_CASE("Lloyd objective against brute-force optimum and monotonicity") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(3, 8);
  int optimal = 0;
  for (int instance = 0; instance < 50; ++instance) {
    const Matrix p = oracle::random_matrix(size(rng), 2, rng);
    const ClusterModel m = kmeans_fit(p, 2, instance);
    const double best = oracle::best_two_partition(p);
    const double got = oracle::sse(p, m.assignments, 2);
    CHECK(got >= best - 1e-12);
    optimal += std::abs(got - best) < 1e-9;
    CHECK(within_cluster_ss(p, m.assignments, 2) == doctest::Approx(got).epsilon(1e-12));
    for (std::size_t i = 1; i < m.objective_history.size(); ++i) {
      CHECK(m.objective_history[i] <= m.objective_history[i - 1] + 1e-12);
    }
    CHECK(assign_all(p, m.centroids) == m.assignments);
  }
  MESSAGE(optimal << " of 50 instances reached the global optimum");
}

TEST_CASE("k-means is deterministic per seed") {
  std::mt19937_64 rng(4);
  const Matrix p = oracle::random_matrix(60, 4, rng);
  const ClusterModel a = kmeans_fit(p, 5, 11);
  const ClusterModel b = kmeans_fit(p, 5, 11);
  CHECK(a.centroids == b.centroids);
  CHECK(a.assignments == b.assignments);
}

TEST_CASE("nearest-centroid assignment") {
  const Matrix c = points_2d({{0, 0.05}, {10, 10.05}});
  Vector e(2);
  e << 0, 0;
  CHECK(assign_cluster(e, c) == 0);
  const Matrix tie = points_2d({{5, 5}, {-1, 0}, {1, 0}});
  CHECK(assign_cluster(e, tie) == 1);
  for (int k = 0; k < 3; ++k) CHECK(assign_cluster(Vector(tie.row(k).transpose()), tie) == k);
  CHECK_THROWS_AS(assign_cluster(e, Matrix(0, 2)), InfeasibleError);
}

TEST_CASE("farthest-cluster mapping") {
  Matrix line(3, 1);
  line << 0, 1, 3;
  CHECK(farthest_cluster_mapping(model_with(line)) == std::vector<int>{2, 2, 0});
  CHECK(farthest_cluster_mapping(model_with(points_2d({{0, 0}, {1, 1}}))) == std::vector<int>{1, 0});
  const Matrix simplex = Matrix::Identity(4, 4);
  CHECK(farthest_cluster_mapping(model_with(simplex)) == std::vector<int>{1, 0, 0, 0});
  CHECK_THROWS_AS(farthest_cluster_mapping(model_with(line.topRows(1))), InfeasibleError);

  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix c = oracle::random_matrix(6, 3, rng);
    const std::vector<int> phi = farthest_cluster_mapping(model_with(c));
    CHECK(phi == oracle::farthest_map(c));
    for (int k = 0; k < 6; ++k) {
      CHECK(phi[k] != k);
      for (int j = 0; j < 6; ++j) CHECK((c.row(phi[k]) - c.row(k)).norm() >= (c.row(j) - c.row(k)).norm());
    }
  }
}

TEST_CASE("pseudo labels compose assignment and mapping") {
  Matrix c(3, 1);
  c << 0, 1, 3;
  const ClusterModel m = model_with(c);
  const std::vector<int> phi = farthest_cluster_mapping(m);
  Matrix e(4, 1);
  e << -0.2, 0.9, 2.8, 0.1;
  const PseudoLabelMap map = assign_pseudo_labels(e, m, phi);
  CHECK(map.baseline == std::vector<int>{0, 1, 2, 0});
  CHECK(map.target == std::vector<int>{2, 2, 0, 2});
  for (std::size_t i = 0; i < map.target.size(); ++i) {
    CHECK(map.target[i] == phi[map.baseline[i]]);
    CHECK(map.target[i] != map.baseline[i]);
  }
  Matrix same(3, 1);
  same << 2.9, 3.0, 3.1;
  for (int t : assign_pseudo_labels(same, m, phi).target) CHECK(t == phi[2]);
  const std::vector<int> short_phi = {1};
  CHECK_THROWS_AS(assign_pseudo_labels(e, m, short_phi), DimensionError);
}

TEST_CASE("gaussian mixture backend") {
  std::mt19937_64 rng(8);
  Matrix p = oracle::random_matrix(80, 2, rng, 0.3);
  p.topRows(40).array() += 5.0;
  const ClusterModel m = gmm_fit(p, 2, 1);
  CHECK(m.K() == 2);
  CHECK(m.assignments.size() == 80u);
  for (int i = 1; i < 40; ++i) CHECK(m.assignments[i] == m.assignments[0]);
  for (int i = 41; i < 80; ++i) CHECK(m.assignments[i] == m.assignments[40]);
  CHECK(m.assignments[0] != m.assignments[40]);
  for (std::size_t i = 1; i < m.objective_history.size(); ++i) {
    CHECK(m.objective_history[i] <= m.objective_history[i - 1] + 1e-8);
  }
  CHECK(clustering_backend_from_string("gmm") == ClusteringBackend::gmm);
  CHECK_THROWS_AS(clustering_backend_from_string("dbscan"), ConfigError);
}

TEST_CASE("centroid csv export") {
  ClusterModel m = model_with(points_2d({{1, 2}, {3, 4}}));
  m.assignments = {0, 1, 1};
  std::ostringstream c, a;
  write_centroids_csv(c, m);
  write_assignments_csv(a, m);
  CHECK(c.str().find("3,4") != std::string::npos);
  const std::string rows = a.str();
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 4);
}
