#pragma once

// Independent reference computations used as test oracles. Nothing in here
// calls into the library's numerics.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;

inline Matrix random_unit_rows(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (int j = 0; j < cols; ++j) {
      m(i, j) = n(rng);
      sq += m(i, j) * m(i, j);
    }
    for (int j = 0; j < cols; ++j) m(i, j) /= std::sqrt(sq);
  }
  return m;
}

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Central differences of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + h;
      const double up = f(probe);
      probe(i, j) = saved - h;
      const double down = f(probe);
      probe(i, j) = saved;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

// Norm-wise relative error; exact zeros on both sides count as agreement.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).norm() / scale;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += (p[i] = std::exp(z[i] - mx));
  for (double& v : p) v /= sum;
  return p;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double sse(const Matrix& points, const std::vector<int>& labels, int k) {
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(points.cols());
    int count = 0;
    for (int i = 0; i < points.rows(); ++i) {
      if (labels[i] == c) {
        mean += points.row(i);
        ++count;
      }
    }
    if (count == 0) continue;
    mean /= count;
    for (int i = 0; i < points.rows(); ++i) {
      if (labels[i] == c) total += (points.row(i) - mean).squaredNorm();
    }
  }
  return total;
}

// Optimal within-cluster sum of squares over all 2-partitions (both parts
// non-empty), by enumeration.
inline double best_two_partition(const Matrix& points) {
  const int n = static_cast<int>(points.rows());
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
    best = std::min(best, sse(points, labels, 2));
  }
  return best;
}

// Farthest-other-centroid by exhaustive pairwise comparison, lowest index on
// ties.
inline std::vector<int> farthest_map(const Matrix& c) {
  std::vector<int> phi(c.rows());
  for (int k = 0; k < c.rows(); ++k) {
    double best = -1.0;
    for (int j = 0; j < c.rows(); ++j) {
      if (j == k) continue;
      const double d = (c.row(j) - c.row(k)).norm();
      if (d > best) {
        best = d;
        phi[k] = j;
      }
    }
  }
  return phi;
}

}  // namespace oracle
