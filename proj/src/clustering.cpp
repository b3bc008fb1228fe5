#include "mg2vec/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mg2vec {

Matrix l2_normalize_rows(const Matrix& x) {
  Matrix out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

namespace {

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1) throw ValidationError("kmeans: K must be >= 1");
  if (k > n) throw ValidationError("kmeans: K=" + std::to_string(k) + " exceeds the number of points " + std::to_string(n));
  Rng rng(mix_seed(seed, 0xC1A5ULL));

  // k-means++ seeding.
  KMeansResult res;
  res.centroids.resize(static_cast<Eigen::Index>(k), points.cols());
  res.centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.index(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points, static_cast<Eigen::Index>(i), res.centroids, 0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick;
    if (total > 0.0) {
      pick = rng.categorical(d2);
    } else {
      pick = rng.index(n);  // all remaining points coincide with chosen centroids
    }
    res.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(points, static_cast<Eigen::Index>(i), res.centroids, static_cast<Eigen::Index>(c)));
  }

  res.assignment.assign(n, -1);
  std::vector<double> dist(n);
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(points, static_cast<Eigen::Index>(i), res.centroids, static_cast<Eigen::Index>(c));
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      changed = changed || res.assignment[i] != best;
      res.assignment[i] = best;
      dist[i] = best_d;
      inertia += best_d;
    }
    res.inertia_history.push_back(inertia);
    res.inertia = inertia;
    if (!changed) {
      res.converged = true;
      break;
    }

    Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(k), points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(res.assignment[i])];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        res.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the worst-fitted point not already used.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      taken[far] = true;
      res.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(far));
    }
  }
  return res;
}

std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
  const std::size_t rows = cost.size();
  const std::size_t cols = rows ? cost[0].size() : 0;
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  for (const auto& r : cost)
    if (r.size() != cols) throw ValidationError("hungarian: ragged cost matrix");
  const std::size_t n = std::max(rows, cols);
  double pad = 0.0;
  for (const auto& r : cost)
    for (double v : r) pad = std::max(pad, std::abs(v));
  pad = pad * 2.0 + 1.0;
  auto at = [&](std::size_t i, std::size_t j) { return (i < rows && j < cols) ? cost[i][j] : pad; };

  // Potentials-based shortest augmenting path, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= cols) row_to_col[i - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

AssignmentResult hungarian_map(const std::vector<std::vector<double>>& contingency) {
  AssignmentResult res;
  const std::size_t k = contingency.size();
  if (k == 0) return res;
  double max_count = 0.0;
  for (const auto& row : contingency)
    for (double c : row) {
      if (c < 0) throw ValidationError("hungarian_map: contingency counts must be non-negative");
      max_count = std::max(max_count, c);
    }
  std::vector<std::vector<double>> cost = contingency;
  for (auto& row : cost)
    for (auto& c : row) c = max_count - c;
  res.cluster_to_class = hungarian_min_cost(cost);
  for (std::size_t i = 0; i < k; ++i)
    if (res.cluster_to_class[i] >= 0) res.agreement += contingency[i][static_cast<std::size_t>(res.cluster_to_class[i])];
  return res;
}

std::vector<std::vector<double>> contingency_table(const std::vector<int>& clusters, const std::vector<int>& classes,
                                                   std::size_t num_clusters, std::size_t num_classes) {
  if (clusters.size() != classes.size()) throw ValidationError("contingency: length mismatch");
  std::vector<std::vector<double>> t(num_clusters, std::vector<double>(num_classes, 0.0));
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i] < 0 || static_cast<std::size_t>(clusters[i]) >= num_clusters || classes[i] < 0 ||
        static_cast<std::size_t>(classes[i]) >= num_classes)
      throw ValidationError("contingency: id out of range");
    t[static_cast<std::size_t>(clusters[i])][static_cast<std::size_t>(classes[i])] += 1.0;
  }
  return t;
}

}  // namespace mg2vec
