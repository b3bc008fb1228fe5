#pragma once

#include <cstdint>
#include <vector>

#include "mg2vec/mlm.hpp"

namespace mg2vec {

struct KMeansResult {
  std::vector<int> assignment;
  Matrix centroids;
  double inertia = 0.0;
  /// Inertia after each assignment step, in order.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
  bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iters is reached. An emptied cluster is re-seeded at the
/// point farthest from its current centroid.
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters = 300);

/// Rows scaled to unit L2 norm (zero rows left as is).
Matrix l2_normalize_rows(const Matrix& x);

struct AssignmentResult {
  /// cluster -> class, or -1 when the cluster is left unassigned.
  std::vector<int> cluster_to_class;
  double agreement = 0.0;
};

/// Maximum-weight injective cluster-to-class matching on a K x C contingency
/// table (rows = clusters), solved with the O(n^3) Hungarian method.
AssignmentResult hungarian_map(const std::vector<std::vector<double>>& contingency);

/// Minimum-cost assignment on a square or rectangular cost matrix; returns the
/// column for each row (-1 when rows outnumber columns).
std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost);

/// K x C contingency counts of cluster ids versus class ids.
std::vector<std::vector<double>> contingency_table(const std::vector<int>& clusters, const std::vector<int>& classes,
                                                   std::size_t num_clusters, std::size_t num_classes);

}  // namespace mg2vec
