#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmgin/matrix.hpp"

namespace dmgin {

struct ClusterModel {
  int k = 0;
  Matrix centroids;                        // k×d
  std::map<uint64_t, int> assignment;      // entity_id -> cluster_id
  double inertia = 0.0;
  std::vector<double> inertia_history;     // one entry per Lloyd iteration + final pass
  int repairs = 0;                         // empty-cluster reseeds performed
};

struct BalanceReport {
  std::vector<int64_t> sizes;
  int64_t min_size = 0, max_size = 0;
  double mean_size = 0.0;
  double cv = 0.0;  // population std / mean
  int empty_clusters = 0;
  bool imbalanced = false;  // max/mean above threshold
};

// Lloyd with k-means++ seeding. Empty clusters are repaired by reseeding to
// the point currently farthest from its assigned centroid (which that cluster
// then steals), so K never silently shrinks. inertia_history is recorded
// after each assignment+repair and is monotone non-increasing.
ClusterModel kmeans_fit(const Matrix& embeddings, const std::vector<uint64_t>& entity_ids,
                        int k, uint64_t seed, int max_iters = 100, double tol = 1e-8);

// Nearest centroid, ties toward the lowest cluster id.
int assign(const ClusterModel& model, const double* embedding, int d);
int assign(const ClusterModel& model, const std::vector<double>& embedding);

BalanceReport balance_report(const ClusterModel& model, double threshold = 5.0);

// PCA to the top-2 principal axes; rows `entity_id,x,y,cluster_id`, no header.
void export_projection(const Matrix& embeddings, const std::vector<uint64_t>& entity_ids,
                       const ClusterModel& model, const std::string& path);

// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Values sorted descending; vectors are the matching columns, each with its
// largest-magnitude component made positive so the decomposition is unique.
void symmetric_eigen(const Matrix& a, std::vector<double>* values, Matrix* vectors);

// `entity_id<TAB>cluster_id` per line.
void write_cluster_map(const std::string& path, const std::map<uint64_t, int>& assignment);
std::map<uint64_t, int> read_cluster_map(const std::string& path);

}  // namespace dmgin
