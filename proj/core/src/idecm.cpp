#include "dmgin/idecm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dmgin {

namespace {

double sq_dist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    const double c = a[j] - b[j];
    s += c * c;
  }
  return s;
}

// D² sampling; duplicates collapse to uniform choice when every distance is 0.
Matrix kmeanspp_seed(const Matrix& x, int k, Rng& rng) {
  const int n = x.rows(), d = x.cols();
  Matrix centroids(k, d);
  int first = rng.uniform_int(n);
  std::copy(x.row(first), x.row(first) + d, centroids.row(0));

  std::vector<double> min_d2(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) min_d2[size_t(i)] = sq_dist(x.row(i), centroids.row(0), d);

  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : min_d2) total += v;
    int pick;
    if (total <= 0.0) {
      pick = rng.uniform_int(n);
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += min_d2[size_t(i)];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    }
    std::copy(x.row(pick), x.row(pick) + d, centroids.row(c));
    for (int i = 0; i < n; ++i)
      min_d2[size_t(i)] = std::min(min_d2[size_t(i)], sq_dist(x.row(i), centroids.row(c), d));
  }
  return centroids;
}

int nearest(const Matrix& centroids, const double* p, int d) {
  int best = 0;
  double best_d2 = sq_dist(p, centroids.row(0), d);
  for (int c = 1; c < centroids.rows(); ++c) {
    const double d2 = sq_dist(p, centroids.row(c), d);
    if (d2 < best_d2) {  // strict: ties keep the lowest id
      best_d2 = d2;
      best = c;
    }
  }
  return best;
}

}  // namespace

ClusterModel kmeans_fit(const Matrix& embeddings, const std::vector<uint64_t>& entity_ids,
                        int k, uint64_t seed, int max_iters, double tol) {
  const int n = embeddings.rows(), d = embeddings.cols();
  check_arg(k >= 1, "kmeans_fit: K must be >= 1");
  check_arg(n >= k, "kmeans_fit: need at least K points");
  check_arg(int(entity_ids.size()) == n, "kmeans_fit: id/row count mismatch");
  check_arg(embeddings.all_finite(), "kmeans_fit: non-finite embeddings");

  Rng rng(seed);
  ClusterModel model;
  model.k = k;
  model.centroids = kmeanspp_seed(embeddings, k, rng);

  std::vector<int> labels(size_t(n), 0);
  std::vector<int64_t> counts(size_t(k), 0);

  for (int iter = 0; iter < max_iters; ++iter) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      labels[size_t(i)] = nearest(model.centroids, embeddings.row(i), d);
      ++counts[size_t(labels[size_t(i)])];
    }

    // Repair: each empty cluster steals the point farthest from its assigned
    // centroid. Donor clusters with a single point are skipped so no new
    // empties appear.
    for (int c = 0; c < k; ++c) {
      if (counts[size_t(c)] > 0) continue;
      int far_i = -1;
      double far_d2 = -1.0;
      for (int i = 0; i < n; ++i) {
        if (counts[size_t(labels[size_t(i)])] <= 1) continue;
        const double d2 = sq_dist(embeddings.row(i), model.centroids.row(labels[size_t(i)]), d);
        if (d2 > far_d2) {
          far_d2 = d2;
          far_i = i;
        }
      }
      check_invariant(far_i >= 0, "kmeans_fit: no donor point for empty cluster");
      --counts[size_t(labels[size_t(far_i)])];
      labels[size_t(far_i)] = c;
      counts[size_t(c)] = 1;
      std::copy(embeddings.row(far_i), embeddings.row(far_i) + d, model.centroids.row(c));
      ++model.repairs;
    }

    double inertia = 0.0;
    for (int i = 0; i < n; ++i)
      inertia += sq_dist(embeddings.row(i), model.centroids.row(labels[size_t(i)]), d);
    model.inertia_history.push_back(inertia);

    Matrix next(k, d);
    for (int i = 0; i < n; ++i) {
      const double* p = embeddings.row(i);
      double* cr = next.row(labels[size_t(i)]);
      for (int j = 0; j < d; ++j) cr[j] += p[j];
    }
    double max_shift2 = 0.0;
    for (int c = 0; c < k; ++c) {
      for (int j = 0; j < d; ++j) next.at(c, j) /= double(counts[size_t(c)]);
      max_shift2 = std::max(max_shift2, sq_dist(next.row(c), model.centroids.row(c), d));
    }
    model.centroids = std::move(next);
    if (max_shift2 < tol * tol) break;
  }

  // Final pass pins the stored assignment to the final centroids so the
  // nearest-centroid invariant holds exactly (no repair here).
  double inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    const int c = nearest(model.centroids, embeddings.row(i), d);
    model.assignment[entity_ids[size_t(i)]] = c;
    inertia += sq_dist(embeddings.row(i), model.centroids.row(c), d);
  }
  model.inertia = inertia;
  model.inertia_history.push_back(inertia);
  check_invariant(model.assignment.size() == size_t(n),
                  "kmeans_fit: duplicate entity ids");
  return model;
}

int assign(const ClusterModel& model, const double* embedding, int d) {
  check_arg(d == model.centroids.cols(), "assign: dim mismatch");
  return nearest(model.centroids, embedding, d);
}

int assign(const ClusterModel& model, const std::vector<double>& embedding) {
  return assign(model, embedding.data(), int(embedding.size()));
}

BalanceReport balance_report(const ClusterModel& model, double threshold) {
  check_arg(model.k > 0, "balance_report: unfitted model");
  BalanceReport rep;
  rep.sizes.assign(size_t(model.k), 0);
  for (const auto& [_, c] : model.assignment) ++rep.sizes[size_t(c)];
  rep.min_size = *std::min_element(rep.sizes.begin(), rep.sizes.end());
  rep.max_size = *std::max_element(rep.sizes.begin(), rep.sizes.end());
  double sum = 0.0;
  for (int64_t s : rep.sizes) {
    sum += double(s);
    if (s == 0) ++rep.empty_clusters;
  }
  rep.mean_size = sum / double(model.k);
  double var = 0.0;
  for (int64_t s : rep.sizes) {
    const double c = double(s) - rep.mean_size;
    var += c * c;
  }
  var /= double(model.k);
  rep.cv = rep.mean_size > 0.0 ? std::sqrt(var) / rep.mean_size : 0.0;
  rep.imbalanced = rep.mean_size > 0.0 && double(rep.max_size) / rep.mean_size > threshold;
  return rep;
}

void symmetric_eigen(const Matrix& a, std::vector<double>* values, Matrix* vectors) {
  check_arg(a.rows() == a.cols(), "symmetric_eigen: not square");
  const int n = a.rows();
  Matrix m = a;
  Matrix v = Matrix::identity(n);

  // Cyclic Jacobi sweeps; each rotation zeroes one off-diagonal pair.
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = m.at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double mip = m.at(i, p), miq = m.at(i, q);
          m.at(i, p) = c * mip - s * miq;
          m.at(i, q) = s * mip + c * miq;
        }
        for (int i = 0; i < n; ++i) {
          const double mpi = m.at(p, i), mqi = m.at(q, i);
          m.at(p, i) = c * mpi - s * mqi;
          m.at(q, i) = s * mpi + c * mqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vip = v.at(i, p), viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return m.at(x, x) > m.at(y, y); });

  values->resize(size_t(n));
  *vectors = Matrix(n, n);
  for (int k = 0; k < n; ++k) {
    const int src = order[size_t(k)];
    (*values)[size_t(k)] = m.at(src, src);
    int big = 0;
    for (int i = 1; i < n; ++i)
      if (std::fabs(v.at(i, src)) > std::fabs(v.at(big, src))) big = i;
    const double sign = v.at(big, src) >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) vectors->at(i, k) = sign * v.at(i, src);
  }
}

void export_projection(const Matrix& embeddings, const std::vector<uint64_t>& entity_ids,
                       const ClusterModel& model, const std::string& path) {
  const int n = embeddings.rows(), d = embeddings.cols();
  check_arg(int(entity_ids.size()) == n, "export_projection: id/row count mismatch");
  check_arg(d >= 2, "export_projection: need at least 2 dims");

  std::vector<double> mean(size_t(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mean[size_t(j)] += embeddings.at(i, j);
  for (double& m : mean) m /= double(n);

  Matrix cov(d, d);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double ca = embeddings.at(i, a) - mean[size_t(a)];
      for (int b = a; b < d; ++b)
        cov.at(a, b) += ca * (embeddings.at(i, b) - mean[size_t(b)]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < a; ++b) cov.at(a, b) = cov.at(b, a);
  scale_inplace(cov, 1.0 / double(n));

  std::vector<double> evals;
  Matrix evecs;
  symmetric_eigen(cov, &evals, &evecs);

  std::ofstream f(path, std::ios::trunc);
  check_arg(f.good(), "export_projection: cannot open " + path);
  char buf[48];
  for (int i = 0; i < n; ++i) {
    double x = 0.0, y = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = embeddings.at(i, j) - mean[size_t(j)];
      x += c * evecs.at(j, 0);
      y += c * evecs.at(j, 1);
    }
    auto it = model.assignment.find(entity_ids[size_t(i)]);
    check_arg(it != model.assignment.end(), "export_projection: unassigned entity");
    f << entity_ids[size_t(i)] << ',';
    std::snprintf(buf, sizeof buf, "%.17g", x);
    f << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", y);
    f << buf << ',' << it->second << '\n';
  }
  f.close();
  check_invariant(f.good(), "export_projection: write failed");
}

void write_cluster_map(const std::string& path, const std::map<uint64_t, int>& assignment) {
  std::ofstream f(path, std::ios::trunc);
  check_arg(f.good(), "write_cluster_map: cannot open " + path);
  for (const auto& [id, c] : assignment) f << id << '\t' << c << '\n';
  f.close();
  check_invariant(f.good(), "write_cluster_map: write failed");
}

std::map<uint64_t, int> read_cluster_map(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw DependencyError("read_cluster_map: cannot open " + path);
  std::map<uint64_t, int> out;
  uint64_t id;
  int c;
  while (f >> id >> c) out[id] = c;
  if (out.empty()) throw DependencyError("read_cluster_map: empty map " + path);
  return out;
}

}  // namespace dmgin
