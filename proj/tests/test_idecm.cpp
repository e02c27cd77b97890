#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmgin/datagen.hpp"
#include "dmgin/idecm.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dmgin;
namespace fs = std::filesystem;

namespace {

std::vector<uint64_t> iota_ids(int n) {
  std::vector<uint64_t> ids(size_t(n), 0);
  for (int i = 0; i < n; ++i) ids[size_t(i)] = uint64_t(i + 1);
  return ids;
}

bool monotone_non_increasing(const std::vector<double>& v) {
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1] + 1e-9 * std::max(1.0, std::fabs(v[i - 1]))) return false;
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("idecm");

TEST_CASE("kmeans recovers well-separated blobs exactly") {
  Matrix points;
  std::vector<int> truth;
  make_blobs(40, 4, 6, 12.0, 0.4, 123, &points, &truth);
  const std::vector<uint64_t> ids = iota_ids(points.rows());

  ClusterModel model = kmeans_fit(points, ids, 4, 9);
  std::vector<int> assigned;
  for (uint64_t id : ids) assigned.push_back(model.assignment.at(id));
  CHECK(oracle::best_perm_accuracy(truth, assigned, 4) == 1.0);
  CHECK(model.inertia_history.size() >= 2);
  CHECK(monotone_non_increasing(model.inertia_history));
  CHECK(model.inertia == doctest::Approx(model.inertia_history.back()));

  // assign() agrees with the stored assignment on the training points.
  for (int i = 0; i < points.rows(); ++i) {
    std::vector<double> p(points.row(i), points.row(i) + points.cols());
    CHECK(assign(model, p) == model.assignment.at(ids[size_t(i)]));
  }
}

TEST_CASE("kmeans is deterministic in its seed") {
  Matrix points;
  std::vector<int> truth;
  make_blobs(25, 3, 4, 8.0, 0.8, 77, &points, &truth);
  const std::vector<uint64_t> ids = iota_ids(points.rows());
  ClusterModel a = kmeans_fit(points, ids, 3, 5);
  ClusterModel b = kmeans_fit(points, ids, 3, 5);
  CHECK(oracle::max_abs_diff(a.centroids, b.centroids) == 0.0);
  CHECK(a.assignment == b.assignment);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("empty clusters are repaired rather than dropped") {
  // Two tight blobs but k = 8: most centroids would starve without repair.
  Matrix points;
  std::vector<int> truth;
  make_blobs(30, 2, 3, 20.0, 0.05, 5, &points, &truth);
  const std::vector<uint64_t> ids = iota_ids(points.rows());
  ClusterModel model = kmeans_fit(points, ids, 8, 11);

  BalanceReport rep = balance_report(model);
  CHECK(rep.sizes.size() == 8);
  CHECK(rep.empty_clusters == 0);
  CHECK(rep.min_size >= 1);
  CHECK(monotone_non_increasing(model.inertia_history));
  int64_t total = 0;
  for (int64_t s : rep.sizes) total += s;
  CHECK(total == points.rows());
}

TEST_CASE("assign breaks ties toward the lower cluster id") {
  ClusterModel model;
  model.k = 3;
  model.centroids = Matrix(3, 2);
  model.centroids.at(0, 0) = 1.0;
  model.centroids.at(1, 0) = 1.0;  // duplicate of centroid 0
  model.centroids.at(2, 0) = 5.0;
  CHECK(assign(model, {1.0, 0.0}) == 0);
  CHECK(assign(model, {5.0, 0.0}) == 2);
}

TEST_CASE("balance_report flags gross imbalance") {
  ClusterModel model;
  model.k = 2;
  model.centroids = Matrix(2, 1);
  for (int i = 0; i < 60; ++i) model.assignment[uint64_t(i + 1)] = i < 59 ? 0 : 1;
  BalanceReport rep = balance_report(model, 1.5);
  CHECK(rep.sizes == std::vector<int64_t>{59, 1});
  CHECK(rep.max_size == 59);
  CHECK(rep.min_size == 1);
  CHECK(rep.mean_size == doctest::Approx(30.0));
  CHECK(rep.imbalanced);
}

TEST_CASE("symmetric_eigen agrees with Eigen's solver") {
  Rng rng(31);
  const int n = 6;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = rng.normal();
      a.at(i, j) = v;
      a.at(j, i) = v;
    }

  std::vector<double> values;
  Matrix vectors;
  symmetric_eigen(a, &values, &vectors);

  Eigen::MatrixXd ae(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) ae(i, j) = a.at(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ae);
  REQUIRE(solver.info() == Eigen::Success);

  // Ours are sorted descending; Eigen's ascending.
  for (int i = 0; i < n; ++i)
    CHECK(values[size_t(i)] == doctest::Approx(solver.eigenvalues()(n - 1 - i)).epsilon(1e-9));

  // Columns satisfy A v = lambda v and are orthonormal.
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < n; ++r) {
      double av = 0.0;
      for (int t = 0; t < n; ++t) av += a.at(r, t) * vectors.at(t, c);
      CHECK(av == doctest::Approx(values[size_t(c)] * vectors.at(r, c)).epsilon(1e-8));
    }
    for (int c2 = 0; c2 <= c; ++c2) {
      double dot = 0.0;
      for (int t = 0; t < n; ++t) dot += vectors.at(t, c) * vectors.at(t, c2);
      CHECK(dot == doctest::Approx(c == c2 ? 1.0 : 0.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("projection export matches a PCA done with Eigen") {
  Matrix points;
  std::vector<int> truth;
  make_blobs(20, 3, 5, 9.0, 0.6, 17, &points, &truth);
  const std::vector<uint64_t> ids = iota_ids(points.rows());
  ClusterModel model = kmeans_fit(points, ids, 3, 3);

  const fs::path dir = fs::temp_directory_path() / "dmgin_idecm_tests";
  fs::create_directories(dir);
  const std::string path = (dir / "proj.csv").string();
  export_projection(points, ids, model, path);

  // Reference PCA: center, covariance, top-2 eigenvectors.
  const int n = points.rows(), d = points.cols();
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = points.at(i, j);
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  Eigen::VectorXd ax1 = solver.eigenvectors().col(d - 1);
  Eigen::VectorXd ax2 = solver.eigenvectors().col(d - 2);
  Eigen::VectorXd px = centered * ax1;
  Eigen::VectorXd py = centered * ax2;

  std::ifstream f(path);
  REQUIRE(f.good());
  std::string line;
  int rows = 0;
  double sx = 0.0, sy = 0.0;  // sign alignment, fixed from the first row
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    const uint64_t id = std::stoull(tok);
    std::getline(ss, tok, ',');
    const double vx = std::stod(tok);
    std::getline(ss, tok, ',');
    const double vy = std::stod(tok);
    std::getline(ss, tok, ',');
    const int cid = std::stoi(tok);

    const int i = int(id) - 1;
    if (rows == 0) {
      sx = (vx * px(i) >= 0.0) ? 1.0 : -1.0;
      sy = (vy * py(i) >= 0.0) ? 1.0 : -1.0;
    }
    CHECK(vx == doctest::Approx(sx * px(i)).epsilon(1e-6));
    CHECK(vy == doctest::Approx(sy * py(i)).epsilon(1e-6));
    CHECK(cid == model.assignment.at(id));
    ++rows;
  }
  CHECK(rows == n);
}

TEST_CASE("cluster map file round-trips") {
  std::map<uint64_t, int> m{{5, 0}, {9, 2}, {12, 1}};
  const fs::path dir = fs::temp_directory_path() / "dmgin_idecm_tests";
  fs::create_directories(dir);
  const std::string path = (dir / "clusters.tsv").string();
  write_cluster_map(path, m);
  CHECK(read_cluster_map(path) == m);
  CHECK_THROWS_AS(read_cluster_map((dir / "absent.tsv").string()), DependencyError);
}

TEST_SUITE_END();
