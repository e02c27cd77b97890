#include "dmgin/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dmgin {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix();
  Matrix m(int(rows.size()), int(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    check_arg(rows[r].size() == rows[0].size(), "from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(int(r)));
  }
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_arg(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  Matrix out(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.row(p);
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix matmul_transb(const Matrix& a, const Matrix& b) {
  check_arg(a.cols() == b.cols(), "matmul_transb: inner dimensions disagree");
  Matrix out(a.rows(), b.rows());
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < m; ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      orow[j] = s;
    }
  }
  return out;
}

Matrix matmul_transa(const Matrix& a, const Matrix& b) {
  check_arg(a.rows() == b.rows(), "matmul_transa: inner dimensions disagree");
  Matrix out(a.cols(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int p = 0; p < n; ++p) {
    const double* arow = a.row(p);
    const double* brow = b.row(p);
    for (int i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = out.row(i);
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& x, const Matrix* mask) {
  if (mask) check_arg(mask->same_shape(x), "softmax_rows: mask shape mismatch");
  Matrix out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < x.cols(); ++j)
      if (!mask || mask->at(i, j) != 0.0) mx = std::max(mx, x.at(i, j));
    check_arg(mx != -std::numeric_limits<double>::infinity(),
              "softmax_rows: fully masked row");
    double sum = 0.0;
    for (int j = 0; j < x.cols(); ++j) {
      if (mask && mask->at(i, j) == 0.0) continue;
      const double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < x.cols(); ++j) out.at(i, j) /= sum;
  }
  return out;
}

Matrix layer_norm(const Matrix& x, double eps, LayerNormCache* cache) {
  check_arg(x.cols() > 0, "layer_norm: empty rows");
  Matrix out(x.rows(), x.cols());
  std::vector<double> inv_std(size_t(x.rows()));
  const int d = x.cols();
  for (int i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[size_t(i)] = istd;
    double* orow = out.row(i);
    for (int j = 0; j < d; ++j) orow[j] = (xr[j] - mean) * istd;
  }
  if (cache) {
    cache->normalized = out;
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& dy) {
  const Matrix& xhat = cache.normalized;
  check_arg(dy.same_shape(xhat), "layer_norm_backward: shape mismatch");
  const int d = xhat.cols();
  Matrix dx(dy.rows(), dy.cols());
  for (int i = 0; i < dy.rows(); ++i) {
    const double* g = dy.row(i);
    const double* h = xhat.row(i);
    double gmean = 0.0, ghmean = 0.0;
    for (int j = 0; j < d; ++j) {
      gmean += g[j];
      ghmean += g[j] * h[j];
    }
    gmean /= d;
    ghmean /= d;
    const double istd = cache.inv_std[size_t(i)];
    double* o = dx.row(i);
    for (int j = 0; j < d; ++j) o[j] = istd * (g[j] - gmean - h[j] * ghmean);
  }
  return dx;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

double silu_scalar(double x) { return x * sigmoid(x); }

double silu_grad_scalar(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

Matrix silu(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) out.data()[i] = silu_scalar(x.data()[i]);
  return out;
}

Matrix silu_backward(const Matrix& x, const Matrix& dy) {
  check_arg(x.same_shape(dy), "silu_backward: shape mismatch");
  Matrix dx(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i)
    dx.data()[i] = dy.data()[i] * silu_grad_scalar(x.data()[i]);
  return dx;
}

void add_inplace(Matrix& a, const Matrix& b) {
  check_arg(a.same_shape(b), "add_inplace: shape mismatch");
  for (size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

void axpy_inplace(Matrix& y, double alpha, const Matrix& x) {
  check_arg(y.same_shape(x), "axpy_inplace: shape mismatch");
  for (size_t i = 0; i < y.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_arg(a.same_shape(b), "hadamard: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

void scale_inplace(Matrix& a, double s) {
  for (auto& v : a.data()) v *= s;
}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  // 53 high bits -> [0, 1) on the exact dyadic grid.
  return double(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = kTwoPi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int n) {
  check_arg(n > 0, "uniform_int: n must be positive");
  // Rejection sampling keeps the draw exactly uniform.
  const uint64_t bound = uint64_t(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return int(x % bound);
}

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

uint64_t derive_seed(uint64_t base, const std::string& tag) {
  uint64_t h = fnv1a64(tag);
  h ^= base + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

}  // namespace dmgin
