#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dmgin/error.hpp"

namespace dmgin {

// Dense row-major matrix of 64-bit floats. All training and verification
// math runs in double; 32-bit floats appear only in the serving cache.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(size_t(rows) * cols, 0.0) {
    check_arg(rows >= 0 && cols >= 0, "Matrix: negative dimensions");
  }

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }
  static Matrix full(int rows, int cols, double v) {
    Matrix m(rows, cols);
    for (auto& x : m.data_) x = v;
    return m;
  }
  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int r, int c) { return data_[size_t(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[size_t(r) * cols_ + c]; }
  double* row(int r) { return data_.data() + size_t(r) * cols_; }
  const double* row(int r) const { return data_.data() + size_t(r) * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(double v) { for (auto& x : data_) x = v; }
  void zero() { fill(0.0); }
  bool all_finite() const;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// ---- products ----------------------------------------------------------
Matrix matmul(const Matrix& a, const Matrix& b);          // a · b
Matrix matmul_transb(const Matrix& a, const Matrix& b);   // a · bᵀ
Matrix matmul_transa(const Matrix& a, const Matrix& b);   // aᵀ · b

// ---- row-wise nonlinearities -------------------------------------------
// Row softmax with max-subtraction. mask (same shape, nonzero = keep) zeroes
// masked entries exactly; a fully masked row is an error.
Matrix softmax_rows(const Matrix& x, const Matrix* mask = nullptr);

struct LayerNormCache {
  Matrix normalized;            // the output rows
  std::vector<double> inv_std;  // 1/sqrt(var + eps) per row
};

// Plain layer norm, no learned gain/bias. Constant rows degrade to zeros
// through eps.
Matrix layer_norm(const Matrix& x, double eps, LayerNormCache* cache = nullptr);
Matrix layer_norm_backward(const LayerNormCache& cache, const Matrix& dy);

double sigmoid(double x);
double silu_scalar(double x);
double silu_grad_scalar(double x);
Matrix silu(const Matrix& x);
// dy ⊙ silu'(x)
Matrix silu_backward(const Matrix& x, const Matrix& dy);

// ---- elementwise helpers -------------------------------------------------
void add_inplace(Matrix& a, const Matrix& b);
void axpy_inplace(Matrix& y, double alpha, const Matrix& x);  // y += alpha·x
Matrix hadamard(const Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);

// ---- deterministic RNG ---------------------------------------------------
// mt19937_64 raw output (fully specified by the standard) with hand-rolled
// variate transforms, so a seed produces the same stream on every platform
// and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double a, double b);      // [a, b)
  double normal();                         // standard normal, Box-Muller
  int uniform_int(int n);                  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[size_t(i)], v[size_t(j)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(const std::string& s);
// Stable sub-seed derivation: derive_seed(seed, "cmrlm") etc.
uint64_t derive_seed(uint64_t base, const std::string& tag);

}  // namespace dmgin
