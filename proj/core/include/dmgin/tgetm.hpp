#pragma once

#include <cstdint>
#include <vector>

#include "dmgin/matrix.hpp"

namespace dmgin {

// bias[i][j] = table[bucket(|t_i - t_j|)], log-scaled gap buckets shared with
// the event recency scheme. Symmetric by construction.
Matrix relative_bias(const std::vector<int64_t>& timestamps, const Matrix& bias_table);

struct HstuWeights {
  const Matrix* w1;    // [d_g × 4·d_h]
  const Matrix* b1;    // [1 × 4·d_h]
  const Matrix* w2;    // [d_h × d_g]
  const Matrix* b2;    // [1 × d_g]
  const Matrix* bias;  // [1 × n_gap_buckets] relative-time bias table
};

struct HstuGrads {
  Matrix* w1;
  Matrix* b1;
  Matrix* w2;
  Matrix* b2;
  Matrix* bias;
};

struct HstuCache {
  Matrix r;                  // packed input rows [m × d_g]
  Matrix z, s;               // f1 pre/post activation [m × 4·d_h]
  Matrix l;                  // attention logits before the activation [m × m]
  Matrix a;                  // silu(l)/m
  Matrix av;                 // a · V
  LayerNormCache ln;
  Matrix p;                  // norm(av)
  std::vector<int> buckets;  // bucket id per (i,j), for bias backward
  int m = 0;
};

// One HSTU block over the leading n_real rows of g (padded tail rows pass
// through as exact zeros). U,V,Q,K = Split(SiLU(g·W1+b1)); attention is
// pointwise SiLU over Q·Kᵀ + relative bias, normalized by the unmasked key
// count; Y = (Norm(A·V) ⊙ U)·W2 + b2 plus a residual.
Matrix hstu_forward(const Matrix& g, int n_real, const std::vector<int64_t>& max_ts,
                    const HstuWeights& w, double eps, HstuCache* cache = nullptr);

// Accumulates weight grads, returns d(loss)/d(g) (padded rows zero).
Matrix hstu_backward(const HstuCache& cache, const Matrix& dout, const HstuWeights& w,
                     const HstuGrads& grads);

// Sequential composition of N blocks; fills one cache per block when caches
// is non-null. Output is a function of user history only.
Matrix stack_forward(const Matrix& g, int n_real, const std::vector<int64_t>& max_ts,
                     const std::vector<HstuWeights>& blocks, double eps,
                     std::vector<HstuCache>* caches = nullptr);

Matrix stack_backward(const std::vector<HstuCache>& caches, const Matrix& dout,
                      const std::vector<HstuWeights>& blocks,
                      const std::vector<HstuGrads>& grads);

}  // namespace dmgin
