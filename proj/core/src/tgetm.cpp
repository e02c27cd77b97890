#include "dmgin/tgetm.hpp"

#include <algorithm>
#include <cmath>

#include "dmgin/igiem.hpp"

namespace dmgin {

Matrix relative_bias(const std::vector<int64_t>& timestamps, const Matrix& bias_table) {
  check_arg(bias_table.rows() == 1 && bias_table.cols() >= 1,
            "relative_bias: table must be 1×n_buckets");
  const int k = int(timestamps.size());
  Matrix out(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const int64_t gap = std::llabs(timestamps[size_t(i)] - timestamps[size_t(j)]);
      out.at(i, j) = bias_table.at(0, recency_bucket(gap, bias_table.cols()));
    }
  return out;
}

Matrix hstu_forward(const Matrix& g, int n_real, const std::vector<int64_t>& max_ts,
                    const HstuWeights& w, double eps, HstuCache* cache) {
  const int k = g.rows(), d_g = g.cols();
  check_arg(n_real >= 1 && n_real <= k, "hstu_forward: bad n_real");
  check_arg(int(max_ts.size()) >= n_real, "hstu_forward: missing timestamps");
  check_arg(w.w1->rows() == d_g && w.w1->cols() % 4 == 0, "hstu_forward: w1 shape");
  const int d_h = w.w1->cols() / 4;
  check_arg(w.w2->rows() == d_h && w.w2->cols() == d_g, "hstu_forward: w2 shape");
  check_arg(w.b1->rows() == 1 && w.b1->cols() == 4 * d_h, "hstu_forward: b1 shape");
  check_arg(w.b2->rows() == 1 && w.b2->cols() == d_g, "hstu_forward: b2 shape");
  const int m = n_real;

  Matrix r(m, d_g);
  for (int i = 0; i < m; ++i) std::copy(g.row(i), g.row(i) + d_g, r.row(i));

  Matrix z = matmul(r, *w.w1);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < 4 * d_h; ++j) z.at(i, j) += w.b1->at(0, j);
  Matrix s = silu(z);

  // Column blocks of s: [U | V | Q | K], each d_h wide.
  const int off_u = 0, off_v = d_h, off_q = 2 * d_h, off_k = 3 * d_h;

  std::vector<int> buckets(size_t(m) * size_t(m));
  Matrix l(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double dot = 0.0;
      for (int c = 0; c < d_h; ++c) dot += s.at(i, off_q + c) * s.at(j, off_k + c);
      const int64_t gap = std::llabs(max_ts[size_t(i)] - max_ts[size_t(j)]);
      const int b = recency_bucket(gap, w.bias->cols());
      buckets[size_t(i) * size_t(m) + size_t(j)] = b;
      l.at(i, j) = dot + w.bias->at(0, b);
    }

  Matrix a(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) a.at(i, j) = silu_scalar(l.at(i, j)) / double(m);

  Matrix av(m, d_h);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d_h; ++c) {
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += a.at(i, j) * s.at(j, off_v + c);
      av.at(i, c) = acc;
    }

  LayerNormCache ln;
  Matrix p = layer_norm(av, eps, &ln);

  Matrix h(m, d_h);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d_h; ++c) h.at(i, c) = p.at(i, c) * s.at(i, off_u + c);

  Matrix y = matmul(h, *w.w2);
  Matrix out(k, d_g);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d_g; ++j) out.at(i, j) = y.at(i, j) + w.b2->at(0, j) + r.at(i, j);

  if (cache) {
    cache->r = std::move(r);
    cache->z = std::move(z);
    cache->s = std::move(s);
    cache->l = std::move(l);
    cache->a = std::move(a);
    cache->av = std::move(av);
    cache->ln = std::move(ln);
    cache->p = std::move(p);
    cache->buckets = std::move(buckets);
    cache->m = m;
  }
  return out;
}

Matrix hstu_backward(const HstuCache& cache, const Matrix& dout, const HstuWeights& w,
                     const HstuGrads& grads) {
  const int m = cache.m;
  const int d_g = cache.r.cols();
  const int d_h = w.w2->rows();
  const int off_u = 0, off_v = d_h, off_q = 2 * d_h, off_k = 3 * d_h;
  check_arg(dout.cols() == d_g && dout.rows() >= m, "hstu_backward: dout shape");

  Matrix dy(m, d_g);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d_g; ++j) {
      dy.at(i, j) = dout.at(i, j);
      grads.b2->at(0, j) += dout.at(i, j);
    }

  // y = h · w2
  Matrix h(m, d_h);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d_h; ++c) h.at(i, c) = cache.p.at(i, c) * cache.s.at(i, off_u + c);
  add_inplace(*grads.w2, matmul_transa(h, dy));
  Matrix dh = matmul_transb(dy, *w.w2);

  // h = p ⊙ u
  Matrix dp(m, d_h);
  Matrix ds(m, 4 * d_h);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d_h; ++c) {
      dp.at(i, c) = dh.at(i, c) * cache.s.at(i, off_u + c);
      ds.at(i, off_u + c) = dh.at(i, c) * cache.p.at(i, c);
    }

  Matrix dav = layer_norm_backward(cache.ln, dp);

  // av = a · V where V = s[:, v block]
  Matrix da(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d_h; ++c) acc += dav.at(i, c) * cache.s.at(j, off_v + c);
      da.at(i, j) = acc;
    }
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < d_h; ++c) {
      double acc = 0.0;
      for (int i = 0; i < m; ++i) acc += cache.a.at(i, j) * dav.at(i, c);
      ds.at(j, off_v + c) += acc;
    }

  // a = silu(l)/m ; l = Q·Kᵀ + bias[bucket]
  Matrix dl(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      dl.at(i, j) = da.at(i, j) * silu_grad_scalar(cache.l.at(i, j)) / double(m);
      grads.bias->at(0, cache.buckets[size_t(i) * size_t(m) + size_t(j)]) += dl.at(i, j);
    }
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < d_h; ++c) {
      double dq = 0.0;
      for (int j = 0; j < m; ++j) dq += dl.at(i, j) * cache.s.at(j, off_k + c);
      ds.at(i, off_q + c) += dq;
    }
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < d_h; ++c) {
      double dk = 0.0;
      for (int i = 0; i < m; ++i) dk += dl.at(i, j) * cache.s.at(i, off_q + c);
      ds.at(j, off_k + c) += dk;
    }

  // s = silu(z), z = r·w1 + b1
  Matrix dz = silu_backward(cache.z, ds);
  add_inplace(*grads.w1, matmul_transa(cache.r, dz));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < 4 * d_h; ++j) grads.b1->at(0, j) += dz.at(i, j);

  Matrix dr_packed = matmul_transb(dz, *w.w1);
  // Residual path.
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d_g; ++j) dr_packed.at(i, j) += dout.at(i, j);

  Matrix dg(dout.rows(), d_g);
  for (int i = 0; i < m; ++i)
    std::copy(dr_packed.row(i), dr_packed.row(i) + d_g, dg.row(i));
  return dg;
}

Matrix stack_forward(const Matrix& g, int n_real, const std::vector<int64_t>& max_ts,
                     const std::vector<HstuWeights>& blocks, double eps,
                     std::vector<HstuCache>* caches) {
  check_arg(!blocks.empty(), "stack_forward: need at least one block");
  if (caches) caches->resize(blocks.size());
  Matrix cur = g;
  for (size_t i = 0; i < blocks.size(); ++i)
    cur = hstu_forward(cur, n_real, max_ts, blocks[i], eps,
                       caches ? &(*caches)[i] : nullptr);
  return cur;
}

Matrix stack_backward(const std::vector<HstuCache>& caches, const Matrix& dout,
                      const std::vector<HstuWeights>& blocks,
                      const std::vector<HstuGrads>& grads) {
  check_arg(caches.size() == blocks.size() && grads.size() == blocks.size(),
            "stack_backward: block count mismatch");
  Matrix cur = dout;
  for (size_t i = blocks.size(); i-- > 0;)
    cur = hstu_backward(caches[i], cur, blocks[i], grads[i]);
  return cur;
}

}  // namespace dmgin
