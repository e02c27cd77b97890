#include "dmgin/cagam.hpp"

#include <algorithm>
#include <cmath>

namespace dmgin {

namespace {

// row-vector times matrix: out[j] = sum_i x[i]·w[i][j]
std::vector<double> vecmat(const std::vector<double>& x, const Matrix& w) {
  check_arg(int(x.size()) == w.rows(), "vecmat: dim mismatch");
  std::vector<double> out(size_t(w.cols()), 0.0);
  for (int i = 0; i < w.rows(); ++i) {
    const double xi = x[size_t(i)];
    if (xi == 0.0) continue;
    const double* wr = w.row(i);
    for (int j = 0; j < w.cols(); ++j) out[size_t(j)] += xi * wr[j];
  }
  return out;
}

std::vector<double> vecmat_transb(const std::vector<double>& x, const Matrix& w) {
  check_arg(int(x.size()) == w.cols(), "vecmat_transb: dim mismatch");
  std::vector<double> out(size_t(w.rows()), 0.0);
  for (int i = 0; i < w.rows(); ++i) {
    const double* wr = w.row(i);
    double s = 0.0;
    for (int j = 0; j < w.cols(); ++j) s += x[size_t(j)] * wr[j];
    out[size_t(i)] = s;
  }
  return out;
}

void outer_accum(Matrix* dw, const std::vector<double>& x, const std::vector<double>& dy) {
  check_arg(dw->rows() == int(x.size()) && dw->cols() == int(dy.size()),
            "outer_accum: shape mismatch");
  for (int i = 0; i < dw->rows(); ++i) {
    const double xi = x[size_t(i)];
    if (xi == 0.0) continue;
    double* r = dw->row(i);
    for (int j = 0; j < dw->cols(); ++j) r[j] += xi * dy[size_t(j)];
  }
}

std::vector<double> softmax_vec(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// dlogit = alpha ⊙ (dalpha - <dalpha, alpha>)
std::vector<double> softmax_vec_backward(const std::vector<double>& alpha,
                                         const std::vector<double>& dalpha) {
  double dot = 0.0;
  for (size_t i = 0; i < alpha.size(); ++i) dot += alpha[i] * dalpha[i];
  std::vector<double> out(alpha.size());
  for (size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] * (dalpha[i] - dot);
  return out;
}

}  // namespace

CandAttnResult candidate_attention(const std::vector<double>& e, const Matrix& gprime,
                                   int n_real, const Matrix& wt, const Matrix& wg,
                                   CandAttnCache* cache) {
  const int d_g = gprime.cols();
  check_arg(n_real >= 1 && n_real <= gprime.rows(), "candidate_attention: bad n_real");
  check_arg(int(e.size()) == d_g, "candidate_attention: candidate dim mismatch");
  check_arg(wt.rows() == d_g && wt.cols() == d_g && wg.same_shape(wt),
            "candidate_attention: weights must be d_g×d_g");
  const double scale = 1.0 / std::sqrt(double(d_g));

  Matrix gp(n_real, d_g);
  for (int i = 0; i < n_real; ++i) std::copy(gprime.row(i), gprime.row(i) + d_g, gp.row(i));

  const std::vector<double> te = vecmat(e, wt);
  Matrix pg = matmul(gp, wg);

  std::vector<double> logits(static_cast<size_t>(n_real));
  for (int s = 0; s < n_real; ++s) {
    double dot = 0.0;
    for (int j = 0; j < d_g; ++j) dot += te[size_t(j)] * pg.at(s, j);
    logits[size_t(s)] = dot * scale;
  }
  CandAttnResult res;
  res.alpha = softmax_vec(logits);
  res.r_long.assign(size_t(d_g), 0.0);
  for (int s = 0; s < n_real; ++s)
    for (int j = 0; j < d_g; ++j) res.r_long[size_t(j)] += res.alpha[size_t(s)] * pg.at(s, j);

  if (cache) {
    cache->e = e;
    cache->gp = std::move(gp);
    cache->te = te;
    cache->pg = std::move(pg);
    cache->alpha = res.alpha;
    cache->n_real = n_real;
  }
  return res;
}

Matrix candidate_attention_backward(const CandAttnCache& cache,
                                    const std::vector<double>& dr_long, const Matrix& wt,
                                    const Matrix& wg, Matrix* dwt, Matrix* dwg,
                                    std::vector<double>* de, int padded_rows) {
  const int s_n = cache.n_real;
  const int d_g = cache.pg.cols();
  const double scale = 1.0 / std::sqrt(double(d_g));
  check_arg(int(dr_long.size()) == d_g, "candidate_attention_backward: grad dim");

  // r_long = sum alpha_s pg_s
  Matrix dpg(s_n, d_g);
  std::vector<double> dalpha(size_t(s_n), 0.0);
  for (int s = 0; s < s_n; ++s) {
    double dot = 0.0;
    for (int j = 0; j < d_g; ++j) {
      dpg.at(s, j) = cache.alpha[size_t(s)] * dr_long[size_t(j)];
      dot += dr_long[size_t(j)] * cache.pg.at(s, j);
    }
    dalpha[size_t(s)] = dot;
  }

  const std::vector<double> dlogit = softmax_vec_backward(cache.alpha, dalpha);

  std::vector<double> dte(size_t(d_g), 0.0);
  for (int s = 0; s < s_n; ++s) {
    const double dls = dlogit[size_t(s)] * scale;
    for (int j = 0; j < d_g; ++j) {
      dte[size_t(j)] += dls * cache.pg.at(s, j);
      dpg.at(s, j) += dls * cache.te[size_t(j)];
    }
  }

  outer_accum(dwt, cache.e, dte);
  const std::vector<double> de_local = vecmat_transb(dte, wt);
  for (int j = 0; j < d_g; ++j) (*de)[size_t(j)] += de_local[size_t(j)];

  add_inplace(*dwg, matmul_transa(cache.gp, dpg));
  Matrix dgp = matmul_transb(dpg, wg);

  Matrix dg(s_n + padded_rows, d_g);
  for (int s = 0; s < s_n; ++s) std::copy(dgp.row(s), dgp.row(s) + d_g, dg.row(s));
  return dg;
}

std::vector<double> short_term_repr(const std::vector<double>& e, const Matrix& recent,
                                    const Matrix& sq, const Matrix& sk, const Matrix& sv,
                                    ShortTermCache* cache) {
  check_arg(int(e.size()) == sq.rows(), "short_term_repr: candidate dim mismatch");
  check_arg(sq.cols() == sk.cols(), "short_term_repr: attention dims disagree");
  const int n = recent.rows();
  if (cache) {
    cache->e = e;
    cache->n = n;
  }
  if (n == 0) return std::vector<double>(size_t(sv.cols()), 0.0);
  check_arg(recent.cols() == sk.rows() && recent.cols() == sv.rows(),
            "short_term_repr: event dim mismatch");

  const std::vector<double> q = vecmat(e, sq);
  Matrix k = matmul(recent, sk);
  Matrix v = matmul(recent, sv);
  const double scale = 1.0 / std::sqrt(double(sq.cols()));

  std::vector<double> logits(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double dot = 0.0;
    for (int j = 0; j < k.cols(); ++j) dot += q[size_t(j)] * k.at(i, j);
    logits[size_t(i)] = dot * scale;
  }
  const std::vector<double> alpha = softmax_vec(logits);

  std::vector<double> r(size_t(sv.cols()), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < v.cols(); ++j) r[size_t(j)] += alpha[size_t(i)] * v.at(i, j);

  if (cache) {
    cache->eb = recent;
    cache->q = q;
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->alpha = alpha;
  }
  return r;
}

Matrix short_term_backward(const ShortTermCache& cache, const std::vector<double>& dr,
                           const Matrix& sq, const Matrix& sk, const Matrix& sv,
                           Matrix* dsq, Matrix* dsk, Matrix* dsv, std::vector<double>* de) {
  const int n = cache.n;
  if (n == 0) return Matrix(0, sk.rows());
  const double scale = 1.0 / std::sqrt(double(sq.cols()));

  Matrix dv(n, sv.cols());
  std::vector<double> dalpha(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double dot = 0.0;
    for (int j = 0; j < sv.cols(); ++j) {
      dv.at(i, j) = cache.alpha[size_t(i)] * dr[size_t(j)];
      dot += dr[size_t(j)] * cache.v.at(i, j);
    }
    dalpha[size_t(i)] = dot;
  }
  const std::vector<double> dlogit = softmax_vec_backward(cache.alpha, dalpha);

  std::vector<double> dq(size_t(sq.cols()), 0.0);
  Matrix dk(n, sk.cols());
  for (int i = 0; i < n; ++i) {
    const double dls = dlogit[size_t(i)] * scale;
    for (int j = 0; j < sk.cols(); ++j) {
      dq[size_t(j)] += dls * cache.k.at(i, j);
      dk.at(i, j) = dls * cache.q[size_t(j)];
    }
  }

  outer_accum(dsq, cache.e, dq);
  const std::vector<double> de_local = vecmat_transb(dq, sq);
  for (size_t j = 0; j < de->size(); ++j) (*de)[j] += de_local[j];

  add_inplace(*dsk, matmul_transa(cache.eb, dk));
  add_inplace(*dsv, matmul_transa(cache.eb, dv));

  Matrix deb = matmul_transb(dk, sk);
  add_inplace(deb, matmul_transb(dv, sv));
  return deb;
}

double fuse_and_predict(const std::vector<double>& r_long, const std::vector<double>& r_short,
                        const std::vector<double>& aux, const std::vector<double>& e,
                        const Matrix& w1, const Matrix& b1, const Matrix& w2,
                        const Matrix& b2, FuseCache* cache) {
  std::vector<double> x;
  x.reserve(r_long.size() + r_short.size() + aux.size() + e.size());
  x.insert(x.end(), r_long.begin(), r_long.end());
  x.insert(x.end(), r_short.begin(), r_short.end());
  x.insert(x.end(), aux.begin(), aux.end());
  x.insert(x.end(), e.begin(), e.end());
  check_arg(int(x.size()) == w1.rows(), "fuse_and_predict: input dim mismatch");
  check_arg(w2.rows() == w1.cols() && w2.cols() == 1, "fuse_and_predict: w2 shape");
  check_arg(b1.rows() == 1 && b1.cols() == w1.cols(), "fuse_and_predict: b1 shape");
  check_arg(b2.rows() == 1 && b2.cols() == 1, "fuse_and_predict: b2 shape");

  Matrix z1(1, w1.cols());
  {
    const std::vector<double> t = vecmat(x, w1);
    for (int j = 0; j < w1.cols(); ++j) z1.at(0, j) = t[size_t(j)] + b1.at(0, j);
  }
  Matrix h = silu(z1);
  double logit = b2.at(0, 0);
  for (int j = 0; j < w2.rows(); ++j) logit += h.at(0, j) * w2.at(j, 0);
  const double p = sigmoid(logit);

  if (cache) {
    cache->x = std::move(x);
    cache->z1 = std::move(z1);
    cache->h = std::move(h);
    cache->logit = logit;
    cache->p = p;
  }
  return p;
}

void fuse_backward(const FuseCache& cache, double dlogit, const Matrix& w1, const Matrix& b1,
                   const Matrix& w2, const Matrix& b2, Matrix* dw1, Matrix* db1, Matrix* dw2,
                   Matrix* db2, std::vector<double>* dr_long, std::vector<double>* dr_short,
                   std::vector<double>* daux, std::vector<double>* de) {
  (void)b1;
  (void)b2;
  db2->at(0, 0) += dlogit;
  Matrix dh(1, w2.rows());
  for (int j = 0; j < w2.rows(); ++j) {
    dw2->at(j, 0) += cache.h.at(0, j) * dlogit;
    dh.at(0, j) = w2.at(j, 0) * dlogit;
  }
  Matrix dz1 = silu_backward(cache.z1, dh);
  for (int j = 0; j < w1.cols(); ++j) db1->at(0, j) += dz1.at(0, j);

  std::vector<double> dz(size_t(w1.cols()));
  for (int j = 0; j < w1.cols(); ++j) dz[size_t(j)] = dz1.at(0, j);
  outer_accum(dw1, cache.x, dz);
  const std::vector<double> dx = vecmat_transb(dz, w1);

  size_t off = 0;
  for (size_t j = 0; j < dr_long->size(); ++j) (*dr_long)[j] += dx[off + j];
  off += dr_long->size();
  for (size_t j = 0; j < dr_short->size(); ++j) (*dr_short)[j] += dx[off + j];
  off += dr_short->size();
  for (size_t j = 0; j < daux->size(); ++j) (*daux)[j] += dx[off + j];
  off += daux->size();
  for (size_t j = 0; j < de->size(); ++j) (*de)[j] += dx[off + j];
  check_arg(off + de->size() == dx.size(), "fuse_backward: segment sizes disagree");
}

}  // namespace dmgin
