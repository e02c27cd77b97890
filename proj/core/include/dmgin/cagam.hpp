#pragma once

#include <vector>

#include "dmgin/matrix.hpp"

namespace dmgin {

// ---- candidate-aware group attention ----------------------------------------
struct CandAttnCache {
  std::vector<double> e;      // candidate embedding [d_g]
  Matrix gp;                  // packed real group rows [S × d_g]
  std::vector<double> te;     // e · W_t
  Matrix pg;                  // gp · W_g (projected groups)
  std::vector<double> alpha;  // softmax weights [S]
  int n_real = 0;
};

struct CandAttnResult {
  std::vector<double> alpha;
  std::vector<double> r_long;
};

// alpha_s = softmax_s(<e·W_t, g'_s·W_g> / sqrt(d_g)); r_long = sum alpha_s (g'_s·W_g).
// Only the leading n_real rows of gprime participate.
CandAttnResult candidate_attention(const std::vector<double>& e, const Matrix& gprime,
                                   int n_real, const Matrix& wt, const Matrix& wg,
                                   CandAttnCache* cache = nullptr);

// Accumulates dwt/dwg; adds candidate grad into de and returns d(loss)/d(gprime)
// with padded rows zero.
Matrix candidate_attention_backward(const CandAttnCache& cache,
                                    const std::vector<double>& dr_long, const Matrix& wt,
                                    const Matrix& wg, Matrix* dwt, Matrix* dwg,
                                    std::vector<double>* de, int padded_rows);

// ---- short-term target attention -------------------------------------------
struct ShortTermCache {
  std::vector<double> e;
  Matrix eb;                  // recent behavior embeddings [n × d]
  std::vector<double> q;      // e · sq
  Matrix k, v;                // eb · sk, eb · sv
  std::vector<double> alpha;
  int n = 0;
};

// DIN-style attention of the candidate over the n most recent raw events.
// Empty history yields a zero vector.
std::vector<double> short_term_repr(const std::vector<double>& e, const Matrix& recent,
                                    const Matrix& sq, const Matrix& sk, const Matrix& sv,
                                    ShortTermCache* cache = nullptr);

// Returns d(loss)/d(recent); zero-row result when the forward saw no events.
Matrix short_term_backward(const ShortTermCache& cache, const std::vector<double>& dr,
                           const Matrix& sq, const Matrix& sk, const Matrix& sv,
                           Matrix* dsq, Matrix* dsk, Matrix* dsv, std::vector<double>* de);

// ---- fusion head ------------------------------------------------------------
struct FuseCache {
  std::vector<double> x;  // concat input
  Matrix z1, h;           // hidden pre/post activation [1 × hidden]
  double logit = 0.0;
  double p = 0.0;
};

// concat[r_long, r_short, aux, e] -> SiLU hidden -> sigmoid of the fused logit.
// Saturates to an exact 0 or 1 for extreme logits; clamp before any log.
double fuse_and_predict(const std::vector<double>& r_long, const std::vector<double>& r_short,
                        const std::vector<double>& aux, const std::vector<double>& e,
                        const Matrix& w1, const Matrix& b1, const Matrix& w2,
                        const Matrix& b2, FuseCache* cache = nullptr);

// Backward from d(loss)/d(logit); splits dx back into the four segments.
void fuse_backward(const FuseCache& cache, double dlogit, const Matrix& w1, const Matrix& b1,
                   const Matrix& w2, const Matrix& b2, Matrix* dw1, Matrix* db1, Matrix* dw2,
                   Matrix* db2, std::vector<double>* dr_long, std::vector<double>* dr_short,
                   std::vector<double>* daux, std::vector<double>* de);

}  // namespace dmgin
