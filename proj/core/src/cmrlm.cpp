#include "dmgin/cmrlm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dmgin {

namespace {
const char* side_prefix(TowerModel::Side s) {
  return s == TowerModel::Side::kText ? "text" : "img";
}
}  // namespace

TowerModel::TowerModel(const CmrlmConfig& cfg, uint64_t seed) : cfg_(cfg) {
  check_arg(cfg.d_txt > 0 && cfg.d_img > 0 && cfg.d_emb > 0 && cfg.hidden > 0,
            "TowerModel: dims must be positive");
  auto tower = [&](const std::string& p, int d_in) {
    params_.add(p + ".w1", xavier_init(d_in, cfg.hidden, derive_seed(seed, p + ".w1")));
    params_.add(p + ".b1", 1, cfg.hidden);
    params_.add(p + ".w2", xavier_init(cfg.hidden, cfg.d_emb, derive_seed(seed, p + ".w2")));
    params_.add(p + ".b2", 1, cfg.d_emb);
  };
  tower("text", cfg.d_txt);
  tower("img", cfg.d_img);
  Matrix t(1, 1);
  t.at(0, 0) = cfg.temp_init;
  params_.add("temp", std::move(t));
}

double TowerModel::temperature() const { return params_.value("temp").at(0, 0); }

void TowerModel::clamp_temperature() {
  double& t = params_.value("temp").at(0, 0);
  t = std::clamp(t, 0.01, 1.0);
}

Matrix TowerModel::encode_batch(Side side, const Matrix& x, TowerCache* cache) const {
  const std::string p = side_prefix(side);
  const int d_in = side == Side::kText ? cfg_.d_txt : cfg_.d_img;
  check_arg(x.cols() == d_in, "encode_batch: feature dim mismatch");
  const Matrix& w1 = params_.value(p + ".w1");
  const Matrix& b1 = params_.value(p + ".b1");
  const Matrix& w2 = params_.value(p + ".w2");
  const Matrix& b2 = params_.value(p + ".b2");

  Matrix z1 = matmul(x, w1);
  for (int i = 0; i < z1.rows(); ++i)
    for (int j = 0; j < z1.cols(); ++j) z1.at(i, j) += b1.at(0, j);
  Matrix h = silu(z1);
  Matrix e_raw = matmul(h, w2);
  for (int i = 0; i < e_raw.rows(); ++i)
    for (int j = 0; j < e_raw.cols(); ++j) e_raw.at(i, j) += b2.at(0, j);

  Matrix e(e_raw.rows(), e_raw.cols());
  std::vector<double> norms(size_t(e_raw.rows()));
  for (int i = 0; i < e_raw.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < e_raw.cols(); ++j) s += e_raw.at(i, j) * e_raw.at(i, j);
    const double n = std::sqrt(s);
    check_invariant(n > 0.0, "encode_batch: zero embedding cannot be normalized");
    norms[size_t(i)] = n;
    for (int j = 0; j < e_raw.cols(); ++j) e.at(i, j) = e_raw.at(i, j) / n;
  }
  if (cache) {
    cache->x = x;
    cache->z1 = std::move(z1);
    cache->h = std::move(h);
    cache->e_raw = std::move(e_raw);
    cache->e = e;
    cache->norms = std::move(norms);
  }
  return e;
}

void TowerModel::encode_backward(Side side, const TowerCache& cache, const Matrix& de) {
  const std::string p = side_prefix(side);
  // Unit-normalization backward: dv = (de - e*(de.e)) / ||v||.
  Matrix de_raw(de.rows(), de.cols());
  for (int i = 0; i < de.rows(); ++i) {
    double dot = 0.0;
    for (int j = 0; j < de.cols(); ++j) dot += de.at(i, j) * cache.e.at(i, j);
    const double inv_n = 1.0 / cache.norms[size_t(i)];
    for (int j = 0; j < de.cols(); ++j)
      de_raw.at(i, j) = (de.at(i, j) - cache.e.at(i, j) * dot) * inv_n;
  }

  ParamEntry& w2 = params_.get(p + ".w2");
  ParamEntry& b2 = params_.get(p + ".b2");
  ParamEntry& w1 = params_.get(p + ".w1");
  ParamEntry& b1 = params_.get(p + ".b1");

  add_inplace(w2.grad, matmul_transa(cache.h, de_raw));
  for (int i = 0; i < de_raw.rows(); ++i)
    for (int j = 0; j < de_raw.cols(); ++j) b2.grad.at(0, j) += de_raw.at(i, j);

  Matrix dh = matmul_transb(de_raw, w2.value);
  Matrix dz1 = silu_backward(cache.z1, dh);

  add_inplace(w1.grad, matmul_transa(cache.x, dz1));
  for (int i = 0; i < dz1.rows(); ++i)
    for (int j = 0; j < dz1.cols(); ++j) b1.grad.at(0, j) += dz1.at(i, j);
}

std::vector<double> TowerModel::encode(Side side, const std::vector<double>& features) const {
  const int d_in = side == Side::kText ? cfg_.d_txt : cfg_.d_img;
  check_arg(int(features.size()) == d_in, "encode: feature dim mismatch");
  Matrix x(1, d_in);
  std::copy(features.begin(), features.end(), x.row(0));
  Matrix e = encode_batch(side, x);
  return {e.row(0), e.row(0) + e.cols()};
}

double contrastive_loss(const Matrix& text_embs, const Matrix& img_embs,
                        double temperature, Matrix* dsim_logits) {
  check_arg(text_embs.same_shape(img_embs), "contrastive_loss: shape mismatch");
  check_arg(text_embs.rows() >= 2, "contrastive_loss: need n >= 2 for in-batch negatives");
  check_arg(temperature > 0.0, "contrastive_loss: temperature must be positive");
  const int n = text_embs.rows();

  Matrix logits = matmul_transb(text_embs, img_embs);
  scale_inplace(logits, 1.0 / temperature);

  // Row-wise CE (text -> image) on logits; column-wise via the transpose.
  Matrix logits_t(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) logits_t.at(i, j) = logits.at(j, i);

  const Matrix p = softmax_rows(logits);
  const Matrix q = softmax_rows(logits_t);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    loss -= std::log(std::max(p.at(i, i), 1e-300));
    loss -= std::log(std::max(q.at(i, i), 1e-300));
  }
  loss /= 2.0 * n;

  if (dsim_logits) {
    // d(loss)/d(logits) = (1/2n) * [(P - I) + (Q - I)^T]
    Matrix ds(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = p.at(i, j) + q.at(j, i);
        if (i == j) v -= 2.0;
        ds.at(i, j) = v / (2.0 * n);
      }
    *dsim_logits = std::move(ds);
  }
  return loss;
}

double TowerModel::contrastive_batch(const Matrix& x_txt, const Matrix& x_img,
                                     bool with_grad) {
  TowerCache ct, ci;
  const Matrix et = encode_batch(Side::kText, x_txt, with_grad ? &ct : nullptr);
  const Matrix ei = encode_batch(Side::kImage, x_img, with_grad ? &ci : nullptr);
  const double tau = temperature();

  Matrix dlogits;
  const double loss = contrastive_loss(et, ei, tau, with_grad ? &dlogits : nullptr);
  if (!with_grad) return loss;

  // logits = (et . ei^T) / tau
  Matrix det = matmul(dlogits, ei);
  scale_inplace(det, 1.0 / tau);
  Matrix dei = matmul_transa(dlogits, et);
  scale_inplace(dei, 1.0 / tau);

  // d(loss)/d(tau) = sum(dlogits * sim) * d(sim/tau)/dtau = -sum(dlogits*logits)/tau
  const Matrix sim = matmul_transb(et, ei);
  double dtau = 0.0;
  for (size_t k = 0; k < sim.size(); ++k)
    dtau -= dlogits.data()[k] * sim.data()[k] / (tau * tau);
  params_.grad("temp").at(0, 0) += dtau;

  encode_backward(Side::kText, ct, det);
  encode_backward(Side::kImage, ci, dei);
  return loss;
}

TowerModel pretrain(const std::vector<ModalityPair>& pairs, const CmrlmConfig& cfg,
                    uint64_t seed, PretrainReport* report) {
  check_arg(pairs.size() >= 2, "pretrain: need at least 2 entities");
  for (const auto& p : pairs) {
    check_arg(int(p.text_features.size()) == cfg.d_txt, "pretrain: text dim mismatch");
    check_arg(int(p.image_features.size()) == cfg.d_img, "pretrain: image dim mismatch");
  }
  TowerModel model(cfg, derive_seed(seed, "cmrlm.init"));
  Rng order_rng(derive_seed(seed, "cmrlm.order"));

  const int n = int(pairs.size());
  Matrix x_txt(n, cfg.d_txt), x_img(n, cfg.d_img);
  for (int i = 0; i < n; ++i) {
    std::copy(pairs[size_t(i)].text_features.begin(), pairs[size_t(i)].text_features.end(),
              x_txt.row(i));
    std::copy(pairs[size_t(i)].image_features.begin(), pairs[size_t(i)].image_features.end(),
              x_img.row(i));
  }

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  PretrainReport rep;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n - start);
      if (bsz < 2) continue;  // a 1-row tail has no in-batch negatives
      Matrix bt(bsz, cfg.d_txt), bi(bsz, cfg.d_img);
      for (int r = 0; r < bsz; ++r) {
        const int src = order[size_t(start + r)];
        std::copy(x_txt.row(src), x_txt.row(src) + cfg.d_txt, bt.row(r));
        std::copy(x_img.row(src), x_img.row(src) + cfg.d_img, bi.row(r));
      }
      model.params().zero_grads();
      const double loss = model.contrastive_batch(bt, bi, true);
      if (!std::isfinite(loss))
        throw InvariantViolation("pretrain: non-finite loss at epoch " +
                                 std::to_string(epoch));
      adam_step(model.params(), cfg.lr);
      model.clamp_temperature();
      epoch_loss += loss;
      ++batches;
    }
    check_invariant(batches > 0, "pretrain: no usable batches");
    rep.epoch_loss.push_back(epoch_loss / batches);
  }
  if (!rep.epoch_loss.empty()) {
    rep.initial_loss = rep.epoch_loss.front();
    rep.final_loss = rep.epoch_loss.back();
  }
  if (report) *report = rep;
  return model;
}

std::vector<double> embed_entity(const TowerModel& tower, const ModalityPair& pair) {
  const auto et = tower.encode(TowerModel::Side::kText, pair.text_features);
  const auto ei = tower.encode(TowerModel::Side::kImage, pair.image_features);
  std::vector<double> out;
  out.reserve(et.size() + ei.size());
  out.insert(out.end(), et.begin(), et.end());
  out.insert(out.end(), ei.begin(), ei.end());
  double s = 0.0;
  for (double v : out) s += v * v;
  const double norm = std::sqrt(s);  // = sqrt(2) for two unit halves
  check_invariant(norm > 0.0, "embed_entity: zero concatenation");
  for (double& v : out) v /= norm;
  return out;
}

Matrix embed_entities(const TowerModel& tower, const std::vector<ModalityPair>& pairs) {
  check_arg(!pairs.empty(), "embed_entities: empty input");
  const int d = 2 * tower.config().d_emb;
  Matrix out(int(pairs.size()), d);
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto e = embed_entity(tower, pairs[i]);
    std::copy(e.begin(), e.end(), out.row(int(i)));
  }
  return out;
}

void write_entity_embeddings(const std::string& path,
                             const std::vector<uint64_t>& entity_ids,
                             const Matrix& embeddings) {
  check_arg(int(entity_ids.size()) == embeddings.rows(),
            "write_entity_embeddings: id/row count mismatch");
  std::ofstream f(path, std::ios::trunc);
  check_arg(f.good(), "write_entity_embeddings: cannot open " + path);
  char buf[48];
  for (int i = 0; i < embeddings.rows(); ++i) {
    f << entity_ids[size_t(i)] << '\t';
    for (int j = 0; j < embeddings.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", embeddings.at(i, j));
      if (j) f << ',';
      f << buf;
    }
    f << '\n';
  }
  f.close();
  check_invariant(f.good(), "write_entity_embeddings: write failed");
}

void read_entity_embeddings(const std::string& path,
                            std::vector<uint64_t>* entity_ids, Matrix* embeddings) {
  std::ifstream f(path);
  if (!f.good()) throw DependencyError("read_entity_embeddings: cannot open " + path);
  std::vector<uint64_t> ids;
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DependencyError("entity embeddings: missing tab at line " +
                            std::to_string(lineno));
    ids.push_back(std::stoull(line.substr(0, tab)));
    std::vector<double> row;
    std::stringstream ss(line.substr(tab + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) row.push_back(std::stod(tok));
    if (!rows.empty() && rows.back().size() != row.size())
      throw DependencyError("entity embeddings: ragged row at line " +
                            std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DependencyError("entity embeddings: empty file " + path);
  *entity_ids = std::move(ids);
  *embeddings = Matrix::from_rows(rows);
}

}  // namespace dmgin
