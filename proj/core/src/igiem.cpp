#include "dmgin/igiem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dmgin {

namespace {
const char* category_name(BehaviorCategory c) {
  switch (c) {
    case BehaviorCategory::kStrong: return "strong";
    case BehaviorCategory::kWeak: return "weak";
    case BehaviorCategory::kNegative: return "negative";
    case BehaviorCategory::kPayment: return "payment";
  }
  return "?";
}

BehaviorCategory category_from_name(const std::string& s, const std::string& ctx) {
  if (s == "strong") return BehaviorCategory::kStrong;
  if (s == "weak") return BehaviorCategory::kWeak;
  if (s == "negative") return BehaviorCategory::kNegative;
  if (s == "payment") return BehaviorCategory::kPayment;
  throw DependencyError("category_map: unknown category '" + s + "' " + ctx);
}
}  // namespace

CategoryMap CategoryMap::defaults() {
  CategoryMap m;
  m.add("add_to_cart", BehaviorCategory::kStrong);
  m.add("add_to_favorite", BehaviorCategory::kStrong);
  m.add("browse_dishes", BehaviorCategory::kWeak);
  m.add("click", BehaviorCategory::kStrong);
  m.add("dislike", BehaviorCategory::kNegative);
  m.add("order", BehaviorCategory::kPayment);
  m.add("view_comments", BehaviorCategory::kWeak);
  return m;
}

void CategoryMap::add(const std::string& name, BehaviorCategory cat) {
  check_arg(ids_.count(name) == 0, "CategoryMap: duplicate type " + name);
  // Keep names sorted so ids depend only on the set, not insertion order.
  auto pos = std::lower_bound(names_.begin(), names_.end(), name);
  const int at = int(pos - names_.begin());
  names_.insert(pos, name);
  cats_.insert(cats_.begin() + at, cat);
  ids_.clear();
  for (int i = 0; i < int(names_.size()); ++i) ids_[names_[size_t(i)]] = i;
}

CategoryMap CategoryMap::load(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw DependencyError("category_map: cannot open " + path);
  CategoryMap m;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DependencyError("category_map: missing tab at line " + std::to_string(lineno));
    m.add(line.substr(0, tab),
          category_from_name(line.substr(tab + 1), "at line " + std::to_string(lineno)));
  }
  if (m.size() == 0) throw DependencyError("category_map: empty file " + path);
  return m;
}

void CategoryMap::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  check_arg(f.good(), "category_map: cannot open " + path);
  for (int i = 0; i < size(); ++i)
    f << names_[size_t(i)] << '\t' << category_name(cats_[size_t(i)]) << '\n';
}

int CategoryMap::id_of(const std::string& name) const {
  auto it = ids_.find(name);
  return it == ids_.end() ? -1 : it->second;
}

int CategoryMap::require_id(const std::string& name) const {
  const int id = id_of(name);
  check_arg(id >= 0, "CategoryMap: unknown behavior type " + name);
  return id;
}

const std::string& CategoryMap::name_of(int id) const {
  check_arg(id >= 0 && id < size(), "CategoryMap: id out of range");
  return names_[size_t(id)];
}

BehaviorCategory CategoryMap::category_of(int id) const {
  check_arg(id >= 0 && id < size(), "CategoryMap: id out of range");
  return cats_[size_t(id)];
}

StatVector compute_stats(const std::vector<BehaviorEvent>& events, int64_t now,
                         const CategoryMap& category_map) {
  check_arg(!events.empty(), "compute_stats: empty group");
  StatVector s;
  double sum_recency = 0.0, max_recency = 0.0;
  double price_sum = 0.0;
  int64_t payments = 0;
  for (const auto& e : events) {
    BehaviorCategory cat = BehaviorCategory::kWeak;
    if (e.behavior_type >= 0 && e.behavior_type < category_map.size())
      cat = category_map.category_of(e.behavior_type);
    ++s.counts[size_t(cat)];
    // Clock skew (event after `now`) counts as zero recency.
    const double recency = std::max<double>(0.0, double(now - e.timestamp));
    sum_recency += recency;
    max_recency = std::max(max_recency, recency);
    if (cat == BehaviorCategory::kPayment) {
      price_sum += e.price;
      ++payments;
    }
  }
  s.max_time = max_recency;
  s.avg_time = sum_recency / double(events.size());
  s.avg_price = payments > 0 ? price_sum / double(payments) : 0.0;
  return s;
}

std::vector<InterestGroup> group_sequence(const std::vector<BehaviorEvent>& events,
                                          const std::map<uint64_t, int>& cluster_map,
                                          const CategoryMap& category_map,
                                          int64_t now, int cap_b) {
  check_arg(cap_b >= 1, "group_sequence: cap must be >= 1");
  std::map<int, std::vector<BehaviorEvent>> buckets;
  for (const auto& e : events) {
    auto it = cluster_map.find(e.item_id);
    const int cid = it == cluster_map.end() ? 0 : it->second + 1;
    buckets[cid].push_back(e);
  }
  std::vector<InterestGroup> out;
  out.reserve(buckets.size());
  for (auto& [cid, evs] : buckets) {
    std::stable_sort(evs.begin(), evs.end(),
                     [](const BehaviorEvent& a, const BehaviorEvent& b) {
                       return a.timestamp < b.timestamp;
                     });
    InterestGroup g;
    g.cluster_id = cid;
    g.precap_count = int64_t(evs.size());
    g.stats = compute_stats(evs, now, category_map);
    g.max_timestamp = evs.back().timestamp;
    if (int(evs.size()) > cap_b)
      evs.erase(evs.begin(), evs.end() - cap_b);
    g.events = std::move(evs);
    out.push_back(std::move(g));
  }
  return out;
}

int recency_bucket(int64_t recency_seconds, int n_buckets) {
  check_arg(n_buckets >= 1, "recency_bucket: need at least one bucket");
  const double r = double(std::max<int64_t>(0, recency_seconds));
  const int b = int(std::floor(std::log1p(r) / std::log(10.0)));
  return std::min(n_buckets - 1, b);
}

EmbedIndices embed_indices(const BehaviorEvent& event, int64_t now, const EmbedTables& t) {
  EmbedIndices ix;
  ix.item_row = event.item_id < uint64_t(t.item->rows()) ? int(event.item_id) : 0;
  ix.time_row = recency_bucket(now - event.timestamp, t.time->rows());
  ix.loc_row = event.location_id < uint64_t(t.location->rows()) ? int(event.location_id) : 0;
  ix.beh_row = (event.behavior_type >= 0 && event.behavior_type + 1 < t.behavior->rows())
                   ? event.behavior_type + 1
                   : 0;
  return ix;
}

int behavior_embed_dim(const EmbedTables& t) {
  return t.item->cols() + t.time->cols() + t.location->cols() + t.behavior->cols();
}

void behavior_embed(const BehaviorEvent& event, int64_t now, const EmbedTables& t,
                    double* out) {
  const EmbedIndices ix = embed_indices(event, now, t);
  double* p = out;
  const Matrix* tables[4] = {t.item, t.time, t.location, t.behavior};
  const int rows[4] = {ix.item_row, ix.time_row, ix.loc_row, ix.beh_row};
  for (int k = 0; k < 4; ++k) {
    const double* src = tables[k]->row(rows[k]);
    p = std::copy(src, src + tables[k]->cols(), p);
  }
}

std::vector<double> intra_group_mhsa(const Matrix& e, int n_real, const Matrix& wq,
                                     const Matrix& wk, const Matrix& wv, const Matrix& wo,
                                     int heads, MhsaCache* cache) {
  const int d = e.cols();
  check_arg(n_real >= 1 && n_real <= e.rows(), "intra_group_mhsa: bad n_real");
  check_arg(heads >= 1 && d % heads == 0, "intra_group_mhsa: heads must divide dim");
  check_arg(wq.rows() == d && wq.cols() == d && wk.same_shape(wq) && wv.same_shape(wq) &&
                wo.same_shape(wq),
            "intra_group_mhsa: weight shape mismatch");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));

  Matrix er(n_real, d);
  for (int i = 0; i < n_real; ++i) std::copy(e.row(i), e.row(i) + d, er.row(i));

  Matrix q = matmul(er, wq), k = matmul(er, wk), v = matmul(er, wv);
  Matrix o(n_real, d);
  std::vector<Matrix> attn(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    Matrix scores(n_real, n_real);
    for (int i = 0; i < n_real; ++i)
      for (int j = 0; j < n_real; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q.at(i, off + c) * k.at(j, off + c);
        scores.at(i, j) = s * scale;
      }
    Matrix a = softmax_rows(scores);
    for (int i = 0; i < n_real; ++i)
      for (int c = 0; c < dh; ++c) {
        double s = 0.0;
        for (int j = 0; j < n_real; ++j) s += a.at(i, j) * v.at(j, off + c);
        o.at(i, off + c) = s;
      }
    attn[size_t(h)] = std::move(a);
  }

  Matrix z = matmul(o, wo);
  std::vector<double> dyna(size_t(d), 0.0);
  for (int i = 0; i < n_real; ++i)
    for (int j = 0; j < d; ++j) dyna[size_t(j)] += z.at(i, j);
  for (double& x : dyna) x /= double(n_real);

  if (cache) {
    cache->e = std::move(er);
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->o = std::move(o);
    cache->attn = std::move(attn);
    cache->n_real = n_real;
    cache->heads = heads;
  }
  return dyna;
}

Matrix intra_group_mhsa_backward(const MhsaCache& cache, const std::vector<double>& ddyna,
                                 const Matrix& wq, const Matrix& wk, const Matrix& wv,
                                 const Matrix& wo, Matrix* dwq, Matrix* dwk, Matrix* dwv,
                                 Matrix* dwo) {
  const int m = cache.n_real;
  const int d = cache.e.cols();
  const int heads = cache.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  check_arg(int(ddyna.size()) == d, "mhsa_backward: grad dim mismatch");

  // dyna = mean rows of Z, Z = O.Wo
  Matrix dz(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) dz.at(i, j) = ddyna[size_t(j)] / double(m);
  add_inplace(*dwo, matmul_transa(cache.o, dz));
  Matrix dov = matmul_transb(dz, wo);  // d(loss)/dO

  Matrix dq(m, d), dk(m, d), dv(m, d);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    const Matrix& a = cache.attn[size_t(h)];
    // dA = dO_h . V_h^T ; dV_h = A^T . dO_h
    Matrix da(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += dov.at(i, off + c) * cache.v.at(j, off + c);
        da.at(i, j) = s;
      }
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < dh; ++c) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += a.at(i, j) * dov.at(i, off + c);
        dv.at(j, off + c) += s;
      }
    // Softmax rows: dS_i = A_i ⊙ (dA_i - <dA_i, A_i>)
    Matrix ds(m, m);
    for (int i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += da.at(i, j) * a.at(i, j);
      for (int j = 0; j < m; ++j) ds.at(i, j) = a.at(i, j) * (da.at(i, j) - dot);
    }
    // S = scale * Q_h K_h^T
    for (int i = 0; i < m; ++i)
      for (int c = 0; c < dh; ++c) {
        double sq = 0.0;
        for (int j = 0; j < m; ++j) sq += ds.at(i, j) * cache.k.at(j, off + c);
        dq.at(i, off + c) += sq * scale;
      }
    for (int j = 0; j < m; ++j)
      for (int c = 0; c < dh; ++c) {
        double sk = 0.0;
        for (int i = 0; i < m; ++i) sk += ds.at(i, j) * cache.q.at(i, off + c);
        dk.at(j, off + c) += sk * scale;
      }
  }

  add_inplace(*dwq, matmul_transa(cache.e, dq));
  add_inplace(*dwk, matmul_transa(cache.e, dk));
  add_inplace(*dwv, matmul_transa(cache.e, dv));

  Matrix de = matmul_transb(dq, wq);
  add_inplace(de, matmul_transb(dk, wk));
  add_inplace(de, matmul_transb(dv, wv));
  return de;
}

TopkResult topk_groups(const std::vector<InterestGroup>& groups, int k) {
  check_arg(k >= 1, "topk_groups: k must be >= 1");
  std::vector<int> idx(groups.size());
  for (size_t i = 0; i < groups.size(); ++i) idx[i] = int(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (groups[size_t(a)].max_timestamp != groups[size_t(b)].max_timestamp)
      return groups[size_t(a)].max_timestamp > groups[size_t(b)].max_timestamp;
    return groups[size_t(a)].cluster_id < groups[size_t(b)].cluster_id;
  });
  TopkResult res;
  res.k = k;
  res.n_real = std::min<int>(k, int(groups.size()));
  res.indices.assign(idx.begin(), idx.begin() + res.n_real);
  std::sort(res.indices.begin(), res.indices.end(), [&](int a, int b) {
    if (groups[size_t(a)].max_timestamp != groups[size_t(b)].max_timestamp)
      return groups[size_t(a)].max_timestamp < groups[size_t(b)].max_timestamp;
    return groups[size_t(a)].cluster_id < groups[size_t(b)].cluster_id;
  });
  return res;
}

std::vector<double> stat_features(const StatVector& stats) {
  const auto raw = stats.as_array();
  std::vector<double> x(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    check_arg(raw[i] >= 0.0, "stat_features: negative stat field");
    x[i] = std::log1p(raw[i]);
  }
  return x;
}

std::vector<double> group_repr(const std::vector<double>& dyna, const StatVector& stats,
                               const Matrix& stat_w, const Matrix& stat_b) {
  check_arg(stat_w.rows() == StatVector::kDim, "group_repr: stat_w rows mismatch");
  check_arg(stat_b.rows() == 1 && stat_b.cols() == stat_w.cols(),
            "group_repr: stat_b shape mismatch");
  const auto x = stat_features(stats);
  std::vector<double> g(dyna);
  g.reserve(dyna.size() + size_t(stat_w.cols()));
  for (int j = 0; j < stat_w.cols(); ++j) {
    double s = stat_b.at(0, j);
    for (int i = 0; i < stat_w.rows(); ++i) s += x[size_t(i)] * stat_w.at(i, j);
    g.push_back(s);
  }
  return g;
}

}  // namespace dmgin
