#include "dmgin/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "dmgin/error.hpp"

namespace dmgin {

namespace {

using nlohmann::json;

// y = x · W for a row vector x. Accumulation runs over ascending i for every
// output column, matching matmul's order so serving paths reproduce training
// numerics.
std::vector<double> vec_mat(const std::vector<double>& x, const Matrix& w) {
  check_arg(int(x.size()) == w.rows(), "vec_mat: size mismatch");
  std::vector<double> out(static_cast<size_t>(w.cols()), 0.0);
  for (int i = 0; i < w.rows(); ++i) {
    double xi = x[size_t(i)];
    if (xi == 0.0) continue;
    const double* wr = w.row(i);
    for (int j = 0; j < w.cols(); ++j) out[size_t(j)] += xi * wr[j];
  }
  return out;
}

double dot_n(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void validate_config(const ModelConfig& c) {
  check_arg(c.d_item > 0 && c.d_time > 0 && c.d_loc > 0 && c.d_beh > 0,
            "ModelConfig: embedding widths must be positive");
  check_arg(c.n_time_buckets > 0 && c.n_gap_buckets > 0, "ModelConfig: bucket counts");
  check_arg(c.d_stat > 0, "ModelConfig: d_stat must be positive");
  check_arg(c.heads > 0 && c.d() % c.heads == 0,
            "ModelConfig: heads must divide the behavior embedding width");
  check_arg(c.d_h > 0 && c.n_blocks >= 1, "ModelConfig: transformer shape");
  check_arg(c.top_k > 0 && c.cap_b > 0, "ModelConfig: top_k and cap_b must be positive");
  check_arg(c.n_s >= 0 && c.n_baseline >= 0, "ModelConfig: window lengths");
  check_arg(c.n_profiles > 0 && c.d_profile > 0, "ModelConfig: profile table");
  check_arg(c.n_hour_buckets > 0 && c.n_hour_buckets <= 24 && c.d_hour > 0,
            "ModelConfig: hour table");
  check_arg(c.fusion_hidden > 0, "ModelConfig: fusion_hidden must be positive");
  check_arg(c.eps > 0, "ModelConfig: eps must be positive");
  check_arg(c.n_items > 0, "ModelConfig: n_items not set");
  check_arg(c.n_locations >= 0, "ModelConfig: n_locations");
  check_arg(c.n_behaviors > 0, "ModelConfig: n_behaviors not set");
}

Matrix xavier_named(int rows, int cols, uint64_t seed, const std::string& name) {
  return xavier_init(rows, cols, derive_seed(seed, "init." + name));
}

void add_weight(ParamSet& p, const std::string& name, int rows, int cols, uint64_t seed) {
  p.add(name, xavier_named(rows, cols, seed, name));
}

void add_bias(ParamSet& p, const std::string& name, int cols) {
  p.add(name, Matrix::zeros(1, cols));
}

std::string block_name(int i, const char* leaf) {
  return "tgetm." + std::to_string(i) + "." + leaf;
}

}  // namespace

void save_model_meta(const ModelConfig& cfg, const std::string& path) {
  json j;
  j["schema"] = 1;
  j["d_item"] = cfg.d_item;
  j["d_time"] = cfg.d_time;
  j["d_loc"] = cfg.d_loc;
  j["d_beh"] = cfg.d_beh;
  j["n_time_buckets"] = cfg.n_time_buckets;
  j["d_stat"] = cfg.d_stat;
  j["heads"] = cfg.heads;
  j["d_h"] = cfg.d_h;
  j["n_blocks"] = cfg.n_blocks;
  j["n_gap_buckets"] = cfg.n_gap_buckets;
  j["top_k"] = cfg.top_k;
  j["cap_b"] = cfg.cap_b;
  j["n_s"] = cfg.n_s;
  j["n_baseline"] = cfg.n_baseline;
  j["n_profiles"] = cfg.n_profiles;
  j["d_profile"] = cfg.d_profile;
  j["n_hour_buckets"] = cfg.n_hour_buckets;
  j["d_hour"] = cfg.d_hour;
  j["fusion_hidden"] = cfg.fusion_hidden;
  j["eps"] = cfg.eps;
  j["n_items"] = cfg.n_items;
  j["n_locations"] = cfg.n_locations;
  j["n_behaviors"] = cfg.n_behaviors;
  j["disable_stats"] = cfg.disable_stats;
  j["disable_behavior_evolution"] = cfg.disable_behavior_evolution;
  std::ofstream f(path, std::ios::binary);
  check_arg(f.good(), "save_model_meta: cannot open " + path);
  f << j.dump(2) << "\n";
  check_invariant(f.good(), "save_model_meta: write failed for " + path);
}

ModelConfig load_model_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw DependencyError("load_model_meta: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DependencyError("load_model_meta: invalid JSON in " + path + ": " + e.what());
  }
  ModelConfig cfg;
  try {
    check_arg(j.at("schema").get<int>() == 1, "load_model_meta: unsupported schema");
    cfg.d_item = j.at("d_item").get<int>();
    cfg.d_time = j.at("d_time").get<int>();
    cfg.d_loc = j.at("d_loc").get<int>();
    cfg.d_beh = j.at("d_beh").get<int>();
    cfg.n_time_buckets = j.at("n_time_buckets").get<int>();
    cfg.d_stat = j.at("d_stat").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.d_h = j.at("d_h").get<int>();
    cfg.n_blocks = j.at("n_blocks").get<int>();
    cfg.n_gap_buckets = j.at("n_gap_buckets").get<int>();
    cfg.top_k = j.at("top_k").get<int>();
    cfg.cap_b = j.at("cap_b").get<int>();
    cfg.n_s = j.at("n_s").get<int>();
    cfg.n_baseline = j.at("n_baseline").get<int>();
    cfg.n_profiles = j.at("n_profiles").get<int>();
    cfg.d_profile = j.at("d_profile").get<int>();
    cfg.n_hour_buckets = j.at("n_hour_buckets").get<int>();
    cfg.d_hour = j.at("d_hour").get<int>();
    cfg.fusion_hidden = j.at("fusion_hidden").get<int>();
    cfg.eps = j.at("eps").get<double>();
    cfg.n_items = j.at("n_items").get<int>();
    cfg.n_locations = j.at("n_locations").get<int>();
    cfg.n_behaviors = j.at("n_behaviors").get<int>();
    cfg.disable_stats = j.at("disable_stats").get<bool>();
    cfg.disable_behavior_evolution = j.at("disable_behavior_evolution").get<bool>();
  } catch (const json::exception& e) {
    throw DependencyError("load_model_meta: missing field in " + path + ": " + e.what());
  }
  validate_config(cfg);
  return cfg;
}

GroupedSample preprocess_sample(const Sample& s, const std::map<uint64_t, int>& cluster_map,
                                const CategoryMap& category_map, const ModelConfig& cfg) {
  GroupedSample gs;
  gs.user_id = s.user_id;
  gs.request_time = s.request_time;
  gs.candidate = s.candidate;
  gs.label = s.label;
  gs.aux_hour = s.aux_hour;
  gs.aux_profile = s.aux_profile;

  const std::vector<BehaviorEvent>* hist = &s.history();
  std::vector<BehaviorEvent> sorted_hist;
  bool ordered = std::is_sorted(hist->begin(), hist->end(),
                                [](const BehaviorEvent& a, const BehaviorEvent& b) {
                                  return a.timestamp < b.timestamp;
                                });
  if (!ordered) {
    sorted_hist = *hist;
    std::stable_sort(sorted_hist.begin(), sorted_hist.end(),
                     [](const BehaviorEvent& a, const BehaviorEvent& b) {
                       return a.timestamp < b.timestamp;
                     });
    hist = &sorted_hist;
  }

  std::vector<InterestGroup> groups =
      group_sequence(*hist, cluster_map, category_map, s.request_time, cfg.cap_b);
  gs.n_groups_total = int(groups.size());
  TopkResult top = topk_groups(groups, cfg.top_k);
  gs.groups.reserve(top.indices.size());
  gs.max_ts.reserve(top.indices.size());
  for (int idx : top.indices) {
    gs.groups.push_back(std::move(groups[size_t(idx)]));
    gs.max_ts.push_back(gs.groups.back().max_timestamp);
  }

  int n = int(hist->size());
  int take_s = std::min(cfg.n_s, n);
  gs.recent.assign(hist->end() - take_s, hist->end());
  int take_b = std::min(cfg.n_baseline, n);
  gs.baseline_window.assign(hist->end() - take_b, hist->end());
  return gs;
}

std::vector<GroupedSample> preprocess_samples(const std::vector<Sample>& samples,
                                              const std::map<uint64_t, int>& cluster_map,
                                              const CategoryMap& category_map,
                                              const ModelConfig& cfg) {
  std::vector<GroupedSample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    out.push_back(preprocess_sample(s, cluster_map, category_map, cfg));
  }
  return out;
}

// ---- DmginModel -------------------------------------------------------------

struct DmginModel::Forward {
  struct GroupFwd {
    Matrix e;  // [m × d] embedded events
    std::vector<EmbedIndices> idx;
    MhsaCache mhsa;             // filled unless behavior evolution is disabled
    std::vector<double> statx;  // log1p stat features
  };
  std::vector<GroupFwd> groups;
  int n_real = 0;
  std::vector<int64_t> max_ts;  // length top_k
  Matrix g;                     // [top_k × d_g]
  std::vector<HstuCache> stack;
  Matrix gprime;
  int cand_row = 0, profile_row = 0, hour_row = 0;
  std::vector<double> e_cand, aux;
  CandAttnCache cand;
  std::vector<EmbedIndices> recent_idx;
  Matrix recent_e;
  ShortTermCache st;
  FuseCache fuse;
};

DmginModel::DmginModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  validate_config(cfg_);
  const int d = cfg_.d();
  const int d_g = cfg_.d_g();
  add_weight(params_, "cagam.sk", d, d, seed);
  add_weight(params_, "cagam.sq", d_g, d, seed);
  add_weight(params_, "cagam.sv", d, d, seed);
  add_weight(params_, "cagam.wg", d_g, d_g, seed);
  add_weight(params_, "cagam.wt", d_g, d_g, seed);
  add_weight(params_, "emb.beh", cfg_.n_behaviors + 1, cfg_.d_beh, seed);
  add_weight(params_, "emb.cand", cfg_.n_items + 1, d_g, seed);
  add_weight(params_, "emb.hour", cfg_.n_hour_buckets, cfg_.d_hour, seed);
  add_weight(params_, "emb.item", cfg_.n_items + 1, cfg_.d_item, seed);
  add_weight(params_, "emb.loc", cfg_.n_locations + 1, cfg_.d_loc, seed);
  add_weight(params_, "emb.profile", cfg_.n_profiles, cfg_.d_profile, seed);
  add_weight(params_, "emb.time", cfg_.n_time_buckets, cfg_.d_time, seed);
  add_weight(params_, "head.w1", d_g + d + cfg_.d_aux() + d_g, cfg_.fusion_hidden, seed);
  add_bias(params_, "head.b1", cfg_.fusion_hidden);
  add_weight(params_, "head.w2", cfg_.fusion_hidden, 1, seed);
  add_bias(params_, "head.b2", 1);
  add_bias(params_, "igiem.stat_b", cfg_.d_stat);
  add_weight(params_, "igiem.stat_w", StatVector::kDim, cfg_.d_stat, seed);
  add_weight(params_, "igiem.wk", d, d, seed);
  add_weight(params_, "igiem.wo", d, d, seed);
  add_weight(params_, "igiem.wq", d, d, seed);
  add_weight(params_, "igiem.wv", d, d, seed);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    add_weight(params_, block_name(i, "w1"), d_g, 4 * cfg_.d_h, seed);
    add_bias(params_, block_name(i, "b1"), 4 * cfg_.d_h);
    add_weight(params_, block_name(i, "w2"), cfg_.d_h, d_g, seed);
    add_bias(params_, block_name(i, "b2"), d_g);
    add_bias(params_, block_name(i, "bias"), cfg_.n_gap_buckets);
  }
}

void DmginModel::load_params(const ParamSet& loaded) {
  const auto& have = params_.entries();
  const auto& got = loaded.entries();
  if (have.size() != got.size()) {
    throw DependencyError("load_params: checkpoint has " + std::to_string(got.size()) +
                          " tensors, model expects " + std::to_string(have.size()));
  }
  for (auto it = have.begin(), jt = got.begin(); it != have.end(); ++it, ++jt) {
    if (it->first != jt->first) {
      throw DependencyError("load_params: tensor name mismatch: model '" + it->first +
                            "' vs checkpoint '" + jt->first + "'");
    }
    if (!it->second.value.same_shape(jt->second.value)) {
      throw DependencyError("load_params: shape mismatch for tensor '" + it->first + "'");
    }
  }
  params_ = loaded;
}

EmbedTables DmginModel::tables() const {
  return EmbedTables{&params_.value("emb.item"), &params_.value("emb.time"),
                     &params_.value("emb.loc"), &params_.value("emb.beh")};
}

std::vector<HstuWeights> DmginModel::block_weights() const {
  std::vector<HstuWeights> blocks;
  blocks.reserve(static_cast<size_t>(cfg_.n_blocks));
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    blocks.push_back(HstuWeights{&params_.value(block_name(i, "w1")),
                                 &params_.value(block_name(i, "b1")),
                                 &params_.value(block_name(i, "w2")),
                                 &params_.value(block_name(i, "b2")),
                                 &params_.value(block_name(i, "bias"))});
  }
  return blocks;
}

Matrix DmginModel::embed_events(const std::vector<BehaviorEvent>& events, int64_t now,
                                std::vector<EmbedIndices>* idx) const {
  EmbedTables t = tables();
  Matrix e(int(events.size()), cfg_.d());
  if (idx) idx->resize(events.size());
  for (size_t i = 0; i < events.size(); ++i) {
    behavior_embed(events[i], now, t, e.row(int(i)));
    if (idx) (*idx)[i] = embed_indices(events[i], now, t);
  }
  return e;
}

std::vector<double> DmginModel::candidate_embedding(uint64_t candidate, int* row) const {
  const Matrix& table = params_.value("emb.cand");
  int r = (candidate < uint64_t(table.rows())) ? int(candidate) : 0;
  if (row) *row = r;
  return std::vector<double>(table.row(r), table.row(r) + table.cols());
}

std::vector<double> DmginModel::aux_features(const GroupedSample& gs, int* profile_row,
                                             int* hour_row) const {
  check_arg(gs.aux_hour >= 0 && gs.aux_hour < 24, "aux_features: hour out of range");
  check_arg(gs.aux_profile >= 0, "aux_features: negative profile");
  int pr = gs.aux_profile % cfg_.n_profiles;
  int hr = gs.aux_hour * cfg_.n_hour_buckets / 24;
  if (profile_row) *profile_row = pr;
  if (hour_row) *hour_row = hr;
  const Matrix& pt = params_.value("emb.profile");
  const Matrix& ht = params_.value("emb.hour");
  std::vector<double> aux;
  aux.reserve(static_cast<size_t>(cfg_.d_aux()));
  aux.insert(aux.end(), pt.row(pr), pt.row(pr) + pt.cols());
  aux.insert(aux.end(), ht.row(hr), ht.row(hr) + ht.cols());
  return aux;
}

void DmginModel::build_state(const GroupedSample& gs, Forward* fw) const {
  const int d = cfg_.d();
  const int d_g = cfg_.d_g();
  check_invariant(int(gs.groups.size()) <= cfg_.top_k,
                  "build_state: sample was grouped with a larger top_k than the model");
  fw->n_real = int(gs.groups.size());
  fw->g = Matrix::zeros(cfg_.top_k, d_g);
  fw->max_ts = gs.max_ts;
  fw->max_ts.resize(static_cast<size_t>(cfg_.top_k), 0);
  fw->groups.resize(static_cast<size_t>(fw->n_real));

  const Matrix& wq = params_.value("igiem.wq");
  const Matrix& wk = params_.value("igiem.wk");
  const Matrix& wv = params_.value("igiem.wv");
  const Matrix& wo = params_.value("igiem.wo");
  const Matrix& stat_w = params_.value("igiem.stat_w");
  const Matrix& stat_b = params_.value("igiem.stat_b");

  for (int s = 0; s < fw->n_real; ++s) {
    const InterestGroup& grp = gs.groups[size_t(s)];
    check_invariant(!grp.events.empty(), "build_state: empty interest group");
    Forward::GroupFwd& gf = fw->groups[size_t(s)];
    gf.e = embed_events(grp.events, gs.request_time, &gf.idx);
    int m = gf.e.rows();
    std::vector<double> dyna;
    if (cfg_.disable_behavior_evolution) {
      dyna.assign(static_cast<size_t>(d), 0.0);
      for (int r = 0; r < m; ++r) {
        const double* row = gf.e.row(r);
        for (int j = 0; j < d; ++j) dyna[size_t(j)] += row[j];
      }
      for (int j = 0; j < d; ++j) dyna[size_t(j)] /= double(m);
    } else {
      dyna = intra_group_mhsa(gf.e, m, wq, wk, wv, wo, cfg_.heads, &gf.mhsa);
    }
    double* out = fw->g.row(s);
    std::copy(dyna.begin(), dyna.end(), out);
    gf.statx = stat_features(grp.stats);
    if (!cfg_.disable_stats) {
      std::vector<double> stat_emb = vec_mat(gf.statx, stat_w);
      for (int j = 0; j < cfg_.d_stat; ++j) out[d + j] = stat_emb[size_t(j)] + stat_b.at(0, j);
    }
  }
  fw->gprime =
      stack_forward(fw->g, fw->n_real, fw->max_ts, block_weights(), cfg_.eps, &fw->stack);
}

DmginModel::UserState DmginModel::compute_state(const GroupedSample& gs) const {
  Forward fw;
  build_state(gs, &fw);
  UserState state;
  state.gprime = std::move(fw.gprime);
  state.n_real = fw.n_real;
  state.max_ts = std::move(fw.max_ts);
  return state;
}

double DmginModel::run_forward(const GroupedSample& gs, Forward* fw) const {
  build_state(gs, fw);
  fw->e_cand = candidate_embedding(gs.candidate, &fw->cand_row);
  CandAttnResult attn =
      candidate_attention(fw->e_cand, fw->gprime, fw->n_real, params_.value("cagam.wt"),
                          params_.value("cagam.wg"), &fw->cand);
  fw->recent_e = embed_events(gs.recent, gs.request_time, &fw->recent_idx);
  std::vector<double> r_short =
      short_term_repr(fw->e_cand, fw->recent_e, params_.value("cagam.sq"),
                      params_.value("cagam.sk"), params_.value("cagam.sv"), &fw->st);
  fw->aux = aux_features(gs, &fw->profile_row, &fw->hour_row);
  return fuse_and_predict(attn.r_long, r_short, fw->aux, fw->e_cand,
                          params_.value("head.w1"), params_.value("head.b1"),
                          params_.value("head.w2"), params_.value("head.b2"), &fw->fuse);
}

double DmginModel::predict_from_state(const UserState& state, const GroupedSample& gs) const {
  check_arg(state.gprime.rows() == cfg_.top_k && state.gprime.cols() == cfg_.d_g(),
            "predict_from_state: state shape mismatch");
  int cand_row = 0;
  std::vector<double> e = candidate_embedding(gs.candidate, &cand_row);
  CandAttnResult attn = candidate_attention(e, state.gprime, state.n_real,
                                            params_.value("cagam.wt"),
                                            params_.value("cagam.wg"));
  Matrix recent_e = embed_events(gs.recent, gs.request_time, nullptr);
  std::vector<double> r_short =
      short_term_repr(e, recent_e, params_.value("cagam.sq"), params_.value("cagam.sk"),
                      params_.value("cagam.sv"));
  std::vector<double> aux = aux_features(gs, nullptr, nullptr);
  return fuse_and_predict(attn.r_long, r_short, aux, e, params_.value("head.w1"),
                          params_.value("head.b1"), params_.value("head.w2"),
                          params_.value("head.b2"));
}

std::vector<double> DmginModel::predict_batch(const UserState& state, const GroupedSample& gs,
                                              const std::vector<uint64_t>& candidates) const {
  check_arg(state.gprime.rows() == cfg_.top_k && state.gprime.cols() == cfg_.d_g(),
            "predict_batch: state shape mismatch");
  const int d_g = cfg_.d_g();
  const int S = state.n_real;
  const Matrix& wt = params_.value("cagam.wt");
  const Matrix& wg = params_.value("cagam.wg");
  const Matrix& sq = params_.value("cagam.sq");
  const Matrix& sk = params_.value("cagam.sk");
  const Matrix& sv = params_.value("cagam.sv");
  const Matrix& w1 = params_.value("head.w1");
  const Matrix& b1 = params_.value("head.b1");
  const Matrix& w2 = params_.value("head.w2");
  const Matrix& b2 = params_.value("head.b2");

  // Per-request work, shared by every candidate.
  Matrix gp(S, d_g);
  for (int s = 0; s < S; ++s) {
    std::copy(state.gprime.row(s), state.gprime.row(s) + d_g, gp.row(s));
  }
  Matrix pg = matmul(gp, wg);
  Matrix recent_e = embed_events(gs.recent, gs.request_time, nullptr);
  Matrix st_k = matmul(recent_e, sk);
  Matrix st_v = matmul(recent_e, sv);
  std::vector<double> aux = aux_features(gs, nullptr, nullptr);
  const double scale_long = 1.0 / std::sqrt(double(d_g));
  const double scale_short = 1.0 / std::sqrt(double(sq.cols()));
  const int n_recent = recent_e.rows();

  std::vector<double> out;
  out.reserve(candidates.size());
  std::vector<double> logits(static_cast<size_t>(std::max(S, n_recent)), 0.0);
  for (uint64_t cand : candidates) {
    std::vector<double> e = candidate_embedding(cand, nullptr);
    // Long-term: softmax over projected groups.
    std::vector<double> te = vec_mat(e, wt);
    std::vector<double> r_long(static_cast<size_t>(d_g), 0.0);
    if (S > 0) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < S; ++s) {
        logits[size_t(s)] = dot_n(te.data(), pg.row(s), d_g) * scale_long;
        mx = std::max(mx, logits[size_t(s)]);
      }
      double z = 0.0;
      for (int s = 0; s < S; ++s) {
        logits[size_t(s)] = std::exp(logits[size_t(s)] - mx);
        z += logits[size_t(s)];
      }
      for (int s = 0; s < S; ++s) {
        double a = logits[size_t(s)] / z;
        const double* pgr = pg.row(s);
        for (int j = 0; j < d_g; ++j) r_long[size_t(j)] += a * pgr[j];
      }
    }
    // Short-term: softmax over recent events.
    std::vector<double> r_short(static_cast<size_t>(sv.cols()), 0.0);
    if (n_recent > 0) {
      std::vector<double> q = vec_mat(e, sq);
      double mx = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n_recent; ++i) {
        logits[size_t(i)] = dot_n(q.data(), st_k.row(i), st_k.cols()) * scale_short;
        mx = std::max(mx, logits[size_t(i)]);
      }
      double z = 0.0;
      for (int i = 0; i < n_recent; ++i) {
        logits[size_t(i)] = std::exp(logits[size_t(i)] - mx);
        z += logits[size_t(i)];
      }
      for (int i = 0; i < n_recent; ++i) {
        double a = logits[size_t(i)] / z;
        const double* vr = st_v.row(i);
        for (int j = 0; j < st_v.cols(); ++j) r_short[size_t(j)] += a * vr[j];
      }
    }
    out.push_back(fuse_and_predict(r_long, r_short, aux, e, w1, b1, w2, b2));
  }
  return out;
}

double DmginModel::predict(const GroupedSample& gs) const {
  Forward fw;
  return run_forward(gs, &fw);
}

void DmginModel::scatter_embed_grads(const Matrix& de, const std::vector<EmbedIndices>& idx) {
  check_arg(de.rows() == int(idx.size()), "scatter_embed_grads: row count mismatch");
  Matrix& gi = params_.grad("emb.item");
  Matrix& gt = params_.grad("emb.time");
  Matrix& gl = params_.grad("emb.loc");
  Matrix& gb = params_.grad("emb.beh");
  const int d_item = cfg_.d_item, d_time = cfg_.d_time, d_loc = cfg_.d_loc, d_beh = cfg_.d_beh;
  for (int r = 0; r < de.rows(); ++r) {
    const double* src = de.row(r);
    const EmbedIndices& ix = idx[size_t(r)];
    double* item = gi.row(ix.item_row);
    for (int j = 0; j < d_item; ++j) item[j] += src[j];
    src += d_item;
    double* time = gt.row(ix.time_row);
    for (int j = 0; j < d_time; ++j) time[j] += src[j];
    src += d_time;
    double* loc = gl.row(ix.loc_row);
    for (int j = 0; j < d_loc; ++j) loc[j] += src[j];
    src += d_loc;
    double* beh = gb.row(ix.beh_row);
    for (int j = 0; j < d_beh; ++j) beh[j] += src[j];
  }
}

double DmginModel::accumulate_gradient(const GroupedSample& gs, double grad_scale) {
  Forward fw;
  double p = run_forward(gs, &fw);
  double dlogit = (p - double(gs.label)) * grad_scale;

  // fuse_backward and the attention backwards accumulate, so the slots must
  // be sized up front.
  std::vector<double> dr_long(static_cast<size_t>(cfg_.d_g()), 0.0);
  std::vector<double> dr_short(static_cast<size_t>(cfg_.d()), 0.0);
  std::vector<double> daux(static_cast<size_t>(cfg_.d_aux()), 0.0);
  std::vector<double> de_cand(static_cast<size_t>(cfg_.d_g()), 0.0);
  fuse_backward(fw.fuse, dlogit, params_.value("head.w1"), params_.value("head.b1"),
                params_.value("head.w2"), params_.value("head.b2"), &params_.grad("head.w1"),
                &params_.grad("head.b1"), &params_.grad("head.w2"), &params_.grad("head.b2"),
                &dr_long, &dr_short, &daux, &de_cand);

  {
    Matrix& gp = params_.grad("emb.profile");
    Matrix& gh = params_.grad("emb.hour");
    double* pr = gp.row(fw.profile_row);
    for (int j = 0; j < cfg_.d_profile; ++j) pr[j] += daux[size_t(j)];
    double* hr = gh.row(fw.hour_row);
    for (int j = 0; j < cfg_.d_hour; ++j) hr[j] += daux[size_t(cfg_.d_profile + j)];
  }

  Matrix drecent = short_term_backward(fw.st, dr_short, params_.value("cagam.sq"),
                                       params_.value("cagam.sk"), params_.value("cagam.sv"),
                                       &params_.grad("cagam.sq"), &params_.grad("cagam.sk"),
                                       &params_.grad("cagam.sv"), &de_cand);
  if (drecent.rows() > 0) scatter_embed_grads(drecent, fw.recent_idx);

  Matrix dgp = candidate_attention_backward(fw.cand, dr_long, params_.value("cagam.wt"),
                                            params_.value("cagam.wg"),
                                            &params_.grad("cagam.wt"),
                                            &params_.grad("cagam.wg"), &de_cand,
                                            cfg_.top_k - fw.n_real);

  {
    Matrix& gc = params_.grad("emb.cand");
    double* row = gc.row(fw.cand_row);
    for (int j = 0; j < cfg_.d_g(); ++j) row[j] += de_cand[size_t(j)];
  }

  std::vector<HstuWeights> blocks = block_weights();
  std::vector<HstuGrads> grads;
  grads.reserve(static_cast<size_t>(cfg_.n_blocks));
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    grads.push_back(HstuGrads{&params_.grad(block_name(i, "w1")),
                              &params_.grad(block_name(i, "b1")),
                              &params_.grad(block_name(i, "w2")),
                              &params_.grad(block_name(i, "b2")),
                              &params_.grad(block_name(i, "bias"))});
  }
  Matrix dg = stack_backward(fw.stack, dgp, blocks, grads);

  const int d = cfg_.d();
  Matrix& g_stat_w = params_.grad("igiem.stat_w");
  Matrix& g_stat_b = params_.grad("igiem.stat_b");
  for (int s = 0; s < fw.n_real; ++s) {
    const double* row = dg.row(s);
    Forward::GroupFwd& gf = fw.groups[size_t(s)];
    if (!cfg_.disable_stats) {
      for (int i = 0; i < StatVector::kDim; ++i) {
        double xi = gf.statx[size_t(i)];
        if (xi == 0.0) continue;
        double* wrow = g_stat_w.row(i);
        for (int j = 0; j < cfg_.d_stat; ++j) wrow[j] += xi * row[d + j];
      }
      double* brow = g_stat_b.row(0);
      for (int j = 0; j < cfg_.d_stat; ++j) brow[j] += row[d + j];
    }
    std::vector<double> ddyna(row, row + d);
    Matrix de;
    if (cfg_.disable_behavior_evolution) {
      int m = gf.e.rows();
      de = Matrix(m, d);
      for (int r = 0; r < m; ++r) {
        double* dst = de.row(r);
        for (int j = 0; j < d; ++j) dst[j] = ddyna[size_t(j)] / double(m);
      }
    } else {
      de = intra_group_mhsa_backward(gf.mhsa, ddyna, params_.value("igiem.wq"),
                                     params_.value("igiem.wk"), params_.value("igiem.wv"),
                                     params_.value("igiem.wo"), &params_.grad("igiem.wq"),
                                     &params_.grad("igiem.wk"), &params_.grad("igiem.wv"),
                                     &params_.grad("igiem.wo"));
    }
    scatter_embed_grads(de, gf.idx);
  }
  return p;
}

// ---- BaselineModel ----------------------------------------------------------

struct BaselineModel::Forward {
  Matrix e;  // pooled-window embeddings [m × d]
  std::vector<EmbedIndices> idx;
  int cand_row = 0, profile_row = 0, hour_row = 0;
  std::vector<double> e_cand, aux;
  FuseCache fuse;
};

BaselineModel::BaselineModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  validate_config(cfg_);
  const int d = cfg_.d();
  const int d_g = cfg_.d_g();
  add_weight(params_, "emb.beh", cfg_.n_behaviors + 1, cfg_.d_beh, seed);
  add_weight(params_, "emb.cand", cfg_.n_items + 1, d_g, seed);
  add_weight(params_, "emb.hour", cfg_.n_hour_buckets, cfg_.d_hour, seed);
  add_weight(params_, "emb.item", cfg_.n_items + 1, cfg_.d_item, seed);
  add_weight(params_, "emb.loc", cfg_.n_locations + 1, cfg_.d_loc, seed);
  add_weight(params_, "emb.profile", cfg_.n_profiles, cfg_.d_profile, seed);
  add_weight(params_, "emb.time", cfg_.n_time_buckets, cfg_.d_time, seed);
  add_weight(params_, "head.w1", d + cfg_.d_aux() + d_g, cfg_.fusion_hidden, seed);
  add_bias(params_, "head.b1", cfg_.fusion_hidden);
  add_weight(params_, "head.w2", cfg_.fusion_hidden, 1, seed);
  add_bias(params_, "head.b2", 1);
}

double BaselineModel::run_forward(const GroupedSample& gs, Forward* fw) const {
  const int d = cfg_.d();
  EmbedTables t{&params_.value("emb.item"), &params_.value("emb.time"),
                &params_.value("emb.loc"), &params_.value("emb.beh")};
  int m = int(gs.baseline_window.size());
  fw->e = Matrix(m, d);
  fw->idx.resize(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    behavior_embed(gs.baseline_window[size_t(i)], gs.request_time, t, fw->e.row(i));
    fw->idx[size_t(i)] = embed_indices(gs.baseline_window[size_t(i)], gs.request_time, t);
  }
  std::vector<double> pooled(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < m; ++i) {
    const double* row = fw->e.row(i);
    for (int j = 0; j < d; ++j) pooled[size_t(j)] += row[j];
  }
  if (m > 0) {
    for (int j = 0; j < d; ++j) pooled[size_t(j)] /= double(m);
  }

  const Matrix& cand_table = params_.value("emb.cand");
  fw->cand_row = (gs.candidate < uint64_t(cand_table.rows())) ? int(gs.candidate) : 0;
  fw->e_cand.assign(cand_table.row(fw->cand_row), cand_table.row(fw->cand_row) + cand_table.cols());

  check_arg(gs.aux_hour >= 0 && gs.aux_hour < 24, "baseline: hour out of range");
  fw->profile_row = gs.aux_profile % cfg_.n_profiles;
  fw->hour_row = gs.aux_hour * cfg_.n_hour_buckets / 24;
  const Matrix& pt = params_.value("emb.profile");
  const Matrix& ht = params_.value("emb.hour");
  fw->aux.clear();
  fw->aux.insert(fw->aux.end(), pt.row(fw->profile_row), pt.row(fw->profile_row) + pt.cols());
  fw->aux.insert(fw->aux.end(), ht.row(fw->hour_row), ht.row(fw->hour_row) + ht.cols());

  std::vector<double> empty;
  return fuse_and_predict(pooled, empty, fw->aux, fw->e_cand, params_.value("head.w1"),
                          params_.value("head.b1"), params_.value("head.w2"),
                          params_.value("head.b2"), &fw->fuse);
}

double BaselineModel::predict(const GroupedSample& gs) const {
  Forward fw;
  return run_forward(gs, &fw);
}

double BaselineModel::accumulate_gradient(const GroupedSample& gs, double grad_scale) {
  Forward fw;
  double p = run_forward(gs, &fw);
  double dlogit = (p - double(gs.label)) * grad_scale;

  std::vector<double> dpooled(static_cast<size_t>(cfg_.d()), 0.0);
  std::vector<double> dr_short;  // the baseline feeds no short-term segment
  std::vector<double> daux(static_cast<size_t>(cfg_.d_aux()), 0.0);
  std::vector<double> de_cand(static_cast<size_t>(cfg_.d_g()), 0.0);
  fuse_backward(fw.fuse, dlogit, params_.value("head.w1"), params_.value("head.b1"),
                params_.value("head.w2"), params_.value("head.b2"), &params_.grad("head.w1"),
                &params_.grad("head.b1"), &params_.grad("head.w2"), &params_.grad("head.b2"),
                &dpooled, &dr_short, &daux, &de_cand);

  {
    double* pr = params_.grad("emb.profile").row(fw.profile_row);
    for (int j = 0; j < cfg_.d_profile; ++j) pr[j] += daux[size_t(j)];
    double* hr = params_.grad("emb.hour").row(fw.hour_row);
    for (int j = 0; j < cfg_.d_hour; ++j) hr[j] += daux[size_t(cfg_.d_profile + j)];
    double* cr = params_.grad("emb.cand").row(fw.cand_row);
    for (int j = 0; j < cfg_.d_g(); ++j) cr[j] += de_cand[size_t(j)];
  }

  int m = fw.e.rows();
  if (m > 0) {
    const int d = cfg_.d();
    Matrix& gi = params_.grad("emb.item");
    Matrix& gt = params_.grad("emb.time");
    Matrix& gl = params_.grad("emb.loc");
    Matrix& gb = params_.grad("emb.beh");
    for (int r = 0; r < m; ++r) {
      const EmbedIndices& ix = fw.idx[size_t(r)];
      int off = 0;
      double* item = gi.row(ix.item_row);
      for (int j = 0; j < cfg_.d_item; ++j) item[j] += dpooled[size_t(off + j)] / double(m);
      off += cfg_.d_item;
      double* time = gt.row(ix.time_row);
      for (int j = 0; j < cfg_.d_time; ++j) time[j] += dpooled[size_t(off + j)] / double(m);
      off += cfg_.d_time;
      double* loc = gl.row(ix.loc_row);
      for (int j = 0; j < cfg_.d_loc; ++j) loc[j] += dpooled[size_t(off + j)] / double(m);
      off += cfg_.d_loc;
      double* beh = gb.row(ix.beh_row);
      for (int j = 0; j < cfg_.d_beh; ++j) beh[j] += dpooled[size_t(off + j)] / double(m);
      (void)d;
    }
  }
  return p;
}

}  // namespace dmgin
