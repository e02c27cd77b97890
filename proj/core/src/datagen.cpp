#include "dmgin/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace dmgin {

namespace {

using nlohmann::json;

constexpr int kNumProfiles = 8;
constexpr int64_t kDay = 86400;
// History must end before the train request window so every impression of a
// user shares one full history.
constexpr int64_t kHistoryGapDays = 9;

struct BehaviorDist {
  std::vector<std::string> names;
  std::vector<double> cum;  // cumulative probabilities
};

BehaviorDist default_behavior_dist() {
  BehaviorDist d;
  const std::pair<const char*, double> table[] = {
      {"click", 0.35},        {"browse_dishes", 0.30}, {"view_comments", 0.05},
      {"add_to_cart", 0.10},  {"add_to_favorite", 0.05}, {"order", 0.10},
      {"dislike", 0.05},
  };
  double acc = 0.0;
  for (const auto& [name, p] : table) {
    acc += p;
    d.names.push_back(name);
    d.cum.push_back(acc);
  }
  d.cum.back() = 1.0;
  return d;
}

int draw_categorical(const std::vector<double>& cum, Rng& rng) {
  const double u = rng.uniform();
  return int(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
}

// Inverse-CDF table for P(rank) ∝ rank^-s over ranks 1..m.
std::vector<double> zipf_cdf(int m, double s) {
  std::vector<double> cum(static_cast<size_t>(m));
  double acc = 0.0;
  for (int r = 1; r <= m; ++r) {
    acc += std::pow(double(r), -s);
    cum[size_t(r - 1)] = acc;
  }
  for (double& v : cum) v /= acc;
  cum.back() = 1.0;
  return cum;
}

int64_t draw_time(int64_t lo, int64_t hi, Rng& rng) {
  check_arg(hi > lo, "draw_time: empty window");
  return lo + int64_t(rng.uniform() * double(hi - lo));
}

double two_level_auc(int64_t pos_hi, int64_t pos_lo, int64_t neg_hi, int64_t neg_lo) {
  const int64_t pos = pos_hi + pos_lo, neg = neg_hi + neg_lo;
  check_invariant(pos > 0 && neg > 0, "ground truth: test set has a single class");
  const double a = double(pos_hi) / double(pos);  // P(positive scored high)
  const double b = double(neg_hi) / double(neg);  // P(negative scored high)
  return a * (1.0 - b) + 0.5 * (a * b + (1.0 - a) * (1.0 - b));
}

}  // namespace

Dataset generate_dataset(const GenConfig& cfg) {
  check_arg(cfg.n_users >= 1 && cfg.n_entities >= 1 && cfg.n_archetypes >= 1,
            "generate_dataset: counts must be positive");
  check_arg(cfg.n_entities >= cfg.n_archetypes, "generate_dataset: need entities >= archetypes");
  check_arg(cfg.events_min >= 1 && cfg.events_max >= cfg.events_min,
            "generate_dataset: bad events range");
  check_arg(cfg.p_hi > 0.0 && cfg.p_hi < 1.0 && cfg.p_lo > 0.0 && cfg.p_lo < 1.0,
            "generate_dataset: click probabilities must be in (0,1)");
  check_arg(cfg.span > kHistoryGapDays * kDay, "generate_dataset: span too short");
  check_arg(cfg.test_impressions >= 1, "generate_dataset: need test impressions");

  Dataset ds;
  ds.config = cfg;
  const int c = cfg.n_archetypes;

  // Archetype centroids and fixed modality projections.
  Rng world_rng(derive_seed(cfg.seed, "datagen.world"));
  Matrix centroids(c, cfg.d_lat);
  for (auto& v : centroids.data()) v = cfg.archetype_scale * world_rng.normal();
  Matrix m_txt(cfg.d_lat, cfg.d_txt), m_img(cfg.d_lat, cfg.d_img);
  const double proj_scale = 1.0 / std::sqrt(double(cfg.d_lat));
  for (auto& v : m_txt.data()) v = proj_scale * world_rng.normal();
  for (auto& v : m_img.data()) v = proj_scale * world_rng.normal();

  // Entities: round-robin archetypes keep every archetype populated.
  ds.entities.reserve(size_t(cfg.n_entities));
  ds.entity_archetype.reserve(size_t(cfg.n_entities));
  std::vector<std::vector<uint64_t>> arch_entities(static_cast<size_t>(c));
  for (int e = 0; e < cfg.n_entities; ++e) {
    const int arch = e % c;
    std::vector<double> z(size_t(cfg.d_lat));
    for (int j = 0; j < cfg.d_lat; ++j)
      z[size_t(j)] = centroids.at(arch, j) + cfg.latent_noise * world_rng.normal();
    ModalityPair p;
    p.entity_id = uint64_t(e + 1);
    p.text_features.resize(size_t(cfg.d_txt));
    p.image_features.resize(size_t(cfg.d_img));
    for (int j = 0; j < cfg.d_txt; ++j) {
      double s = 0.0;
      for (int i = 0; i < cfg.d_lat; ++i) s += z[size_t(i)] * m_txt.at(i, j);
      p.text_features[size_t(j)] = s + cfg.modality_noise * world_rng.normal();
    }
    for (int j = 0; j < cfg.d_img; ++j) {
      double s = 0.0;
      for (int i = 0; i < cfg.d_lat; ++i) s += z[size_t(i)] * m_img.at(i, j);
      p.image_features[size_t(j)] = s + cfg.modality_noise * world_rng.normal();
    }
    ds.entities.push_back(std::move(p));
    ds.entity_archetype.push_back(arch);
    arch_entities[size_t(arch)].push_back(uint64_t(e + 1));
  }

  // Draw-table order is frequency-sorted; stored ids come from the registry,
  // whose ids follow sorted name order. Translate at emission.
  const BehaviorDist bdist = default_behavior_dist();
  const CategoryMap cmap = CategoryMap::defaults();
  std::vector<int> type_ids;
  for (const auto& name : bdist.names) type_ids.push_back(cmap.require_id(name));
  const int marker_from = int(std::find(bdist.names.begin(), bdist.names.end(),
                                        "browse_dishes") -
                              bdist.names.begin());
  const int marker_to = int(std::find(bdist.names.begin(), bdist.names.end(),
                                      "view_comments") -
                            bdist.names.begin());

  std::vector<std::vector<double>> zipf_by_size(static_cast<size_t>(c));
  for (int a = 0; a < c; ++a)
    zipf_by_size[size_t(a)] = zipf_cdf(int(arch_entities[size_t(a)].size()), cfg.zipf_exponent);

  const int64_t hist_lo = cfg.now - cfg.span;
  const int64_t hist_hi = cfg.now - kHistoryGapDays * kDay;
  const int64_t old_hi = hist_lo + (hist_hi - hist_lo) / 2;
  const int64_t train_lo = cfg.now - 8 * kDay, train_hi = cfg.now - kDay;

  int64_t pos_hi = 0, pos_lo = 0, neg_hi = 0, neg_lo = 0;
  ds.user_top_archetype.assign(size_t(cfg.n_users) + 1, -1);

  for (int u = 1; u <= cfg.n_users; ++u) {
    Rng rng(derive_seed(cfg.seed, "datagen.user." + std::to_string(u)));
    const int top = rng.uniform_int(c);
    ds.user_top_archetype[size_t(u)] = top;
    const int profile = rng.uniform_int(kNumProfiles);

    // Personal permutation per archetype: Zipf rank 1 maps to a user-specific
    // favorite, which is what makes histories user-discriminative.
    std::vector<std::vector<uint64_t>> perm = arch_entities;
    for (auto& lst : perm) rng.shuffle(lst);

    const int n_events = cfg.events_min + rng.uniform_int(cfg.events_max - cfg.events_min + 1);
    auto events = std::make_shared<std::vector<BehaviorEvent>>();
    events->reserve(size_t(n_events));
    std::set<uint64_t> distinct;
    for (int i = 0; i < n_events; ++i) {
      const bool from_top = rng.uniform() < cfg.focus;
      int arch;
      if (from_top || c == 1) {
        arch = top;
      } else {
        arch = (top + 1 + rng.uniform_int(c - 1)) % c;
      }
      const auto& lst = perm[size_t(arch)];
      const auto& cdf = zipf_by_size[size_t(arch)];
      const int rank = int(std::lower_bound(cdf.begin(), cdf.end(), rng.uniform()) - cdf.begin());
      BehaviorEvent ev;
      ev.item_id = lst[size_t(std::min(rank, int(lst.size()) - 1))];
      distinct.insert(ev.item_id);

      const int64_t t_hi = (cfg.long_horizon && from_top) ? old_hi : hist_hi;
      ev.timestamp = draw_time(hist_lo, t_hi, rng);

      int b = draw_categorical(bdist.cum, rng);
      if (from_top && cfg.marker_rate > 0.0 && b == marker_from &&
          rng.uniform() < cfg.marker_rate)
        b = marker_to;  // browse_dishes -> view_comments, same category
      ev.behavior_type = type_ids[size_t(b)];
      ev.location_id = uint64_t(1 + rng.uniform_int(cfg.n_locations));
      ev.price = bdist.names[size_t(b)] == "order"
                     ? double(500 + rng.uniform_int(4501)) / 100.0
                     : 0.0;
      events->push_back(ev);
    }
    std::stable_sort(events->begin(), events->end(),
                     [](const BehaviorEvent& a, const BehaviorEvent& b) {
                       return a.timestamp < b.timestamp;
                     });
    if (n_events >= 1000)
      check_invariant(int64_t(distinct.size()) * 2 <= int64_t(n_events),
                      "generate_dataset: entity reuse too low for compression");

    const int64_t test_req = cfg.now - kDay + rng.uniform_int(int(kDay));
    auto emit = [&](int64_t req, bool is_test) {
      Sample s;
      s.user_id = uint64_t(u);
      s.request_time = req;
      s.aux_hour = int((req / 3600) % 24);
      s.aux_profile = profile;
      s.events = events;
      const bool from_top = rng.uniform() < cfg.match_rate;
      if (from_top) {
        const auto& lst = arch_entities[size_t(top)];
        s.candidate = lst[size_t(rng.uniform_int(int(lst.size())))];
      } else {
        s.candidate = uint64_t(1 + rng.uniform_int(cfg.n_entities));
      }
      const bool is_top = ds.entity_archetype[size_t(s.candidate - 1)] == top;
      const double p = is_top ? cfg.p_hi : cfg.p_lo;
      s.label = rng.uniform() < p ? 1 : 0;
      if (is_test) {
        (s.label ? (is_top ? pos_hi : pos_lo) : (is_top ? neg_hi : neg_lo)) += 1;
        ds.test.push_back(std::move(s));
      } else {
        ds.train.push_back(std::move(s));
      }
    };
    for (int i = 0; i < cfg.train_impressions; ++i)
      emit(draw_time(train_lo, train_hi, rng), false);
    for (int i = 0; i < cfg.test_impressions; ++i) emit(test_req, true);
  }

  ds.bayes_auc = two_level_auc(pos_hi, pos_lo, neg_hi, neg_lo);
  return ds;
}

std::string sample_to_json(const Sample& s, const CategoryMap& category_map) {
  json j;
  j["user"] = s.user_id;
  j["request_time"] = s.request_time;
  j["candidate"] = s.candidate;
  j["label"] = s.label;
  j["aux"] = {{"hour", s.aux_hour}, {"profile", s.aux_profile}};
  json evs = json::array();
  for (const auto& e : s.history()) {
    check_arg(e.behavior_type >= 0 && e.behavior_type < category_map.size(),
              "sample_to_json: behavior type outside registry");
    evs.push_back(json::array({e.item_id, category_map.name_of(e.behavior_type),
                               e.timestamp, e.location_id, e.price}));
  }
  j["events"] = std::move(evs);
  return j.dump();
}

Sample sample_from_json(const std::string& line, const CategoryMap& category_map,
                        size_t lineno) {
  const std::string where = " at line " + std::to_string(lineno);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DependencyError("dataset: invalid JSON" + where + ": " + e.what());
  }
  try {
    Sample s;
    s.user_id = j.at("user").get<uint64_t>();
    s.request_time = j.at("request_time").get<int64_t>();
    s.candidate = j.at("candidate").get<uint64_t>();
    s.label = j.at("label").get<int>();
    if (s.label != 0 && s.label != 1)
      throw DependencyError("dataset: label not in {0,1}" + where);
    const auto& aux = j.at("aux");
    s.aux_hour = aux.at("hour").get<int>();
    s.aux_profile = aux.at("profile").get<int>();
    auto events = std::make_shared<std::vector<BehaviorEvent>>();
    for (const auto& ev : j.at("events")) {
      if (!ev.is_array() || ev.size() != 5)
        throw DependencyError("dataset: event is not a 5-field array" + where);
      BehaviorEvent b;
      b.item_id = ev[0].get<uint64_t>();
      b.behavior_type = category_map.id_of(ev[1].get<std::string>());
      b.timestamp = ev[2].get<int64_t>();
      b.location_id = ev[3].get<uint64_t>();
      b.price = ev[4].get<double>();
      if (b.timestamp >= s.request_time)
        throw DependencyError("dataset: event not before request_time" + where);
      events->push_back(b);
    }
    s.events = std::move(events);
    return s;
  } catch (const json::exception& e) {
    throw DependencyError("dataset: schema violation" + where + ": " + e.what());
  }
}

void for_each_sample(const std::string& path, const CategoryMap& category_map,
                     const std::function<void(Sample&&)>& fn) {
  std::ifstream f(path);
  if (!f.good()) throw DependencyError("dataset: cannot open " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    fn(sample_from_json(line, category_map, lineno));
  }
}

std::vector<Sample> load_samples(const std::string& path, const CategoryMap& category_map) {
  std::vector<Sample> out;
  for_each_sample(path, category_map, [&](Sample&& s) { out.push_back(std::move(s)); });
  if (out.empty()) throw DependencyError("dataset: no samples in " + path);
  return out;
}

void write_dataset(const Dataset& ds, const std::string& dir,
                   const CategoryMap& category_map) {
  std::filesystem::create_directories(dir);
  auto write_split = [&](const std::vector<Sample>& split, const std::string& name) {
    std::ofstream f(dir + "/" + name, std::ios::trunc);
    check_arg(f.good(), "write_dataset: cannot open " + dir + "/" + name);
    for (const auto& s : split) f << sample_to_json(s, category_map) << '\n';
    f.close();
    check_invariant(f.good(), "write_dataset: write failed for " + name);
  };
  write_split(ds.train, "train.jsonl");
  write_split(ds.test, "test.jsonl");

  std::vector<uint64_t> ids;
  Matrix feats(int(ds.entities.size()), ds.config.d_txt + ds.config.d_img);
  for (size_t i = 0; i < ds.entities.size(); ++i) {
    ids.push_back(ds.entities[i].entity_id);
    const auto& p = ds.entities[i];
    std::copy(p.text_features.begin(), p.text_features.end(), feats.row(int(i)));
    std::copy(p.image_features.begin(), p.image_features.end(),
              feats.row(int(i)) + ds.config.d_txt);
  }
  write_entity_embeddings(dir + "/entities.tsv", ids, feats);

  write_ground_truth(dir + "/ground_truth.csv",
                     {ds.bayes_auc, ds.config.p_hi, ds.config.p_lo, ds.config.seed});
}

void write_ground_truth(const std::string& path, const GroundTruth& gt) {
  std::ofstream f(path, std::ios::trunc);
  check_arg(f.good(), "write_ground_truth: cannot open " + path);
  char buf[96];
  f << "bayes_auc,p_hi,p_lo,seed\n";
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,", gt.bayes_auc, gt.p_hi, gt.p_lo);
  f << buf << gt.seed << '\n';
}

GroundTruth read_ground_truth(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw DependencyError("ground_truth: cannot open " + path);
  std::string header, row;
  std::getline(f, header);
  if (header != "bayes_auc,p_hi,p_lo,seed")
    throw DependencyError("ground_truth: unexpected header in " + path);
  std::getline(f, row);
  GroundTruth gt;
  char* end = nullptr;
  const char* p = row.c_str();
  gt.bayes_auc = std::strtod(p, &end);
  check_arg(*end == ',', "ground_truth: bad row");
  gt.p_hi = std::strtod(end + 1, &end);
  check_arg(*end == ',', "ground_truth: bad row");
  gt.p_lo = std::strtod(end + 1, &end);
  check_arg(*end == ',', "ground_truth: bad row");
  gt.seed = std::strtoull(end + 1, &end, 10);
  return gt;
}

void make_blobs(int n_per, int c, int d, double separation, double sigma, uint64_t seed,
                Matrix* points, std::vector<int>* labels) {
  check_arg(n_per >= 1 && c >= 1 && d >= 1, "make_blobs: counts must be positive");
  check_arg(c <= d, "make_blobs: axis-aligned centers need c <= d");
  Rng rng(seed);
  *points = Matrix(n_per * c, d);
  labels->assign(size_t(n_per) * size_t(c), 0);
  int row = 0;
  for (int b = 0; b < c; ++b) {
    for (int i = 0; i < n_per; ++i, ++row) {
      for (int j = 0; j < d; ++j)
        points->at(row, j) = (j == b ? separation : 0.0) + sigma * rng.normal();
      (*labels)[size_t(row)] = b;
    }
  }
}

}  // namespace dmgin
