#include <cmath>
#include <filesystem>

#include "dmgin/model.hpp"
#include "dmgin/trainer.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dmgin;
namespace fs = std::filesystem;

namespace {

ModelConfig micro_model() {
  ModelConfig cfg;
  cfg.d_item = 2;
  cfg.d_time = 2;
  cfg.d_loc = 2;
  cfg.d_beh = 2;  // d = 8
  cfg.n_time_buckets = 4;
  cfg.d_stat = 2;  // d_g = 10
  cfg.heads = 2;
  cfg.d_h = 3;
  cfg.n_blocks = 1;
  cfg.n_gap_buckets = 4;
  cfg.top_k = 3;
  cfg.cap_b = 4;
  cfg.n_s = 3;
  cfg.n_baseline = 6;
  cfg.n_profiles = 3;
  cfg.d_profile = 2;
  cfg.n_hour_buckets = 4;
  cfg.d_hour = 2;
  cfg.fusion_hidden = 5;
  return cfg;
}

struct MicroData {
  Dataset ds;
  CategoryMap cats = CategoryMap::defaults();
  std::map<uint64_t, int> cluster_map;
  ModelConfig cfg;
  std::vector<GroupedSample> train;
  std::vector<GroupedSample> test;
};

MicroData micro_data(uint64_t seed = 5) {
  MicroData d;
  GenConfig gen;
  gen.n_users = 4;
  gen.n_entities = 24;
  gen.n_archetypes = 3;
  gen.events_min = 60;
  gen.events_max = 80;
  gen.train_impressions = 4;
  gen.test_impressions = 2;
  gen.seed = seed;
  d.ds = generate_dataset(gen);
  // Archetypes stand in for fitted clusters; the model only sees the map.
  for (int i = 0; i < gen.n_entities; ++i)
    d.cluster_map[uint64_t(i + 1)] = d.ds.entity_archetype[size_t(i)];

  std::vector<uint64_t> ids;
  for (const ModalityPair& p : d.ds.entities) ids.push_back(p.entity_id);
  d.cfg = fill_extents(micro_model(), ids, d.ds.train, d.ds.test, d.cats);
  d.train = preprocess_samples(d.ds.train, d.cluster_map, d.cats, d.cfg);
  d.test = preprocess_samples(d.ds.test, d.cluster_map, d.cats, d.cfg);
  return d;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("preprocess_sample reorganizes one sample as documented") {
  MicroData d = micro_data();
  const Sample& s = d.ds.train[0];
  const GroupedSample gs = preprocess_sample(s, d.cluster_map, d.cats, d.cfg);

  CHECK(gs.user_id == s.user_id);
  CHECK(gs.candidate == s.candidate);
  CHECK(gs.label == s.label);
  CHECK(int(gs.groups.size()) <= d.cfg.top_k);
  CHECK(gs.n_groups_total >= int(gs.groups.size()));
  REQUIRE(gs.max_ts.size() == gs.groups.size());

  for (size_t i = 0; i < gs.groups.size(); ++i) {
    CHECK(gs.groups[i].max_timestamp == gs.max_ts[i]);
    CHECK(int(gs.groups[i].events.size()) <= d.cfg.cap_b);
    if (i > 0) CHECK(gs.max_ts[i - 1] <= gs.max_ts[i]);
  }

  const auto& h = s.history();
  REQUIRE(int(gs.recent.size()) == std::min<int>(d.cfg.n_s, int(h.size())));
  for (size_t i = 0; i < gs.recent.size(); ++i) {
    const BehaviorEvent& expect = h[h.size() - gs.recent.size() + i];
    CHECK(gs.recent[i].timestamp == expect.timestamp);
    CHECK(gs.recent[i].item_id == expect.item_id);
  }
  CHECK(int(gs.baseline_window.size()) == std::min<int>(d.cfg.n_baseline, int(h.size())));
}

TEST_CASE("model construction is deterministic in the seed") {
  MicroData d = micro_data();
  DmginModel a(d.cfg, 99), b(d.cfg, 99), c(d.cfg, 100);
  for (const std::string& name : a.params().names()) {
    CHECK(oracle::max_abs_diff(a.params().value(name), b.params().value(name)) == 0.0);
  }
  bool any_diff = false;
  for (const std::string& name : a.params().names())
    any_diff = any_diff ||
               oracle::max_abs_diff(a.params().value(name), c.params().value(name)) > 0.0;
  CHECK(any_diff);
}

TEST_CASE("predict decomposes into compute_state plus predict_from_state") {
  MicroData d = micro_data();
  DmginModel model(d.cfg, 7);
  for (const GroupedSample& gs : d.test) {
    const DmginModel::UserState state = model.compute_state(gs);
    CHECK(state.gprime.rows() == d.cfg.top_k);
    CHECK(state.n_real == int(gs.groups.size()));
    CHECK(model.predict(gs) == model.predict_from_state(state, gs));
  }
}

TEST_CASE("predict_batch equals per-candidate scoring") {
  MicroData d = micro_data();
  DmginModel model(d.cfg, 8);
  const GroupedSample& gs = d.test[0];
  const DmginModel::UserState state = model.compute_state(gs);

  std::vector<uint64_t> candidates;
  for (uint64_t c = 1; c <= 12; ++c) candidates.push_back(c);
  const std::vector<double> batch = model.predict_batch(state, gs, candidates);
  REQUIRE(batch.size() == candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    GroupedSample swapped = gs;
    swapped.candidate = candidates[i];
    CHECK(std::fabs(batch[i] - model.predict_from_state(state, swapped)) < 1e-12);
  }
}

TEST_CASE("full model gradient passes finite differences") {
  MicroData d = micro_data();
  DmginModel model(d.cfg, 13);
  // Two users' worth of samples.
  const std::vector<GroupedSample> batch = {d.train[0], d.train[size_t(4)]};
  REQUIRE(batch[0].user_id != batch[1].user_id);

  auto loss_fn = [&](ParamSet& ps) {
    ps.zero_grads();
    double loss = 0.0;
    for (const GroupedSample& gs : batch) {
      const double p = model.accumulate_gradient(gs, 1.0 / double(batch.size()));
      const double pc = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
      loss -= gs.label ? std::log(pc) : std::log1p(-pc);
    }
    return loss / double(batch.size());
  };
  // h = 1e-4: entries whose true gradient is zero (attention over one-event
  // groups) measure pure round-off against the 1e-8 denominator floor, and a
  // wider step keeps that noise an order below the bound.
  CHECK(grad_check(loss_fn, model.params(), 1e-4) < 1e-4);
}

TEST_CASE("baseline model gradient passes finite differences") {
  MicroData d = micro_data();
  BaselineModel model(d.cfg, 14);
  const std::vector<GroupedSample> batch = {d.train[1], d.train[size_t(5)]};

  auto loss_fn = [&](ParamSet& ps) {
    ps.zero_grads();
    double loss = 0.0;
    for (const GroupedSample& gs : batch) {
      const double p = model.accumulate_gradient(gs, 1.0 / double(batch.size()));
      const double pc = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
      loss -= gs.label ? std::log(pc) : std::log1p(-pc);
    }
    return loss / double(batch.size());
  };
  CHECK(grad_check(loss_fn, model.params(), 1e-4) < 1e-4);
}

TEST_CASE("ablation flags disconnect exactly their pathway") {
  MicroData d = micro_data();
  const GroupedSample& gs = d.test[1];

  ModelConfig no_stats = d.cfg;
  no_stats.disable_stats = true;
  DmginModel m1(no_stats, 21);
  const double before1 = m1.predict(gs);
  m1.params().value("igiem.stat_w").fill(3.0);
  m1.params().value("igiem.stat_b").fill(-2.0);
  CHECK(m1.predict(gs) == before1);

  ModelConfig no_evo = d.cfg;
  no_evo.disable_behavior_evolution = true;
  DmginModel m2(no_evo, 21);
  const double before2 = m2.predict(gs);
  m2.params().value("igiem.wq").fill(1.0);
  m2.params().value("igiem.wo").fill(-1.0);
  CHECK(m2.predict(gs) == before2);

  // The full model does react to both pathways.
  DmginModel m3(d.cfg, 21);
  const double base = m3.predict(gs);
  m3.params().value("igiem.stat_w").fill(3.0);
  CHECK(m3.predict(gs) != base);
  DmginModel m4(d.cfg, 21);
  m4.params().value("igiem.wq").fill(1.0);
  CHECK(m4.predict(gs) != base);
}

TEST_CASE("checkpointed parameters restore identical predictions") {
  MicroData d = micro_data();
  DmginModel model(d.cfg, 31);

  const fs::path dir = fs::temp_directory_path() / "dmgin_model_tests";
  fs::create_directories(dir);
  const std::string path = (dir / "ckpt.bin").string();
  save_checkpoint(model.params(), path);

  DmginModel other(d.cfg, 32);  // different init, then overwritten
  other.load_params(load_checkpoint(path));
  for (const GroupedSample& gs : d.test) CHECK(other.predict(gs) == model.predict(gs));
}

TEST_CASE("load_params rejects registry mismatches") {
  MicroData d = micro_data();
  DmginModel model(d.cfg, 33);

  ParamSet wrong_shape;
  for (const std::string& name : model.params().names()) {
    const Matrix& v = model.params().value(name);
    if (name == "igiem.wq")
      wrong_shape.add(name, v.rows() + 1, v.cols());
    else
      wrong_shape.add(name, v.rows(), v.cols());
  }
  CHECK_THROWS_AS(model.load_params(wrong_shape), DependencyError);

  ParamSet missing;
  for (const std::string& name : model.params().names()) {
    if (name == "head.w1") continue;
    const Matrix& v = model.params().value(name);
    missing.add(name, v.rows(), v.cols());
  }
  CHECK_THROWS_AS(model.load_params(missing), DependencyError);

  ParamSet extra = model.params();
  extra.add("rogue.tensor", 1, 1);
  CHECK_THROWS_AS(model.load_params(extra), DependencyError);
}

TEST_CASE("model meta file round-trips the configuration") {
  ModelConfig cfg = micro_model();
  cfg.n_items = 24;
  cfg.n_locations = 20;
  cfg.n_behaviors = 7;
  cfg.disable_stats = true;

  const fs::path dir = fs::temp_directory_path() / "dmgin_model_tests";
  fs::create_directories(dir);
  const std::string path = (dir / "meta.json").string();
  save_model_meta(cfg, path);
  const ModelConfig back = load_model_meta(path);

  CHECK(back.d_item == cfg.d_item);
  CHECK(back.d_time == cfg.d_time);
  CHECK(back.d_loc == cfg.d_loc);
  CHECK(back.d_beh == cfg.d_beh);
  CHECK(back.n_time_buckets == cfg.n_time_buckets);
  CHECK(back.d_stat == cfg.d_stat);
  CHECK(back.heads == cfg.heads);
  CHECK(back.d_h == cfg.d_h);
  CHECK(back.n_blocks == cfg.n_blocks);
  CHECK(back.n_gap_buckets == cfg.n_gap_buckets);
  CHECK(back.top_k == cfg.top_k);
  CHECK(back.cap_b == cfg.cap_b);
  CHECK(back.n_s == cfg.n_s);
  CHECK(back.n_baseline == cfg.n_baseline);
  CHECK(back.n_profiles == cfg.n_profiles);
  CHECK(back.d_profile == cfg.d_profile);
  CHECK(back.n_hour_buckets == cfg.n_hour_buckets);
  CHECK(back.d_hour == cfg.d_hour);
  CHECK(back.fusion_hidden == cfg.fusion_hidden);
  CHECK(back.eps == cfg.eps);
  CHECK(back.n_items == cfg.n_items);
  CHECK(back.n_locations == cfg.n_locations);
  CHECK(back.n_behaviors == cfg.n_behaviors);
  CHECK(back.disable_stats == cfg.disable_stats);
  CHECK(back.disable_behavior_evolution == cfg.disable_behavior_evolution);

  CHECK_THROWS_AS(load_model_meta((dir / "absent.json").string()), DependencyError);
}

TEST_SUITE_END();
