#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dmgin/datagen.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dmgin;
namespace fs = std::filesystem;

namespace {

GenConfig small_cfg() {
  GenConfig cfg;
  cfg.n_users = 6;
  cfg.n_entities = 60;
  cfg.n_archetypes = 4;
  cfg.events_min = 400;
  cfg.events_max = 500;
  cfg.train_impressions = 8;
  cfg.test_impressions = 4;
  cfg.seed = 11;
  return cfg;
}

bool same_events(const std::vector<BehaviorEvent>& a, const std::vector<BehaviorEvent>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].item_id != b[i].item_id || a[i].behavior_type != b[i].behavior_type ||
        a[i].timestamp != b[i].timestamp || a[i].location_id != b[i].location_id ||
        a[i].price != b[i].price)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("datagen");

TEST_CASE("generation is deterministic in its seed") {
  const Dataset a = generate_dataset(small_cfg());
  const Dataset b = generate_dataset(small_cfg());
  REQUIRE(a.train.size() == b.train.size());
  REQUIRE(a.test.size() == b.test.size());
  CHECK(a.bayes_auc == b.bayes_auc);
  CHECK(a.user_top_archetype == b.user_top_archetype);
  CHECK(a.entity_archetype == b.entity_archetype);
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].candidate == b.train[i].candidate);
    CHECK(a.train[i].label == b.train[i].label);
  }
  CHECK(same_events(a.train[0].history(), b.train[0].history()));

  GenConfig other = small_cfg();
  other.seed = 12;
  const Dataset c = generate_dataset(other);
  CHECK(!same_events(a.train[0].history(), c.train[0].history()));
}

TEST_CASE("shape and range invariants hold") {
  const GenConfig cfg = small_cfg();
  const Dataset ds = generate_dataset(cfg);
  CHECK(ds.train.size() == size_t(cfg.n_users * cfg.train_impressions));
  CHECK(ds.test.size() == size_t(cfg.n_users * cfg.test_impressions));
  CHECK(ds.entities.size() == size_t(cfg.n_entities));
  CHECK(ds.entity_archetype.size() == size_t(cfg.n_entities));

  std::set<uint64_t> users;
  for (const Sample& s : ds.train) {
    users.insert(s.user_id);
    CHECK(s.user_id >= 1);
    CHECK(s.user_id <= uint64_t(cfg.n_users));
    CHECK(s.candidate >= 1);
    CHECK(s.candidate <= uint64_t(cfg.n_entities));
    CHECK((s.label == 0 || s.label == 1));
    CHECK(s.aux_hour >= 0);
    CHECK(s.aux_hour < 24);
    CHECK(s.aux_profile >= 0);

    const auto& h = s.history();
    CHECK(int(h.size()) >= cfg.events_min);
    CHECK(int(h.size()) <= cfg.events_max);
    CHECK(std::is_sorted(h.begin(), h.end(), [](const auto& x, const auto& y) {
      return x.timestamp < y.timestamp;
    }));
    for (const BehaviorEvent& e : h) {
      CHECK(e.timestamp >= cfg.now - cfg.span);
      CHECK(e.timestamp < cfg.now);
      CHECK(e.item_id >= 1);
      CHECK(e.item_id <= uint64_t(cfg.n_entities));
      CHECK(e.location_id >= 1);
      CHECK(e.location_id <= uint64_t(cfg.n_locations));
    }
  }
  CHECK(users.size() == size_t(cfg.n_users));

  // A user's samples share one history buffer instead of copying it.
  CHECK(ds.train[0].events.get() == ds.train[1].events.get());

  // Entities carry both modality views at the configured widths.
  for (const ModalityPair& p : ds.entities) {
    CHECK(p.text_features.size() == size_t(cfg.d_txt));
    CHECK(p.image_features.size() == size_t(cfg.d_img));
  }
}

TEST_CASE("zipf reuse concentrates each user on few entities") {
  GenConfig cfg = small_cfg();
  cfg.n_entities = 500;
  cfg.events_min = cfg.events_max = 2000;
  const Dataset ds = generate_dataset(cfg);
  for (int u = 0; u < cfg.n_users; ++u) {
    const auto& h = ds.train[size_t(u * cfg.train_impressions)].history();
    std::map<uint64_t, int> freq;
    for (const BehaviorEvent& e : h) ++freq[e.item_id];
    // 2000 draws over 500 entities stay on a few hundred, with a heavy head:
    // under uniform draws the ten most frequent items would cover ~4%.
    CHECK(freq.size() <= 400);
    CHECK(double(h.size()) / double(freq.size()) >= 5.0);
    std::vector<int> counts;
    for (const auto& [id, n] : freq) counts.push_back(n);
    std::sort(counts.rbegin(), counts.rend());
    int head = 0;
    for (size_t i = 0; i < counts.size() && i < 10; ++i) head += counts[i];
    CHECK(double(head) / double(h.size()) >= 0.25);
  }
}

TEST_CASE("bayes_auc matches pair counting over the optimal scorer") {
  const Dataset ds = generate_dataset(small_cfg());
  std::vector<double> scores;
  std::vector<int> labels;
  for (const Sample& s : ds.test) {
    const int top = ds.user_top_archetype[size_t(s.user_id)];
    const bool match = ds.entity_archetype[size_t(s.candidate - 1)] == top;
    scores.push_back(match ? ds.config.p_hi : ds.config.p_lo);
    labels.push_back(s.label);
  }
  CHECK(ds.bayes_auc ==
        doctest::Approx(oracle::auc_pairs(scores, labels)).epsilon(1e-12));
  CHECK(ds.bayes_auc > 0.5);
}

TEST_CASE("long_horizon confines top-archetype events to the old half") {
  GenConfig cfg = small_cfg();
  cfg.long_horizon = true;
  const Dataset ds = generate_dataset(cfg);
  const int64_t half = cfg.now - cfg.span / 2;
  int old_top = 0, top_total = 0;
  for (int u = 1; u <= cfg.n_users; ++u) {
    const auto& h = ds.train[size_t((u - 1) * cfg.train_impressions)].history();
    const int top = ds.user_top_archetype[size_t(u)];
    for (const BehaviorEvent& e : h) {
      if (ds.entity_archetype[size_t(e.item_id - 1)] != top) continue;
      ++top_total;
      if (e.timestamp < half) ++old_top;
    }
  }
  CHECK(top_total > 0);
  CHECK(old_top == top_total);
}

TEST_CASE("marker swap stays inside one statistics category") {
  const CategoryMap m = CategoryMap::defaults();
  GenConfig cfg = small_cfg();
  cfg.marker_rate = 1.0;
  const Dataset ds = generate_dataset(cfg);
  const int browse = m.require_id("browse_dishes");
  const int view = m.require_id("view_comments");
  CHECK(m.category_of(browse) == m.category_of(view));

  int top_browse = 0, top_view = 0, other_browse = 0;
  for (int u = 1; u <= cfg.n_users; ++u) {
    const auto& h = ds.train[size_t((u - 1) * cfg.train_impressions)].history();
    const int top = ds.user_top_archetype[size_t(u)];
    for (const BehaviorEvent& e : h) {
      const bool is_top = ds.entity_archetype[size_t(e.item_id - 1)] == top;
      if (e.behavior_type == browse) (is_top ? top_browse : other_browse) += 1;
      if (e.behavior_type == view && is_top) ++top_view;
    }
  }
  // Full marker rate leaves no browse events on the preferred archetype but
  // plenty elsewhere.
  CHECK(top_browse == 0);
  CHECK(top_view > 0);
  CHECK(other_browse > 0);
}

TEST_CASE("sample json round-trips every field") {
  const CategoryMap m = CategoryMap::defaults();
  const Dataset ds = generate_dataset(small_cfg());
  const Sample& s = ds.test[3];
  const std::string line = sample_to_json(s, m);
  const Sample back = sample_from_json(line, m, 1);
  CHECK(back.user_id == s.user_id);
  CHECK(back.request_time == s.request_time);
  CHECK(back.candidate == s.candidate);
  CHECK(back.label == s.label);
  CHECK(back.aux_hour == s.aux_hour);
  CHECK(back.aux_profile == s.aux_profile);
  CHECK(same_events(back.history(), s.history()));

  CHECK_THROWS_AS(sample_from_json("{not json", m, 7), DependencyError);
  CHECK_THROWS_AS(sample_from_json("{\"user\": 1}", m, 7), DependencyError);
}

TEST_CASE("dataset files round-trip through write and load") {
  const CategoryMap m = CategoryMap::defaults();
  GenConfig cfg = small_cfg();
  cfg.n_users = 3;
  cfg.events_min = cfg.events_max = 50;
  const Dataset ds = generate_dataset(cfg);

  const fs::path dir = fs::temp_directory_path() / "dmgin_datagen_tests" / "roundtrip";
  fs::create_directories(dir);
  write_dataset(ds, dir.string(), m);
  for (const char* name : {"train.jsonl", "test.jsonl", "entities.tsv", "ground_truth.csv"})
    CHECK(fs::exists(dir / name));

  const std::vector<Sample> train = load_samples((dir / "train.jsonl").string(), m);
  REQUIRE(train.size() == ds.train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].user_id == ds.train[i].user_id);
    CHECK(train[i].candidate == ds.train[i].candidate);
    CHECK(train[i].label == ds.train[i].label);
    CHECK(same_events(train[i].history(), ds.train[i].history()));
  }

  size_t streamed = 0;
  for_each_sample((dir / "test.jsonl").string(), m, [&](Sample&& s) {
    CHECK(same_events(s.history(), ds.test[streamed].history()));
    ++streamed;
  });
  CHECK(streamed == ds.test.size());

  const GroundTruth gt = read_ground_truth((dir / "ground_truth.csv").string());
  CHECK(gt.bayes_auc == ds.bayes_auc);
  CHECK(gt.p_hi == cfg.p_hi);
  CHECK(gt.p_lo == cfg.p_lo);
  CHECK(gt.seed == cfg.seed);
}

TEST_CASE("make_blobs plants separated gaussian clusters") {
  Matrix points;
  std::vector<int> labels;
  make_blobs(50, 3, 4, 10.0, 0.5, 99, &points, &labels);
  REQUIRE(points.rows() == 150);
  REQUIRE(labels.size() == 150);

  // Per-blob means concentrate near the centers, so blobs stay separated.
  std::vector<std::vector<double>> mean(3, std::vector<double>(4, 0.0));
  std::vector<int> count(3, 0);
  for (int i = 0; i < points.rows(); ++i) {
    REQUIRE(labels[size_t(i)] >= 0);
    REQUIRE(labels[size_t(i)] < 3);
    for (int j = 0; j < 4; ++j) mean[size_t(labels[size_t(i)])][size_t(j)] += points.at(i, j);
    ++count[size_t(labels[size_t(i)])];
  }
  for (int c = 0; c < 3; ++c) {
    CHECK(count[size_t(c)] == 50);
    for (double& v : mean[size_t(c)]) v /= 50.0;
  }
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      double dist = 0.0;
      for (int j = 0; j < 4; ++j) {
        const double dv = mean[size_t(a)][size_t(j)] - mean[size_t(b)][size_t(j)];
        dist += dv * dv;
      }
      CHECK(std::sqrt(dist) > 8.0);
    }
}

TEST_SUITE_END();
