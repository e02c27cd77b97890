#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmgin/cmrlm.hpp"
#include "dmgin/igiem.hpp"
#include "dmgin/matrix.hpp"

namespace dmgin {

struct GenConfig {
  int n_users = 50;
  int n_entities = 200;
  int n_archetypes = 6;
  int events_min = 10000;
  int events_max = 10000;
  double zipf_exponent = 1.1;  // per-user entity reuse concentration
  double focus = 0.7;          // P(event drawn from the user's top archetype)
  double p_hi = 0.8;           // click prob, candidate in top archetype
  double p_lo = 0.1;           // click prob otherwise
  double match_rate = 0.5;     // P(candidate sampled from the top archetype)
  int train_impressions = 40;
  int test_impressions = 10;
  int n_locations = 20;
  int d_lat = 8;
  int d_txt = 12;
  int d_img = 12;
  double archetype_scale = 2.0;  // archetype centroid spread
  double latent_noise = 0.25;    // entity latent spread around its centroid
  double modality_noise = 0.1;
  int64_t now = 1700000000;  // request-time anchor, seconds since epoch
  int64_t span = 63072000;   // two years of history
  bool long_horizon = false; // top-archetype events confined to the old half
  // For top-archetype events, probability a browse_dishes draw is swapped to
  // view_comments. Same category either way, so group statistics cannot see
  // the swap; only the behavior-type embedding can.
  double marker_rate = 0.0;
  uint64_t seed = 1;
};

struct Sample {
  uint64_t user_id = 0;
  int64_t request_time = 0;
  uint64_t candidate = 0;
  int label = 0;
  int aux_hour = 0;     // hour-of-day of request_time
  int aux_profile = 0;  // per-user profile id
  // Full history, time-ascending. Shared across a user's impressions so an
  // in-memory dataset costs one copy per user, not per sample.
  std::shared_ptr<const std::vector<BehaviorEvent>> events;

  const std::vector<BehaviorEvent>& history() const {
    static const std::vector<BehaviorEvent> kEmpty;
    return events ? *events : kEmpty;
  }
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<ModalityPair> entities;  // ids 1..n_entities
  std::vector<int> entity_archetype;   // parallel to entities
  std::vector<int> user_top_archetype; // per user id 1..n_users
  double bayes_auc = 0.0;              // optimal-ranker AUC on the emitted test set
  GenConfig config;
};

// Deterministic planted-signal corpus. Each user reuses entities from a
// favored archetype via Zipf draws over a personal permutation, so 10k events
// touch only a few hundred distinct entities. Labels follow the candidate's
// archetype (p_hi when it matches the user's top, else p_lo), which makes the
// optimal AUC a closed-form function of the realized test counts.
Dataset generate_dataset(const GenConfig& cfg);

// train.jsonl, test.jsonl, entities.tsv, ground_truth.csv into dir.
void write_dataset(const Dataset& ds, const std::string& dir,
                   const CategoryMap& category_map);

std::string sample_to_json(const Sample& s, const CategoryMap& category_map);
Sample sample_from_json(const std::string& line, const CategoryMap& category_map,
                        size_t lineno);

// Whole-file load (samples are small; event arrays dominate and stream fine).
std::vector<Sample> load_samples(const std::string& path, const CategoryMap& category_map);

// Streaming variant, constant memory per sample.
void for_each_sample(const std::string& path, const CategoryMap& category_map,
                     const std::function<void(Sample&&)>& fn);

struct GroundTruth {
  double bayes_auc = 0.0;
  double p_hi = 0.0, p_lo = 0.0;
  uint64_t seed = 0;
};
void write_ground_truth(const std::string& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::string& path);

// Isotropic Gaussian blobs for clustering checks: n_per points around each of
// c centers placed at pairwise distance >= separation.
void make_blobs(int n_per, int c, int d, double separation, double sigma, uint64_t seed,
                Matrix* points, std::vector<int>* labels);

}  // namespace dmgin
