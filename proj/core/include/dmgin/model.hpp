#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmgin/cagam.hpp"
#include "dmgin/datagen.hpp"
#include "dmgin/igiem.hpp"
#include "dmgin/matrix.hpp"
#include "dmgin/params.hpp"
#include "dmgin/tgetm.hpp"

namespace dmgin {

struct ModelConfig {
  // behavior embedding e_b = [item, time bucket, location, behavior type]
  int d_item = 6, d_time = 4, d_loc = 2, d_beh = 4;  // d = 16
  int n_time_buckets = 16;
  int d_stat = 8;  // g_s = [dyna (d), stat_emb (d_stat)], so d_g = d + d_stat
  int heads = 2;   // intra-group MHSA
  int d_h = 16;    // HSTU head width
  int n_blocks = 2;
  int n_gap_buckets = 16;
  int top_k = 16;  // group slots entering the transformer
  int cap_b = 32;  // events kept per group
  int n_s = 10;    // short-term window
  int n_baseline = 50;  // pooled-baseline window
  int n_profiles = 8, d_profile = 4;
  int n_hour_buckets = 8, d_hour = 4;
  int fusion_hidden = 32;
  double eps = 1e-6;
  // Table extents, filled from the dataset / cluster model.
  int n_items = 0;
  int n_locations = 0;
  int n_behaviors = 0;
  // Ablation switches: zero the stat embedding, or replace intra-group
  // attention with a masked mean over e_b.
  bool disable_stats = false;
  bool disable_behavior_evolution = false;

  int d() const { return d_item + d_time + d_loc + d_beh; }
  int d_g() const { return d() + d_stat; }
  int d_aux() const { return d_profile + d_hour; }
};

void save_model_meta(const ModelConfig& cfg, const std::string& path);
ModelConfig load_model_meta(const std::string& path);

// A sample after the model-independent reorganization: top-k interest groups
// (events capped, stats pre-cap), the short-term window, and the baseline
// pooling window. Computed once per sample, reused across epochs.
struct GroupedSample {
  uint64_t user_id = 0;
  int64_t request_time = 0;
  uint64_t candidate = 0;
  int label = 0;
  int aux_hour = 0, aux_profile = 0;
  std::vector<InterestGroup> groups;   // ascending by max_timestamp
  std::vector<int64_t> max_ts;         // per group
  int n_groups_total = 0;              // before top-k selection
  std::vector<BehaviorEvent> recent;   // last n_s events, time-ascending
  std::vector<BehaviorEvent> baseline_window;  // last n_baseline events
};

GroupedSample preprocess_sample(const Sample& s, const std::map<uint64_t, int>& cluster_map,
                                const CategoryMap& category_map, const ModelConfig& cfg);
std::vector<GroupedSample> preprocess_samples(const std::vector<Sample>& samples,
                                              const std::map<uint64_t, int>& cluster_map,
                                              const CategoryMap& category_map,
                                              const ModelConfig& cfg);

// Minimal training surface shared by the full model and the pooled baseline.
class CtrModel {
 public:
  virtual ~CtrModel() = default;
  virtual double predict(const GroupedSample& gs) const = 0;
  // Forward + backward for one sample; adds grad_scale·d(BCE)/dθ into the
  // parameter grads and returns the predicted probability.
  virtual double accumulate_gradient(const GroupedSample& gs, double grad_scale) = 0;
  virtual ParamSet& params() = 0;
  virtual const ParamSet& params() const = 0;
};

class DmginModel : public CtrModel {
 public:
  DmginModel(const ModelConfig& cfg, uint64_t seed);

  // Candidate-independent long-term representation (what the cache stores).
  struct UserState {
    Matrix gprime;                 // [top_k × d_g], padded rows zero
    int n_real = 0;
    std::vector<int64_t> max_ts;   // length top_k, padded zeros
  };
  UserState compute_state(const GroupedSample& gs) const;

  double predict_from_state(const UserState& state, const GroupedSample& gs) const;
  // Batch scoring against one request context: per-request work (projected
  // groups, short-term keys/values, aux) is hoisted out of the per-candidate
  // loop. Used by both the cached and the recompute serving paths.
  std::vector<double> predict_batch(const UserState& state, const GroupedSample& gs,
                                    const std::vector<uint64_t>& candidates) const;

  double predict(const GroupedSample& gs) const override;
  double accumulate_gradient(const GroupedSample& gs, double grad_scale) override;
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }
  const ModelConfig& config() const { return cfg_; }

  // Replaces the parameters with checkpoint contents. Any name or shape
  // mismatch against this model's registry raises DependencyError.
  void load_params(const ParamSet& loaded);

 private:
  struct Forward;
  void build_state(const GroupedSample& gs, Forward* fw) const;
  double run_forward(const GroupedSample& gs, Forward* fw) const;
  EmbedTables tables() const;
  std::vector<HstuWeights> block_weights() const;
  std::vector<double> candidate_embedding(uint64_t candidate, int* row) const;
  std::vector<double> aux_features(const GroupedSample& gs, int* profile_row,
                                   int* hour_row) const;
  Matrix embed_events(const std::vector<BehaviorEvent>& events, int64_t now,
                      std::vector<EmbedIndices>* idx) const;
  void scatter_embed_grads(const Matrix& de, const std::vector<EmbedIndices>& idx);

  ModelConfig cfg_;
  ParamSet params_;
};

// Mean-pooled recent events + candidate + aux through the same fusion head
// shape. The comparator for the long-horizon experiments.
class BaselineModel : public CtrModel {
 public:
  BaselineModel(const ModelConfig& cfg, uint64_t seed);
  double predict(const GroupedSample& gs) const override;
  double accumulate_gradient(const GroupedSample& gs, double grad_scale) override;
  ParamSet& params() override { return params_; }
  const ParamSet& params() const override { return params_; }

 private:
  struct Forward;
  double run_forward(const GroupedSample& gs, Forward* fw) const;
  ModelConfig cfg_;
  ParamSet params_;
};

}  // namespace dmgin
