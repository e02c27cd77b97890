#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmgin/matrix.hpp"

namespace dmgin {

struct BehaviorEvent {
  uint64_t item_id = 0;
  int behavior_type = -1;  // registry id; -1 = unknown, embeds to reserved row 0
  int64_t timestamp = 0;   // seconds since epoch
  uint64_t location_id = 0;
  double price = 0.0;      // 0 for non-purchase events
};

enum class BehaviorCategory { kStrong = 0, kWeak = 1, kNegative = 2, kPayment = 3 };
inline constexpr int kNumCategories = 4;

// Behavior-type registry plus the type -> category table. Ids are assigned by
// sorted name order so the same config file always yields the same ids.
class CategoryMap {
 public:
  static CategoryMap defaults();
  static CategoryMap load(const std::string& path);
  void save(const std::string& path) const;

  int id_of(const std::string& name) const;  // -1 if unknown
  int require_id(const std::string& name) const;
  const std::string& name_of(int id) const;
  BehaviorCategory category_of(int id) const;
  int size() const { return int(names_.size()); }

  void add(const std::string& name, BehaviorCategory cat);

 private:
  std::vector<std::string> names_;
  std::vector<BehaviorCategory> cats_;
  std::map<std::string, int> ids_;
};

// Per-group statistics, aggregated over the full pre-cap history.
struct StatVector {
  std::array<int64_t, kNumCategories> counts{0, 0, 0, 0};
  double max_time = 0.0;   // largest recency in seconds (now - oldest event)
  double avg_time = 0.0;   // mean recency in seconds
  double avg_price = 0.0;  // mean price over payment-category events, 0 if none

  static constexpr int kDim = kNumCategories + 3;
  std::array<double, kDim> as_array() const {
    return {double(counts[0]), double(counts[1]), double(counts[2]),
            double(counts[3]), max_time,          avg_time,
            avg_price};
  }
};

struct InterestGroup {
  int cluster_id = 0;  // shifted id: 0 = unknown items, fitted cluster c -> c+1
  std::vector<BehaviorEvent> events;  // time-ascending, capped at B most recent
  StatVector stats;                   // computed before the cap
  int64_t max_timestamp = 0;          // pre-cap (cap keeps the most recent, so equal)
  int64_t precap_count = 0;
};

StatVector compute_stats(const std::vector<BehaviorEvent>& events, int64_t now,
                         const CategoryMap& category_map);

// Reorganizes one user's event stream into per-cluster interest groups.
// Unknown items land in reserved cluster 0; stats run over the full history
// before each group is capped to its B most recent events. Output is sorted
// by cluster_id.
std::vector<InterestGroup> group_sequence(const std::vector<BehaviorEvent>& events,
                                          const std::map<uint64_t, int>& cluster_map,
                                          const CategoryMap& category_map,
                                          int64_t now, int cap_b);

// Log-scaled recency bucket: min(n_buckets-1, floor(log1p(max(0,recency))/ln 10)).
int recency_bucket(int64_t recency_seconds, int n_buckets);

struct EmbedTables {
  const Matrix* item;      // [n_items+1 × d_item], row 0 reserved
  const Matrix* time;      // [n_time_buckets × d_time]
  const Matrix* location;  // [n_locations+1 × d_loc], row 0 reserved
  const Matrix* behavior;  // [n_types+1 × d_beh], row 0 reserved
};

struct EmbedIndices {
  int item_row, time_row, loc_row, beh_row;
};

// Table row indices for one event; out-of-range ids collapse to row 0.
EmbedIndices embed_indices(const BehaviorEvent& event, int64_t now, const EmbedTables& t);

// e_b = [item, time-bucket, location, behavior] concatenated, written to out.
void behavior_embed(const BehaviorEvent& event, int64_t now, const EmbedTables& t,
                    double* out);
int behavior_embed_dim(const EmbedTables& t);

// ---- intra-group MHSA ------------------------------------------------------
struct MhsaCache {
  Matrix e, q, k, v, o;        // packed over the n_real leading rows
  std::vector<Matrix> attn;    // per-head softmax matrices
  int n_real = 0, heads = 0;
};

// e holds the group's embedded events in its leading n_real rows (any padded
// tail is ignored). Per-head scaled dot-product attention with scale
// 1/sqrt(d/h), concat, output projection, then mean pooling over real rows.
std::vector<double> intra_group_mhsa(const Matrix& e, int n_real, const Matrix& wq,
                                     const Matrix& wk, const Matrix& wv, const Matrix& wo,
                                     int heads, MhsaCache* cache = nullptr);

// Accumulates weight grads; returns d(loss)/d(e) with the same shape as the
// forward's packed input.
Matrix intra_group_mhsa_backward(const MhsaCache& cache, const std::vector<double>& ddyna,
                                 const Matrix& wq, const Matrix& wk, const Matrix& wv,
                                 const Matrix& wo, Matrix* dwq, Matrix* dwk, Matrix* dwv,
                                 Matrix* dwo);

// ---- top-k selection --------------------------------------------------------
struct TopkResult {
  std::vector<int> indices;  // into the input groups, ascending by max_timestamp
  int n_real = 0;            // selected groups; the rest of k is padding
  int k = 0;
};

// Picks the k most recently touched groups (largest max_timestamp, ties to
// the lower cluster_id), then orders the picks oldest-first.
TopkResult topk_groups(const std::vector<InterestGroup>& groups, int k);

// ---- group representation ---------------------------------------------------
// stat fields -> log1p -> linear [StatVector::kDim × d_stat] + bias, then
// g = [dyna, stat_emb].
std::vector<double> stat_features(const StatVector& stats);
std::vector<double> group_repr(const std::vector<double>& dyna, const StatVector& stats,
                               const Matrix& stat_w, const Matrix& stat_b);

}  // namespace dmgin
