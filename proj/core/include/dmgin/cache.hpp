#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmgin/model.hpp"

namespace dmgin {

// On-disk layout (little-endian, no implicit struct padding):
//   "DMGC" | u16 version | u16 reserved | u32 k | u32 d_g | u64 count | u64 ckpt_hash
//   index: count sorted u64 user ids
//   records, in index order, each fixed-width:
//     u64 user_id | u32 n_groups | f32 gprime[k*d_g] | i64 max_ts[k]
// Values are stored in 32-bit floats; everything else in the pipeline is 64-bit.
struct CacheHeader {
  uint16_t version = 1;
  uint32_t k = 0;
  uint32_t d_g = 0;
  uint64_t count = 0;
  uint64_t ckpt_hash = 0;
};

struct CacheRecord {
  uint64_t user_id = 0;
  uint32_t n_groups = 0;          // leading real rows of gprime
  std::vector<float> gprime;      // k × d_g, row-major, padded rows zero
  std::vector<int64_t> max_ts;    // k, padded zeros
};

class RepresentationCache {
 public:
  // Sorts records by user id and writes the file. Rejects duplicate users and
  // shape mismatches. Byte-identical for identical inputs.
  static void write(const std::string& path, CacheHeader header,
                    std::vector<CacheRecord> records);

  // Full parse with integrity checks; any truncation, trailing bytes, id
  // mismatch, or non-finite stored value raises DependencyError.
  static RepresentationCache open(const std::string& path);

  const CacheHeader& header() const { return header_; }
  const std::vector<uint64_t>& users() const { return index_; }

  // Binary search. Counts one read per call; a missing user returns nullptr
  // rather than raising.
  const CacheRecord* lookup(uint64_t user_id) const;

  int64_t read_count() const { return read_count_; }
  void reset_read_count() { read_count_ = 0; }

 private:
  CacheHeader header_;
  std::vector<uint64_t> index_;
  std::vector<CacheRecord> records_;
  mutable int64_t read_count_ = 0;
};

CacheRecord record_from_state(uint64_t user_id, const DmginModel::UserState& state);
DmginModel::UserState state_from_record(const CacheRecord& rec, const ModelConfig& cfg);

// One record per user session via model.compute_state. Sessions must belong
// to distinct users. ckpt_hash stamps the parameters the states came from.
void precompute_all(const DmginModel& model, const std::vector<GroupedSample>& sessions,
                    uint64_t ckpt_hash, const std::string& path);

struct ServeStats {
  int64_t requests = 0;
  int64_t hits = 0;
  int64_t misses = 0;  // absent user: state recomputed from the request's groups
};

// Scores one request's candidate batch. Exactly one cache lookup per request;
// a hit uses the stored state (cast back to doubles), a miss falls back to a
// full state recompute. Refuses to serve when the model's checkpoint hash
// differs from the one the cache was built against.
std::vector<double> serve_predict(const DmginModel& model, uint64_t model_ckpt_hash,
                                  const RepresentationCache& cache,
                                  const GroupedSample& request,
                                  const std::vector<uint64_t>& candidates,
                                  ServeStats* stats = nullptr);

}  // namespace dmgin
