#include "dmgin/cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "dmgin/error.hpp"

namespace dmgin {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'G', 'C'};
constexpr uint16_t kVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw DependencyError("cache: truncated file " + path_);
    }
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

size_t record_bytes(const CacheHeader& h) {
  return 8 + 4 + 4 * size_t(h.k) * h.d_g + 8 * size_t(h.k);
}

void validate_record_shape(const CacheRecord& rec, const CacheHeader& h) {
  check_arg(rec.gprime.size() == size_t(h.k) * h.d_g,
            "cache: record gprime size does not match header shape");
  check_arg(rec.max_ts.size() == size_t(h.k), "cache: record max_ts size mismatch");
  check_arg(rec.n_groups <= h.k, "cache: n_groups exceeds k");
}

}  // namespace

void RepresentationCache::write(const std::string& path, CacheHeader header,
                                std::vector<CacheRecord> records) {
  check_arg(header.k > 0 && header.d_g > 0, "cache: header shape must be positive");
  header.version = kVersion;
  header.count = records.size();
  std::sort(records.begin(), records.end(),
            [](const CacheRecord& a, const CacheRecord& b) { return a.user_id < b.user_id; });
  for (size_t i = 0; i < records.size(); ++i) {
    validate_record_shape(records[i], header);
    if (i > 0) {
      check_arg(records[i].user_id != records[i - 1].user_id,
                "cache: duplicate user id " + std::to_string(records[i].user_id));
    }
  }

  std::string buf;
  buf.reserve(32 + records.size() * (8 + record_bytes(header)));
  buf.append(kMagic, 4);
  put<uint16_t>(buf, header.version);
  put<uint16_t>(buf, 0);
  put<uint32_t>(buf, header.k);
  put<uint32_t>(buf, header.d_g);
  put<uint64_t>(buf, header.count);
  put<uint64_t>(buf, header.ckpt_hash);
  for (const CacheRecord& r : records) put<uint64_t>(buf, r.user_id);
  for (const CacheRecord& r : records) {
    put<uint64_t>(buf, r.user_id);
    put<uint32_t>(buf, r.n_groups);
    for (float v : r.gprime) put<float>(buf, v);
    for (int64_t t : r.max_ts) put<int64_t>(buf, t);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check_arg(f.good(), "cache: cannot open " + path + " for writing");
  f.write(buf.data(), std::streamsize(buf.size()));
  f.flush();
  check_invariant(f.good(), "cache: write failed for " + path);
}

RepresentationCache RepresentationCache::open(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw DependencyError("cache: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader rd(bytes, path);
  char magic[4];
  for (char& c : magic) c = rd.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw DependencyError("cache: bad magic in " + path);
  }
  RepresentationCache cache;
  cache.header_.version = rd.get<uint16_t>();
  if (cache.header_.version != kVersion) {
    throw DependencyError("cache: unsupported version " +
                          std::to_string(cache.header_.version) + " in " + path);
  }
  uint16_t reserved = rd.get<uint16_t>();
  if (reserved != 0) throw DependencyError("cache: nonzero reserved field in " + path);
  cache.header_.k = rd.get<uint32_t>();
  cache.header_.d_g = rd.get<uint32_t>();
  cache.header_.count = rd.get<uint64_t>();
  cache.header_.ckpt_hash = rd.get<uint64_t>();
  if (cache.header_.k == 0 || cache.header_.d_g == 0) {
    throw DependencyError("cache: degenerate shape in " + path);
  }

  cache.index_.reserve(size_t(cache.header_.count));
  for (uint64_t i = 0; i < cache.header_.count; ++i) {
    cache.index_.push_back(rd.get<uint64_t>());
    if (i > 0 && cache.index_[size_t(i)] <= cache.index_[size_t(i) - 1]) {
      throw DependencyError("cache: index not strictly ascending in " + path);
    }
  }

  const size_t vals = size_t(cache.header_.k) * cache.header_.d_g;
  cache.records_.reserve(size_t(cache.header_.count));
  for (uint64_t i = 0; i < cache.header_.count; ++i) {
    CacheRecord rec;
    rec.user_id = rd.get<uint64_t>();
    if (rec.user_id != cache.index_[size_t(i)]) {
      throw DependencyError("cache: record/index user id mismatch in " + path);
    }
    rec.n_groups = rd.get<uint32_t>();
    if (rec.n_groups > cache.header_.k) {
      throw DependencyError("cache: corrupt record (n_groups > k) in " + path);
    }
    rec.gprime.reserve(vals);
    for (size_t j = 0; j < vals; ++j) {
      float v = rd.get<float>();
      if (!std::isfinite(v)) {
        throw DependencyError("cache: corrupt record (non-finite value) in " + path);
      }
      rec.gprime.push_back(v);
    }
    rec.max_ts.reserve(size_t(cache.header_.k));
    for (uint32_t j = 0; j < cache.header_.k; ++j) rec.max_ts.push_back(rd.get<int64_t>());
    cache.records_.push_back(std::move(rec));
  }
  if (rd.remaining() != 0) {
    throw DependencyError("cache: trailing bytes in " + path);
  }
  return cache;
}

const CacheRecord* RepresentationCache::lookup(uint64_t user_id) const {
  ++read_count_;
  auto it = std::lower_bound(index_.begin(), index_.end(), user_id);
  if (it == index_.end() || *it != user_id) return nullptr;
  return &records_[size_t(it - index_.begin())];
}

CacheRecord record_from_state(uint64_t user_id, const DmginModel::UserState& state) {
  CacheRecord rec;
  rec.user_id = user_id;
  rec.n_groups = uint32_t(state.n_real);
  rec.gprime.reserve(state.gprime.size());
  for (double v : state.gprime.data()) rec.gprime.push_back(float(v));
  rec.max_ts = state.max_ts;
  return rec;
}

DmginModel::UserState state_from_record(const CacheRecord& rec, const ModelConfig& cfg) {
  check_arg(rec.gprime.size() == size_t(cfg.top_k) * cfg.d_g(),
            "state_from_record: record shape does not match the model");
  DmginModel::UserState state;
  state.gprime = Matrix(cfg.top_k, cfg.d_g());
  std::copy(rec.gprime.begin(), rec.gprime.end(), state.gprime.data().begin());
  state.n_real = int(rec.n_groups);
  state.max_ts = rec.max_ts;
  return state;
}

void precompute_all(const DmginModel& model, const std::vector<GroupedSample>& sessions,
                    uint64_t ckpt_hash, const std::string& path) {
  check_arg(!sessions.empty(), "precompute_all: no sessions");
  std::set<uint64_t> seen;
  std::vector<CacheRecord> records;
  records.reserve(sessions.size());
  for (const GroupedSample& gs : sessions) {
    check_arg(seen.insert(gs.user_id).second,
              "precompute_all: duplicate user " + std::to_string(gs.user_id));
    records.push_back(record_from_state(gs.user_id, model.compute_state(gs)));
  }
  CacheHeader header;
  header.k = uint32_t(model.config().top_k);
  header.d_g = uint32_t(model.config().d_g());
  header.ckpt_hash = ckpt_hash;
  RepresentationCache::write(path, header, std::move(records));
}

std::vector<double> serve_predict(const DmginModel& model, uint64_t model_ckpt_hash,
                                  const RepresentationCache& cache,
                                  const GroupedSample& request,
                                  const std::vector<uint64_t>& candidates,
                                  ServeStats* stats) {
  if (cache.header().ckpt_hash != model_ckpt_hash) {
    throw DependencyError("serve_predict: cache was built against a different checkpoint");
  }
  if (stats) ++stats->requests;
  const CacheRecord* rec = cache.lookup(request.user_id);
  DmginModel::UserState state;
  if (rec != nullptr) {
    if (stats) ++stats->hits;
    state = state_from_record(*rec, model.config());
  } else {
    if (stats) ++stats->misses;
    state = model.compute_state(request);
  }
  return model.predict_batch(state, request, candidates);
}

}  // namespace dmgin
