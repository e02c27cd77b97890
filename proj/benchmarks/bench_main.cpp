// Microbenchmarks for the kernels on the serving path plus the cached vs
// recomputed scoring loop. Run manually; not part of the ctest suite.
#include <benchmark/benchmark.h>

#include <cstdint>
#include <memory>
#include <set>
#include <vector>

#include "dmgin/cache.hpp"
#include "dmgin/trainer.hpp"

namespace {

using namespace dmgin;

Matrix rand_matrix(int rows, int cols, Rng& rng, double scale = 0.5) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal() * scale;
  return m;
}

void BM_matmul(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(1);
  const Matrix a = rand_matrix(n, n, rng);
  const Matrix b = rand_matrix(n, n, rng);
  for (auto _ : state) {
    Matrix c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 2 * n * int64_t(n) * n);
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_intra_group_mhsa(benchmark::State& state) {
  const int rows = int(state.range(0));
  const int d = 16, heads = 2;
  Rng rng(2);
  const Matrix e = rand_matrix(rows, d, rng);
  const Matrix wq = rand_matrix(d, d, rng), wk = rand_matrix(d, d, rng);
  const Matrix wv = rand_matrix(d, d, rng), wo = rand_matrix(d, d, rng);
  for (auto _ : state) {
    std::vector<double> pooled = intra_group_mhsa(e, rows, wq, wk, wv, wo, heads);
    benchmark::DoNotOptimize(pooled.data());
  }
}
BENCHMARK(BM_intra_group_mhsa)->Arg(8)->Arg(32)->Arg(64);

void BM_hstu_stack(benchmark::State& state) {
  const int rows = int(state.range(0));
  const int d_g = 24, d_h = 16, buckets = 16, blocks_n = 2;
  Rng rng(3);
  const Matrix g = rand_matrix(rows, d_g, rng);
  std::vector<int64_t> ts(size_t(rows), 0);
  for (int i = 0; i < rows; ++i) ts[size_t(i)] = 1700000000 + i * 86400;
  std::vector<Matrix> store;
  store.reserve(size_t(blocks_n) * 5);
  std::vector<HstuWeights> blocks;
  for (int b = 0; b < blocks_n; ++b) {
    store.push_back(rand_matrix(d_g, 4 * d_h, rng));
    store.push_back(rand_matrix(1, 4 * d_h, rng, 0.1));
    store.push_back(rand_matrix(d_h, d_g, rng));
    store.push_back(rand_matrix(1, d_g, rng, 0.1));
    store.push_back(rand_matrix(1, buckets, rng, 0.1));
    const size_t base = store.size() - 5;
    blocks.push_back({&store[base], &store[base + 1], &store[base + 2], &store[base + 3],
                      &store[base + 4]});
  }
  for (auto _ : state) {
    Matrix out = stack_forward(g, rows, ts, blocks, 1e-6);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_hstu_stack)->Arg(16)->Arg(48);

// Shared serving fixture: one small corpus, an initialized model, and a
// precomputed representation cache. Built once, reused by both loops.
struct ServeFixture {
  ModelConfig cfg;
  std::unique_ptr<DmginModel> model;
  std::vector<GroupedSample> sessions;
  std::unique_ptr<RepresentationCache> cache;
  uint64_t hash = 0;
  std::vector<uint64_t> candidates;
};

const ServeFixture& serve_fixture() {
  static const ServeFixture fx = [] {
    ServeFixture f;
    GenConfig gen;
    gen.n_users = 10;
    gen.n_entities = 100;
    gen.events_min = 2000;
    gen.events_max = 2000;
    gen.train_impressions = 2;
    gen.test_impressions = 1;
    gen.seed = 4;
    Dataset ds = generate_dataset(gen);
    const CategoryMap cats = CategoryMap::defaults();

    Matrix feats(int(ds.entities.size()), gen.d_txt + gen.d_img);
    std::vector<uint64_t> ids;
    for (size_t i = 0; i < ds.entities.size(); ++i) {
      ids.push_back(ds.entities[i].entity_id);
      for (int j = 0; j < gen.d_txt; ++j)
        feats.at(int(i), j) = ds.entities[i].text_features[size_t(j)];
      for (int j = 0; j < gen.d_img; ++j)
        feats.at(int(i), gen.d_txt + j) = ds.entities[i].image_features[size_t(j)];
    }
    ClusterModel cm = kmeans_fit(feats, ids, 12, 5);

    f.cfg = fill_extents(ModelConfig{}, ids, ds.train, ds.test, cats);
    f.model = std::make_unique<DmginModel>(f.cfg, 6);

    std::set<uint64_t> seen;
    for (const Sample& s : ds.test) {
      if (!seen.insert(s.user_id).second) continue;
      f.sessions.push_back(preprocess_sample(s, cm.assignment, cats, f.cfg));
    }
    const std::string dir = "bench_serve_cache.bin";
    f.hash = fnv1a64(serialize_checkpoint(f.model->params()));
    precompute_all(*f.model, f.sessions, f.hash, dir);
    f.cache = std::make_unique<RepresentationCache>(RepresentationCache::open(dir));
    for (int i = 0; i < 1024; ++i) f.candidates.push_back(ids[size_t(i) % ids.size()]);
    return f;
  }();
  return fx;
}

void BM_serve_cached(benchmark::State& state) {
  const ServeFixture& f = serve_fixture();
  size_t i = 0;
  for (auto _ : state) {
    const GroupedSample& gs = f.sessions[i++ % f.sessions.size()];
    std::vector<double> p = serve_predict(*f.model, f.hash, *f.cache, gs, f.candidates);
    benchmark::DoNotOptimize(p.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(f.candidates.size()));
}
BENCHMARK(BM_serve_cached);

void BM_serve_recompute(benchmark::State& state) {
  const ServeFixture& f = serve_fixture();
  size_t i = 0;
  for (auto _ : state) {
    const GroupedSample& gs = f.sessions[i++ % f.sessions.size()];
    std::vector<double> p =
        f.model->predict_batch(f.model->compute_state(gs), gs, f.candidates);
    benchmark::DoNotOptimize(p.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(f.candidates.size()));
}
BENCHMARK(BM_serve_recompute);

}  // namespace

BENCHMARK_MAIN();
