#include <cmath>

#include "dmgin/igiem.hpp"
#include "dmgin/params.hpp"
#include "dmgin/tgetm.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dmgin;

namespace {

struct BlockParams {
  // Registers one block's tensors in a ParamSet and hands out weight views.
  static void add(ParamSet& p, const std::string& prefix, int d_g, int d_h, int buckets,
                  Rng& rng) {
    p.add(prefix + ".w1", oracle::random_matrix(d_g, 4 * d_h, rng, 0.5));
    p.add(prefix + ".b1", oracle::random_matrix(1, 4 * d_h, rng, 0.1));
    p.add(prefix + ".w2", oracle::random_matrix(d_h, d_g, rng, 0.5));
    p.add(prefix + ".b2", oracle::random_matrix(1, d_g, rng, 0.1));
    p.add(prefix + ".bias", oracle::random_matrix(1, buckets, rng, 0.3));
  }
  static HstuWeights weights(const ParamSet& p, const std::string& prefix) {
    return HstuWeights{&p.value(prefix + ".w1"), &p.value(prefix + ".b1"),
                       &p.value(prefix + ".w2"), &p.value(prefix + ".b2"),
                       &p.value(prefix + ".bias")};
  }
  static HstuGrads grads(ParamSet& p, const std::string& prefix) {
    return HstuGrads{&p.grad(prefix + ".w1"), &p.grad(prefix + ".b1"),
                     &p.grad(prefix + ".w2"), &p.grad(prefix + ".b2"),
                     &p.grad(prefix + ".bias")};
  }
};

std::vector<int64_t> random_ts(int n, Rng& rng) {
  std::vector<int64_t> ts(size_t(n), 0);
  for (int i = 0; i < n; ++i) ts[size_t(i)] = 1000000 + int64_t(rng.uniform_int(5000000));
  return ts;
}

}  // namespace

TEST_SUITE_BEGIN("tgetm");

TEST_CASE("relative_bias reads the gap-bucket table symmetrically") {
  Matrix table(1, 6);
  for (int j = 0; j < 6; ++j) table.at(0, j) = double(j) * 0.25;
  const std::vector<int64_t> ts = {1000, 1000, 1009, 2000000};
  Matrix b = relative_bias(ts, table);
  REQUIRE(b.rows() == 4);
  REQUIRE(b.cols() == 4);
  for (int i = 0; i < 4; ++i) CHECK(b.at(i, i) == table.at(0, 0));  // gap 0
  CHECK(b.at(0, 1) == table.at(0, 0));
  CHECK(b.at(0, 2) == table.at(0, 1));  // gap 9, second decade bucket
  CHECK(b.at(0, 3) == table.at(0, 5));  // huge gap clamps to the last bucket
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(b.at(i, j) == b.at(j, i));
}

TEST_CASE("hstu_forward matches the dense reference") {
  Rng rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const int m = 1 + rng.uniform_int(6);
    const int k = m + rng.uniform_int(3);  // some padded rows
    const int d_g = 7, d_h = 5, buckets = 6;
    ParamSet p;
    BlockParams::add(p, "blk", d_g, d_h, buckets, rng);
    Matrix g = oracle::random_matrix(k, d_g, rng);
    const std::vector<int64_t> ts = random_ts(k, rng);

    Matrix got = hstu_forward(g, m, ts, BlockParams::weights(p, "blk"), 1e-6);
    Matrix want = oracle::hstu_ref(g, m, ts, p.value("blk.w1"), p.value("blk.b1"),
                                   p.value("blk.w2"), p.value("blk.b2"),
                                   p.value("blk.bias"), 1e-6);
    REQUIRE(got.rows() == k);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d_g; ++j)
        CHECK(oracle::rel_err(got.at(i, j), want.at(i, j)) < 1e-12);

    // Rows past n_real are exact zeros regardless of their input contents.
    for (int i = m; i < k; ++i)
      for (int j = 0; j < d_g; ++j) CHECK(got.at(i, j) == 0.0);
  }
}

TEST_CASE("hstu_forward ignores padded input rows") {
  Rng rng(22);
  const int d_g = 5, d_h = 4;
  ParamSet p;
  BlockParams::add(p, "blk", d_g, d_h, 4, rng);
  Matrix g = oracle::random_matrix(5, d_g, rng);
  const std::vector<int64_t> ts = random_ts(5, rng);
  Matrix base = hstu_forward(g, 3, ts, BlockParams::weights(p, "blk"), 1e-6);
  Matrix g2 = g;
  for (int j = 0; j < d_g; ++j) g2.at(4, j) = 1e9;
  Matrix poked = hstu_forward(g2, 3, ts, BlockParams::weights(p, "blk"), 1e-6);
  CHECK(oracle::max_abs_diff(base, poked) == 0.0);
}

TEST_CASE("hstu backward passes finite differences") {
  Rng rng(23);
  const int m = 4, d_g = 5, d_h = 4, buckets = 5;
  ParamSet p;
  BlockParams::add(p, "blk", d_g, d_h, buckets, rng);
  p.add("g", oracle::random_matrix(m, d_g, rng));
  const std::vector<int64_t> ts = random_ts(m, rng);
  Matrix r = oracle::random_matrix(m, d_g, rng);

  auto loss_fn = [&](ParamSet& ps) {
    ps.zero_grads();
    HstuCache cache;
    Matrix out = hstu_forward(ps.value("g"), m, ts, BlockParams::weights(ps, "blk"), 1e-6,
                              &cache);
    double loss = 0.0;
    for (size_t i = 0; i < out.data().size(); ++i) loss += out.data()[i] * r.data()[i];
    Matrix dg = hstu_backward(cache, r, BlockParams::weights(ps, "blk"),
                              BlockParams::grads(ps, "blk"));
    ps.grad("g") = dg;
    return loss;
  };
  CHECK(grad_check(loss_fn, p, 1e-5) < 1e-6);
}

TEST_CASE("stack_forward composes blocks sequentially") {
  Rng rng(24);
  const int m = 3, k = 4, d_g = 6, d_h = 4, buckets = 5;
  ParamSet p;
  BlockParams::add(p, "b0", d_g, d_h, buckets, rng);
  BlockParams::add(p, "b1", d_g, d_h, buckets, rng);
  Matrix g = oracle::random_matrix(k, d_g, rng);
  const std::vector<int64_t> ts = random_ts(k, rng);
  const std::vector<HstuWeights> blocks = {BlockParams::weights(p, "b0"),
                                           BlockParams::weights(p, "b1")};

  Matrix stacked = stack_forward(g, m, ts, blocks, 1e-6);
  Matrix manual = hstu_forward(hstu_forward(g, m, ts, blocks[0], 1e-6), m, ts, blocks[1],
                               1e-6);
  CHECK(oracle::max_abs_diff(stacked, manual) == 0.0);

  // A stack with no blocks is a configuration error, not an identity.
  CHECK_THROWS_AS(stack_forward(g, m, ts, {}, 1e-6), std::invalid_argument);
}

TEST_CASE("stack backward passes finite differences across two blocks") {
  Rng rng(25);
  const int m = 3, d_g = 5, d_h = 3, buckets = 4;
  ParamSet p;
  BlockParams::add(p, "b0", d_g, d_h, buckets, rng);
  BlockParams::add(p, "b1", d_g, d_h, buckets, rng);
  p.add("g", oracle::random_matrix(m, d_g, rng));
  const std::vector<int64_t> ts = random_ts(m, rng);
  Matrix r = oracle::random_matrix(m, d_g, rng);

  auto loss_fn = [&](ParamSet& ps) {
    ps.zero_grads();
    const std::vector<HstuWeights> blocks = {BlockParams::weights(ps, "b0"),
                                             BlockParams::weights(ps, "b1")};
    std::vector<HstuCache> caches;
    Matrix out = stack_forward(ps.value("g"), m, ts, blocks, 1e-6, &caches);
    double loss = 0.0;
    for (size_t i = 0; i < out.data().size(); ++i) loss += out.data()[i] * r.data()[i];
    std::vector<HstuGrads> grads = {BlockParams::grads(ps, "b0"),
                                    BlockParams::grads(ps, "b1")};
    Matrix dg = stack_backward(caches, r, blocks, grads);
    ps.grad("g") = dg;
    return loss;
  };
  // Two stacked blocks compound the central-difference truncation error, so
  // the bound is an order looser than the single-block checks.
  CHECK(grad_check(loss_fn, p, 1e-5) < 1e-5);
}

TEST_SUITE_END();
