#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dmgin/params.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace dmgin;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* leaf) {
  fs::path p = fs::temp_directory_path() / "dmgin_params_tests" / leaf;
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("params");

TEST_CASE("names come back sorted and sizes add up") {
  ParamSet p;
  p.add("zeta", 2, 3);
  p.add("alpha", 1, 4);
  p.add("mid", 2, 2);
  const std::vector<std::string> names = p.names();
  CHECK(names == std::vector<std::string>{"alpha", "mid", "zeta"});
  CHECK(p.total_size() == 6 + 4 + 4);
  CHECK_THROWS_AS(p.add("alpha", 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(p.get("missing"), std::invalid_argument);
}

TEST_CASE("grad norm, scaling and clipping") {
  ParamSet p;
  p.add("a", 1, 2);
  p.add("b", 1, 1);
  p.grad("a").at(0, 0) = 3.0;
  p.grad("a").at(0, 1) = 0.0;
  p.grad("b").at(0, 0) = 4.0;
  CHECK(p.grad_norm() == doctest::Approx(5.0).epsilon(1e-15));

  const double pre = p.clip_grads(2.5);
  CHECK(pre == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(p.grad_norm() == doctest::Approx(2.5).epsilon(1e-12));

  // Under the cap nothing moves.
  const double pre2 = p.clip_grads(10.0);
  CHECK(pre2 == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(p.grad("a").at(0, 0) == doctest::Approx(1.5).epsilon(1e-12));

  p.zero_grads();
  CHECK(p.grad_norm() == 0.0);
}

TEST_CASE("adam matches a scalar reference sequence") {
  ParamSet p;
  p.add("x", 1, 1).value.at(0, 0) = 0.5;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[5] = {1.0, -0.5, 0.25, 2.0, -1.0};

  double x = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    p.grad("x").at(0, 0) = grads[t - 1];
    adam_step(p, lr, b1, b2, eps);

    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);

    CHECK(p.value("x").at(0, 0) == doctest::Approx(x).epsilon(1e-14));
  }
  CHECK(p.step() == 5);
}

TEST_CASE("adam shares one step counter across entries") {
  ParamSet p;
  p.add("a", 1, 1);
  p.add("b", 1, 1);
  p.grad("a").at(0, 0) = 1.0;
  p.grad("b").at(0, 0) = 1.0;
  adam_step(p, 0.1);
  adam_step(p, 0.1);
  CHECK(p.step() == 2);
  // Identical grads and state mean identical trajectories.
  CHECK(p.value("a").at(0, 0) == p.value("b").at(0, 0));
}

TEST_CASE("xavier_init respects its bound and its seed") {
  Matrix a = xavier_init(8, 12, 77);
  Matrix b = xavier_init(8, 12, 77);
  Matrix c = xavier_init(8, 12, 78);
  const double bound = std::sqrt(6.0 / 20.0);
  bool in_bound = true;
  for (double v : a.data()) in_bound = in_bound && std::fabs(v) <= bound;
  CHECK(in_bound);
  CHECK(oracle::max_abs_diff(a, b) == 0.0);
  CHECK(oracle::max_abs_diff(a, c) > 0.0);
}

TEST_CASE("grad_check accepts a correct gradient and flags a broken one") {
  ParamSet p;
  Rng rng(5);
  auto& e = p.add("x", 2, 3);
  for (double& v : e.value.data()) v = rng.normal();

  // loss = 0.5 ||x||^2, grad = x.
  auto good = [](ParamSet& ps) {
    double l = 0.0;
    auto& x = ps.get("x");
    for (size_t i = 0; i < x.value.size(); ++i) {
      l += 0.5 * x.value.data()[i] * x.value.data()[i];
      x.grad.data()[i] = x.value.data()[i];
    }
    return l;
  };
  CHECK(grad_check(good, p) < 1e-7);

  auto broken = [](ParamSet& ps) {
    double l = 0.0;
    auto& x = ps.get("x");
    for (size_t i = 0; i < x.value.size(); ++i) {
      l += 0.5 * x.value.data()[i] * x.value.data()[i];
      x.grad.data()[i] = x.value.data()[i] + 0.25;
    }
    return l;
  };
  CHECK(grad_check(broken, p) > 0.1);
}

TEST_CASE("grad_check rejects a nondeterministic loss") {
  ParamSet p;
  p.add("x", 1, 1).value.at(0, 0) = 1.0;
  int calls = 0;
  auto noisy = [&calls](ParamSet& ps) {
    ps.get("x").grad.at(0, 0) = 1.0;
    return ps.value("x").at(0, 0) + 0.001 * double(calls++);
  };
  CHECK_THROWS_AS(grad_check(noisy, p), InvariantViolation);
}

TEST_CASE("checkpoint round-trips values exactly and hashes its own bytes") {
  ParamSet p;
  Rng rng(31);
  for (const char* name : {"w.out", "a.first", "m.bias"}) {
    auto& e = p.add(name, 2 + rng.uniform_int(3), 1 + rng.uniform_int(4));
    for (double& v : e.value.data()) v = rng.normal();
    for (double& v : e.grad.data()) v = rng.normal();  // must not be persisted
  }
  p.set_step(17);

  const fs::path dir = temp_dir("roundtrip");
  const std::string path = (dir / "ckpt.bin").string();
  const uint64_t h = save_checkpoint(p, path);
  CHECK(h == fnv1a64(serialize_checkpoint(p)));
  CHECK(h == checkpoint_hash(path));

  ParamSet q = load_checkpoint(path);
  CHECK(q.names() == p.names());
  for (const std::string& name : p.names()) {
    CHECK(q.value(name).rows() == p.value(name).rows());
    CHECK(q.value(name).cols() == p.value(name).cols());
    CHECK(oracle::max_abs_diff(q.value(name), p.value(name)) == 0.0);
    // Optimizer state starts fresh on load.
    CHECK(q.get(name).m.size() == q.value(name).size());
    CHECK(q.get(name).grad.data() == std::vector<double>(q.value(name).size(), 0.0));
  }
  CHECK(q.step() == 0);

  // Serialization is deterministic byte for byte.
  CHECK(serialize_checkpoint(p) == serialize_checkpoint(p));
}

TEST_CASE("checkpoint loader rejects damage") {
  ParamSet p;
  p.add("only", 2, 2).value.at(1, 1) = 3.5;
  const fs::path dir = temp_dir("damage");
  const std::string path = (dir / "ckpt.bin").string();
  save_checkpoint(p, path);

  const std::string bytes = slurp(path);

  {  // truncated payload
    std::ofstream f(dir / "trunc.bin", std::ios::binary);
    f.write(bytes.data(), std::streamsize(bytes.size() - 9));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.bin").string()), DependencyError);

  {  // wrong magic
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream f(dir / "magic.bin", std::ios::binary);
    f.write(bad.data(), std::streamsize(bad.size()));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "magic.bin").string()), DependencyError);

  CHECK_THROWS_AS(load_checkpoint((dir / "absent.bin").string()), DependencyError);
}

TEST_SUITE_END();
