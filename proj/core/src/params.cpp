#include "dmgin/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint and cache formats assume a little-endian host");

namespace dmgin {

ParamEntry& ParamSet::add(const std::string& name, int rows, int cols) {
  return add(name, Matrix(rows, cols));
}

ParamEntry& ParamSet::add(const std::string& name, Matrix init) {
  check_arg(!name.empty(), "ParamSet::add: empty name");
  check_arg(name.find_first_of(" \n\t") == std::string::npos,
            "ParamSet::add: name contains whitespace");
  check_arg(!has(name), "ParamSet::add: duplicate name " + name);
  ParamEntry e;
  e.grad = Matrix(init.rows(), init.cols());
  e.m = Matrix(init.rows(), init.cols());
  e.v = Matrix(init.rows(), init.cols());
  e.value = std::move(init);
  return entries_.emplace(name, std::move(e)).first->second;
}

ParamEntry& ParamSet::get(const std::string& name) {
  auto it = entries_.find(name);
  check_arg(it != entries_.end(), "ParamSet: unknown parameter " + name);
  return it->second;
}

const ParamEntry& ParamSet::get(const std::string& name) const {
  auto it = entries_.find(name);
  check_arg(it != entries_.end(), "ParamSet: unknown parameter " + name);
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

size_t ParamSet::total_size() const {
  size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

void ParamSet::zero_grads() {
  for (auto& [_, e] : entries_) e.grad.zero();
}

double ParamSet::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, e] : entries_)
    for (double g : e.grad.data()) s += g * g;
  return std::sqrt(s);
}

void ParamSet::scale_grads(double s) {
  for (auto& [_, e] : entries_)
    for (double& g : e.grad.data()) g *= s;
}

double ParamSet::clip_grads(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) scale_grads(max_norm / norm);
  return norm;
}

void adam_step(ParamSet& params, double lr, double beta1, double beta2,
               double eps) {
  params.set_step(params.step() + 1);
  const auto t = double(params.step());
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  for (auto& [_, e] : params.entries()) {
    for (size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad.data()[i];
      double& m = e.m.data()[i];
      double& v = e.v.data()[i];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      e.value.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

Matrix xavier_init(int rows, int cols, uint64_t rng_seed) {
  Rng rng(rng_seed);
  const double bound = std::sqrt(6.0 / double(rows + cols));
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

double grad_check(const std::function<double(ParamSet&)>& loss_fn,
                  ParamSet& params, double h) {
  const double l0 = loss_fn(params);
  // Snapshot analytic grads before finite differences overwrite them.
  std::map<std::string, Matrix> analytic;
  for (const auto& [name, e] : params.entries()) analytic.emplace(name, e.grad);

  const double l1 = loss_fn(params);
  check_invariant(l0 == l1, "grad_check: loss_fn is not deterministic");

  double max_rel = 0.0;
  for (auto& [name, e] : params.entries()) {
    for (size_t i = 0; i < e.value.size(); ++i) {
      double& theta = e.value.data()[i];
      const double orig = theta;
      theta = orig + h;
      const double fp = loss_fn(params);
      theta = orig - h;
      const double fm = loss_fn(params);
      theta = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.at(name).data()[i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  // Restore the analytic grads so the caller sees a consistent state.
  for (auto& [name, e] : params.entries()) e.grad = analytic.at(name);
  return max_rel;
}

std::string serialize_checkpoint(const ParamSet& params) {
  std::ostringstream manifest;
  manifest << "DMGINCKPT 1 " << params.entries().size() << "\n";
  for (const auto& [name, e] : params.entries())
    manifest << name << " " << e.value.rows() << " " << e.value.cols() << "\n";
  std::string out = manifest.str();
  for (const auto& [_, e] : params.entries()) {
    const size_t bytes = e.value.size() * sizeof(double);
    const size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, e.value.data().data(), bytes);
  }
  return out;
}

uint64_t save_checkpoint(const ParamSet& params, const std::string& path) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check_arg(f.good(), "save_checkpoint: cannot open " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  f.close();
  check_invariant(f.good(), "save_checkpoint: write failed for " + path);
  return fnv1a64(bytes);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw DependencyError("load_checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  size_t n = 0;
  f >> magic >> version >> n;
  if (magic != "DMGINCKPT" || version != 1)
    throw DependencyError("load_checkpoint: bad header in " + path);
  struct Rec {
    std::string name;
    int rows, cols;
  };
  std::vector<Rec> recs;
  recs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Rec r;
    f >> r.name >> r.rows >> r.cols;
    if (!f.good() || r.rows < 0 || r.cols < 0)
      throw DependencyError("load_checkpoint: truncated manifest in " + path);
    recs.push_back(std::move(r));
  }
  f.get();  // the newline terminating the manifest
  ParamSet params;
  for (const auto& r : recs) {
    ParamEntry& e = params.add(r.name, r.rows, r.cols);
    const size_t bytes = e.value.size() * sizeof(double);
    f.read(reinterpret_cast<char*>(e.value.data().data()), std::streamsize(bytes));
    if (size_t(f.gcount()) != bytes)
      throw DependencyError("load_checkpoint: truncated payload in " + path);
  }
  return params;
}

uint64_t checkpoint_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw DependencyError("checkpoint_hash: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes);
}

}  // namespace dmgin
