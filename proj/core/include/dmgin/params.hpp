#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dmgin/matrix.hpp"

namespace dmgin {

struct ParamEntry {
  Matrix value;
  Matrix grad;
  Matrix m;  // Adam first moment
  Matrix v;  // Adam second moment
};

// Named parameter tensors with gradients and optimizer state. std::map keys
// give the deterministic name order the checkpoint format relies on.
class ParamSet {
 public:
  ParamEntry& add(const std::string& name, int rows, int cols);
  ParamEntry& add(const std::string& name, Matrix init);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  ParamEntry& get(const std::string& name);
  const ParamEntry& get(const std::string& name) const;
  Matrix& value(const std::string& name) { return get(name).value; }
  const Matrix& value(const std::string& name) const { return get(name).value; }
  Matrix& grad(const std::string& name) { return get(name).grad; }

  std::vector<std::string> names() const;
  size_t total_size() const;

  void zero_grads();
  double grad_norm() const;           // global L2 over all entries
  void scale_grads(double s);
  // Global-norm clipping; returns the pre-clip norm.
  double clip_grads(double max_norm);

  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }

  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, ParamEntry> entries_;
  int64_t step_ = 0;  // shared Adam step counter, incremented per adam_step
};

// Bias-corrected Adam over every entry; increments the shared step counter.
void adam_step(ParamSet& params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

// Uniform in ±sqrt(6/(rows+cols)), deterministic given seed.
Matrix xavier_init(int rows, int cols, uint64_t rng_seed);

// Central-difference check of every analytic gradient in params. loss_fn must
// populate grads as a side effect of returning the loss. Returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8). Throws
// InvariantViolation if two identical evaluations disagree (loss_fn must be
// deterministic for finite differences to mean anything).
double grad_check(const std::function<double(ParamSet&)>& loss_fn,
                  ParamSet& params, double h = 1e-5);

// ---- checkpoints ---------------------------------------------------------
// Text manifest ("DMGINCKPT 1 <n>" then one "name rows cols" line per entry,
// in name order) followed by the raw little-endian 64-bit float payloads in
// the same order. Values only; optimizer state is not persisted.
std::string serialize_checkpoint(const ParamSet& params);
uint64_t save_checkpoint(const ParamSet& params, const std::string& path);  // returns fnv1a64 of bytes
ParamSet load_checkpoint(const std::string& path);
uint64_t checkpoint_hash(const std::string& path);

}  // namespace dmgin
