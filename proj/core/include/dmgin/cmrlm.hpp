#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmgin/matrix.hpp"
#include "dmgin/params.hpp"

namespace dmgin {

// One entity's two synthetic modality views.
struct ModalityPair {
  uint64_t entity_id = 0;
  std::vector<double> text_features;
  std::vector<double> image_features;
};

struct CmrlmConfig {
  int d_txt = 12;
  int d_img = 12;
  int d_emb = 16;
  int hidden = 32;
  double lr = 3e-3;
  int epochs = 30;
  int batch_size = 64;
  double temp_init = 0.07;
};

// Dual-tower encoder. Each tower is linear -> SiLU -> linear with the output
// L2-normalized onto the unit sphere; temperature is a learnable scalar
// clamped to [0.01, 1.0] after every optimizer step.
class TowerModel {
 public:
  TowerModel() = default;
  TowerModel(const CmrlmConfig& cfg, uint64_t seed);

  enum class Side { kText, kImage };

  // Single vector -> unit embedding. Throws on dim mismatch or a zero
  // pre-normalization vector.
  std::vector<double> encode(Side side, const std::vector<double>& features) const;

  // Batch forward: rows of x -> unit rows. Caches for backward when asked.
  struct TowerCache {
    Matrix x, z1, h, e_raw, e;
    std::vector<double> norms;
  };
  Matrix encode_batch(Side side, const Matrix& x, TowerCache* cache = nullptr) const;
  // Accumulates parameter grads for one tower given d(loss)/d(unit rows).
  void encode_backward(Side side, const TowerCache& cache, const Matrix& de);

  double temperature() const;
  void clamp_temperature();

  // Forward symmetric InfoNCE over a batch of aligned pairs; accumulates all
  // grads (towers + temperature) when with_grad.
  double contrastive_batch(const Matrix& x_txt, const Matrix& x_img, bool with_grad);

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const CmrlmConfig& config() const { return cfg_; }
  void set_config(const CmrlmConfig& cfg) { cfg_ = cfg; }

 private:
  CmrlmConfig cfg_;
  ParamSet params_;
};

// Symmetric InfoNCE over unit-row matrices: mean of row-wise and column-wise
// cross-entropy on the similarity/temperature matrix, diagonal positives.
// dsim, if given, receives d(loss)/d(similarity logits) for the backward.
double contrastive_loss(const Matrix& text_embs, const Matrix& img_embs,
                        double temperature, Matrix* dsim_logits = nullptr);

struct PretrainReport {
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

TowerModel pretrain(const std::vector<ModalityPair>& pairs, const CmrlmConfig& cfg,
                    uint64_t seed, PretrainReport* report = nullptr);

// Concatenated unit tower outputs, L2-renormalized. One call per entity.
std::vector<double> embed_entity(const TowerModel& tower, const ModalityPair& pair);

// All-entity embedding matrix in pairs order.
Matrix embed_entities(const TowerModel& tower, const std::vector<ModalityPair>& pairs);

// `entity_id<TAB>f1,f2,...` per line, %.17g so reload is exact.
void write_entity_embeddings(const std::string& path,
                             const std::vector<uint64_t>& entity_ids,
                             const Matrix& embeddings);
void read_entity_embeddings(const std::string& path,
                            std::vector<uint64_t>* entity_ids, Matrix* embeddings);

}  // namespace dmgin
