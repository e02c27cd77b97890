#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmgin/cmrlm.hpp"
#include "dmgin/datagen.hpp"
#include "dmgin/idecm.hpp"
#include "dmgin/model.hpp"

namespace dmgin {

struct TrainConfig {
  int epochs = 8;
  int batch_size = 32;
  double lr = 5e-4;
  double clip_norm = 5.0;
  uint64_t seed = 1;
};

struct EvalResult {
  double loss = 0.0;
  double auc = 0.0;
  double gauc = 0.0;
};

struct EpochRow {
  int epoch = 0;       // 1-based
  double loss = 0.0;   // mean train BCE over the epoch
  double auc = 0.0;    // test metrics after the epoch
  double gauc = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  bool diverged = false;  // non-finite loss hit; params rolled back to last good epoch
  EvalResult final_eval;
};

EvalResult evaluate(const CtrModel& model, const std::vector<GroupedSample>& test);

// Mini-batch Adam with global-norm clipping. A non-finite batch loss rolls the
// parameters back to the last epoch boundary and stops. With lr = 0 the
// parameters are bitwise unchanged.
TrainReport train_model(CtrModel& model, const std::vector<GroupedSample>& train,
                        const std::vector<GroupedSample>& test, const TrainConfig& cfg);

// metrics.csv: epoch,loss,auc,gauc (deterministic). timing.csv: epoch,seconds.
void write_metrics_csv(const std::string& path, const TrainReport& report);
void write_timing_csv(const std::string& path, const TrainReport& report);

// ---- end-to-end pipeline ------------------------------------------------------
// One master seed fans out to data generation, pretraining, clustering, model
// init, and the training shuffle, so two runs with equal (config, seed) match.
struct PipelineConfig {
  GenConfig gen;
  CmrlmConfig pretrain;
  int n_clusters = 12;
  ModelConfig model;  // table extents are filled from the data during prepare
  TrainConfig train;
  uint64_t seed = 1;
};

struct PreparedPipeline {
  Dataset dataset;
  CategoryMap category_map;
  TowerModel tower;
  ClusterModel clusters;
  ModelConfig model_cfg;  // extents filled
  TrainConfig train_cfg;  // seed derived from the master seed
  uint64_t model_seed = 0;
  std::vector<GroupedSample> train;
  std::vector<GroupedSample> test;
};

// Fills n_items / n_locations / n_behaviors from the data itself (max entity
// id, max location id over all events, behavior registry size), so file-fed
// and in-memory runs size their tables identically.
ModelConfig fill_extents(ModelConfig cfg, const std::vector<uint64_t>& entity_ids,
                         const std::vector<Sample>& train, const std::vector<Sample>& test,
                         const CategoryMap& category_map);

// Generate -> pretrain -> cluster -> regroup. The expensive, variant-invariant
// prefix shared by ablations and depth sweeps.
PreparedPipeline prepare_pipeline(const PipelineConfig& cfg);

// Fresh model over prepared data. model_cfg lets callers flip ablation flags
// or depth; its table extents must match the prepared data.
DmginModel train_prepared(const PreparedPipeline& prep, const ModelConfig& model_cfg,
                          TrainReport* report);
BaselineModel train_baseline_prepared(const PreparedPipeline& prep, TrainReport* report);

struct PipelineResult {
  EvalResult dmgin;
  TrainReport report;
  double bayes_auc = 0.0;
};

PipelineResult run_pipeline(const PipelineConfig& cfg);

// ---- experiment runners --------------------------------------------------------
struct AblationRow {
  std::string variant;  // "full", "no_stats", "no_behavior_evolution"
  double auc = 0.0;
  double gauc = 0.0;
};

// Shares one prepared pipeline across the three variants.
std::vector<AblationRow> run_ablation(const PipelineConfig& cfg);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

struct DepthRow {
  int layers = 0;
  double auc = 0.0;
  double gauc = 0.0;
};

std::vector<DepthRow> run_depth_sweep(const PipelineConfig& cfg,
                                      const std::vector<int>& depths);
void write_depth_csv(const std::string& path, const std::vector<DepthRow>& rows);

struct SeedStats {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

SeedStats aggregate(const std::vector<double>& values);

}  // namespace dmgin
