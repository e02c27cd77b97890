#include "dmgin/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dmgin/error.hpp"
#include "dmgin/metrics.hpp"

namespace dmgin {

namespace {

double clamp_prob(double p) {
  const double lo = 1e-12;
  return std::min(std::max(p, lo), 1.0 - lo);
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void append_csv_row(std::ofstream& f, const std::initializer_list<double>& vals, int epoch) {
  f << epoch;
  char buf[64];
  for (double v : vals) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    f << "," << buf;
  }
  f << "\n";
}

}  // namespace

EvalResult evaluate(const CtrModel& model, const std::vector<GroupedSample>& test) {
  check_arg(!test.empty(), "evaluate: empty test set");
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<uint64_t> users;
  scores.reserve(test.size());
  labels.reserve(test.size());
  users.reserve(test.size());
  for (const GroupedSample& gs : test) {
    double p = model.predict(gs);
    check_invariant(std::isfinite(p), "evaluate: non-finite prediction");
    scores.push_back(clamp_prob(p));
    labels.push_back(gs.label);
    users.push_back(gs.user_id);
  }
  EvalResult r;
  r.loss = bce_loss(scores, labels);
  r.auc = auc(scores, labels);
  r.gauc = gauc(scores, labels, users);
  return r;
}

TrainReport train_model(CtrModel& model, const std::vector<GroupedSample>& train,
                        const std::vector<GroupedSample>& test, const TrainConfig& cfg) {
  check_arg(!train.empty(), "train_model: empty train set");
  check_arg(cfg.epochs >= 0, "train_model: negative epochs");
  check_arg(cfg.batch_size > 0, "train_model: batch_size must be positive");
  check_arg(cfg.lr >= 0.0, "train_model: negative learning rate");
  check_arg(cfg.clip_norm > 0.0, "train_model: clip_norm must be positive");

  TrainReport report;
  Rng order_rng(derive_seed(cfg.seed, "trainer.order"));
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  // Last-good snapshot for divergence rollback.
  ParamSet snapshot = model.params();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double t0 = now_seconds();
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    size_t loss_count = 0;
    bool bad = false;

    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      int bsz = int(end - start);
      model.params().zero_grads();
      double batch_loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        const GroupedSample& gs = train[size_t(order[i])];
        double p = model.accumulate_gradient(gs, 1.0 / double(bsz));
        double pc = clamp_prob(p);
        batch_loss -= gs.label ? std::log(pc) : std::log1p(-pc);
      }
      batch_loss /= double(bsz);
      if (!std::isfinite(batch_loss) || !std::isfinite(model.params().grad_norm())) {
        bad = true;
        break;
      }
      model.params().clip_grads(cfg.clip_norm);
      if (cfg.lr > 0.0) adam_step(model.params(), cfg.lr);
      loss_sum += batch_loss * double(bsz);
      loss_count += size_t(bsz);
    }

    if (bad) {
      model.params() = snapshot;
      report.diverged = true;
      break;
    }

    EvalResult ev = evaluate(model, test);
    EpochRow row;
    row.epoch = epoch;
    row.loss = loss_count ? loss_sum / double(loss_count) : 0.0;
    row.auc = ev.auc;
    row.gauc = ev.gauc;
    row.seconds = now_seconds() - t0;
    report.epochs.push_back(row);
    snapshot = model.params();
  }

  report.final_eval = evaluate(model, test);
  return report;
}

void write_metrics_csv(const std::string& path, const TrainReport& report) {
  std::ofstream f(path, std::ios::binary);
  check_arg(f.good(), "write_metrics_csv: cannot open " + path);
  f << "epoch,loss,auc,gauc\n";
  for (const EpochRow& r : report.epochs) {
    append_csv_row(f, {r.loss, r.auc, r.gauc}, r.epoch);
  }
  check_invariant(f.good(), "write_metrics_csv: write failed");
}

void write_timing_csv(const std::string& path, const TrainReport& report) {
  std::ofstream f(path, std::ios::binary);
  check_arg(f.good(), "write_timing_csv: cannot open " + path);
  f << "epoch,seconds\n";
  for (const EpochRow& r : report.epochs) {
    append_csv_row(f, {r.seconds}, r.epoch);
  }
  check_invariant(f.good(), "write_timing_csv: write failed");
}

// ---- pipeline ----------------------------------------------------------------

ModelConfig fill_extents(ModelConfig cfg, const std::vector<uint64_t>& entity_ids,
                         const std::vector<Sample>& train, const std::vector<Sample>& test,
                         const CategoryMap& category_map) {
  check_arg(!entity_ids.empty(), "fill_extents: no entities");
  uint64_t max_item = 0;
  for (uint64_t id : entity_ids) max_item = std::max(max_item, id);
  uint64_t max_loc = 0;
  auto scan = [&max_loc](const std::vector<Sample>& samples) {
    const std::vector<BehaviorEvent>* last = nullptr;
    for (const Sample& s : samples) {
      const std::vector<BehaviorEvent>& h = s.history();
      if (&h == last) continue;  // histories are shared per user
      last = &h;
      for (const BehaviorEvent& ev : h) max_loc = std::max(max_loc, ev.location_id);
    }
  };
  scan(train);
  scan(test);
  cfg.n_items = int(max_item);
  cfg.n_locations = int(max_loc);
  cfg.n_behaviors = category_map.size();
  return cfg;
}

PreparedPipeline prepare_pipeline(const PipelineConfig& cfg) {
  check_arg(cfg.n_clusters > 0, "prepare_pipeline: n_clusters must be positive");
  PreparedPipeline prep;

  GenConfig gen = cfg.gen;
  gen.seed = derive_seed(cfg.seed, "pipeline.gen");
  prep.dataset = generate_dataset(gen);
  prep.category_map = CategoryMap::defaults();

  CmrlmConfig pre = cfg.pretrain;
  pre.d_txt = gen.d_txt;
  pre.d_img = gen.d_img;
  prep.tower = pretrain(prep.dataset.entities, pre, derive_seed(cfg.seed, "pipeline.pretrain"));

  Matrix embs = embed_entities(prep.tower, prep.dataset.entities);
  std::vector<uint64_t> ids;
  ids.reserve(prep.dataset.entities.size());
  for (const ModalityPair& p : prep.dataset.entities) ids.push_back(p.entity_id);
  prep.clusters = kmeans_fit(embs, ids, cfg.n_clusters, derive_seed(cfg.seed, "pipeline.cluster"));

  prep.model_cfg = fill_extents(cfg.model, ids, prep.dataset.train, prep.dataset.test,
                                prep.category_map);
  prep.train_cfg = cfg.train;
  prep.train_cfg.seed = derive_seed(cfg.seed, "pipeline.train");
  prep.model_seed = derive_seed(cfg.seed, "pipeline.model");

  prep.train = preprocess_samples(prep.dataset.train, prep.clusters.assignment,
                                  prep.category_map, prep.model_cfg);
  prep.test = preprocess_samples(prep.dataset.test, prep.clusters.assignment,
                                 prep.category_map, prep.model_cfg);
  return prep;
}

DmginModel train_prepared(const PreparedPipeline& prep, const ModelConfig& model_cfg,
                          TrainReport* report) {
  check_arg(model_cfg.n_items == prep.model_cfg.n_items &&
                model_cfg.n_locations == prep.model_cfg.n_locations &&
                model_cfg.n_behaviors == prep.model_cfg.n_behaviors,
            "train_prepared: table extents do not match the prepared data");
  check_arg(model_cfg.top_k <= prep.model_cfg.top_k &&
                model_cfg.cap_b == prep.model_cfg.cap_b,
            "train_prepared: grouping shape differs from the prepared samples");
  DmginModel model(model_cfg, prep.model_seed);
  TrainReport r = train_model(model, prep.train, prep.test, prep.train_cfg);
  if (report) *report = std::move(r);
  return model;
}

BaselineModel train_baseline_prepared(const PreparedPipeline& prep, TrainReport* report) {
  BaselineModel model(prep.model_cfg, derive_seed(prep.model_seed, "baseline"));
  TrainReport r = train_model(model, prep.train, prep.test, prep.train_cfg);
  if (report) *report = std::move(r);
  return model;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PreparedPipeline prep = prepare_pipeline(cfg);
  PipelineResult out;
  train_prepared(prep, prep.model_cfg, &out.report);
  out.dmgin = out.report.final_eval;
  out.bayes_auc = prep.dataset.bayes_auc;
  return out;
}

// ---- experiment runners --------------------------------------------------------

std::vector<AblationRow> run_ablation(const PipelineConfig& cfg) {
  PreparedPipeline prep = prepare_pipeline(cfg);
  std::vector<AblationRow> rows;
  const char* names[3] = {"full", "no_stats", "no_behavior_evolution"};
  for (int v = 0; v < 3; ++v) {
    ModelConfig mc = prep.model_cfg;
    mc.disable_stats = (v == 1);
    mc.disable_behavior_evolution = (v == 2);
    TrainReport report;
    train_prepared(prep, mc, &report);
    rows.push_back(AblationRow{names[v], report.final_eval.auc, report.final_eval.gauc});
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  check_arg(f.good(), "write_ablation_csv: cannot open " + path);
  f << "variant,auc,gauc\n";
  char buf[64];
  for (const AblationRow& r : rows) {
    f << r.variant;
    std::snprintf(buf, sizeof buf, "%.17g", r.auc);
    f << "," << buf;
    std::snprintf(buf, sizeof buf, "%.17g", r.gauc);
    f << "," << buf << "\n";
  }
  check_invariant(f.good(), "write_ablation_csv: write failed");
}

std::vector<DepthRow> run_depth_sweep(const PipelineConfig& cfg,
                                      const std::vector<int>& depths) {
  check_arg(!depths.empty(), "run_depth_sweep: no depths given");
  PreparedPipeline prep = prepare_pipeline(cfg);
  std::vector<DepthRow> rows;
  for (int n : depths) {
    check_arg(n >= 1, "run_depth_sweep: depths must be positive");
    ModelConfig mc = prep.model_cfg;
    mc.n_blocks = n;
    TrainReport report;
    train_prepared(prep, mc, &report);
    rows.push_back(DepthRow{n, report.final_eval.auc, report.final_eval.gauc});
  }
  return rows;
}

void write_depth_csv(const std::string& path, const std::vector<DepthRow>& rows) {
  std::ofstream f(path, std::ios::binary);
  check_arg(f.good(), "write_depth_csv: cannot open " + path);
  f << "layers,auc,gauc\n";
  char buf[64];
  for (const DepthRow& r : rows) {
    f << r.layers;
    std::snprintf(buf, sizeof buf, "%.17g", r.auc);
    f << "," << buf;
    std::snprintf(buf, sizeof buf, "%.17g", r.gauc);
    f << "," << buf << "\n";
  }
  check_invariant(f.good(), "write_depth_csv: write failed");
}

SeedStats aggregate(const std::vector<double>& values) {
  check_arg(!values.empty(), "aggregate: no values");
  SeedStats s;
  s.values = values;
  for (double v : values) s.mean += v;
  s.mean /= double(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / double(values.size()));
  return s;
}

}  // namespace dmgin
