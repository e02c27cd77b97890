// Experiment driver: every subcommand reads a key=value config (flags
// override), writes config.resolved plus its artifacts into a run directory,
// and exits 0 ok / 2 config / 3 dependency / 4 invariant.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmgin/cache.hpp"
#include "dmgin/config.hpp"
#include "dmgin/error.hpp"
#include "dmgin/trainer.hpp"

namespace fs = std::filesystem;
using namespace dmgin;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string run_dir;
  std::string seed;  // raw string; empty = not given
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "key=value config file");
  cmd->add_option("--set", args->sets, "override, e.g. --set train.epochs=4")
      ->take_all();
  cmd->add_option("--run-dir", args->run_dir,
                  "output directory (default $DMGIN_RUN_ROOT/<subcommand>)");
  cmd->add_option("--seed", args->seed, "master seed (shorthand for --set seed=N)");
}

RunConfig resolve(const CommonArgs& args, const std::vector<std::string>& extra_sets = {}) {
  ConfigMap map;
  if (!args.config_path.empty()) map = ConfigMap::parse_file(args.config_path);
  for (const std::string& kv : args.sets) map.set_override(kv);
  for (const std::string& kv : extra_sets) map.set_override(kv);
  if (!args.seed.empty()) map.set("seed", args.seed);
  return run_config_from(map);
}

fs::path make_run_dir(const CommonArgs& args, const char* sub) {
  fs::path dir;
  if (!args.run_dir.empty()) {
    dir = args.run_dir;
  } else {
    const char* root = std::getenv("DMGIN_RUN_ROOT");
    dir = fs::path(root != nullptr ? root : "runs") / sub;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

// Tees progress lines to stdout and <run-dir>/log.txt.
class Log {
 public:
  explicit Log(const fs::path& dir) : file_(dir / "log.txt", std::ios::binary) {
    if (!file_.good()) throw ConfigError("cannot open log in " + dir.string());
  }
  void line(const std::string& s) {
    std::cout << s << "\n";
    file_ << s << "\n";
    file_.flush();
  }

 private:
  std::ofstream file_;
};

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  std::ofstream f(dir / "config.resolved", std::ios::binary);
  if (!f.good()) throw ConfigError("cannot write config.resolved in " + dir.string());
  f << render_resolved(cfg);
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double wall_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// ---- shared artifact loaders -------------------------------------------------

std::string need_file(const fs::path& p, const char* hint) {
  if (!fs::exists(p)) {
    throw DependencyError("missing " + p.string() + " (run `" + hint + "` first)");
  }
  return p.string();
}

struct LoadedData {
  CategoryMap category_map;
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<uint64_t> entity_ids;
  Matrix entity_features;
};

LoadedData load_data_dir(const std::string& dir, bool with_train) {
  LoadedData d;
  d.category_map = CategoryMap::load(need_file(fs::path(dir) / "category_map.tsv", "gen-data"));
  if (with_train) {
    d.train = load_samples(need_file(fs::path(dir) / "train.jsonl", "gen-data"), d.category_map);
  }
  d.test = load_samples(need_file(fs::path(dir) / "test.jsonl", "gen-data"), d.category_map);
  read_entity_embeddings(need_file(fs::path(dir) / "entities.tsv", "gen-data"), &d.entity_ids,
                         &d.entity_features);
  return d;
}

struct LoadedModel {
  ModelConfig cfg;
  DmginModel model;
  uint64_t ckpt_hash = 0;
};

LoadedModel load_model_dir(const std::string& dir) {
  ModelConfig cfg = load_model_meta(need_file(fs::path(dir) / "model_meta.json", "train"));
  std::string ckpt = need_file(fs::path(dir) / "checkpoint.bin", "train");
  LoadedModel lm{cfg, DmginModel(cfg, 1), checkpoint_hash(ckpt)};
  lm.model.load_params(load_checkpoint(ckpt));
  return lm;
}

// First test sample per user, jsonl order: the canonical serving session.
std::vector<Sample> serving_sessions(const std::vector<Sample>& test) {
  std::vector<Sample> out;
  std::set<uint64_t> seen;
  for (const Sample& s : test) {
    if (seen.insert(s.user_id).second) out.push_back(s);
  }
  return out;
}

std::vector<uint64_t> candidate_batch(int count, const std::vector<uint64_t>& entity_ids) {
  check_arg(count > 0, "serve.candidates must be positive");
  check_arg(!entity_ids.empty(), "no entities for the candidate batch");
  std::vector<uint64_t> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) out.push_back(entity_ids[size_t(i) % entity_ids.size()]);
  return out;
}

// ---- subcommands ---------------------------------------------------------------

void cmd_gen_data(const CommonArgs& common) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "gen-data");
  write_resolved(dir, rc);
  Log log(dir);

  GenConfig gen = rc.pipeline.gen;
  gen.seed = derive_seed(rc.pipeline.seed, "pipeline.gen");
  log.line("generating dataset: users=" + std::to_string(gen.n_users) +
           " entities=" + std::to_string(gen.n_entities) +
           " events/user=[" + std::to_string(gen.events_min) + "," +
           std::to_string(gen.events_max) + "]");
  Dataset ds = generate_dataset(gen);
  CategoryMap cat = CategoryMap::defaults();
  write_dataset(ds, dir.string(), cat);
  cat.save((dir / "category_map.tsv").string());
  log.line("train samples: " + std::to_string(ds.train.size()));
  log.line("test samples:  " + std::to_string(ds.test.size()));
  log.line("bayes auc:     " + fmt(ds.bayes_auc));
  log.line("wrote train.jsonl test.jsonl entities.tsv ground_truth.csv category_map.tsv");
}

void cmd_pretrain(const CommonArgs& common, const std::string& data_dir) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "pretrain");
  write_resolved(dir, rc);
  Log log(dir);

  std::vector<uint64_t> ids;
  Matrix feats;
  read_entity_embeddings(need_file(fs::path(data_dir) / "entities.tsv", "gen-data"), &ids,
                         &feats);
  const int d_txt = rc.pipeline.gen.d_txt;
  const int d_img = rc.pipeline.gen.d_img;
  if (feats.cols() != d_txt + d_img) {
    throw DependencyError("entities.tsv has " + std::to_string(feats.cols()) +
                          " feature columns, config expects " + std::to_string(d_txt + d_img));
  }
  std::vector<ModalityPair> pairs(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    pairs[i].entity_id = ids[i];
    const double* row = feats.row(int(i));
    pairs[i].text_features.assign(row, row + d_txt);
    pairs[i].image_features.assign(row + d_txt, row + d_txt + d_img);
  }

  CmrlmConfig pc = rc.pipeline.pretrain;
  pc.d_txt = d_txt;
  pc.d_img = d_img;
  log.line("pretraining towers on " + std::to_string(pairs.size()) + " entities, " +
           std::to_string(pc.epochs) + " epochs");
  PretrainReport report;
  TowerModel tower = pretrain(pairs, pc, derive_seed(rc.pipeline.seed, "pipeline.pretrain"),
                              &report);
  log.line("loss " + fmt(report.initial_loss) + " -> " + fmt(report.final_loss));

  Matrix embs = embed_entities(tower, pairs);
  write_entity_embeddings((dir / "embeddings.tsv").string(), ids, embs);
  {
    std::ofstream f(dir / "pretrain_report.csv", std::ios::binary);
    f << "epoch,loss\n";
    for (size_t i = 0; i < report.epoch_loss.size(); ++i) {
      f << (i + 1) << "," << fmt(report.epoch_loss[i], "%.17g") << "\n";
    }
  }
  log.line("wrote embeddings.tsv pretrain_report.csv");
}

void cmd_cluster(const CommonArgs& common, const std::string& data_dir,
                 const std::string& emb_dir) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "cluster");
  write_resolved(dir, rc);
  Log log(dir);

  std::vector<uint64_t> ids;
  Matrix embs;
  read_entity_embeddings(need_file(fs::path(emb_dir) / "embeddings.tsv", "pretrain"), &ids,
                         &embs);
  log.line("kmeans: k=" + std::to_string(rc.pipeline.n_clusters) + " over " +
           std::to_string(ids.size()) + " embeddings");
  ClusterModel cm = kmeans_fit(embs, ids, rc.pipeline.n_clusters,
                               derive_seed(rc.pipeline.seed, "pipeline.cluster"));
  log.line("inertia " + fmt(cm.inertia) + " after " +
           std::to_string(cm.inertia_history.size()) + " recorded passes, repairs=" +
           std::to_string(cm.repairs));
  BalanceReport bal = balance_report(cm);
  log.line("cluster sizes: min=" + std::to_string(bal.min_size) + " max=" +
           std::to_string(bal.max_size) + " cv=" + fmt(bal.cv) +
           (bal.imbalanced ? " (imbalanced)" : ""));

  write_cluster_map((dir / "cluster_map.tsv").string(), cm.assignment);
  export_projection(embs, ids, cm, (dir / "projection.csv").string());
  {
    std::ofstream f(dir / "inertia.csv", std::ios::binary);
    f << "pass,inertia\n";
    for (size_t i = 0; i < cm.inertia_history.size(); ++i) {
      f << (i + 1) << "," << fmt(cm.inertia_history[i], "%.17g") << "\n";
    }
  }
  {
    std::ofstream f(dir / "balance.csv", std::ios::binary);
    f << "cluster_id,size\n";
    for (size_t c = 0; c < bal.sizes.size(); ++c) f << c << "," << bal.sizes[c] << "\n";
  }

  // Per-user group-count histogram over the training users.
  CategoryMap cat =
      CategoryMap::load(need_file(fs::path(data_dir) / "category_map.tsv", "gen-data"));
  std::map<int, int> histogram;
  std::set<uint64_t> seen;
  for_each_sample(need_file(fs::path(data_dir) / "train.jsonl", "gen-data"), cat,
                  [&](Sample&& s) {
                    if (!seen.insert(s.user_id).second) return;
                    auto groups = group_sequence(s.history(), cm.assignment, cat,
                                                 s.request_time, rc.pipeline.model.cap_b);
                    histogram[int(groups.size())] += 1;
                  });
  {
    std::ofstream f(dir / "group_histogram.csv", std::ios::binary);
    f << "n_groups,n_users\n";
    for (const auto& [n, c] : histogram) f << n << "," << c << "\n";
  }
  log.line("wrote cluster_map.tsv projection.csv inertia.csv balance.csv group_histogram.csv");
}

void cmd_train(const CommonArgs& common, const std::string& data_dir,
               const std::string& cluster_dir) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "train");
  write_resolved(dir, rc);
  Log log(dir);

  LoadedData data = load_data_dir(data_dir, true);
  std::map<uint64_t, int> cluster_map =
      read_cluster_map(need_file(fs::path(cluster_dir) / "cluster_map.tsv", "cluster"));

  ModelConfig mc = fill_extents(rc.pipeline.model, data.entity_ids, data.train, data.test,
                                data.category_map);
  log.line("preprocessing " + std::to_string(data.train.size()) + " train / " +
           std::to_string(data.test.size()) + " test samples");
  std::vector<GroupedSample> gtrain =
      preprocess_samples(data.train, cluster_map, data.category_map, mc);
  std::vector<GroupedSample> gtest =
      preprocess_samples(data.test, cluster_map, data.category_map, mc);

  DmginModel model(mc, derive_seed(rc.pipeline.seed, "pipeline.model"));
  TrainConfig tc = rc.pipeline.train;
  tc.seed = derive_seed(rc.pipeline.seed, "pipeline.train");
  log.line("training: epochs=" + std::to_string(tc.epochs) + " batch=" +
           std::to_string(tc.batch_size) + " lr=" + fmt(tc.lr) + " params=" +
           std::to_string(model.params().total_size()));
  TrainReport report = train_model(model, gtrain, gtest, tc);
  for (const EpochRow& r : report.epochs) {
    log.line("epoch " + std::to_string(r.epoch) + ": loss=" + fmt(r.loss) + " auc=" +
             fmt(r.auc) + " gauc=" + fmt(r.gauc) + " (" + fmt(r.seconds, "%.1f") + "s)");
  }
  if (report.diverged) {
    log.line("WARNING: divergence detected; parameters rolled back to the last good epoch");
  }
  log.line("final: loss=" + fmt(report.final_eval.loss) + " auc=" + fmt(report.final_eval.auc) +
           " gauc=" + fmt(report.final_eval.gauc));

  uint64_t hash = save_checkpoint(model.params(), (dir / "checkpoint.bin").string());
  save_model_meta(mc, (dir / "model_meta.json").string());
  write_metrics_csv((dir / "metrics.csv").string(), report);
  write_timing_csv((dir / "timing.csv").string(), report);
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  log.line(std::string("checkpoint hash ") + hex);
  log.line("wrote checkpoint.bin model_meta.json metrics.csv timing.csv");
}

void cmd_eval(const CommonArgs& common, const std::string& data_dir,
              const std::string& cluster_dir, const std::string& model_dir) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "eval");
  write_resolved(dir, rc);
  Log log(dir);

  LoadedData data = load_data_dir(data_dir, false);
  std::map<uint64_t, int> cluster_map =
      read_cluster_map(need_file(fs::path(cluster_dir) / "cluster_map.tsv", "cluster"));
  LoadedModel lm = load_model_dir(model_dir);

  std::vector<GroupedSample> gtest =
      preprocess_samples(data.test, cluster_map, data.category_map, lm.cfg);
  EvalResult ev = evaluate(lm.model, gtest);
  log.line("eval: loss=" + fmt(ev.loss) + " auc=" + fmt(ev.auc) + " gauc=" + fmt(ev.gauc));
  {
    std::ofstream f(dir / "eval.csv", std::ios::binary);
    f << "loss,auc,gauc\n";
    f << fmt(ev.loss, "%.17g") << "," << fmt(ev.auc, "%.17g") << "," << fmt(ev.gauc, "%.17g")
      << "\n";
  }
  log.line("wrote eval.csv");
}

void cmd_ablate(const CommonArgs& common) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "ablate");
  write_resolved(dir, rc);
  Log log(dir);

  log.line("running ablation: full, no_stats, no_behavior_evolution");
  std::vector<AblationRow> rows = run_ablation(rc.pipeline);
  for (const AblationRow& r : rows) {
    log.line(r.variant + ": auc=" + fmt(r.auc) + " gauc=" + fmt(r.gauc));
  }
  write_ablation_csv((dir / "ablation.csv").string(), rows);
  log.line("wrote ablation.csv");
}

void cmd_depth_sweep(const CommonArgs& common, const std::string& layers) {
  std::vector<std::string> extra;
  if (!layers.empty()) extra.push_back("sweep.depths=" + layers);
  RunConfig rc = resolve(common, extra);
  fs::path dir = make_run_dir(common, "depth-sweep");
  write_resolved(dir, rc);
  Log log(dir);

  std::string depth_list;
  for (size_t i = 0; i < rc.sweep_depths.size(); ++i) {
    if (i) depth_list += ",";
    depth_list += std::to_string(rc.sweep_depths[size_t(i)]);
  }
  log.line("depth sweep over layers " + depth_list);
  std::vector<DepthRow> rows = run_depth_sweep(rc.pipeline, rc.sweep_depths);
  for (const DepthRow& r : rows) {
    log.line("layers=" + std::to_string(r.layers) + ": auc=" + fmt(r.auc) + " gauc=" +
             fmt(r.gauc));
  }
  write_depth_csv((dir / "depth_sweep.csv").string(), rows);
  log.line("wrote depth_sweep.csv");
}

void cmd_precompute(const CommonArgs& common, const std::string& data_dir,
                    const std::string& cluster_dir, const std::string& model_dir) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "precompute");
  write_resolved(dir, rc);
  Log log(dir);

  LoadedData data = load_data_dir(data_dir, false);
  std::map<uint64_t, int> cluster_map =
      read_cluster_map(need_file(fs::path(cluster_dir) / "cluster_map.tsv", "cluster"));
  LoadedModel lm = load_model_dir(model_dir);

  std::vector<Sample> sessions = serving_sessions(data.test);
  std::vector<GroupedSample> grouped =
      preprocess_samples(sessions, cluster_map, data.category_map, lm.cfg);
  log.line("precomputing " + std::to_string(grouped.size()) + " user representations");
  precompute_all(lm.model, grouped, lm.ckpt_hash, (dir / "cache.bin").string());
  log.line("cache.bin: " + std::to_string(fs::file_size(dir / "cache.bin")) + " bytes, k=" +
           std::to_string(lm.cfg.top_k) + " d_g=" + std::to_string(lm.cfg.d_g()));
  log.line("wrote cache.bin");
}

void cmd_serve_eval(const CommonArgs& common, const std::string& data_dir,
                    const std::string& cluster_dir, const std::string& model_dir,
                    const std::string& cache_path) {
  RunConfig rc = resolve(common);
  fs::path dir = make_run_dir(common, "serve-eval");
  write_resolved(dir, rc);
  Log log(dir);

  LoadedData data = load_data_dir(data_dir, false);
  std::map<uint64_t, int> cluster_map =
      read_cluster_map(need_file(fs::path(cluster_dir) / "cluster_map.tsv", "cluster"));
  LoadedModel lm = load_model_dir(model_dir);
  RepresentationCache cache =
      RepresentationCache::open(need_file(cache_path, "precompute"));

  std::vector<Sample> sessions = serving_sessions(data.test);
  std::vector<GroupedSample> grouped =
      preprocess_samples(sessions, cluster_map, data.category_map, lm.cfg);
  std::vector<uint64_t> candidates = candidate_batch(rc.serve_candidates, data.entity_ids);
  log.line(std::to_string(grouped.size()) + " requests x " + std::to_string(candidates.size()) +
           " candidates, " + std::to_string(rc.serve_repeats) + " timing repeats");

  // Correctness: cached scores vs recomputing the state from raw history.
  double max_diff = 0.0;
  ServeStats stats;
  for (size_t i = 0; i < grouped.size(); ++i) {
    int64_t reads_before = cache.read_count();
    std::vector<double> cached =
        serve_predict(lm.model, lm.ckpt_hash, cache, grouped[i], candidates, &stats);
    check_invariant(cache.read_count() == reads_before + 1,
                    "serve-eval: expected exactly one cache read per request");
    GroupedSample fresh =
        preprocess_sample(sessions[i], cluster_map, data.category_map, lm.cfg);
    DmginModel::UserState st = lm.model.compute_state(fresh);
    std::vector<double> full = lm.model.predict_batch(st, fresh, candidates);
    for (size_t j = 0; j < candidates.size(); ++j) {
      max_diff = std::max(max_diff, std::abs(cached[j] - full[j]));
    }
  }
  log.line("hits=" + std::to_string(stats.hits) + " misses=" + std::to_string(stats.misses) +
           " max |pCTR diff| = " + fmt(max_diff, "%.3g"));

  // Timing: best-of-N totals for each serving path.
  double cached_s = 1e300, full_s = 1e300;
  for (int rep = 0; rep < rc.serve_repeats; ++rep) {
    double t0 = wall_seconds();
    for (const GroupedSample& gs : grouped) {
      serve_predict(lm.model, lm.ckpt_hash, cache, gs, candidates);
    }
    cached_s = std::min(cached_s, wall_seconds() - t0);

    t0 = wall_seconds();
    for (const Sample& s : sessions) {
      GroupedSample gs = preprocess_sample(s, cluster_map, data.category_map, lm.cfg);
      DmginModel::UserState st = lm.model.compute_state(gs);
      lm.model.predict_batch(st, gs, candidates);
    }
    full_s = std::min(full_s, wall_seconds() - t0);
  }
  double ratio = cached_s / full_s;
  log.line("cached " + fmt(cached_s, "%.3f") + "s vs full " + fmt(full_s, "%.3f") +
           "s -> ratio " + fmt(ratio, "%.3f"));

  {
    std::ofstream f(dir / "serve_eval.csv", std::ios::binary);
    f << "metric,value\n";
    f << "requests," << grouped.size() << "\n";
    f << "candidates," << candidates.size() << "\n";
    f << "repeats," << rc.serve_repeats << "\n";
    f << "hits," << stats.hits << "\n";
    f << "misses," << stats.misses << "\n";
    f << "max_abs_diff," << fmt(max_diff, "%.17g") << "\n";
    f << "cached_seconds," << fmt(cached_s, "%.17g") << "\n";
    f << "full_seconds," << fmt(full_s, "%.17g") << "\n";
    f << "ratio," << fmt(ratio, "%.17g") << "\n";
  }
  log.line("wrote serve_eval.csv");
}

void cmd_cache_inspect(const std::string& cache_path, const std::string& user,
                       bool full) {
  RepresentationCache cache = RepresentationCache::open(cache_path);
  const CacheHeader& h = cache.header();
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h.ckpt_hash));
  std::cout << "magic:     DMGC\n";
  std::cout << "version:   " << h.version << "\n";
  std::cout << "k:         " << h.k << "\n";
  std::cout << "d_g:       " << h.d_g << "\n";
  std::cout << "count:     " << h.count << "\n";
  std::cout << "ckpt_hash: " << hex << "\n";
  if (h.count == 0) return;

  uint64_t uid = user.empty() ? cache.users().front() : std::stoull(user);
  const CacheRecord* rec = cache.lookup(uid);
  if (rec == nullptr) {
    std::cout << "user " << uid << ": not present\n";
    return;
  }
  std::cout << "record user=" << rec->user_id << " n_groups=" << rec->n_groups << "\n";
  for (uint32_t r = 0; r < h.k; ++r) {
    double norm = 0.0;
    for (uint32_t c = 0; c < h.d_g; ++c) {
      double v = rec->gprime[size_t(r) * h.d_g + c];
      norm += v * v;
    }
    std::cout << "  row " << r << ": max_ts=" << rec->max_ts[r]
              << " |g'|=" << fmt(std::sqrt(norm), "%.4f")
              << (r < rec->n_groups ? "" : " (pad)") << "\n";
    if (full) {
      std::string vals = "   ";
      for (uint32_t c = 0; c < h.d_g; ++c) {
        vals += " " + fmt(rec->gprime[size_t(r) * h.d_g + c], "%.6g");
      }
      std::cout << vals << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong-interest CTR pipeline driver"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic behavior corpus");
  add_common(gen, &gen_args);

  CommonArgs pre_args;
  std::string pre_data;
  CLI::App* pre = app.add_subcommand("pretrain", "contrastive dual-tower pretraining");
  add_common(pre, &pre_args);
  pre->add_option("--data", pre_data, "gen-data run directory")->required();

  CommonArgs clu_args;
  std::string clu_data, clu_emb;
  CLI::App* clu = app.add_subcommand("cluster", "k-means over entity embeddings");
  add_common(clu, &clu_args);
  clu->add_option("--data", clu_data, "gen-data run directory")->required();
  clu->add_option("--embeddings", clu_emb, "pretrain run directory")->required();

  CommonArgs trn_args;
  std::string trn_data, trn_clusters;
  CLI::App* trn = app.add_subcommand("train", "train the CTR model");
  add_common(trn, &trn_args);
  trn->add_option("--data", trn_data, "gen-data run directory")->required();
  trn->add_option("--clusters", trn_clusters, "cluster run directory")->required();

  CommonArgs evl_args;
  std::string evl_data, evl_clusters, evl_model;
  CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(evl, &evl_args);
  evl->add_option("--data", evl_data, "gen-data run directory")->required();
  evl->add_option("--clusters", evl_clusters, "cluster run directory")->required();
  evl->add_option("--model", evl_model, "train run directory")->required();

  CommonArgs abl_args;
  CLI::App* abl = app.add_subcommand("ablate", "full / -stats / -behavior-evolution runs");
  add_common(abl, &abl_args);

  CommonArgs dps_args;
  std::string dps_layers;
  CLI::App* dps = app.add_subcommand("depth-sweep", "AUC vs transformer depth");
  add_common(dps, &dps_args);
  dps->add_option("--layers", dps_layers, "depths, e.g. 1..4 or 1,2,3");

  CommonArgs prc_args;
  std::string prc_data, prc_clusters, prc_model;
  CLI::App* prc = app.add_subcommand("precompute", "build the serving representation cache");
  add_common(prc, &prc_args);
  prc->add_option("--data", prc_data, "gen-data run directory")->required();
  prc->add_option("--clusters", prc_clusters, "cluster run directory")->required();
  prc->add_option("--model", prc_model, "train run directory")->required();

  CommonArgs srv_args;
  std::string srv_data, srv_clusters, srv_model, srv_cache;
  CLI::App* srv = app.add_subcommand("serve-eval", "cached vs recompute serving comparison");
  add_common(srv, &srv_args);
  srv->add_option("--data", srv_data, "gen-data run directory")->required();
  srv->add_option("--clusters", srv_clusters, "cluster run directory")->required();
  srv->add_option("--model", srv_model, "train run directory")->required();
  srv->add_option("--cache", srv_cache, "cache.bin from precompute")->required();

  std::string ins_cache, ins_user;
  bool ins_full = false;
  CLI::App* ins = app.add_subcommand("cache-inspect", "dump cache header and a record");
  ins->add_option("--cache", ins_cache, "cache.bin path")->required();
  ins->add_option("--user", ins_user, "user id (default: first record)");
  ins->add_flag("--full", ins_full, "print all stored values");

  gen->callback([&] { cmd_gen_data(gen_args); });
  pre->callback([&] { cmd_pretrain(pre_args, pre_data); });
  clu->callback([&] { cmd_cluster(clu_args, clu_data, clu_emb); });
  trn->callback([&] { cmd_train(trn_args, trn_data, trn_clusters); });
  evl->callback([&] { cmd_eval(evl_args, evl_data, evl_clusters, evl_model); });
  abl->callback([&] { cmd_ablate(abl_args); });
  dps->callback([&] { cmd_depth_sweep(dps_args, dps_layers); });
  prc->callback([&] { cmd_precompute(prc_args, prc_data, prc_clusters, prc_model); });
  srv->callback([&] { cmd_serve_eval(srv_args, srv_data, srv_clusters, srv_model, srv_cache); });
  ins->callback([&] { cmd_cache_inspect(ins_cache, ins_user, ins_full); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
