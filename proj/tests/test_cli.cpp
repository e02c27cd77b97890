// Drives the dmgin binary end to end at micro scale. The executable path
// arrives via DMGIN_BIN (set by the test harness).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;  // stdout + stderr
};

const fs::path& root() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "dmgin_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string binary() {
  const char* bin = std::getenv("DMGIN_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "DMGIN_BIN must point at the dmgin executable");
  return bin;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE_MESSAGE(f.good(), "cannot read " << p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunResult run(const std::string& args) {
  static int counter = 0;
  const fs::path capture = root() / ("out_" + std::to_string(counter++) + ".txt");
  const std::string cmd = binary() + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = slurp(capture);
  return r;
}

// Micro configuration: seconds per subcommand, not minutes.
const fs::path& config_path() {
  static const fs::path p = [] {
    fs::path cfg = root() / "micro.cfg";
    std::ofstream f(cfg);
    f << "seed = 7\n"
         "[gen]\n"
         "n_users = 5\n"
         "n_entities = 24\n"
         "n_archetypes = 3\n"
         "events_min = 60\n"
         "events_max = 80\n"
         "train_impressions = 4\n"
         "test_impressions = 2\n"
         "[pretrain]\n"
         "d_emb = 8\n"
         "hidden = 12\n"
         "epochs = 4\n"
         "batch_size = 16\n"
         "[cluster]\n"
         "k = 3\n"
         "[model]\n"
         "d_item = 2\n"
         "d_time = 2\n"
         "d_loc = 2\n"
         "d_beh = 2\n"
         "n_time_buckets = 4\n"
         "d_stat = 2\n"
         "heads = 2\n"
         "d_h = 3\n"
         "n_blocks = 1\n"
         "n_gap_buckets = 4\n"
         "top_k = 3\n"
         "cap_b = 6\n"
         "n_s = 3\n"
         "n_baseline = 8\n"
         "n_profiles = 3\n"
         "d_profile = 2\n"
         "n_hour_buckets = 4\n"
         "d_hour = 2\n"
         "fusion_hidden = 5\n"
         "[train]\n"
         "epochs = 2\n"
         "batch_size = 10\n"
         "lr = 0.005\n"
         "[serve]\n"
         "candidates = 8\n"
         "repeats = 1\n";
    return cfg;
  }();
  return p;
}

std::string common(const std::string& run_dir) {
  return "--config " + config_path().string() + " --run-dir " + (root() / run_dir).string();
}

fs::path dir_of(const std::string& run_dir) { return root() / run_dir; }

// "metric,value" lookup in a two-column csv.
std::string csv_value(const fs::path& p, const std::string& metric) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind(metric + ",", 0) == 0) return line.substr(metric.size() + 1);
  }
  FAIL("metric " << metric << " not found in " << p.string());
  return "";
}

}  // namespace

TEST_CASE("argument errors exit with the config code") {
  CHECK(run("").code == 2);
  CHECK(run("no-such-command").code == 2);
  CHECK(run("gen-data --set gen.bogus=1 --run-dir " + (dir_of("bogus")).string()).code == 2);
  CHECK(run("gen-data --set not_key_value --run-dir " + (dir_of("bogus")).string()).code == 2);

  const RunResult help = run("--help");
  CHECK(help.code == 0);
  CHECK(help.output.find("gen-data") != std::string::npos);
  CHECK(help.output.find("serve-eval") != std::string::npos);
}

TEST_CASE("gen-data writes the corpus and reproduces itself") {
  const RunResult r = run("gen-data " + common("data"));
  CAPTURE(r.output);
  REQUIRE(r.code == 0);
  for (const char* name : {"train.jsonl", "test.jsonl", "entities.tsv", "ground_truth.csv",
                           "category_map.tsv", "config.resolved", "log.txt"}) {
    CHECK_MESSAGE(fs::exists(dir_of("data") / name), name);
  }

  // Same config, fresh directory: byte-identical corpus.
  REQUIRE(run("gen-data " + common("data2")).code == 0);
  CHECK(slurp(dir_of("data") / "train.jsonl") == slurp(dir_of("data2") / "train.jsonl"));
  CHECK(slurp(dir_of("data") / "test.jsonl") == slurp(dir_of("data2") / "test.jsonl"));

  // config.resolved reparses into the same run.
  REQUIRE(run("gen-data --config " + (dir_of("data") / "config.resolved").string() +
              " --run-dir " + dir_of("data3").string())
              .code == 0);
  CHECK(slurp(dir_of("data") / "train.jsonl") == slurp(dir_of("data3") / "train.jsonl"));

  // A different seed changes the corpus.
  REQUIRE(run("gen-data " + common("data4") + " --seed 8").code == 0);
  CHECK(slurp(dir_of("data") / "train.jsonl") != slurp(dir_of("data4") / "train.jsonl"));
}

TEST_CASE("pretrain requires the corpus and writes embeddings") {
  CHECK(run("pretrain --data " + dir_of("nowhere").string() + " " + common("pre_fail")).code ==
        3);

  const RunResult r =
      run("pretrain --data " + dir_of("data").string() + " " + common("pre"));
  CAPTURE(r.output);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir_of("pre") / "embeddings.tsv"));
  CHECK(fs::exists(dir_of("pre") / "pretrain_report.csv"));
}

TEST_CASE("cluster fits k-means and exports the map") {
  const RunResult r = run("cluster --data " + dir_of("data").string() + " --embeddings " +
                          dir_of("pre").string() + " " + common("clu"));
  CAPTURE(r.output);
  REQUIRE(r.code == 0);
  for (const char* name : {"cluster_map.tsv", "projection.csv", "inertia.csv", "balance.csv",
                           "group_histogram.csv"}) {
    CHECK_MESSAGE(fs::exists(dir_of("clu") / name), name);
  }
  CHECK(r.output.find("inertia") != std::string::npos);
}

TEST_CASE("train writes checkpoint, meta, and metrics") {
  const RunResult r = run("train --data " + dir_of("data").string() + " --clusters " +
                          dir_of("clu").string() + " " + common("model"));
  CAPTURE(r.output);
  REQUIRE(r.code == 0);
  for (const char* name : {"checkpoint.bin", "model_meta.json", "metrics.csv", "timing.csv"}) {
    CHECK_MESSAGE(fs::exists(dir_of("model") / name), name);
  }
  const std::string metrics = slurp(dir_of("model") / "metrics.csv");
  CHECK(metrics.rfind("epoch,loss,auc,gauc\n", 0) == 0);
  CHECK(metrics.find("\n1,") != std::string::npos);
  CHECK(metrics.find("\n2,") != std::string::npos);
}

TEST_CASE("eval scores a checkpoint against the test split") {
  const RunResult r =
      run("eval --data " + dir_of("data").string() + " --clusters " + dir_of("clu").string() +
          " --model " + dir_of("model").string() + " " + common("eval"));
  CAPTURE(r.output);
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir_of("eval") / "eval.csv");
  CHECK(csv.rfind("loss,auc,gauc\n", 0) == 0);

  CHECK(run("eval --data " + dir_of("data").string() + " --clusters " + dir_of("clu").string() +
            " --model " + dir_of("nowhere").string() + " " + common("eval_fail"))
            .code == 3);
}

TEST_CASE("precompute and serve-eval agree with the full path") {
  const RunResult pre =
      run("precompute --data " + dir_of("data").string() + " --clusters " +
          dir_of("clu").string() + " --model " + dir_of("model").string() + " " +
          common("prec"));
  CAPTURE(pre.output);
  REQUIRE(pre.code == 0);
  REQUIRE(fs::exists(dir_of("prec") / "cache.bin"));

  const RunResult srv =
      run("serve-eval --data " + dir_of("data").string() + " --clusters " +
          dir_of("clu").string() + " --model " + dir_of("model").string() + " --cache " +
          (dir_of("prec") / "cache.bin").string() + " " + common("serve"));
  CAPTURE(srv.output);
  REQUIRE(srv.code == 0);
  const fs::path csv = dir_of("serve") / "serve_eval.csv";
  CHECK(std::stod(csv_value(csv, "max_abs_diff")) <= 1e-5);
  CHECK(csv_value(csv, "hits") == "5");
  CHECK(csv_value(csv, "misses") == "0");
  CHECK(csv_value(csv, "candidates") == "8");
}

TEST_CASE("cache-inspect prints the header") {
  const RunResult r =
      run("cache-inspect --cache " + (dir_of("prec") / "cache.bin").string());
  CAPTURE(r.output);
  REQUIRE(r.code == 0);
  CHECK(r.output.find("magic:     DMGC") != std::string::npos);
  CHECK(r.output.find("version:   1") != std::string::npos);
  CHECK(r.output.find("n_groups=") != std::string::npos);

  CHECK(run("cache-inspect --cache " + (dir_of("prec") / "absent.bin").string()).code == 3);
}

TEST_CASE("experiment subcommands emit their tables") {
  const RunResult abl = run("ablate " + common("abl") + " --set train.epochs=1");
  CAPTURE(abl.output);
  REQUIRE(abl.code == 0);
  const std::string ab_csv = slurp(dir_of("abl") / "ablation.csv");
  CHECK(ab_csv.rfind("variant,auc,gauc\n", 0) == 0);
  CHECK(ab_csv.find("\nfull,") != std::string::npos);
  CHECK(ab_csv.find("no_stats,") != std::string::npos);
  CHECK(ab_csv.find("no_behavior_evolution,") != std::string::npos);

  const RunResult dps =
      run("depth-sweep --layers 1,2 " + common("dps") + " --set train.epochs=1");
  CAPTURE(dps.output);
  REQUIRE(dps.code == 0);
  const std::string dp_csv = slurp(dir_of("dps") / "depth_sweep.csv");
  CHECK(dp_csv.rfind("layers,auc,gauc\n", 0) == 0);
  CHECK(dp_csv.find("\n1,") != std::string::npos);
  CHECK(dp_csv.find("\n2,") != std::string::npos);
}

TEST_CASE("the default run root honors DMGIN_RUN_ROOT") {
  const fs::path capture = root() / "out_envroot.txt";
  const std::string cmd = "DMGIN_RUN_ROOT=" + (root() / "envroot").string() + " " + binary() +
                          " gen-data --config " + config_path().string() + " > " +
                          capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(root() / "envroot" / "gen-data" / "train.jsonl"));
}
